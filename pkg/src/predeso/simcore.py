"""Fixed-step simulation of the leader, followers, observers and exosystems.

The continuous states (leader and follower plants, observer ``[v, w^]``,
adaptive gains ``c``) are integrated with classical RK4. Control inputs
are computed at grid points and held over the cell; the delayed inputs
seen by the plants are read from the history buffers and held across the
RK4 stages. Disturbances are advanced exactly by ``e^{S dt}``.
"""

from dataclasses import dataclass, field
import io
import json

import numpy as np

from . import matcore as mc
from .controller import (ProtocolMatrices, ReductionQuadrature, adaptive_step, compute_error_vectors,
                         compute_varrho, compute_xi, control_input, eso_step, z_fn, zeta)
from .errors import DivergenceError
from .netgraph import build_laplacian

DIVERGENCE_LIMIT = 1e9


@dataclass
class SimState:
    """Mutable engine state at grid point ``k``.

    Buffers hold grid samples ``k-m .. k`` (oldest first). The last slot of
    ``hist_u`` is filled with ``u_k`` once it has been computed.
    """

    k: int
    t: float
    x0: np.ndarray
    x: np.ndarray
    w: np.ndarray          # (N+1, s), row 0 is the leader
    v: np.ndarray
    what: np.ndarray
    c: np.ndarray
    hist_u: np.ndarray     # (m+1, N, p)
    hist_what: np.ndarray  # (m+1, N, s)
    hist_u0: np.ndarray    # (m+1, p)

    def copy(self):
        return SimState(**{k: (v.copy() if isinstance(v, np.ndarray) else v)
                           for k, v in self.__dict__.items()})

    @property
    def x_tilde(self):
        return self.x - self.x0


@dataclass
class Signals:
    """Protocol signals evaluated at one time instant."""

    Ztil: np.ndarray
    J: np.ndarray
    u0_int: np.ndarray
    varrho: np.ndarray
    vtil: np.ndarray
    wbar: np.ndarray
    what_delayed: np.ndarray
    e: np.ndarray
    ehat: np.ndarray
    rho: np.ndarray
    cdot: np.ndarray


@dataclass
class Trajectory:
    t: np.ndarray
    err: np.ndarray
    c: np.ndarray
    rho: np.ndarray
    vtil: np.ndarray
    wtil: np.ndarray
    u: np.ndarray
    dt: float = 0.0
    stride: int = 1
    error: dict = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def followers(self):
        return self.err.shape[1]

    @property
    def complete(self):
        return self.error is None

    def columns(self):
        N, p = self.followers, self.u.shape[2]
        cols = ["t"]
        for name in ("err", "c", "rho", "vtil", "wtil"):
            cols += [f"{name}_{i + 1}" for i in range(N)]
        cols += [f"u_{i + 1}_{j + 1}" for i in range(N) for j in range(p)]
        return cols

    def table(self):
        K = self.t.size
        return np.hstack([self.t[:, None], self.err, self.c, self.rho, self.vtil, self.wtil,
                          self.u.reshape(K, -1)])

    def to_csv(self, path=None):
        """Write (or return) the CSV text; values use fixed ``%.12e`` formatting."""
        buf = io.StringIO()
        buf.write(",".join(self.columns()) + "\n")
        np.savetxt(buf, self.table(), fmt="%.12e", delimiter=",")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="\n") as fh:
                fh.write(text)
        return text


class Simulator:
    """Owns the state of one run and advances it on the ``dt`` grid."""

    def __init__(self, cfg, gains, init=None, record_full=False):
        from .scenario import draw_initial

        self.cfg = cfg
        self.plant = plant = cfg.plant
        self.topo = cfg.topology
        self.gains = gains
        self.dt = cfg.sim.dt
        self.mode = gains.mode
        self.quad = ReductionQuadrature(plant, self.dt)
        self.m = self.quad.m
        self.pm = ProtocolMatrices(plant, gains)
        self.L1 = build_laplacian(self.topo).L1
        self.expSdt = mc.mat_exp(plant.S, self.dt)
        self.expSh = mc.mat_exp(plant.S, self.dt / 2)
        self.leader_on = cfg.leader_input.active and self.mode == "thm2"
        self.record_full = record_full
        self.full = {k: [] for k in ("t", "Ztil", "xt", "what", "wbar", "v", "u", "u0",
                                     "varrho", "vtil_link")} if record_full else None
        self.varrho_gap = 0.0
        ini = draw_initial(cfg) if init is None else init
        self.state = self._initial_state(ini)

    # -- setup -----------------------------------------------------------------
    def _u0(self, t):
        if not self.leader_on:
            return np.zeros(self.plant.p)
        return self.cfg.leader_input(t, self.plant.p)[0]

    def _initial_state(self, ini):
        N, m, p, s = self.topo.followers, self.m, self.plant.p, self.plant.s
        what = np.array(ini["what"], dtype=float)
        hist_what = np.broadcast_to(what, (m + 1, N, s)).copy()
        hist_u0 = np.zeros((m + 1, p))
        hist_u0[-1] = self._u0(0.0)
        return SimState(
            k=0, t=0.0,
            x0=np.array(ini["x0"], dtype=float), x=np.array(ini["x"], dtype=float),
            w=np.vstack([ini["w0"], ini["w"]]).astype(float),
            v=np.array(ini["v"], dtype=float), what=what, c=np.array(ini["c"], dtype=float),
            hist_u=np.zeros((m + 1, N, p)), hist_what=hist_what, hist_u0=hist_u0,
        )

    # -- signal evaluation -------------------------------------------------------
    def signals(self, st, x0, x, w, v, what, c, h=0.0):
        q, pm = self.quad, self.pm
        xt = x - x0
        J = q.input_integral(st.hist_u, h) + q.estimate_integral(st.hist_what, what, h)
        u0_int = q.input_integral(st.hist_u0, h) if self.leader_on else np.zeros(self.plant.n)
        Ztil = xt @ pm.expAt.T + J - u0_int
        xi = compute_xi(x, x0, self.topo)
        varrho = compute_varrho(v, J, xi, self.topo, pm.expAt,
                                u0_int if self.leader_on else None)
        vtil = v - Ztil
        wbar = w[1:] - w[0]
        wdel = q.delayed_estimate(st.hist_what, what, h)
        e, ehat = compute_error_vectors(v, Ztil, wdel, wbar, pm.expSt, self.L1)
        cdot, rho = adaptive_step(ehat, c, pm)
        return Signals(Ztil, J, u0_int, varrho, vtil, wbar, wdel, e, ehat, rho, cdot)

    def _deriv(self, st, y, w, h, z_held):
        x0, x, v, what, c = y
        sig = self.signals(st, x0, x, w, v, what, c, h)
        dv, dwhat = eso_step(v, what, sig.varrho, c, sig.rho, self.pm, z_zeta=z_held, ehat=sig.ehat)
        P = self.plant
        dx = x @ P.A.T + st.hist_u[0] @ P.B.T + w[1:] @ P.E.T
        dx0 = P.A @ x0 + P.E @ w[0]
        if self.leader_on:
            dx0 = dx0 + P.B @ st.hist_u0[0]
        return (dx0, dx, dv, dwhat, sig.cdot)

    def _check(self, t, parts, what):
        # fast path: max-abs bounds the row norms of these small blocks
        if all(np.abs(a).max() * np.sqrt(np.shape(a)[-1] if np.ndim(a) else 1) < DIVERGENCE_LIMIT
               for a in parts):
            return
        for name, arr in zip(("x0", "x", "v", "w^", "c"), parts):
            a = np.atleast_2d(arr) if name != "c" else arr.reshape(-1, 1)
            finite = np.isfinite(a).all(axis=1)
            nrm = np.where(finite, np.linalg.norm(np.where(np.isfinite(a), a, 0.0), axis=1), np.inf)
            if nrm.max() > DIVERGENCE_LIMIT:
                agent = 0 if name == "x0" else int(nrm.argmax()) + 1
                raise DivergenceError(f"{what} of {name} is non-finite or exceeds "
                                      f"{DIVERGENCE_LIMIT:g}", agent=agent, t=t)

    def prepare(self):
        """Compute ``u_k`` at the current grid point; returns the signals there."""
        st = self.state
        sig = self.signals(st, st.x0, st.x, st.w, st.v, st.what, st.c, 0.0)
        u = control_input(st.v, st.what, self.pm, sig.Ztil)
        st.hist_u[-1] = u
        self._u_now = u
        self._z_now = z_fn(zeta(sig.Ztil, self.pm), self.pm.sigma) if self.mode == "thm2" else None
        gap = np.abs(sig.varrho - self.L1 @ sig.vtil).max()
        self.varrho_gap = max(self.varrho_gap, float(gap))
        if self.record_full:
            f = self.full
            f["t"].append(st.t)
            f["Ztil"].append(sig.Ztil)
            f["xt"].append(st.x_tilde)
            f["what"].append(st.what.copy())
            f["wbar"].append(sig.wbar)
            f["v"].append(st.v.copy())
            f["u"].append(u.copy())
            f["u0"].append(st.hist_u0[-1].copy())
            f["varrho"].append(sig.varrho)
            f["vtil_link"].append(self.L1 @ sig.vtil)
        return sig

    def step(self):
        """Advance one ``dt``; ``prepare`` must have been called at this point."""
        st, dt = self.state, self.dt
        z = self._z_now
        y0 = (st.x0, st.x, st.v, st.what, st.c)
        w0 = st.w
        wh = w0 @ self.expSh.T
        w1 = w0 @ self.expSdt.T

        def shift(y, k, a):
            return tuple(yi + a * ki for yi, ki in zip(y, k))

        k1 = self._deriv(st, y0, w0, 0.0, z)
        self._check(st.t, k1, "derivative")
        k2 = self._deriv(st, shift(y0, k1, dt / 2), wh, dt / 2, z)
        k3 = self._deriv(st, shift(y0, k2, dt / 2), wh, dt / 2, z)
        k4 = self._deriv(st, shift(y0, k3, dt), w1, dt, z)
        y1 = tuple(yi + dt / 6 * (a + 2 * b + 2 * c + d)
                   for yi, a, b, c, d in zip(y0, k1, k2, k3, k4))
        self._check(st.t + dt, y1, "state")

        st.x0, st.x, st.v, st.what, st.c = y1
        st.w = w1
        st.k += 1
        st.t = st.k * dt
        for buf in (st.hist_u, st.hist_what, st.hist_u0):
            buf[:-1] = buf[1:]
        st.hist_u[-1] = 0.0
        st.hist_what[-1] = st.what
        st.hist_u0[-1] = self._u0(st.t)
        return st


def run(cfg, gains, init=None, record_full=False):
    """Simulate ``cfg`` and return the sampled trajectory.

    On divergence the trajectory is truncated at the last recorded sample and
    ``traj.error`` describes the failure.
    """
    sim = Simulator(cfg, gains, init=init, record_full=record_full)
    steps, every = cfg.steps, cfg.sim.sample_every
    N, p = cfg.topology.followers, cfg.plant.p
    rows = steps // every + 1
    t = np.zeros(rows)
    out = {k: np.zeros((rows, N)) for k in ("err", "c", "rho", "vtil", "wtil")}
    u = np.zeros((rows, N, p))
    r = 0
    error = None
    for k in range(steps + 1):
        try:
            sig = sim.prepare()
            st = sim.state
            if k % every == 0:
                t[r] = st.t
                out["err"][r] = np.linalg.norm(st.x_tilde, axis=1)
                out["c"][r] = st.c
                out["rho"][r] = sig.rho
                out["vtil"][r] = np.linalg.norm(sig.vtil, axis=1)
                out["wtil"][r] = np.linalg.norm(st.what - sig.wbar, axis=1)
                u[r] = sim._u_now
                r += 1
            if k < steps:
                sim.step()
        except DivergenceError as exc:
            error = {"message": str(exc), "agent": exc.agent, "t": exc.t, "step": k}
            break
    traj = Trajectory(t=t[:r], err=out["err"][:r], c=out["c"][:r], rho=out["rho"][:r],
                      vtil=out["vtil"][:r], wtil=out["wtil"][:r], u=u[:r],
                      dt=cfg.sim.dt, stride=every, error=error)
    traj.diagnostics["varrho_identity_max"] = sim.varrho_gap
    if record_full:
        traj.diagnostics["full"] = {k: np.asarray(v) for k, v in sim.full.items()}
        traj.diagnostics["final_state"] = sim.state.copy()
    return traj


@dataclass
class MetricsReport:
    tail_start: float
    tail_sup_err: list
    tail_sup_vtil: list
    tail_sup_wtil: list
    c_final: list
    c_last_change: float
    monotone_violations: list
    containment: list = None
    residual_radius: float = None
    c_tail_ratio: list = None
    varrho_identity_max: float = None
    delay_gap_c: float = None
    delay_gap_rho: float = None
    complete: bool = True

    def to_json(self):
        return {k: v for k, v in self.__dict__.items()}


def metrics(traj, certificate=None, mode="thm1", tail_fraction=0.8, mono_tol=1e-12, tau=None):
    """Tail statistics of a trajectory.

    The tail window is ``[tail_fraction * T, T]``. ``c_last_change`` is
    ``max_i |c_i(T) - c_i(T - 1)|`` (or over the whole run when shorter).
    With ``tau`` given and a whole number of samples, ``delay_gap_*`` is the
    tail sup of ``|c_i(t) - c_i(t - tau)|`` (and the same for rho).
    """
    if traj.t.size == 0:
        N = traj.err.shape[1]
        z = [0.0] * N
        return MetricsReport(0.0, z, z, z, z, 0.0, [0] * N, complete=traj.complete)
    T = float(traj.t[-1])
    t0 = tail_fraction * T
    tail = traj.t >= t0 - 1e-12
    one = traj.t >= T - 1.0 - 1e-12
    j = int(np.argmax(one))
    rep = MetricsReport(
        tail_start=t0,
        tail_sup_err=traj.err[tail].max(axis=0).tolist(),
        tail_sup_vtil=traj.vtil[tail].max(axis=0).tolist(),
        tail_sup_wtil=traj.wtil[tail].max(axis=0).tolist(),
        c_final=traj.c[-1].tolist(),
        c_last_change=float(np.abs(traj.c[-1] - traj.c[j]).max()),
        monotone_violations=(np.diff(traj.c, axis=0) < -mono_tol).sum(axis=0).tolist(),
        varrho_identity_max=traj.diagnostics.get("varrho_identity_max"),
        complete=traj.complete,
    )
    if tau is not None and traj.dt:
        lag = tau / (traj.dt * traj.stride)
        d = int(round(lag))
        if abs(lag - d) < 1e-9 and 0 < d < traj.t.size:
            tl = tail[d:]
            rep.delay_gap_c = float(np.abs(traj.c[d:] - traj.c[:-d])[tl].max())
            rep.delay_gap_rho = float(np.abs(traj.rho[d:] - traj.rho[:-d])[tl].max())
    if mode == "thm2":
        med = np.median(traj.c[tail], axis=0)
        rep.c_tail_ratio = (traj.c.max(axis=0) / np.where(med > 0, med, np.inf)).tolist()
        rep.monotone_violations = None
    if certificate is not None:
        radius = np.asarray(certificate.residual_radius, dtype=float)
        rep.residual_radius = float(radius.max())
        rep.containment = (traj.err[tail] <= radius).mean(axis=0).tolist()
    return rep


def write_metrics(report, path, extra=None):
    doc = report.to_json()
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
