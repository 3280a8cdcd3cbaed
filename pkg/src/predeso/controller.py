"""Distributed predictive-ESO protocol signals.

All per-follower quantities are stacked row-wise: ``x`` has shape (N, n),
``u`` (N, p), ``what`` (N, s) and so on. Functions accept the stacked
arrays and return stacked results.

History windows cover ``[t - tau, t]`` on the integration grid. Control
inputs are zero-order held across a grid cell, so their part of the
reduction integral is evaluated exactly cell by cell; the disturbance
estimate is continuous and uses the composite trapezoid rule.
"""

import numpy as np

from . import matcore as mc
from .errors import ConfigError, DimensionError

GRID_TOL = 1e-9


def delay_steps(tau, dt):
    """Number of grid cells spanning the delay; ``dt`` must divide ``tau``."""
    if dt <= 0:
        raise ConfigError("dt must be positive")
    m = int(round(tau / dt))
    if abs(m * dt - tau) > GRID_TOL:
        raise ConfigError(f"dt={dt:g} does not divide tau={tau:g}")
    return m


class ReductionQuadrature:
    """Weights for ``int_{t_s - tau}^{t_s} e^{A(t_s - r)} f(r) dr``.

    ``t_s = t_k + h`` with ``0 <= h <= dt``. Buffers hold samples at grid
    points ``t_{k-m} .. t_k`` (index 0 oldest). For each offset ``h`` the
    instance gives

    * ``Bu[q]`` (n x p): weight on the input held over cell ``q``;
    * ``Ew[q]`` (n x s): weight on the estimate sample ``q``;
    * ``Ew_stage`` (n x s): weight on the estimate at ``t_s`` itself;
    * ``(d0, d1, d_stage)``: coefficients of the estimate at ``t_s - tau``.

    Estimate weights include the factor ``E e^{S tau}``.
    """

    def __init__(self, plant, dt):
        self.dt = float(dt)
        self.m = delay_steps(plant.tau, dt)
        self.n, self.p, self.s = plant.n, plant.p, plant.s
        self.A = plant.A
        self.B = plant.B
        self.E = plant.E
        self.EeS = plant.E @ mc.mat_exp(plant.S, plant.tau)
        self._cache = {}

    def _kernel(self, lag):
        return mc.mat_exp(self.A, lag)

    def weights(self, h=0.0):
        key = round(h / self.dt, 12)
        if key not in self._cache:
            self._cache[key] = self._build(float(h))
        return self._cache[key]

    def _build(self, h):
        m, dt, n = self.m, self.dt, self.n
        Bu = np.zeros((m + 1, n, self.p))
        Ew = np.zeros((m + 1, n, self.s))
        Ew_stage = np.zeros((n, self.s))
        if m == 0:
            return Bu, Ew, Ew_stage, (0.0, 0.0, 1.0)
        end = m * dt + h
        for q in range(m + 1):
            a, b = max(q * dt, h), min((q + 1) * dt, end)
            if b - a > 1e-15 * dt:
                Bu[q] = self._kernel(end - b) @ mc.integral_exp(self.A, b - a) @ self.B

        # trapezoid nodes: window start, interior grid points, window end
        nodes = [h] + [q * dt for q in range(m + 1) if h + 1e-12 * dt < q * dt < end - 1e-12 * dt]
        nodes.append(end)
        tw = np.zeros(len(nodes))
        seg = np.diff(nodes)
        tw[:-1] += 0.5 * seg
        tw[1:] += 0.5 * seg
        frac = h / dt
        for pos, wgt in zip(nodes, tw):
            K = wgt * self._kernel(end - pos) @ self.EeS
            q = pos / dt
            qi = int(round(q))
            if abs(q - qi) < 1e-9 and qi <= m:
                Ew[qi] += K
            elif pos == end:
                Ew_stage += K
            else:  # window start between samples 0 and 1
                Ew[0] += (1 - frac) * K
                Ew[1] += frac * K

        if abs(frac) < 1e-12:
            delayed = (1.0, 0.0, 0.0)
        elif abs(frac - 1) < 1e-12:
            delayed = (0.0, 1.0, 0.0)
        else:
            delayed = (1 - frac, frac, 0.0)
        return Bu, Ew, Ew_stage, delayed

    def input_integral(self, hist_u, h=0.0):
        """ZOH input part; ``hist_u`` has shape (m+1, ..., p)."""
        Bu = self.weights(h)[0]
        hist_u = np.asarray(hist_u)
        return np.tensordot(hist_u, Bu, axes=([0, hist_u.ndim - 1], [0, 2]))

    def estimate_integral(self, hist_what, what_stage, h=0.0):
        _, Ew, Ew_stage, _ = self.weights(h)
        hist_what = np.asarray(hist_what)
        return (np.tensordot(hist_what, Ew, axes=([0, hist_what.ndim - 1], [0, 2]))
                + np.asarray(what_stage) @ Ew_stage.T)

    def delayed_estimate(self, hist_what, what_stage, h=0.0):
        d0, d1, ds = self.weights(h)[3]
        out = ds * np.asarray(what_stage)
        if self.m > 0:
            out = out + d0 * hist_what[0] + d1 * hist_what[1]
        return out


def _check_window(hist, m, name):
    if hist.shape[0] != m + 1:
        raise ConfigError(f"{name} history has {hist.shape[0]} samples, grid needs {m + 1}")


def reduction_transform(x_tilde, hist_u, hist_what, quad, hist_u0=None, mode="thm1"):
    """Delay-free variable ``Z~ = e^{A tau} x~ + int e^{A(t-s)}[B(u - u0) + E e^{S tau} w^] ds``.

    Histories are grid samples over ``[t - tau, t]`` (oldest first); the
    leader input enters only in the bounded-leader mode.
    """
    hist_u = np.asarray(hist_u, dtype=float)
    hist_what = np.asarray(hist_what, dtype=float)
    _check_window(hist_u, quad.m, "input")
    _check_window(hist_what, quad.m, "estimate")
    if mode == "thm2" and hist_u0 is not None:
        hu0 = np.asarray(hist_u0, dtype=float)
        _check_window(hu0, quad.m, "leader input")
        hist_u = hist_u - (hu0 if hist_u.ndim == hu0.ndim else hu0[:, None, :])
    expAt = mc.mat_exp(quad.A, quad.m * quad.dt)
    return (np.asarray(x_tilde) @ expAt.T + quad.input_integral(hist_u)
            + quad.estimate_integral(hist_what, hist_what[-1]))


def compute_xi(x, x0, topo):
    """Network measurement ``sum_j a_ij (x_i - x_j) + a_i0 (x_i - x0)`` per follower."""
    adj, a0 = topo.adj, topo.leader_links
    deg = adj.sum(axis=1)
    return deg[:, None] * x - adj @ x + a0[:, None] * (x - x0)


def compute_varrho(v, J, xi, topo, expAt, leader_integral=None):
    """Relative observer signal built only from neighbour-available data.

    ``J[i]`` is follower i's own history integral
    ``int e^{A(t-s)}[B u_i + E e^{S tau} w^_i] ds``. Leader-linked
    followers additionally subtract the leader-input integral
    ``leader_integral`` (bounded-leader mode). Algebraically equal to
    ``sum_j l_ij (v_j - Z~_j)``.
    """
    adj, a0 = topo.adj, topo.leader_links
    y = v - J
    own = y
    if leader_integral is not None:
        own = y + leader_integral
    deg = adj.sum(axis=1)
    return a0[:, None] * own + deg[:, None] * y - adj @ y - xi @ expAt.T


def z_fn(x, sigma):
    """Row-wise ``x/|x|`` outside radius ``sigma`` and ``x/sigma`` inside."""
    x = np.asarray(x, dtype=float)
    sig = np.asarray(sigma, dtype=float)
    if np.any(sig <= 0):
        raise DimensionError("sigma must be positive")
    if x.ndim == 1:
        nrm = np.linalg.norm(x)
        return x / max(nrm, float(sig))
    nrm = np.linalg.norm(x, axis=1)
    return x / np.maximum(nrm, np.broadcast_to(sig, nrm.shape))[:, None]


class ProtocolMatrices:
    """Constant matrices of the protocol derived from a gain set."""

    def __init__(self, plant, gains):
        if gains.mode not in ("thm1", "nodelay", "thm2"):
            raise ConfigError(f"unknown mode {gains.mode!r}")
        if gains.mode == "thm2" and gains.Q is None:
            raise ConfigError("bounded-leader mode needs Q")
        n, s = plant.n, plant.s
        self.mode = gains.mode
        self.expAt = mc.mat_exp(plant.A, plant.tau)
        self.expSt = mc.mat_exp(plant.S, plant.tau)
        self.A1bar = np.block([[plant.A + plant.B @ gains.K1, np.zeros((n, s))],
                               [np.zeros((s, n)), plant.S]])
        self.A2bar = np.vstack([gains.K, gains.Kp])
        self.K1 = gains.K1
        self.Fd = plant.F if gains.mode == "nodelay" else plant.F @ self.expSt
        self.B = plant.B
        self.Bbar = np.vstack([plant.B, np.zeros((s, plant.p))])
        self.P = gains.P
        self.Gamma = gains.Gamma
        self.Q = gains.Q
        self.BtQ = None if gains.Q is None else plant.B.T @ gains.Q
        self.BbtP = self.Bbar.T @ gains.P
        self.alpha = gains.alpha
        self.beta1 = gains.beta1
        self.eps = gains.eps
        self.sigma = gains.sigma
        self.n, self.s = n, s


def zeta(Ztil, pm):
    return Ztil @ pm.BtQ.T


def control_input(v, what, pm, Ztil=None):
    """Follower inputs ``K1 v - F e^{S tau} w^ [- alpha z(B^T Q Z~)]``."""
    u = v @ pm.K1.T - what @ pm.Fd.T
    if pm.mode == "thm2":
        if Ztil is None:
            raise ConfigError("bounded-leader input needs the reduction variable")
        u = u - pm.alpha * z_fn(zeta(Ztil, pm), pm.sigma)
    return u


def adaptive_step(ehat, c, pm):
    """Return ``(c_dot, rho)`` for every follower."""
    rho = np.einsum("ij,jk,ik->i", ehat, pm.P, ehat)
    cdot = np.einsum("ij,jk,ik->i", ehat, pm.Gamma, ehat)
    if pm.mode == "thm2":
        cdot = cdot - pm.eps * (c - pm.beta1)
    return cdot, rho


def eso_step(v, what, varrho, c, rho, pm, z_zeta=None, ehat=None):
    """Time derivative of the observer state ``[v, w^]``.

    In bounded-leader mode ``z_zeta`` is the (held) value ``z(zeta_i)`` used
    in the control input and ``ehat`` feeds ``z(Bbar^T P e^_i)``.
    """
    Zbar = np.hstack([v, what])
    d = Zbar @ pm.A1bar.T + (c + rho)[:, None] * (varrho @ pm.A2bar.T)
    if pm.mode == "thm2":
        zt = z_fn(ehat @ pm.BbtP.T, pm.sigma)
        d = d - pm.alpha * (z_zeta + zt) @ pm.Bbar.T
    return d[:, :pm.n], d[:, pm.n:]


def compute_error_vectors(v, Ztil, what_delayed, wbar, expSt, L1):
    """Observer errors from global truth.

    ``e_i = [v_i - Z~_i ; e^{S tau} w^_i(t - tau) - w_bar_i(t)]`` (the second
    block equals ``e^{S tau} w~_i(t - tau)`` because the exosystem is linear),
    and ``e^_i = sum_j l_ij e_j``.
    """
    e = np.hstack([v - Ztil, what_delayed @ expSt.T - wbar])
    return e, L1 @ e


def prediction_residual(x_tilde, Ztil_delayed, werr_window, quad):
    """``x~(t) - Z~(t - tau) + int_{t-tau}^t e^{A(t-s)} E e^{S tau} w~(s - tau) ds``.

    ``werr_window`` holds samples of ``e^{S tau} w~(s - tau)`` on the grid of
    ``[t - tau, t]`` (oldest first). The trapezoid rule is used.
    """
    m, dt = quad.m, quad.dt
    werr = np.asarray(werr_window, dtype=float)
    _check_window(werr, m, "disturbance error")
    if m == 0:
        return np.asarray(x_tilde) - np.asarray(Ztil_delayed)
    acc = np.zeros(quad.n)
    for q in range(m + 1):
        w = dt * (0.5 if q in (0, m) else 1.0)
        acc += w * mc.mat_exp(quad.A, (m - q) * dt) @ (quad.E @ werr[q])
    return np.asarray(x_tilde) - np.asarray(Ztil_delayed) + acc
