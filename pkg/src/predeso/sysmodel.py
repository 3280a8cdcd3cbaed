"""Agent model, assumption checks, gain synthesis and certificate constants."""

from dataclasses import dataclass, field, fields
import logging

import numpy as np

from . import matcore as mc
from .errors import (
    AssumptionError,
    CertificateError,
    DimensionError,
    InfeasibleError,
    InvariantError,
    NumericalError,
    ParameterError,
)
from .netgraph import build_laplacian, compute_weights, has_spanning_tree, sigma_min

log = logging.getLogger(__name__)

MODES = ("thm1", "nodelay", "thm2")


@dataclass(frozen=True)
class Plant:
    """Identical agent dynamics ``x' = A x + B u(t - tau) + E w``, ``w' = S w``."""

    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    S: np.ndarray
    F: np.ndarray
    tau: float

    def __post_init__(self):
        for f in ("A", "B", "E", "S", "F"):
            object.__setattr__(self, f, mc.as_matrix(getattr(self, f), f))
        n, p, s = self.n, self.p, self.s
        if self.A.shape != (n, n) or self.S.shape != (s, s):
            raise DimensionError("A and S must be square")
        if self.E.shape != (n, s) or self.F.shape != (p, s):
            raise DimensionError(f"E must be {n}x{s} and F {p}x{s}")
        tau = float(self.tau)
        if not np.isfinite(tau) or tau < 0:
            raise DimensionError("tau must be finite and nonnegative")
        object.__setattr__(self, "tau", tau)

    @property
    def n(self):
        return self.B.shape[0]

    @property
    def p(self):
        return self.B.shape[1]

    @property
    def s(self):
        return self.S.shape[0]

    def with_tau(self, tau):
        return Plant(self.A, self.B, self.E, self.S, self.F, tau)

    def to_json(self):
        return {k: getattr(self, k).tolist() for k in ("A", "B", "E", "S", "F")} | {"tau": self.tau}

    @classmethod
    def from_json(cls, doc):
        B = doc["B"]
        F = doc["F"]
        E = doc.get("E")
        if E is None:
            E = (np.asarray(B, float) @ np.asarray(F, float)).tolist()
        return cls(doc["A"], B, E, doc["S"], F, doc["tau"])


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    measured: str


@dataclass
class ValidationReport:
    checks: list

    @property
    def ok(self):
        return all(c.passed for c in self.checks)

    def failed(self):
        return [c.name for c in self.checks if not c.passed]

    def lines(self):
        return [f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.measured}" for c in self.checks]


def validate_assumptions(plant, topo, leader_bound=None):
    """Check the standing assumptions and report the measured quantities."""
    checks = []
    checks.append(AssumptionCheck(
        "A1 delay constant and known", bool(np.isfinite(plant.tau) and plant.tau >= 0),
        f"tau={plant.tau:g}"))
    ctrb_rank = mc.rank(mc.controllability_matrix(plant.A, plant.B))
    checks.append(AssumptionCheck(
        "A2 (A,B) controllable", ctrb_rank == plant.n, f"rank {ctrb_rank}/{plant.n}"))
    if leader_bound is None:
        checks.append(AssumptionCheck("A3 leader input bounded", True, "no leader input"))
    else:
        checks.append(AssumptionCheck(
            "A3 leader input bounded", bool(np.isfinite(leader_bound)),
            f"sup|u0|={leader_bound:.6g}"))
    if topo is None:
        checks.append(AssumptionCheck("A4 leader-rooted spanning tree", True, "not checked"))
    else:
        tree = has_spanning_tree(topo)
        checks.append(AssumptionCheck(
            "A4 leader-rooted spanning tree", tree,
            "all followers reachable" if tree else "some follower unreachable from leader"))

    match = float(np.abs(plant.E - plant.B @ plant.F).max(initial=0.0))
    lam = mc.eigenvalues(plant.S)
    re = float(np.abs(lam.real).max(initial=0.0))
    if lam.size > 1:
        sep = float(np.abs(lam[:, None] - lam[None, :])[~np.eye(lam.size, dtype=bool)].min())
    else:
        sep = np.inf
    obs_rank = mc.rank(mc.observability_matrix(plant.S, plant.E))
    ok5 = match <= 1e-12 and re <= 1e-9 and sep > 1e-9 and obs_rank == plant.s
    checks.append(AssumptionCheck(
        "A5 matched harmonic disturbance", ok5,
        f"|E-BF|={match:.2e}, max|Re eig S|={re:.2e}, min eig gap={sep:.2e}, "
        f"obsv rank (S,E) {obs_rank}/{plant.s}"))
    return ValidationReport(checks)


@dataclass(frozen=True)
class AugmentedPair:
    A_T: np.ndarray
    T: np.ndarray
    Bbar: np.ndarray


def build_augmented(plant):
    """``A_T = [[A, e^{A tau} E], [0, S]]``, ``T = [I 0]``, ``Bbar = [B; 0]``."""
    n, s, p = plant.n, plant.s, plant.p
    A_T = np.block([[plant.A, mc.mat_exp(plant.A, plant.tau) @ plant.E],
                    [np.zeros((s, n)), plant.S]])
    T = np.hstack([np.eye(n), np.zeros((n, s))])
    Bbar = np.vstack([plant.B, np.zeros((s, p))])
    if mc.is_observable(plant.S, plant.E) and not mc.is_observable(A_T, T):
        raise InvariantError("(A_T, T) unobservable although (S, E) is observable")
    return AugmentedPair(A_T=A_T, T=T, Bbar=Bbar)


@dataclass
class GainSet:
    mode: str
    K1: np.ndarray
    P: np.ndarray
    Gamma: np.ndarray
    Kbar: np.ndarray
    K: np.ndarray
    Kp: np.ndarray
    Q: np.ndarray = None
    mu: float = 0.0
    alpha: float = 0.0
    beta1: float = 0.0
    eps: np.ndarray = None
    sigma: np.ndarray = None
    leader_bound: float = 0.0
    provenance: str = "computed"

    def to_json(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_json(cls, doc):
        kw = {}
        for f in fields(cls):
            if f.name not in doc:
                continue
            v = doc[f.name]
            if isinstance(v, list):
                v = np.array(v, dtype=float)
            kw[f.name] = v
        return cls(**kw)


def _observer_gains(plant, P):
    """``Kbar = -P^-1 T^T`` split as ``[K; e^{S tau} K']``."""
    n = plant.n
    T = np.hstack([np.eye(n), np.zeros((n, plant.s))])
    Kbar = -np.linalg.solve(P, T.T)
    K = Kbar[:n]
    Kp = mc.mat_exp(plant.S, -plant.tau) @ Kbar[n:]
    return T.T @ T, Kbar, K, Kp


def _require_valid(plant, topo=None):
    bad = [c for c in validate_assumptions(plant, topo).checks if not c.passed]
    if bad:
        raise AssumptionError("; ".join(f"{c.name} ({c.measured})" for c in bad))


def synthesize_gains_thm1(plant, desired_poles=(-5.0, -10.0), topo=None, K1=None, decay=1.0):
    """Gains for the delay-compensated protocol with an input-free leader.

    ``K1`` may be supplied to skip pole placement. ``decay`` is a stability
    margin in the observer LMI, ``P A_T + A_T^T P + decay P - 2 T^T T < 0``;
    any such P also satisfies the margin-free design inequality strictly.
    """
    if decay < 0:
        raise ParameterError(f"decay margin must be nonnegative, got {decay}")
    _require_valid(plant, topo)
    aug = build_augmented(plant)
    try:
        if K1 is None:
            K1 = mc.pole_place(plant.A, plant.B, desired_poles)
            provenance = "computed"
        else:
            K1 = mc.as_matrix(K1, "K1")
            provenance = "user K1"
    except DimensionError as exc:
        raise ParameterError(f"[pole_place] {exc}") from exc
    except (InfeasibleError, NumericalError) as exc:
        raise InfeasibleError(str(exc), stage="pole_place") from exc
    if not mc.is_hurwitz(plant.A + plant.B @ K1):
        raise InfeasibleError("A + B K1 is not Hurwitz", stage="pole_place")
    try:
        P = mc.solve_design_lmi(aug.A_T, aug.T, float(decay))
    except (InfeasibleError, NumericalError) as exc:
        raise InfeasibleError(str(exc), stage="design_lmi") from exc
    if not mc.is_strictly_negative_definite(mc.lmi_residual(P, aug.A_T, aug.T, 0.0)):
        raise InfeasibleError("P violates the design inequality", stage="design_lmi")
    Gamma, Kbar, K, Kp = _observer_gains(plant, P)
    mode = "thm1" if plant.tau > 0 else "nodelay"
    return GainSet(mode=mode, K1=K1, P=P, Gamma=Gamma, Kbar=Kbar, K=K, Kp=Kp,
                   mu=float(decay), provenance=provenance)


def synthesize_gains_thm2(plant, desired_poles=(-5.0, -10.0), mu=2.0, alpha=4.0,
                          beta1=1.0, eps=0.1, sigma=0.005, leader_bound=0.0,
                          followers=None, topo=None, q_min_eig=2.0, K1=None):
    """Gains for the protocol with a bounded leader input.

    ``eps`` and ``sigma`` are scalars or per-follower sequences.
    """
    if not mu > 1:
        raise ParameterError(f"mu must exceed 1, got {mu}")
    if alpha < leader_bound:
        raise ParameterError(f"alpha={alpha} is below the leader input bound {leader_bound:.4g}")
    if beta1 < 1:
        raise ParameterError(f"beta1 must be at least 1, got {beta1}")
    N = followers if followers is not None else (topo.followers if topo is not None else None)
    eps_a = np.atleast_1d(np.asarray(eps, dtype=float))
    sig_a = np.atleast_1d(np.asarray(sigma, dtype=float))
    if N is not None:
        if eps_a.size == 1:
            eps_a = np.full(N, eps_a[0])
        if sig_a.size == 1:
            sig_a = np.full(N, sig_a[0])
        if eps_a.size != N or sig_a.size != N:
            raise ParameterError("eps and sigma need one entry per follower")
    if np.any(eps_a <= 0) or np.any(sig_a <= 0):
        raise ParameterError("eps_i and sigma_i must be positive")

    base = synthesize_gains_thm1(plant, desired_poles, topo=topo, K1=K1)
    aug = build_augmented(plant)
    try:
        P = mc.solve_design_lmi(aug.A_T, aug.T, mu)
    except (InfeasibleError, NumericalError) as exc:
        raise InfeasibleError(str(exc), stage="design_lmi") from exc
    try:
        Q = mc.solve_lyapunov_gain(plant.A + plant.B @ base.K1, min_eig=q_min_eig)
    except InfeasibleError as exc:
        raise InfeasibleError(str(exc), stage="lyapunov") from exc
    Gamma, Kbar, K, Kp = _observer_gains(plant, P)
    return GainSet(mode="thm2", K1=base.K1, P=P, Gamma=Gamma, Kbar=Kbar, K=K, Kp=Kp,
                   Q=Q, mu=float(mu), alpha=float(alpha), beta1=float(beta1),
                   eps=eps_a, sigma=sig_a, leader_bound=float(leader_bound),
                   provenance=base.provenance)


@dataclass
class CertificateBundle:
    lambda0: float
    beta: float
    beta1: float
    kappa1: float
    kappa1_clamped: bool
    kappa2: float
    gamma1: float
    mu: float
    Xi1: float
    Xi2: float
    chi: float
    leader_bound: float
    H: np.ndarray
    X: np.ndarray
    bound_Z: float
    bound_ehat: float
    bound_wtil: float
    residual_radius: np.ndarray
    sigma_min_L1: float
    notes: list = field(default_factory=list)

    def to_json(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


def xi1_constant(beta, beta1, g, eps, sigma, a0, leader_bound, alpha, lmax_P, lmin_H):
    """UUB drive constant of the first Lyapunov function."""
    g, eps, sigma, a0 = (np.asarray(v, dtype=float) for v in (g, eps, sigma, a0))
    N = g.size
    drive = a0 * leader_bound + (2 * N - 1) * alpha
    first = 0.5 * (beta - beta1) ** 2 * np.sum(g * eps)
    second = np.sum(g * sigma * drive * (
        2 * beta1 + (4.0 / eps + 2 * lmax_P / lmin_H) * sigma * drive))
    return float(first + second)


def xi2_constant(gamma1, Xi1, leader_bound, sigma):
    return float(gamma1 * Xi1 + 2 * leader_bound * np.sum(sigma))


def chi_constant(A, tau, nodes=201):
    """``|| int_{-tau}^0 e^{A s} ds ||_2`` by composite Simpson quadrature."""
    if tau == 0:
        return 0.0
    nodes += (nodes + 1) % 2
    s = np.linspace(-tau, 0.0, nodes)
    w = np.ones(nodes)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    w *= (s[1] - s[0]) / 3.0
    integral = sum(wk * mc.mat_exp(A, sk) for wk, sk in zip(w, s))
    return float(np.linalg.norm(integral, 2))


def _pos_part_inverse(x):
    return np.inf if x <= 1e-12 else 1.0 / x


def compute_certificate(gains, topo, plant, leader_bound=None, weights=None):
    """Proof-level constants and ultimate bounds for a bounded-leader gain set."""
    if gains.mode != "thm2" or gains.Q is None:
        raise ParameterError("certificate needs bounded-leader gains (with Q)")
    eps_l = gains.leader_bound if leader_bound is None else float(leader_bound)
    parts = build_laplacian(topo)
    if weights is None:
        weights = compute_weights(parts.L1)
    g, lam0 = weights.g, weights.lambda0
    N = topo.followers
    aug = build_augmented(plant)
    P, Q = gains.P, gains.Q
    A_cl = plant.A + plant.B @ gains.K1
    H = -(P @ aug.A_T + aug.A_T.T @ P - 2 * aug.T.T @ aug.T)
    X = -(Q @ A_cl + A_cl.T @ Q)
    eps = np.broadcast_to(gains.eps, (N,)).astype(float)
    sigma = np.broadcast_to(gains.sigma, (N,)).astype(float)
    notes = []

    lmin_H, lmin_X = mc.lambda_min(H), mc.lambda_min(X)
    lmax_P, lmax_Q, lmin_Q = mc.lambda_max(P), mc.lambda_max(Q), mc.lambda_min(Q)
    lmin_G = float(g.min())
    smin = sigma_min(parts.L1)
    for name, val in (("H", lmin_H), ("X", lmin_X), ("P", mc.lambda_min(P)),
                      ("Q", lmin_Q), ("G", lmin_G), ("lambda0", lam0), ("L1", smin)):
        if val <= 0:
            raise CertificateError(f"lambda_min({name}) = {val:.3e} is not positive",
                                   stage="certificate")
    notes.append(f"sigma_min(L1)={smin:.6g} used in place of lambda_min(L1)")

    beta = 2.5 / lam0 * float(g.max())
    kappa1 = 0.5 * (gains.mu - 1.0)
    clamp = kappa1 > 0.5 * eps.min()
    if clamp:
        log.warning("kappa1=(mu-1)/2=%.4g exceeds min eps/2; clamped", kappa1)
        kappa1 = 0.5 * float(eps.min())
        notes.append(f"kappa1 clamped to min(eps)/2={kappa1:.6g} (mu={gains.mu:g})")

    Xi1 = xi1_constant(beta, gains.beta1, g, eps, sigma, topo.leader_links,
                       eps_l, gains.alpha, lmax_P, lmin_H)
    Ktil = np.hstack([plant.B @ gains.K1, -mc.mat_exp(plant.A, plant.tau) @ plant.E])
    gamma1 = 4 * mc.lambda_max(Ktil.T @ Q @ Q @ Ktil) / (
        smin ** 2 * lmin_X * lmin_G * lmin_H) + 2.0
    kappa2 = min(lmin_X / (2 * lmax_Q), lmin_H / (gamma1 * lmax_P), 0.5 * float(eps.min()))
    Xi2 = xi2_constant(gamma1, Xi1, eps_l, sigma)

    bound_Z = np.sqrt(min(Xi2 / (kappa2 * lmin_Q),
                          2 * Xi2 * _pos_part_inverse(mc.lambda_min(X - 2 * kappa2 * Q))))
    bound_e = np.sqrt(min(
        2 * Xi1 * _pos_part_inverse(lmin_G * mc.lambda_min(H - 2 * kappa1 * P)),
        Xi2 * _pos_part_inverse(lmin_G * mc.lambda_min(H - gamma1 * kappa2 * P))))
    if not np.isfinite(bound_e):
        raise CertificateError("no finite bound on the network observer error",
                               stage="certificate")
    bound_w = bound_e / smin
    chi = chi_constant(plant.A, plant.tau)
    radius = bound_Z + chi * np.linalg.norm(plant.E, 2) * bound_w
    return CertificateBundle(
        lambda0=lam0, beta=beta, beta1=gains.beta1, kappa1=kappa1, kappa1_clamped=bool(clamp),
        kappa2=kappa2, gamma1=gamma1, mu=gains.mu, Xi1=Xi1, Xi2=Xi2, chi=chi,
        leader_bound=eps_l, H=H, X=X, bound_Z=float(bound_Z), bound_ehat=float(bound_e),
        bound_wtil=float(bound_w), residual_radius=np.full(N, float(radius)),
        sigma_min_L1=smin, notes=notes)
