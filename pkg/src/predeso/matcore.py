"""Dense matrix numerics for gain synthesis.

Matrices are plain ``numpy.ndarray`` objects (2D, float). Spectra are 1D
complex arrays. Everything here is a pure function of its arguments.
"""

import math

import numpy as np
import scipy.linalg

from .errors import (
    DimensionError,
    InfeasibleError,
    NumericalError,
    SingularEquationError,
)

PD_PIVOT_TOL = 1e-12
HURWITZ_TOL = 1e-9
STRICT_MARGIN = 1e-8
RANK_RTOL = 1e-10
POLE_COND_MAX = 1e8


def as_matrix(M, name="matrix"):
    """Coerce to a finite 2D float array."""
    A = np.array(M, dtype=float)
    if A.ndim == 1:
        A = A.reshape(1, -1) if A.size else A.reshape(0, 0)
    if A.ndim != 2:
        raise DimensionError(f"{name} must be 2D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise DimensionError(f"{name} has non-finite entries")
    return A


def _square(M, name="matrix"):
    A = as_matrix(M, name)
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be square, got {A.shape}")
    return A


def sym(M):
    return 0.5 * (M + M.T)


# Pade(6,6) coefficients c_k = (2q-k)! q! / ((2q)! k! (q-k)!)
_PADE_Q = 6
_PADE_C = [
    math.factorial(2 * _PADE_Q - k) * math.factorial(_PADE_Q)
    / (math.factorial(2 * _PADE_Q) * math.factorial(k) * math.factorial(_PADE_Q - k))
    for k in range(_PADE_Q + 1)
]


def mat_exp(M, t=1.0):
    """Return ``exp(M * t)`` by scaling and squaring a (6,6) Pade approximant.

    The argument is scaled by ``2**-s`` until its infinity norm is at most
    1/2, where the truncation error of the diagonal Pade approximant is
    below double precision, then squared back ``s`` times.
    """
    X = _square(M, "M") * float(t)
    n = X.shape[0]
    if n == 0:
        return X.copy()
    norm = np.linalg.norm(X, np.inf)
    s = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    X = X / (2.0 ** s)
    eye = np.eye(n)
    num = _PADE_C[0] * eye
    den = _PADE_C[0] * eye
    Xk = eye
    for k in range(1, _PADE_Q + 1):
        Xk = Xk @ X
        term = _PADE_C[k] * Xk
        num = num + term
        den = den + term if k % 2 == 0 else den - term
    E = np.linalg.solve(den, num)
    for _ in range(s):
        E = E @ E
    return E


def integral_exp(M, t):
    """Return ``int_0^t exp(M r) dr`` via the block-triangular exponential."""
    A = _square(M, "M")
    n = A.shape[0]
    blk = np.zeros((2 * n, 2 * n))
    blk[:n, :n] = A
    blk[:n, n:] = np.eye(n)
    return mat_exp(blk, t)[:n, n:]


def eigenvalues(M):
    """All eigenvalues of a square matrix, with multiplicity.

    Delegates to LAPACK (Hessenberg reduction followed by shifted QR).
    """
    A = _square(M, "M")
    try:
        return np.linalg.eigvals(A).astype(complex)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue iteration did not converge: {exc}") from exc


def _cholesky_pivots(M):
    """Diagonal pivots of an unpivoted LDL^T sweep; stops at the first bad one."""
    A = M.copy()
    n = A.shape[0]
    pivots = np.zeros(n)
    for j in range(n):
        d = A[j, j]
        pivots[j] = d
        if not d > PD_PIVOT_TOL:
            return pivots[: j + 1]
        col = A[j + 1:, j] / d
        A[j + 1:, j + 1:] -= np.outer(col, A[j, j + 1:])
    return pivots


def is_positive_definite(M):
    """True iff the symmetric part of ``M`` has all Cholesky pivots above 1e-12."""
    A = _square(M, "M")
    if A.shape[0] == 0:
        return True
    piv = _cholesky_pivots(sym(A))
    return len(piv) == A.shape[0] and bool(np.all(piv > PD_PIVOT_TOL))


def lambda_min(M):
    """Smallest eigenvalue of the symmetric part."""
    return float(np.linalg.eigvalsh(sym(_square(M))).min())


def lambda_max(M):
    """Largest eigenvalue of the symmetric part."""
    return float(np.linalg.eigvalsh(sym(_square(M))).max())


def is_strictly_negative_definite(R):
    """``lambda_max(R) < -1e-8 * ||R||_F`` for the symmetric part of ``R``."""
    R = sym(_square(R, "R"))
    return lambda_max(R) < -STRICT_MARGIN * np.linalg.norm(R, "fro")


def is_hurwitz(M):
    A = _square(M, "M")
    if A.shape[0] == 0:
        return True
    return float(eigenvalues(A).real.max()) < -HURWITZ_TOL


def solve_sylvester(A, B, C):
    """Solve ``A X + X B = C`` through Kronecker vectorization.

    Raises SingularEquationError when ``A`` and ``-B`` share an eigenvalue.
    """
    A = _square(A, "A")
    B = _square(B, "B")
    C = as_matrix(C, "C")
    m, n = A.shape[0], B.shape[0]
    if C.shape != (m, n):
        raise DimensionError(f"C must be {m}x{n}, got {C.shape}")
    la, lb = eigenvalues(A), eigenvalues(B)
    scale = 1.0 + max(np.abs(la).max(initial=0.0), np.abs(lb).max(initial=0.0))
    gap = np.abs(la[:, None] + lb[None, :]).min(initial=np.inf)
    if gap <= 1e-12 * scale:
        raise SingularEquationError(
            f"spectra of A and -B intersect (gap {gap:.3e})", stage="sylvester")
    # vec is column-major: vec(AX) = (I kron A) vec X, vec(XB) = (B^T kron I) vec X
    K = np.kron(np.eye(n), A) + np.kron(B.T, np.eye(m))
    x = np.linalg.solve(K, C.reshape(-1, order="F"))
    return x.reshape((m, n), order="F")


def solve_lyapunov_gain(A_cl, min_eig=None):
    """Return ``Q > 0`` with ``Q A_cl + A_cl^T Q = -I``.

    If ``min_eig`` is given and ``lambda_min(Q)`` falls below it, ``Q`` is
    scaled up so its smallest eigenvalue equals ``min_eig``; positive
    scaling keeps the Lyapunov inequality strict.
    """
    A = _square(A_cl, "A_cl")
    if not is_hurwitz(A):
        raise InfeasibleError("closed-loop matrix is not Hurwitz", stage="lyapunov")
    Q = sym(solve_sylvester(A.T, A, -np.eye(A.shape[0])))
    if min_eig is not None:
        lo = lambda_min(Q)
        if lo < min_eig:
            Q = Q * (min_eig / lo)
    return Q


def rank(M, rtol=RANK_RTOL):
    """Numerical rank from a column-pivoted QR factorization."""
    M = as_matrix(M)
    if M.size == 0:
        return 0
    R = scipy.linalg.qr(M, mode="r", pivoting=True)[0]
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0.0:
        return 0
    return int(np.sum(d > rtol * d[0]))


def observability_matrix(A, C):
    A = _square(A, "A")
    C = as_matrix(C, "C")
    if C.shape[1] != A.shape[0]:
        raise DimensionError("C and A are not conformable")
    blocks = [C]
    for _ in range(A.shape[0] - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def controllability_matrix(A, B):
    A = _square(A, "A")
    B = as_matrix(B, "B")
    if B.shape[0] != A.shape[0]:
        raise DimensionError("A and B are not conformable")
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def is_observable(A, C):
    A = _square(A, "A")
    return rank(observability_matrix(A, C)) == A.shape[0]


def is_controllable(A, B):
    A = _square(A, "A")
    return rank(controllability_matrix(A, B)) == A.shape[0]


def lmi_residual(P, A_T, T, mu=0.0):
    """``P A_T + A_T^T P + mu P - 2 T^T T``."""
    P = _square(P, "P")
    A_T = _square(A_T, "A_T")
    T = as_matrix(T, "T")
    if P.shape != A_T.shape or T.shape[1] != A_T.shape[0]:
        raise DimensionError("P, A_T, T are not conformable")
    return P @ A_T + A_T.T @ P + mu * P - 2.0 * T.T @ T


def _check_spectrum(desired, n):
    p = np.asarray(desired, dtype=complex).ravel()
    if p.size != n:
        raise DimensionError(f"need {n} desired poles, got {p.size}")
    if not np.all(np.isfinite(p)):
        raise DimensionError("desired poles must be finite")
    scale = 1.0 + np.abs(p).max()
    conj = np.sort_complex(np.conj(p))
    if np.abs(np.sort_complex(p) - conj).max() > 1e-9 * scale:
        raise DimensionError("desired poles are not closed under conjugation")
    return p


def real_block_form(poles):
    """Real block-diagonal matrix with the given self-conjugate spectrum."""
    p = list(np.asarray(poles, dtype=complex))
    n = len(p)
    L = np.zeros((n, n))
    i = 0
    reals = sorted((z.real for z in p if abs(z.imag) <= 1e-12 * (1 + abs(z))))
    cplx = sorted((z for z in p if z.imag > 1e-12 * (1 + abs(z))),
                  key=lambda z: (z.real, z.imag))
    for r in reals:
        L[i, i] = r
        i += 1
    for z in cplx:
        L[i:i + 2, i:i + 2] = [[z.real, z.imag], [-z.imag, z.real]]
        i += 2
    if i != n:
        raise DimensionError("desired poles are not closed under conjugation")
    return L


def _spectra_match(a, b, tol):
    a = list(np.asarray(a, dtype=complex))
    for z in np.asarray(b, dtype=complex):
        if not a:
            return False
        d = [abs(z - w) for w in a]
        k = int(np.argmin(d))
        if d[k] > tol:
            return False
        a.pop(k)
    return not a


def pole_place(A, B, desired, seed=0, max_tries=25):
    """Return ``K`` such that ``eig(A + B K)`` equals ``desired``.

    Sylvester-seed construction: with ``L`` a real matrix carrying the
    desired spectrum and a seeded full-rank ``G``, solve
    ``A X - X L = -B G`` and set ``K = G X^-1``, so that
    ``A + B K = X L X^-1``. Seeds whose ``X`` is worse conditioned than
    1e8 are discarded.
    """
    A = _square(A, "A")
    B = as_matrix(B, "B")
    n, p = B.shape
    if n != A.shape[0]:
        raise DimensionError("A and B are not conformable")
    poles = _check_spectrum(desired, n)
    if not is_controllable(A, B):
        raise InfeasibleError("(A, B) is not controllable", stage="pole_place")
    L = real_block_form(poles)
    rng = np.random.default_rng(seed)
    eigA = eigenvalues(A)
    scale = 1.0 + np.abs(poles).max() + np.abs(eigA).max()
    if _spectra_match(eigA, poles, 1e-9 * scale):
        return np.zeros((p, n))

    K0 = np.zeros((p, n))
    A0 = A
    # shift the open-loop spectrum off the targets with a random pre-feedback
    for _ in range(max_tries):
        gap = np.abs(eigenvalues(A0)[:, None] - poles[None, :]).min()
        if gap > 1e-6 * scale:
            break
        K0 = rng.standard_normal((p, n))
        A0 = A + B @ K0
    else:
        raise NumericalError("could not separate open-loop and desired spectra")

    for _ in range(max_tries):
        G = rng.standard_normal((p, n))
        try:
            X = solve_sylvester(A0, -L, -B @ G)
        except SingularEquationError:
            continue
        if np.linalg.cond(X) > POLE_COND_MAX:
            continue
        K = K0 + G @ np.linalg.inv(X)
        if _spectra_match(eigenvalues(A + B @ K), poles, 1e-6 * scale):
            return K
    raise NumericalError(
        f"pole placement failed after {max_tries} seeds (ill-conditioned eigenvectors)")


def _default_observer_poles(A_dual):
    r = max(0.0, float(eigenvalues(A_dual).real.max()))
    n = A_dual.shape[0]
    return -(r + 1.0 + np.arange(n, dtype=float))


def solve_design_lmi(A_T, T, mu=0.0, max_iter=100, tol=1e-12):
    """Return ``P > 0`` with ``P A_T + A_T^T P + mu P - 2 T^T T < 0``.

    Solves the filter Riccati equation
    ``Ah S + S Ah^T - S T^T T S + I = 0`` with ``Ah = A_T + (mu/2) I`` by
    Newton-Kleinman iteration on the dual pair ``(Ah^T, T^T)`` and returns
    ``P = S^-1``. Multiplying the Riccati equation by ``P`` on both sides
    gives ``residual = -T^T T - P^2``.
    """
    A_T = _square(A_T, "A_T")
    T = as_matrix(T, "T")
    if T.shape[1] != A_T.shape[0]:
        raise DimensionError("T and A_T are not conformable")
    nn = A_T.shape[0]
    if mu < 0:
        raise DimensionError("mu must be nonnegative")
    Ah = A_T + 0.5 * mu * np.eye(nn)
    if not is_observable(Ah, T):
        raise InfeasibleError("(A_T + mu/2 I, T) is not observable", stage="design_lmi")
    Ad, Bd = Ah.T, T.T
    K = -pole_place(Ad, Bd, _default_observer_poles(Ad))
    S_prev = None
    for it in range(1, max_iter + 1):
        Ak = Ad - Bd @ K
        S = sym(solve_sylvester(Ak.T, Ak, -(np.eye(nn) + K.T @ K)))
        K = Bd.T @ S
        if S_prev is not None and np.linalg.norm(S - S_prev) <= tol * max(1.0, np.linalg.norm(S)):
            break
        S_prev = S
    else:
        raise NumericalError(f"Newton-Kleinman did not converge in {max_iter} iterations")
    P = sym(np.linalg.inv(S))
    R = lmi_residual(P, A_T, T, mu)
    if not (is_positive_definite(P) and is_strictly_negative_definite(R)):
        raise NumericalError("Riccati solution does not certify the LMI")
    return P
