"""Sign-indefinite algebraic Riccati equations, H-infinity norms and matrix predicates.

Every equation is handled in the canonical form

    A^T X + X A - X M X + Q = 0

with symmetric, possibly indefinite M and Q. The stabilizing solution is read
off the stable invariant subspace of the Hamiltonian [[A, -M], [-Q, -A^T]]
(ordered real Schur form) and polished by one Newton step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

__all__ = [
    "CareProblem",
    "CareSolution",
    "MatrixPredicates",
    "RiccatiError",
    "ImaginaryAxisError",
    "SubspaceConditioningError",
    "ResidualError",
    "UnstableSystemError",
    "solve_care",
    "care_residual",
    "hinf_norm",
    "sigma_max",
    "matrix_predicates",
    "spectral_abscissa",
]


class RiccatiError(np.linalg.LinAlgError):
    pass


class ImaginaryAxisError(RiccatiError):
    pass


class SubspaceConditioningError(RiccatiError):
    pass


class ResidualError(RiccatiError):
    pass


class UnstableSystemError(ValueError):
    pass


def _sym_check(name: str, X: np.ndarray) -> None:
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} has non-finite entries")
    if np.max(np.abs(X - X.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(X), initial=0.0)):
        raise ValueError(f"{name} is not symmetric")


@dataclass(frozen=True)
class CareProblem:
    A: np.ndarray
    M: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n) or M.shape != (n, n) or Q.shape != (n, n):
            raise ValueError("A, M, Q must be square and of equal size")
        if not np.all(np.isfinite(A)):
            raise ValueError("A has non-finite entries")
        _sym_check("M", M)
        _sym_check("Q", Q)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "M", (M + M.T) / 2)
        object.__setattr__(self, "Q", (Q + Q.T) / 2)

    @property
    def hamiltonian(self) -> np.ndarray:
        return np.block([[self.A, -self.M], [-self.Q, -self.A.T]])


@dataclass(frozen=True)
class CareSolution:
    X: np.ndarray
    residual: float
    abscissa: float


def care_residual(p: CareProblem, X: np.ndarray) -> float:
    """Frobenius norm of A^T X + X A - X M X + Q."""
    R = p.A.T @ X + X @ p.A - X @ p.M @ X + p.Q
    return float(np.linalg.norm(R, "fro"))


def spectral_abscissa(A) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return -np.inf
    return float(np.max(np.linalg.eigvals(A).real))


def solve_care(p: CareProblem, tol: float = 1e-9, margin: float = 1e-9) -> CareSolution:
    """Stabilizing solution of A^T X + X A - X M X + Q = 0.

    Raises :class:`ImaginaryAxisError` when the Hamiltonian has eigenvalues
    within ``margin`` (relative to its norm) of the imaginary axis,
    :class:`SubspaceConditioningError` when cond(U1) > 1e12 and
    :class:`ResidualError` when the residual exceeds tol (1 + |X|_F^2).
    """
    n = p.A.shape[0]
    H = p.hamiltonian
    scale = max(1.0, np.linalg.norm(H, 1))
    eig = np.linalg.eigvals(H)
    close = np.abs(eig.real) <= margin * scale
    if np.any(close):
        raise ImaginaryAxisError(
            f"Hamiltonian has eigenvalues on the imaginary axis: {eig[close].tolist()}"
        )
    T, Z, sdim = linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise ImaginaryAxisError(f"stable subspace has dimension {sdim}, expected {n}")
    U1, U2 = Z[:n, :n], Z[n:, :n]
    cond = np.linalg.cond(U1)
    if not np.isfinite(cond) or cond > 1e12:
        raise SubspaceConditioningError(f"stable subspace basis is ill-conditioned (cond={cond:.3e})")
    X = np.linalg.solve(U1.T, U2.T).T
    X = (X + X.T) / 2
    res = care_residual(p, X)

    # one Newton (Kleinman) step: (A - M X)^T X+ + X+ (A - M X) = -(Q + X M X)
    Acl = p.A - p.M @ X
    try:
        Xn = linalg.solve_continuous_lyapunov(Acl.T, -(p.Q + X @ p.M @ X))
        Xn = (Xn + Xn.T) / 2
        res_n = care_residual(p, Xn)
        if np.all(np.isfinite(Xn)) and res_n < res:
            X, res = Xn, res_n
    except (np.linalg.LinAlgError, ValueError):
        pass

    bound = tol * (1.0 + np.linalg.norm(X, "fro") ** 2)
    if not res <= bound:
        raise ResidualError(f"Riccati residual {res:.3e} exceeds {bound:.3e}")
    return CareSolution(X, res, spectral_abscissa(p.A - p.M @ X))


def sigma_max(A, B, C, D, omega: float) -> float:
    """Largest singular value of C (j omega I - A)^-1 B + D."""
    n = A.shape[0]
    G = C @ np.linalg.solve(1j * omega * np.eye(n) - A, B) + D
    return float(np.linalg.norm(G, 2))


def hinf_norm(A, B, C, D=None, tol: float = 1e-6) -> float:
    """H-infinity norm of a stable system by Hamiltonian bisection.

    For gamma above the largest singular value of D, gamma exceeds the norm
    iff the associated Hamiltonian has no imaginary-axis eigenvalues. Each
    failing gamma also yields frequencies whose gains raise the lower bound.
    The returned value is an attained gain within relative ``tol`` of the norm.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    C = np.asarray(C, dtype=float).reshape(-1, A.shape[0])
    D = np.zeros((C.shape[0], B.shape[1])) if D is None else np.asarray(D, dtype=float).reshape(C.shape[0], B.shape[1])
    n = A.shape[0]
    if n and spectral_abscissa(A) >= 0:
        raise UnstableSystemError("hinf_norm requires a Hurwitz A")
    sd = float(np.linalg.norm(D, 2)) if D.size else 0.0
    if n == 0 or not np.any(B) or not np.any(C):
        return sd
    poles = np.linalg.eigvals(A)
    probes = [0.0] + [abs(z.imag) for z in poles] + [abs(z) for z in poles]
    lo = max([sd] + [sigma_max(A, B, C, D, w) for w in probes])
    hi = max(2 * lo, 1e-300)
    if lo == 0.0:
        return 0.0

    def crossings(gamma):
        R = gamma**2 * np.eye(D.shape[1]) - D.T @ D
        Ri = np.linalg.inv(R)
        Ah = A + B @ Ri @ D.T @ C
        H = np.block(
            [
                [Ah, B @ Ri @ B.T],
                [-C.T @ (np.eye(C.shape[0]) + D @ Ri @ D.T) @ C, -Ah.T],
            ]
        )
        eig = np.linalg.eigvals(H)
        thr = 1e-8 * max(1.0, np.linalg.norm(H, 1))
        return [abs(z.imag) for z in eig if abs(z.real) <= thr]

    while crossings(hi):
        lo, hi = hi, 2 * hi
    for _ in range(200):
        if hi - lo <= tol * lo:
            break
        mid = (lo + hi) / 2
        ws = crossings(mid)
        if ws:
            lo = max([mid] + [sigma_max(A, B, C, D, w) for w in ws])
            lo = min(lo, hi)
        else:
            hi = mid
    # lo is a gain attained at some frequency; hi - lo <= tol * lo
    return lo


@dataclass(frozen=True)
class MatrixPredicates:
    is_symmetric: bool
    is_pd: bool
    is_psd: bool
    spectral_norm: float
    is_hurwitz: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def matrix_predicates(X, tol: float = 1e-9) -> MatrixPredicates:
    """Eigenvalue-based predicates with tolerance ``tol`` times the matrix scale.

    Definiteness is judged on the symmetric part.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] != X.shape[1] or not np.all(np.isfinite(X)):
        raise ValueError("matrix must be square and finite")
    norm = float(np.linalg.norm(X, 2)) if X.size else 0.0
    thr = tol * max(1.0, norm)
    sym = bool(np.max(np.abs(X - X.T), initial=0.0) <= thr)
    ev = np.linalg.eigvalsh((X + X.T) / 2) if X.size else np.zeros(0)
    return MatrixPredicates(
        is_symmetric=sym,
        is_pd=bool(np.all(ev > thr)),
        is_psd=bool(np.all(ev >= -thr)),
        spectral_norm=norm,
        is_hurwitz=bool(spectral_abscissa(X) < -thr) if X.size else True,
    )
