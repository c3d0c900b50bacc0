"""Minimax LQG output-feedback synthesis for the uncertain linear design model.

For a scaling parameter tau > 0 the controller is built from the stabilizing
solutions of two H-infinity type Riccati equations,

    (A - B2 D2' Gi C2) Y + Y (A - B2 D2' Gi C2)' - Y (C2' Gi C2 - R_tau / tau) Y
        + B2 (I - D2' Gi D2) B2' = 0
    X (A - B1 G_tau^-1 U') + (A - B1 G_tau^-1 U')' X
        - X (B1 G_tau^-1 B1' - B2 B2' / tau) X + R_tau - U G_tau^-1 U' = 0

with Gi = (D2 D2')^-1, R_tau = R + tau C1'C1, G_tau = G + tau D1'D1 and
U = tau C1'D1. ``tau = inf`` is accepted for models without uncertainty
(C1 = D1 = 0) and reduces everything to classical LQG.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .meanval import LinearizedDesignModel
from .riccati import (
    CareProblem,
    RiccatiError,
    hinf_norm,
    matrix_predicates,
    solve_care,
    spectral_abscissa,
)

__all__ = [
    "SynthesisWeights",
    "TauCertificate",
    "Infeasible",
    "Controller",
    "VerificationReport",
    "NoFeasibleTauError",
    "SynthesisInconsistencyError",
    "solve_design_pair",
    "cost_bound",
    "optimize_tau",
    "build_controller",
    "closed_loop",
    "verify_design",
]


class NoFeasibleTauError(RuntimeError):
    def __init__(self, message: str, grid: list[tuple[float, str]]):
        super().__init__(message)
        self.grid = grid


class SynthesisInconsistencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthesisWeights:
    """Cost weights: R on the transformed state, G on the new input."""

    R: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        for name, M in (("R", R), ("G", G)):
            if M.shape[0] != M.shape[1] or not np.all(np.isfinite(M)):
                raise ValueError(f"{name} must be square and finite")
            if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max(initial=0.0))):
                raise ValueError(f"{name} must be symmetric")
        if not matrix_predicates(R).is_psd:
            raise ValueError("R must be positive semidefinite")
        if not matrix_predicates(G).is_pd:
            raise ValueError("G must be positive definite")
        object.__setattr__(self, "R", (R + R.T) / 2)
        object.__setattr__(self, "G", (G + G.T) / 2)

    @classmethod
    def diagonal(cls, r, g) -> "SynthesisWeights":
        return cls(np.diag(np.asarray(r, dtype=float)), np.diag(np.asarray(g, dtype=float)))

    def to_dict(self) -> dict:
        return {"R": self.R.tolist(), "G": self.G.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisWeights":
        return cls(np.asarray(d["R"], dtype=float), np.asarray(d["G"], dtype=float))


def _tau_json(tau: float):
    return "inf" if math.isinf(tau) else float(tau)


def _tau_from_json(value) -> float:
    return math.inf if value == "inf" else float(value)


@dataclass(frozen=True)
class Infeasible:
    tau: float
    reason: str
    feasible = False


@dataclass(frozen=True)
class TauCertificate:
    tau: float
    Y: np.ndarray
    X: np.ndarray
    W_tau: float
    flags: dict
    residuals: dict = field(default_factory=dict)
    wtau_inverse: str = "scaled"

    @property
    def feasible(self) -> bool:
        return all(self.flags.values()) and math.isfinite(self.W_tau)

    @property
    def tau_inv(self) -> float:
        return 0.0 if math.isinf(self.tau) else 1.0 / self.tau

    def to_dict(self) -> dict:
        return {
            "tau": _tau_json(self.tau),
            "Y": self.Y.tolist(),
            "X": self.X.tolist(),
            "W_tau": self.W_tau,
            "flags": dict(self.flags),
            "residuals": dict(self.residuals),
            "wtau_inverse": self.wtau_inverse,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TauCertificate":
        return cls(
            _tau_from_json(d["tau"]),
            np.asarray(d["Y"], dtype=float),
            np.asarray(d["X"], dtype=float),
            float(d["W_tau"]),
            dict(d["flags"]),
            dict(d.get("residuals", {})),
            d.get("wtau_inverse", "scaled"),
        )


@dataclass(frozen=True)
class _Terms:
    tau_inv: float
    R_tau: np.ndarray
    G_tau: np.ndarray
    U_tau: np.ndarray
    Gamma: np.ndarray
    Gamma_inv: np.ndarray


def _terms(model: LinearizedDesignModel, weights: SynthesisWeights, tau: float) -> _Terms:
    if not tau > 0:
        raise ValueError("tau must be positive")
    if weights.R.shape != model.A.shape or weights.G.shape != (model.m, model.m):
        raise ValueError("weight dimensions do not match the design model")
    Gamma = model.D2 @ model.D2.T
    if np.linalg.cond(Gamma) > 1e12:
        raise np.linalg.LinAlgError("D2 D2^T is singular")
    C1, D1 = model.C1, model.D1
    if math.isinf(tau):
        if np.any(C1) or np.any(D1):
            raise ValueError("tau = inf is only defined for models with C1 = D1 = 0")
        R_tau, G_tau = weights.R, weights.G
        U_tau = np.zeros((model.nbar, model.m))
        tau_inv = 0.0
    else:
        R_tau = weights.R + tau * C1.T @ C1
        G_tau = weights.G + tau * D1.T @ D1
        U_tau = tau * C1.T @ D1
        tau_inv = 1.0 / tau
    return _Terms(tau_inv, R_tau, G_tau, U_tau, Gamma, np.linalg.inv(Gamma))


def _y_problem(model, t: _Terms) -> CareProblem:
    A, B2, C2, D2 = model.A, model.B2, model.C2, model.D2
    At = A - B2 @ D2.T @ t.Gamma_inv @ C2
    M = C2.T @ t.Gamma_inv @ C2 - t.tau_inv * t.R_tau
    Q = B2 @ (np.eye(D2.shape[1]) - D2.T @ t.Gamma_inv @ D2) @ B2.T
    return CareProblem(At.T, (M + M.T) / 2, (Q + Q.T) / 2)


def _x_problem(model, t: _Terms) -> CareProblem:
    A, B1, B2 = model.A, model.B1, model.B2
    Gi = np.linalg.inv(t.G_tau)
    At = A - B1 @ Gi @ t.U_tau.T
    M = B1 @ Gi @ B1.T - t.tau_inv * B2 @ B2.T
    Q = t.R_tau - t.U_tau @ Gi @ t.U_tau.T
    return CareProblem(At, (M + M.T) / 2, (Q + Q.T) / 2)


def solve_design_pair(
    model: LinearizedDesignModel,
    weights: SynthesisWeights,
    tau: float,
    wtau_inverse: str = "scaled",
) -> TauCertificate | Infeasible:
    """Solve both Riccati equations at ``tau`` and evaluate the feasibility flags."""
    t = _terms(model, weights, tau)
    try:
        ysol = solve_care(_y_problem(model, t))
        xsol = solve_care(_x_problem(model, t))
    except RiccatiError as err:
        return Infeasible(tau, f"{type(err).__name__}: {err}")
    Y, X = ysol.X, xsol.X
    coupling = np.eye(model.nbar) - t.tau_inv * Y @ X
    flags = {
        "Y_pd": matrix_predicates(Y).is_pd,
        "X_pd": matrix_predicates(X).is_pd,
        # I - YX/tau is similar to a symmetric matrix when Y, X > 0; test its spectrum
        "coupling_pd": bool(np.all(np.linalg.eigvals(coupling).real > 1e-9)),
        "weight_psd": matrix_predicates(t.R_tau - t.U_tau @ np.linalg.solve(t.G_tau, t.U_tau.T)).is_psd,
    }
    cert = TauCertificate(
        tau, Y, X, math.inf, flags,
        {"Y": ysol.residual, "X": xsol.residual}, wtau_inverse,
    )
    if not all(flags.values()):
        failed = ", ".join(k for k, v in flags.items() if not v)
        return Infeasible(tau, f"feasibility conditions violated: {failed}")
    W = cost_bound(model, weights, cert)
    if not math.isfinite(W):
        return Infeasible(tau, "cost bound is not finite")
    return TauCertificate(tau, Y, X, W, flags, cert.residuals, wtau_inverse)


def cost_bound(model: LinearizedDesignModel, weights: SynthesisWeights, cert: TauCertificate) -> float:
    """W_tau for a certificate.

    ``scaled`` (default) evaluates
    tr[(Y C2' + B2 D2') Gi (C2 Y + D2 B2') X (I - Y X / tau)^-1 + Y R_tau],
    which stays finite wherever the coupling condition holds and tends to the
    classical LQG cost as tau grows on models without uncertainty.
    ``printed`` evaluates the literal form with tau Y and (I - Y X)^-1.
    Returns ``inf`` when the coupling matrix is singular.
    """
    t = _terms(model, weights, cert.tau)
    Y, X = cert.Y, cert.X
    B2, C2, D2 = model.B2, model.C2, model.D2
    n = model.nbar
    if cert.wtau_inverse == "printed":
        if math.isinf(cert.tau):
            return math.inf
        Ys = cert.tau * Y
        coupling = np.eye(n) - Y @ X
    elif cert.wtau_inverse == "scaled":
        Ys = Y
        coupling = np.eye(n) - t.tau_inv * Y @ X
    else:
        raise ValueError("wtau_inverse must be 'scaled' or 'printed'")
    if np.linalg.cond(coupling) > 1e12:
        return math.inf
    L = (Ys @ C2.T + B2 @ D2.T) @ t.Gamma_inv @ (C2 @ Ys + D2 @ B2.T)
    W = np.trace(L @ X @ np.linalg.inv(coupling) + Ys @ t.R_tau)
    return float(W)


def _better(a: TauCertificate, b: TauCertificate | None) -> bool:
    return b is None or (a.W_tau, a.tau) < (b.W_tau, b.tau)


def optimize_tau(
    model: LinearizedDesignModel,
    weights: SynthesisWeights,
    bracket: tuple[float, float] = (1e-3, 1e3),
    budget: int = 64,
    wtau_inverse: str = "scaled",
    refine_iters: int = 80,
) -> TauCertificate:
    """Minimize W_tau over tau in ``bracket``.

    A log-spaced probe grid of ``budget`` points locates the best feasible
    probe; golden-section search on log tau then refines between its grid
    neighbours (infeasible points count as +inf). Ties are resolved by the
    smaller tau, so the result does not depend on evaluation order. Models
    with C1 = D1 = 0 also try tau = inf, the exact LQG limit.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not (0 < lo <= hi) or not math.isfinite(hi):
        raise ValueError("tau bracket must satisfy 0 < tau_min <= tau_max < inf")
    taus = [lo] if lo == hi else list(np.geomspace(lo, hi, max(2, int(budget))))
    probes: list[tuple[float, str]] = []
    results: list[TauCertificate | Infeasible] = []
    best = None
    for tau in taus:
        res = solve_design_pair(model, weights, float(tau), wtau_inverse)
        results.append(res)
        if isinstance(res, TauCertificate):
            probes.append((float(tau), f"W={res.W_tau:.6g}"))
            if _better(res, best):
                best = res
        else:
            probes.append((float(tau), res.reason))
    if best is None:
        raise NoFeasibleTauError(
            f"no feasible tau in [{lo:g}, {hi:g}] ({len(taus)} probes)", probes
        )
    if len(taus) == 1:
        return best
    i = taus.index(best.tau)
    a = math.log(taus[max(i - 1, 0)])
    b = math.log(taus[min(i + 1, len(taus) - 1)])
    cache: dict[float, float] = {}

    def value(s: float) -> float:
        if s not in cache:
            res = solve_design_pair(model, weights, math.exp(s), wtau_inverse)
            nonlocal best
            if isinstance(res, TauCertificate):
                cache[s] = res.W_tau
                if _better(res, best):
                    best = res
            else:
                cache[s] = math.inf
        return cache[s]

    ratio = (math.sqrt(5) - 1) / 2
    c, d = b - ratio * (b - a), a + ratio * (b - a)
    fc, fd = value(c), value(d)
    for _ in range(refine_iters):
        if b - a <= 1e-12 * max(1.0, abs(a)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - ratio * (b - a)
            fc = value(c)
        else:
            a, c, fc = c, d, fd
            d = a + ratio * (b - a)
            fd = value(d)
    if not np.any(model.C1) and not np.any(model.D1):
        # without an uncertainty channel W_tau decreases towards its tau -> inf limit
        res = solve_design_pair(model, weights, math.inf, wtau_inverse)
        if isinstance(res, TauCertificate) and wtau_inverse == "scaled" and res.W_tau <= best.W_tau:
            best = res
    return best


@dataclass(frozen=True, eq=False)
class Controller:
    """chihat' = Ac chihat + Bc y~,  v = K chihat."""

    Ac: np.ndarray
    Bc: np.ndarray
    K: np.ndarray
    certificate: TauCertificate
    weights: SynthesisWeights
    model_fingerprint: str

    def to_dict(self) -> dict:
        return {
            "Ac": self.Ac.tolist(),
            "Bc": self.Bc.tolist(),
            "K": self.K.tolist(),
            "certificate": self.certificate.to_dict(),
            "weights": self.weights.to_dict(),
            "model_fingerprint": self.model_fingerprint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Controller":
        return cls(
            np.asarray(d["Ac"], dtype=float),
            np.asarray(d["Bc"], dtype=float),
            np.asarray(d["K"], dtype=float),
            TauCertificate.from_dict(d["certificate"]),
            SynthesisWeights.from_dict(d["weights"]),
            d["model_fingerprint"],
        )

    def fingerprint(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _controller_matrices(model, weights, cert):
    t = _terms(model, weights, cert.tau)
    Y, X = cert.Y, cert.X
    A, B1, B2, C2, D2 = model.A, model.B1, model.B2, model.C2, model.D2
    K = -np.linalg.solve(t.G_tau, B1.T @ X + t.U_tau.T)
    coupling = np.eye(model.nbar) - t.tau_inv * Y @ X
    Bc = np.linalg.solve(coupling, (Y @ C2.T + B2 @ D2.T) @ t.Gamma_inv)
    Ac = A + B1 @ K - Bc @ C2 + t.tau_inv * (B2 - Bc @ D2) @ B2.T @ X
    return Ac, Bc, K


def closed_loop(model: LinearizedDesignModel, controller: Controller):
    """State matrix and disturbance input of the loop with state [chi; chihat]."""
    A, B1, B2, C2, D2 = model.A, model.B1, model.B2, model.C2, model.D2
    Acl = np.block([[A, B1 @ controller.K], [controller.Bc @ C2, controller.Ac]])
    Bcl = np.vstack([B2, controller.Bc @ D2])
    return Acl, Bcl


def build_controller(
    model: LinearizedDesignModel, weights: SynthesisWeights, cert: TauCertificate
) -> Controller:
    """Controller gains from a feasible certificate; the loop must be Hurwitz."""
    if not cert.feasible:
        raise ValueError("certificate is not feasible")
    Ac, Bc, K = _controller_matrices(model, weights, cert)
    ctrl = Controller(Ac, Bc, K, cert, weights, model.fingerprint())
    Acl, _ = closed_loop(model, ctrl)
    eig = np.linalg.eigvals(Acl)
    if not np.all(eig.real < 0):
        raise SynthesisInconsistencyError(
            f"closed loop is not Hurwitz; eigenvalues {np.sort_complex(eig).tolist()}"
        )
    return ctrl


@dataclass
class VerificationReport:
    fingerprint_match: bool
    stable: bool
    abscissa: float
    hinf_certified: float
    hinf_psi: float
    sqrt_tau: float
    perturbed_abscissa: float
    delta_samples: int
    reconstruction_error: float
    passed: bool
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        for k in ("hinf_certified", "sqrt_tau", "hinf_psi"):
            if isinstance(d[k], float) and math.isinf(d[k]):
                d[k] = "inf"
        return d


def _sqrtm_psd(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh((M + M.T) / 2)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def verify_design(
    model: LinearizedDesignModel,
    controller: Controller,
    delta_samples: int = 32,
    seed: int = 0,
    tol: float = 1e-6,
) -> VerificationReport:
    """Closed-loop checks for a synthesized controller.

    ``hinf_certified`` is the norm from W to [Psi / sqrt(tau); z], the output
    of the scaled problem the Riccati pair solves; it must not exceed 1.
    ``hinf_psi`` is the unscaled W -> Psi norm, bounded by sqrt(tau).
    Constant uncertainties with |Delta| <= 1 closing w1 = Delta z give the
    perturbed spectral abscissa.
    """
    notes = []
    match = controller.model_fingerprint == model.fingerprint()
    if not match:
        notes.append("controller was synthesized for a different design model")
    Acl, Bcl = closed_loop(model, controller)
    absc = spectral_abscissa(Acl)
    stable = absc < 0
    w = controller.weights
    nb, m = model.nbar, model.m
    Rh, Gh = _sqrtm_psd(w.R), _sqrtm_psd(w.G)
    C_psi = np.block([[Rh, np.zeros((nb, nb))], [np.zeros((m, nb)), Gh @ controller.K]])
    C_z = np.hstack([model.C1, model.D1 @ controller.K])
    tau = controller.certificate.tau
    cert_err = 0.0
    Ac, Bc, K = _controller_matrices(model, w, controller.certificate)
    cert_err = float(
        max(np.abs(Ac - controller.Ac).max(), np.abs(Bc - controller.Bc).max(), np.abs(K - controller.K).max())
    )
    if stable:
        hpsi = hinf_norm(Acl, Bcl, C_psi)
        if math.isinf(tau):
            hcert = 0.0
        else:
            hcert = hinf_norm(Acl, Bcl, np.vstack([C_psi / math.sqrt(tau), C_z]))
    else:
        hpsi = hcert = math.inf
    rng = np.random.default_rng(seed)
    deltas = [np.eye(m), -np.eye(m)]
    for _ in range(max(0, delta_samples - 2)):
        D = rng.normal(size=(m, m))
        D /= max(np.linalg.norm(D, 2), 1e-300)
        deltas.append(D * rng.uniform(0.0, 1.0) ** 0.25)
    Bw1 = Bcl[:, :m]
    pert = max(spectral_abscissa(Acl + Bw1 @ D @ C_z) for D in deltas)
    passed = bool(match and stable and hcert <= 1 + tol and cert_err <= 1e-10 * max(1.0, np.abs(controller.Ac).max()))
    return VerificationReport(
        fingerprint_match=bool(match),
        stable=bool(stable),
        abscissa=absc,
        hinf_certified=float(hcert),
        hinf_psi=float(hpsi),
        sqrt_tau=math.sqrt(tau),
        perturbed_abscissa=float(pert),
        delta_samples=len(deltas),
        reconstruction_error=cert_err,
        passed=passed,
        notes=notes,
    )
