"""Mean-value bound on the feedback-linearization residual and the design model.

After the nominal linearizing law the transformed plant reads

    chi' = A chi + B v + dW(chi, v, p),   dW_i = [0, ..., 0, w_i]

with one residual ``w_i`` at the end of each integrator chain. Writing
``w = Phi(c) [chi; v; dp]`` at a mean-value point ``c`` and over-bounding
``|Phi|`` on a box yields the scalar uncertainty gain ``rho`` that enters
the uncertain linear model used for minimax LQG synthesis.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from . import expr as ex
from .expr import Expr
from .feedlin import BrunovskyModel, Diffeomorphism, LieChain, lie_derivative
from .plant import DecomposedPlant, ParameterBox

__all__ = [
    "HyperBox",
    "ResidualMap",
    "SamplingPlan",
    "UncertaintyBound",
    "AssemblyConventions",
    "LinearizedDesignModel",
    "AxisExplosionError",
    "TransformInversionError",
    "build_residual_map",
    "jacobian_phi",
    "bound_rho",
    "assemble_design_model",
    "symbolic_solve",
]


class AxisExplosionError(ValueError):
    pass


class TransformInversionError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class HyperBox:
    """Bounds on the transformed states chi and the new inputs v."""

    chi_lower: np.ndarray
    chi_upper: np.ndarray
    v_lower: np.ndarray
    v_upper: np.ndarray

    def __post_init__(self):
        for name in ("chi_lower", "chi_upper", "v_lower", "v_upper"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).copy()
            if not np.all(np.isfinite(arr)):
                raise ValueError("hyper-rectangle bounds must be finite")
            object.__setattr__(self, name, arr)
        if np.any(self.chi_lower > self.chi_upper) or np.any(self.v_lower > self.v_upper):
            raise ValueError("lower bound exceeds upper bound")

    @classmethod
    def symmetric(cls, chi_half, v_half) -> "HyperBox":
        chi_half = np.abs(np.asarray(chi_half, dtype=float))
        v_half = np.abs(np.asarray(v_half, dtype=float))
        return cls(-chi_half, chi_half, -v_half, v_half)

    def scaled(self, factor: float) -> "HyperBox":
        """Box inflated about its centre by ``factor``."""
        def grow(lo, hi):
            mid, half = (lo + hi) / 2, (hi - lo) / 2
            return mid - factor * half, mid + factor * half

        cl, cu = grow(self.chi_lower, self.chi_upper)
        vl, vu = grow(self.v_lower, self.v_upper)
        return HyperBox(cl, cu, vl, vu)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("chi_lower", "chi_upper", "v_lower", "v_upper")}


def symbolic_solve(matrix: Sequence[Sequence[Expr]], rhs: Sequence[Expr]) -> list[Expr]:
    """Solve a small symbolic linear system by Cramer's rule."""
    m = len(rhs)

    def det(rows: list[list[Expr]]) -> Expr:
        if len(rows) == 1:
            return rows[0][0]
        if len(rows) == 2:
            return rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0]
        out = ex.ZERO
        for j in range(len(rows)):
            minor = [row[:j] + row[j + 1:] for row in rows[1:]]
            term = rows[0][j] * det(minor)
            out = out + term if j % 2 == 0 else out - term
        return out

    mat = [list(row) for row in matrix]
    d = det(mat)
    sol = []
    for k in range(m):
        mk = [row[:k] + [rhs[i]] + row[k + 1:] for i, row in enumerate(mat)]
        sol.append(det(mk) / d)
    return sol


@dataclass(frozen=True, eq=False)
class ResidualMap:
    """Residuals w_i at the chain ends as expressions.

    In ``coordinates="chi"`` mode the expressions are written directly over
    the transformed state names. In ``coordinates="x"`` mode they are written
    over the plant states and the chi-dependence is obtained through the
    nominal transform: Phi_chi = (dw/dx) (dT0/dx)^-1 at x = T0^-1(chi).

    Column layout of Phi is [chi (nbar) | v (m) | dp (q)], where the dp
    columns are dw/dp multiplied by ``param_scale``.
    """

    exprs: tuple[Expr, ...]
    coordinates: str
    coord_names: tuple[str, ...]
    v_names: tuple[str, ...]
    param_names: tuple[str, ...]
    p0: np.ndarray
    block_sizes: tuple[int, ...]
    param_scale: np.ndarray
    transform: Diffeomorphism | None = None
    commands: np.ndarray | None = None

    @property
    def m(self) -> int:
        return len(self.exprs)

    @property
    def nbar(self) -> int:
        return sum(self.block_sizes)

    @property
    def q(self) -> int:
        return len(self.param_names)

    @property
    def width(self) -> int:
        return self.nbar + self.m + self.q

    @property
    def rows(self) -> tuple[int, ...]:
        """Row of the transformed model each residual enters."""
        return tuple(int(i) for i in np.cumsum(self.block_sizes) - 1)

    @classmethod
    def from_exprs(
        cls,
        exprs: Sequence[Expr],
        chi_names: Sequence[str],
        v_names: Sequence[str],
        param_names: Sequence[str] = (),
        p0: Sequence[float] = (),
        block_sizes: Sequence[int] | None = None,
        param_scale: Sequence[float] | None = None,
    ) -> "ResidualMap":
        """Residual map written directly in transformed coordinates."""
        chi_names, v_names, param_names = tuple(chi_names), tuple(v_names), tuple(param_names)
        if block_sizes is None:
            if len(exprs) != 1:
                raise ValueError("block_sizes required for more than one residual")
            block_sizes = (len(chi_names),)
        allowed = set(chi_names) | set(v_names) | set(param_names)
        extra = ex.free_vars(list(exprs)) - allowed
        if extra:
            raise ex.UnknownIdentifierError(sorted(extra)[0])
        scale = np.ones(len(param_names)) if param_scale is None else np.asarray(param_scale, float)
        return cls(
            tuple(exprs), "chi", chi_names, v_names, param_names,
            np.asarray(p0, dtype=float), tuple(block_sizes), scale,
        )

    @cached_property
    def _vector_fn(self):
        names = self.coord_names + self.v_names + self.param_names
        out = list(self.exprs)
        for w in self.exprs:
            out += [ex.diff(w, s) for s in self.coord_names]
            out += [ex.diff(w, s) for s in self.v_names]
            out += [ex.diff(w, s) for s in self.param_names]
        return ex.compile_exprs(out, names, vectorized=True)

    @cached_property
    def depends_on(self) -> np.ndarray:
        """Boolean mask over Phi columns: does Phi vary along that axis."""
        used = set()
        for w in self.exprs:
            for s in self.coord_names + self.v_names + self.param_names:
                used |= ex.free_vars(ex.diff(w, s))
        mask = np.zeros(self.width, dtype=bool)
        if self.coordinates == "chi":
            for j, s in enumerate(self.coord_names):
                mask[j] = s in used
        else:
            if used & set(self.coord_names):
                mask[list(self.transform.state_positions)] = True
        for j, s in enumerate(self.v_names):
            mask[self.nbar + j] = s in used
        for j, s in enumerate(self.param_names):
            mask[self.nbar + self.m + j] = s in used
        return mask

    def _coords(self, chi: np.ndarray) -> np.ndarray:
        if self.coordinates == "chi":
            return chi
        tr = self.transform
        cmds = np.zeros(len(tr.commands)) if self.commands is None else self.commands
        try:
            return tr.invert_nominal(chi[:, list(tr.state_positions)], cmds)
        except np.linalg.LinAlgError as err:
            raise TransformInversionError(str(err)) from None

    def _raw(self, points: np.ndarray):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.width:
            raise ValueError(f"points must have {self.width} columns")
        N = pts.shape[0]
        chi = pts[:, : self.nbar]
        v = pts[:, self.nbar : self.nbar + self.m]
        p = pts[:, self.nbar + self.m :]
        z = self._coords(chi)
        cols = [z[:, j] for j in range(z.shape[1])] + [v[:, j] for j in range(self.m)]
        cols += [p[:, j] for j in range(self.q)]
        vals = self._vector_fn(cols)
        arr = np.stack([np.broadcast_to(np.asarray(a, dtype=float), (N,)) for a in vals], axis=1)
        return arr, z

    def evaluate(self, points) -> np.ndarray:
        """w at rows [chi, v, p]; shape (N, m)."""
        arr, _ = self._raw(points)
        return arr[:, : self.m]

    def jacobian(self, points) -> np.ndarray:
        """Phi at rows [chi, v, p]; shape (N, m, nbar + m + q)."""
        arr, z = self._raw(points)
        N, m = arr.shape[0], self.m
        nz = len(self.coord_names)
        per = nz + m + self.q
        blocks = arr[:, m:].reshape(N, m, per)
        phi = np.zeros((N, m, self.width))
        if self.coordinates == "chi":
            phi[:, :, : self.nbar] = blocks[:, :, :nz]
        else:
            tr = self.transform
            cmds = np.zeros(len(tr.commands)) if self.commands is None else self.commands
            jt = tr.nominal_jacobian(z, cmds)
            # Phi_chi^T = J_T^-T (dw/dx)^T
            sol = np.linalg.solve(np.swapaxes(jt, 1, 2), np.swapaxes(blocks[:, :, :nz], 1, 2))
            phi[:, :, list(tr.state_positions)] = np.swapaxes(sol, 1, 2)
        phi[:, :, self.nbar : self.nbar + m] = blocks[:, :, nz : nz + m]
        phi[:, :, self.nbar + m :] = blocks[:, :, nz + m :] * self.param_scale
        return phi

    @cached_property
    def _state_fn(self):
        names = self.coord_names + self.v_names + self.param_names
        return ex.compile_exprs(list(self.exprs), names)

    def residual_at(self, coords, v, p) -> np.ndarray:
        """w at a single point given in the map's own coordinates (x or chi)."""
        vals = self._state_fn(
            list(map(float, coords)) + list(map(float, v)) + list(map(float, p))
        )
        return np.array(vals)

    def phi_norms(self, points) -> np.ndarray:
        phi = self.jacobian(points)
        if phi.shape[1] == 1:
            return np.linalg.norm(phi[:, 0, :], axis=1)
        return np.linalg.norm(phi, ord=2, axis=(1, 2))


def build_residual_map(
    plant: DecomposedPlant,
    chain: LieChain,
    transform: Diffeomorphism,
    v_names: Sequence[str] | None = None,
    param_scale: Sequence[float] | None = None,
    commands: Sequence[float] | None = None,
) -> ResidualMap:
    """Residuals y_i^(r_i) - v_i under the nominal linearizing law.

    w_i(x, v, p) = L_f^{r_i} nu_i + sum_k L_{g_k} L_f^{r_i-1} nu_i u_k - v_i
    with f, g at the true parameters and u = g*(x,p0)^-1 (v - f*(x,p0)).
    """
    space = plant.space
    states, m = space.states, len(space.inputs)
    if v_names is None:
        v_names = tuple(f"v_{i}" for i in range(m))
    v_names = tuple(v_names)
    if set(v_names) & set(space.names):
        raise ValueError("v names clash with plant variables")
    v = [ex.var(s) for s in v_names]
    u = symbolic_solve(chain.g_star, [v[i] - chain.f_star[i] for i in range(m)])
    g_cols = [plant.plant.g_column(k) for k in range(m)]
    exprs = []
    for i in range(m):
        pos = [j for j, c in enumerate(transform.components) if c is not None]
        start = sum(transform.block_sizes[:i])
        block = [j for j in pos if start <= j < start + transform.block_sizes[i]]
        h = transform.components[block[-1]]
        w = lie_derivative(h, plant.plant.f, states)
        for k in range(m):
            w = w + lie_derivative(h, g_cols[k], states) * u[k]
        exprs.append(w - v[i])
    q = len(space.params)
    scale = np.ones(q) if param_scale is None else np.asarray(param_scale, dtype=float)
    cmd = None if commands is None else np.asarray(commands, dtype=float)
    return ResidualMap(
        tuple(exprs),
        "x",
        tuple(states),
        v_names,
        tuple(space.params),
        np.asarray(plant.plant.p0, dtype=float),
        transform.block_sizes,
        scale,
        transform,
        cmd,
    )


def jacobian_phi(rmap: ResidualMap, c) -> np.ndarray:
    """Phi at a single point c = [chi, v, p]."""
    return rmap.jacobian(np.asarray(c, dtype=float)[None, :])[0]


@dataclass(frozen=True)
class SamplingPlan:
    """Where ``bound_rho`` looks for the maximum of |Phi|.

    ``grid`` forces (True) or forbids (False) the tensor grid; ``None``
    uses it only when the number of active axes is at most ``max_grid_axes``.
    """

    grid_points: int = 5
    max_grid_axes: int = 6
    random: int = 4096
    vertex_max_axes: int = 12
    budget: int = 2_000_000
    seed: int = 0
    polish: int = 8
    margin: float = 1.0
    grid: bool | None = None
    chunk: int = 4096


@dataclass(frozen=True)
class UncertaintyBound:
    rho: float
    argmax: np.ndarray
    samples: int
    seed: int
    raw_max: float = 0.0

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "argmax": self.argmax.tolist(),
            "samples": self.samples,
            "seed": self.seed,
            "raw_max": self.raw_max,
        }


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ROBOLIN_THREADS", "1")))
    except ValueError:
        return 1


def _norms_chunked(rmap: ResidualMap, pts: np.ndarray, chunk: int) -> np.ndarray:
    pieces = [pts[i : i + chunk] for i in range(0, len(pts), chunk)]
    threads = min(_threads(), len(pieces))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(rmap.phi_norms, pieces))
    else:
        out = [rmap.phi_norms(p) for p in pieces]
    return np.concatenate(out) if out else np.zeros(0)


def bound_rho(
    rmap: ResidualMap,
    box: HyperBox,
    omega: ParameterBox,
    plan: SamplingPlan = SamplingPlan(),
) -> UncertaintyBound:
    """rho = max |Phi(c)|_2 over c in box x Omega, by sampling plus local polish.

    Samples are the tensor grid (few active axes), all vertices (up to
    ``vertex_max_axes`` active axes) and Latin-hypercube points; the best
    ``plan.polish`` samples are then refined by bounded local maximization.
    The first maximizer in generation order wins ties.
    """
    lo = np.concatenate([box.chi_lower, box.v_lower, omega.lower])
    hi = np.concatenate([box.chi_upper, box.v_upper, omega.upper])
    if lo.size != rmap.width:
        raise ValueError(f"box and Omega give {lo.size} axes, residual map has {rmap.width}")
    mid = (lo + hi) / 2
    active = np.flatnonzero(rmap.depends_on & (hi > lo))
    k = active.size
    blocks = [mid[None, :]]

    use_grid = plan.grid if plan.grid is not None else k <= plan.max_grid_axes
    if use_grid and k:
        size = float(plan.grid_points) ** k
        if size > plan.budget:
            raise AxisExplosionError(
                f"grid of {plan.grid_points}^{k} points exceeds budget {plan.budget}; use a random-only plan"
            )
        axes = [np.linspace(lo[j], hi[j], plan.grid_points) for j in active]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
        g = np.repeat(mid[None, :], mesh.shape[0], axis=0)
        g[:, active] = mesh
        blocks.append(g)
    if k and k <= plan.vertex_max_axes:
        corners = np.array(list(itertools.product((0, 1), repeat=k)), dtype=float)
        vtx = np.repeat(mid[None, :], corners.shape[0], axis=0)
        vtx[:, active] = lo[active] + corners * (hi[active] - lo[active])
        blocks.append(vtx)
    if k and plan.random > 0:
        lhs = qmc.LatinHypercube(d=k, seed=plan.seed).random(plan.random)
        rnd = np.repeat(mid[None, :], plan.random, axis=0)
        rnd[:, active] = lo[active] + lhs * (hi[active] - lo[active])
        blocks.append(rnd)
    pts = np.concatenate(blocks)
    norms = _norms_chunked(rmap, pts, plan.chunk)
    if not np.all(np.isfinite(norms)):
        bad = pts[~np.isfinite(norms)][0]
        raise FloatingPointError(f"non-finite Jacobian norm at sample {bad.tolist()}")
    best = int(np.argmax(norms))
    best_val, best_pt = float(norms[best]), pts[best]
    evaluated = len(pts)

    if plan.polish and k:
        order = np.argsort(-norms, kind="stable")[: plan.polish]
        span = np.where(hi > lo, hi - lo, 1.0)[active]

        eye = np.eye(k)
        fd = 1e-6

        def negnorm(y, base):
            # value and central-difference gradient in one batched evaluation
            ys = np.vstack([y, np.clip(y + fd * eye, 0.0, 1.0), np.clip(y - fd * eye, 0.0, 1.0)])
            pts_ = np.repeat(base[None, :], ys.shape[0], axis=0)
            pts_[:, active] = lo[active] + ys * span
            vals = rmap.phi_norms(pts_)
            if not np.all(np.isfinite(vals)):
                raise FloatingPointError("non-finite Jacobian norm during polishing")
            step = ys[1 : k + 1].diagonal() - ys[k + 1 :].diagonal()
            grad = np.where(step > 0, (vals[1 : k + 1] - vals[k + 1 :]) / np.where(step > 0, step, 1.0), 0.0)
            return -float(vals[0]), -grad

        for idx in order:
            base = pts[idx].copy()
            y0 = (base[active] - lo[active]) / span
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                try:
                    res = optimize.minimize(
                        negnorm, y0, args=(base,), method="L-BFGS-B", jac=True,
                        bounds=[(0.0, 1.0)] * k, options={"maxiter": 100},
                    )
                except (np.linalg.LinAlgError, FloatingPointError):
                    continue
            evaluated += int(res.nfev) * (2 * k + 1)
            val = -float(res.fun)
            if np.isfinite(val) and val > best_val:
                best_val = val
                best_pt = base.copy()
                best_pt[active] = lo[active] + np.clip(res.x, 0.0, 1.0) * span
    return UncertaintyBound(
        rho=best_val * plan.margin,
        argmax=np.asarray(best_pt),
        samples=evaluated,
        seed=plan.seed,
        raw_max=best_val,
    )


# ---------------------------------------------------------------------------
# uncertain linear design model


@dataclass(frozen=True)
class AssemblyConventions:
    """How rho, E1 and the measured states enter the design model.

    ``measured`` lists the transformed-state indices available to the
    controller. ``output_scale`` multiplies C1 and D1 and ``input_scale``
    multiplies the uncertainty input block of B2 (10 and 0.1 reproduce the
    hypersonic-vehicle design; use 1 and 1 for the unscaled form).
    """

    measured: tuple[int, ...]
    E1: np.ndarray | None = None
    output_scale: float = 10.0
    input_scale: float = 0.1

    def to_dict(self) -> dict:
        return {
            "measured": list(self.measured),
            "E1": None if self.E1 is None else np.asarray(self.E1).tolist(),
            "output_scale": self.output_scale,
            "input_scale": self.input_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AssemblyConventions":
        E1 = d.get("E1")
        return cls(
            tuple(int(i) for i in d["measured"]),
            None if E1 is None else np.asarray(E1, dtype=float),
            float(d.get("output_scale", 10.0)),
            float(d.get("input_scale", 0.1)),
        )


_MATRICES = ("A", "B1", "B2", "C1", "C2", "D1", "D2", "E1", "Cbar1", "Dbar1")


@dataclass(frozen=True, eq=False)
class LinearizedDesignModel:
    """chi' = A chi + B1 v + B2 W,  z = C1 chi + D1 v,  y~ = C2 chi + D2 W."""

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    rho: float
    E1: np.ndarray
    Cbar1: np.ndarray
    Dbar1: np.ndarray
    block_sizes: tuple[int, ...]
    conventions: AssemblyConventions
    notes: tuple[str, ...] = field(default=())

    @property
    def nbar(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B1.shape[1]

    @property
    def ny(self) -> int:
        return self.C2.shape[0]

    @property
    def nw(self) -> int:
        return self.B2.shape[1]

    def to_dict(self) -> dict:
        d = {k: np.asarray(getattr(self, k)).tolist() for k in _MATRICES}
        d.update(
            rho=float(self.rho),
            block_sizes=list(self.block_sizes),
            conventions=self.conventions.to_dict(),
            dims={"nbar": self.nbar, "m": self.m, "ny": self.ny, "nw": self.nw},
        )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LinearizedDesignModel":
        mats = {k: np.asarray(d[k], dtype=float) for k in _MATRICES}
        nbar, m = mats["B1"].shape
        for k in _MATRICES:
            if mats[k].ndim != 2:
                mats[k] = mats[k].reshape(-1, m if k in ("D1", "E1", "Dbar1") else nbar)
        return cls(
            rho=float(d["rho"]),
            block_sizes=tuple(d["block_sizes"]),
            conventions=AssemblyConventions.from_dict(d["conventions"]),
            **mats,
        )

    def fingerprint(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _ctrb_rank(A, B) -> int:
    n = A.shape[0]
    blocks, cur = [], B
    for _ in range(n):
        blocks.append(cur)
        cur = A @ cur
    return int(np.linalg.matrix_rank(np.hstack(blocks)))


def assemble_design_model(
    brunovsky: BrunovskyModel,
    bound: UncertaintyBound | float,
    conventions: AssemblyConventions,
) -> LinearizedDesignModel:
    """Place rho in the uncertain linear model.

    Cbar1 carries rho at the last state of every chain, Dbar1 = rho I,
    C1 = s_out E1^-1 Cbar1, D1 = s_out E1^-1 Dbar1, B2 = [s_in B1 E1, 0],
    D2 = [0, I] and C2 selects the measured states.
    """
    rho = float(bound.rho if isinstance(bound, UncertaintyBound) else bound)
    A, B1 = np.array(brunovsky.A, dtype=float), np.array(brunovsky.B, dtype=float)
    nbar, m = B1.shape
    E1 = np.eye(m) if conventions.E1 is None else np.asarray(conventions.E1, dtype=float)
    if E1.shape != (m, m):
        raise ValueError(f"E1 must be {m} x {m}")
    if abs(np.linalg.det(E1)) < 1e-14 or np.linalg.cond(E1) > 1e12:
        raise np.linalg.LinAlgError("E1 is singular")
    measured = tuple(int(i) for i in conventions.measured)
    if not measured or min(measured) < 0 or max(measured) >= nbar or len(set(measured)) != len(measured):
        raise ValueError("measured must list distinct transformed-state indices")
    ny = len(measured)
    Cbar1 = np.zeros((m, nbar))
    for i, j in enumerate(brunovsky.last_states):
        Cbar1[i, j] = rho
    Dbar1 = rho * np.eye(m)
    E1inv = np.linalg.inv(E1)
    C1 = conventions.output_scale * (E1inv @ Cbar1)
    D1 = conventions.output_scale * (E1inv @ Dbar1)
    B2 = np.hstack([conventions.input_scale * (B1 @ E1), np.zeros((nbar, ny))])
    C2 = np.zeros((ny, nbar))
    C2[np.arange(ny), list(measured)] = 1.0
    D2 = np.hstack([np.zeros((ny, m)), np.eye(ny)])
    notes = []
    if _ctrb_rank(A, B1) < nbar:
        warnings.warn("(A, B1) is not controllable", RuntimeWarning, stacklevel=2)
        notes.append("(A, B1) not controllable")
    if _ctrb_rank(A.T, C2.T) < nbar:
        warnings.warn("(A, C2) is not observable", RuntimeWarning, stacklevel=2)
        notes.append("(A, C2) not observable")
    return LinearizedDesignModel(
        A, B1, B2, C1, C2, D1, D2, rho, E1, Cbar1, Dbar1,
        tuple(brunovsky.block_sizes), conventions, tuple(notes),
    )
