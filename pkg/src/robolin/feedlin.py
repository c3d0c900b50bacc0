"""Exact input-output linearization of the nominal plant.

The nominal law ``u = g*(x)^-1 (v - f*(x))`` turns every output into a
chain of integrators ``y_i^(r_i) = v_i``; :func:`brunovsky_form` builds the
matching linear model and :func:`build_transform` the coordinates
``chi = [int(y-yc), y-yc, y', ..., y^(r-1)]`` for each output.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import expr as ex
from .expr import Expr
from .plant import DecomposedPlant

__all__ = [
    "LieChain",
    "RelativeDegreeProfile",
    "Diffeomorphism",
    "BrunovskyModel",
    "DegreeUndeterminedError",
    "SingularDecouplingError",
    "SingularDecouplingWarning",
    "FullRelativeDegreeError",
    "StateBox",
    "lie_derivative",
    "relative_degree",
    "linearizing_control",
    "brunovsky_form",
    "build_transform",
]


class DegreeUndeterminedError(RuntimeError):
    pass


class SingularDecouplingError(np.linalg.LinAlgError):
    pass


class SingularDecouplingWarning(RuntimeWarning):
    pass


class FullRelativeDegreeError(ValueError):
    pass


def lie_derivative(h: Expr, field: Sequence[Expr], states: Sequence[str]) -> Expr:
    """L_field h = sum_j dh/dx_j * field_j."""
    if len(field) != len(states):
        raise ValueError(f"field has {len(field)} components for {len(states)} states")
    out = ex.ZERO
    for name, fj in zip(states, field):
        if fj is ex.ZERO:
            continue
        out = out + ex.diff(h, name) * fj
    return out


@dataclass(frozen=True)
class StateBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("invalid state box")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, half_widths) -> "StateBox":
        hw = np.asarray(half_widths, dtype=float)
        return cls(-hw, hw)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * rng.random((count, self.lower.size))


@dataclass(frozen=True, eq=False)
class LieChain:
    """Nominal Lie-derivative chains and the decoupling matrix.

    ``chains[i][j]`` is L_{f0}^{j+1} nu_i for j < r_i, so ``chains[i][-1]``
    is the i-th entry of f*; ``decoupling[i][k]`` is
    L_{g_k0} L_{f0}^{r_i-1} nu_i.
    """

    states: tuple[str, ...]
    outputs: tuple[Expr, ...]
    chains: tuple[tuple[Expr, ...], ...]
    decoupling: tuple[tuple[Expr, ...], ...]

    @property
    def r(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.chains)

    @property
    def f_star(self) -> tuple[Expr, ...]:
        return tuple(c[-1] for c in self.chains)

    @property
    def g_star(self) -> tuple[tuple[Expr, ...], ...]:
        return self.decoupling

    def output_derivatives(self, i: int) -> tuple[Expr, ...]:
        """[nu_i, L nu_i, ..., L^{r_i-1} nu_i] (the non-integral coordinates)."""
        return (self.outputs[i],) + self.chains[i][:-1]

    @cached_property
    def _fg_fn(self):
        m = len(self.outputs)
        exprs = list(self.f_star) + [self.decoupling[i][k] for i in range(m) for k in range(m)]
        return ex.compile_exprs(exprs, self.states)

    @cached_property
    def _fg_vec(self):
        m = len(self.outputs)
        exprs = list(self.f_star) + [self.decoupling[i][k] for i in range(m) for k in range(m)]
        return ex.compile_exprs(exprs, self.states, vectorized=True)

    def evaluate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """f*(x, p0) and g*(x, p0) as arrays."""
        m = len(self.outputs)
        vals = self._fg_fn(list(map(float, x)))
        return np.array(vals[:m]), np.array(vals[m:]).reshape(m, m)


@dataclass(frozen=True, eq=False)
class RelativeDegreeProfile:
    r: tuple[int, ...]
    n: int
    chain: LieChain | None = None
    singular_samples: tuple = ()

    @property
    def total(self) -> int:
        return sum(self.r)

    @property
    def full(self) -> bool:
        return self.total == self.n


def relative_degree(
    plant: DecomposedPlant,
    region: StateBox,
    seed: int = 0,
    samples: int = 200,
    threshold: float = 1e-8,
) -> RelativeDegreeProfile:
    """Relative degree of each output of the nominal plant, certified by sampling.

    For every output the smallest j with some L_{g_k0} L_{f0}^{j-1} nu_i
    non-negligible on the sampled region is taken. Sample points where the
    decoupling matrix is (nearly) singular are reported through a
    :class:`SingularDecouplingWarning` and ``singular_samples``.
    """
    space = plant.space
    states = space.states
    n, m = len(states), len(space.inputs)
    rng = np.random.default_rng(seed)
    pts = region.sample(rng, samples)
    columns = [pts[:, j] for j in range(n)]
    g_cols = [plant.g0_column(k) for k in range(m)]
    chains, rows = [], []
    for i, nu in enumerate(plant.plant.outputs):
        if ex.free_vars(nu) & set(space.params):
            raise ValueError("outputs must not depend on parameters")
        h = nu
        chain: list[Expr] = []
        for j in range(1, n + 1):
            lg = [lie_derivative(h, g_cols[k], states) for k in range(m)]
            lf = lie_derivative(h, plant.f0, states)
            vals = ex.compile_exprs(lg + [lf], states, vectorized=True)(columns)
            vals = [np.broadcast_to(np.asarray(v, dtype=float), (samples,)) for v in vals]
            scale = max(1.0, float(np.nanmax(np.abs(vals[-1]))))
            chain.append(lf)
            if any(float(np.nanmax(np.abs(v))) > threshold * scale for v in vals[:-1]):
                chains.append(tuple(chain))
                rows.append(tuple(lg))
                break
            h = lf
        else:
            raise DegreeUndeterminedError(f"no relative degree <= {n} found for output {i}")
    lie = LieChain(tuple(states), tuple(plant.plant.outputs), tuple(chains), tuple(rows))
    fg = lie._fg_vec(columns)
    gmat = np.stack(
        [np.broadcast_to(np.asarray(v, dtype=float), (samples,)) for v in fg[m:]], axis=-1
    ).reshape(samples, m, m)
    dets = np.abs(np.linalg.det(gmat))
    bad = tuple(pts[k].tolist() for k in np.flatnonzero(~(dets >= 1e-10)))
    if bad:
        warnings.warn(
            f"decoupling matrix nearly singular at {len(bad)} of {samples} samples",
            SingularDecouplingWarning,
            stacklevel=2,
        )
    return RelativeDegreeProfile(tuple(len(c) for c in chains), n, lie, bad)


def linearizing_control(chain: LieChain, x, v, max_cond: float = 1e12) -> np.ndarray:
    """u = g*(x)^-1 (v - f*(x)), solved rather than inverted."""
    fstar, gstar = chain.evaluate(x)
    return _solve_decoupling(fstar, gstar, v, max_cond, x)


def _solve_decoupling(fstar, gstar, v, max_cond, x=None) -> np.ndarray:
    cond = np.linalg.cond(gstar)
    if not np.isfinite(cond) or cond > max_cond:
        raise SingularDecouplingError(f"decoupling matrix singular (cond={cond:.3e}) at x={list(x) if x is not None else '?'}")
    return np.linalg.solve(gstar, np.asarray(v, dtype=float) - fstar)


@dataclass(frozen=True)
class BrunovskyModel:
    A: np.ndarray
    B: np.ndarray
    block_sizes: tuple[int, ...]

    @property
    def last_states(self) -> tuple[int, ...]:
        """Index of the last state of each integrator chain."""
        return tuple(int(i) for i in np.cumsum(self.block_sizes) - 1)


def brunovsky_form(profile: RelativeDegreeProfile | Sequence[int], with_integrators: bool = True) -> BrunovskyModel:
    r = profile.r if isinstance(profile, RelativeDegreeProfile) else tuple(int(k) for k in profile)
    sizes = tuple(k + 1 if with_integrators else k for k in r)
    nbar, m = sum(sizes), len(sizes)
    A = np.zeros((nbar, nbar))
    B = np.zeros((nbar, m))
    start = 0
    for i, size in enumerate(sizes):
        for j in range(size - 1):
            A[start + j, start + j + 1] = 1.0
        B[start + size - 1, i] = 1.0
        start += size
    return BrunovskyModel(A, B, sizes)


@dataclass(frozen=True, eq=False)
class Diffeomorphism:
    """Stacked coordinates chi = T(x, p, commands).

    ``components`` holds one expression per transformed state, with ``None``
    at integral positions (those states are integrated, not computed from x).
    ``nominal`` is the same map with parameters fixed at p0.
    """

    states: tuple[str, ...]
    params: tuple[str, ...]
    commands: tuple[str, ...]
    components: tuple[Expr | None, ...]
    nominal: tuple[Expr | None, ...]
    block_sizes: tuple[int, ...]
    with_integrators: bool

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def integral_positions(self) -> tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.components) if c is None)

    @property
    def state_positions(self) -> tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.components) if c is not None)

    @cached_property
    def _uncertain_fn(self):
        exprs = [c for c in self.components if c is not None]
        return ex.compile_exprs(exprs, self.states + self.params + self.commands)

    @cached_property
    def _nominal_vec(self):
        exprs = [c for c in self.nominal if c is not None]
        return ex.compile_exprs(exprs, self.states + self.commands, vectorized=True)

    @cached_property
    def _nominal_jac_vec(self):
        exprs = [c for c in self.nominal if c is not None]
        jac = [ex.diff(c, s) for c in exprs for s in self.states]
        return ex.compile_exprs(jac, self.states + self.commands, vectorized=True)

    def evaluate(self, x, p, commands, integrals=None) -> np.ndarray:
        """chi under the true parameters p; integral states copied in."""
        vals = self._uncertain_fn(list(map(float, x)) + list(map(float, p)) + list(map(float, commands)))
        chi = np.zeros(self.dim)
        chi[list(self.state_positions)] = vals
        if self.integral_positions:
            chi[list(self.integral_positions)] = 0.0 if integrals is None else integrals
        return chi

    def nominal_states(self, x, commands) -> np.ndarray:
        """Non-integral coordinates of the nominal map, vectorized over rows of x."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        c = np.broadcast_to(np.asarray(commands, dtype=float), (x.shape[0], len(self.commands)))
        cols = [x[:, j] for j in range(x.shape[1])] + [c[:, j] for j in range(c.shape[1])]
        vals = self._nominal_vec(cols)
        return np.stack([np.broadcast_to(np.asarray(v, dtype=float), (x.shape[0],)) for v in vals], axis=1)

    def nominal_jacobian(self, x, commands) -> np.ndarray:
        """d(non-integral nominal chi)/dx with shape (rows, n, n)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        rows, n = x.shape
        c = np.broadcast_to(np.asarray(commands, dtype=float), (rows, len(self.commands)))
        cols = [x[:, j] for j in range(n)] + [c[:, j] for j in range(c.shape[1])]
        vals = self._nominal_jac_vec(cols)
        k = len(self.state_positions)
        flat = np.stack([np.broadcast_to(np.asarray(v, dtype=float), (rows,)) for v in vals], axis=1)
        return flat.reshape(rows, k, n)

    def invert_nominal(self, chi_states, commands, x0=None, tol=1e-11, max_iter=50) -> np.ndarray:
        """Solve T_nominal(x) = chi_states for x by Newton's method (row-wise).

        Raises ``np.linalg.LinAlgError`` when the map is not numerically
        invertible at some row.
        """
        target = np.atleast_2d(np.asarray(chi_states, dtype=float))
        rows = target.shape[0]
        n = len(self.states)
        x = np.zeros((rows, n)) if x0 is None else np.array(np.broadcast_to(x0, (rows, n)), dtype=float)
        scale = 1.0 + np.abs(target)
        for _ in range(max_iter):
            res = self.nominal_states(x, commands) - target
            if np.all(np.abs(res) <= tol * scale):
                return x
            jac = self.nominal_jacobian(x, commands)
            conds = np.linalg.cond(jac)
            if not np.all(np.isfinite(conds)) or np.any(conds > 1e12):
                raise np.linalg.LinAlgError("nominal transform is not invertible on the working box")
            step = np.linalg.solve(jac, res[..., None])[..., 0]
            # damp steps that would not reduce the residual
            x_new = x - step
            res_new = np.abs(self.nominal_states(x_new, commands) - target).max(axis=1)
            worse = ~(res_new <= np.abs(res).max(axis=1))
            if np.any(worse):
                x_new[worse] = x[worse] - 0.5 * step[worse]
            x = x_new
        res = self.nominal_states(x, commands) - target
        if not np.all(np.abs(res) <= 1e3 * tol * scale):
            raise np.linalg.LinAlgError("Newton inversion of the nominal transform did not converge")
        return x


def build_transform(
    plant: DecomposedPlant,
    chain: LieChain,
    commands: Sequence[str] | None = None,
    with_integrators: bool = True,
) -> Diffeomorphism:
    """Uncertain coordinates [int(y_i - yc_i), y_i - yc_i, y_i', ..., y_i^(r_i - 1)].

    Derivatives under the true parameters use the full drift f(x, p); the
    nominal instance uses f0 (equivalently p = p0).
    """
    space = plant.space
    n, m = len(space.states), len(space.inputs)
    if sum(chain.r) != n:
        raise FullRelativeDegreeError(
            f"sum of relative degrees {sum(chain.r)} differs from state dimension {n}"
        )
    if commands is None:
        commands = tuple(f"cmd_{i}" for i in range(m))
    commands = tuple(commands)
    if len(commands) != m or set(commands) & set(space.names):
        raise ValueError("commands must be m fresh variable names")
    comps: list[Expr | None] = []
    noms: list[Expr | None] = []
    sizes = []
    for i, nu in enumerate(chain.outputs):
        yc = ex.var(commands[i])
        if with_integrators:
            comps.append(None)
            noms.append(None)
        comps.append(nu - yc)
        noms.append(nu - yc)
        h = nu
        for j in range(1, chain.r[i]):
            h = lie_derivative(h, plant.plant.f, space.states)
            comps.append(h)
            noms.append(chain.chains[i][j - 1])
        sizes.append(chain.r[i] + (1 if with_integrators else 0))
    return Diffeomorphism(
        tuple(space.states),
        tuple(space.params),
        commands,
        tuple(comps),
        tuple(noms),
        tuple(sizes),
        with_integrators,
    )
