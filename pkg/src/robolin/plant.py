"""Uncertain nonlinear MIMO plants  x' = f(x,p) + sum_k g_k(x,p) u_k,  y = nu(x)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expr as ex
from .expr import Expr, VariableSpace

__all__ = [
    "ParameterBox",
    "UncertainPlant",
    "DecomposedPlant",
    "CheckResult",
    "ValidationReport",
    "decompose",
    "validate",
    "plant_from_dict",
    "plant_to_dict",
    "load_plant",
]


@dataclass(frozen=True)
class ParameterBox:
    """Admissible parameter set as an axis-aligned box."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper bounds must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("parameter box must be compact (finite bounds)")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def relative(cls, p0: Sequence[float], fraction: float = 0.1) -> "ParameterBox":
        """Box of +/- ``fraction`` around each nominal value (sign aware)."""
        p0 = np.asarray(p0, dtype=float)
        a, b = (1 - fraction) * p0, (1 + fraction) * p0
        return cls(np.minimum(a, b), np.maximum(a, b))

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, p, strict: bool = False) -> bool:
        p = np.asarray(p, dtype=float)
        if strict:
            return bool(np.all(p > self.lower) and np.all(p < self.upper))
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * rng.random((count, self.dim))


@dataclass(frozen=True, eq=False)
class UncertainPlant:
    """Nonlinear plant with parameters ranging over a box.

    ``g`` is stored row-major as an n x m nested tuple; column ``k`` is the
    input vector field g_k.
    """

    space: VariableSpace
    f: tuple[Expr, ...]
    g: tuple[tuple[Expr, ...], ...]
    outputs: tuple[Expr, ...]
    p0: np.ndarray
    omega: ParameterBox
    name: str = "plant"

    def __post_init__(self):
        object.__setattr__(self, "f", tuple(self.f))
        object.__setattr__(self, "g", tuple(tuple(row) for row in self.g))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        p0 = np.atleast_1d(np.asarray(self.p0, dtype=float)).copy()
        p0.flags.writeable = False
        object.__setattr__(self, "p0", p0)
        n, m, q = self.n, self.m, self.q
        if len(self.f) != n:
            raise ValueError(f"f has {len(self.f)} entries, expected {n}")
        if len(self.g) != n or any(len(row) != m for row in self.g):
            raise ValueError(f"g must be {n} x {m}")
        if p0.size != q or self.omega.dim != q:
            raise ValueError(f"p0 and Omega must have {q} entries")
        allowed = set(self.space.names)
        used = ex.free_vars(list(self.f) + [e for row in self.g for e in row] + list(self.outputs))
        unknown = used - allowed
        if unknown:
            raise ex.UnknownIdentifierError(sorted(unknown)[0])
        if ex.free_vars(list(self.f) + [e for row in self.g for e in row]) & set(self.space.inputs):
            raise ValueError("f and g must not depend on input variables (input-affine form)")

    @property
    def n(self) -> int:
        return len(self.space.states)

    @property
    def m(self) -> int:
        return len(self.space.inputs)

    @property
    def q(self) -> int:
        return len(self.space.params)

    def g_column(self, k: int) -> tuple[Expr, ...]:
        return tuple(row[k] for row in self.g)

    def nominal_bindings(self) -> dict[str, float]:
        return dict(zip(self.space.params, self.p0.tolist()))


@dataclass(frozen=True, eq=False)
class DecomposedPlant:
    """Nominal/residual split:  f = f0 + df,  g = g0 + dg."""

    plant: UncertainPlant
    f0: tuple[Expr, ...]
    g0: tuple[tuple[Expr, ...], ...]
    df: tuple[Expr, ...]
    dg: tuple[tuple[Expr, ...], ...]

    @property
    def space(self) -> VariableSpace:
        return self.plant.space

    def g0_column(self, k: int) -> tuple[Expr, ...]:
        return tuple(row[k] for row in self.g0)


def decompose(plant: UncertainPlant) -> DecomposedPlant:
    nominal = plant.nominal_bindings()
    f0 = tuple(ex.substitute(e, nominal) for e in plant.f)
    g0 = tuple(tuple(ex.substitute(e, nominal) for e in row) for row in plant.g)
    df = tuple(e - e0 for e, e0 in zip(plant.f, f0))
    dg = tuple(tuple(e - e0 for e, e0 in zip(row, row0)) for row, row0 in zip(plant.g, g0))
    return DecomposedPlant(plant, f0, g0, df, dg)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    witnesses: list = field(default_factory=list)


@dataclass
class ValidationReport:
    checks: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {"name": c.name, "passed": c.passed, "detail": c.detail, "witnesses": c.witnesses}
                for c in self.checks
            ],
        }


def validate(plant: UncertainPlant, samples: int = 100, seed: int = 0, tol: float = 1e-10) -> ValidationReport:
    """Check the standing assumptions by sampling.

    Checks: ``nominal_equilibrium`` (f(0,p0)=0), ``robust_equilibrium``
    (f(0,p)=0 and df(0,p)=0 for sampled p in Omega), ``square`` (as many
    inputs as outputs) and ``p0_interior``. Failures carry witnesses.
    """
    rng = np.random.default_rng(seed)
    dec = decompose(plant)
    names = plant.space.states + plant.space.params
    f_fn = ex.compile_exprs(list(plant.f) + list(dec.df), names)
    zero_x = [0.0] * plant.n
    checks = []

    def residual(p):
        vals = f_fn(zero_x + list(p))
        return max((abs(v) for v in vals), default=0.0)

    r0 = residual(plant.p0)
    checks.append(
        CheckResult(
            "nominal_equilibrium",
            r0 <= tol,
            f"max |f(0,p0)| = {r0:.3e}",
            [] if r0 <= tol else [{"p": plant.p0.tolist(), "max_abs": r0}],
        )
    )
    witnesses = []
    worst = 0.0
    for p in plant.omega.sample(rng, samples):
        r = residual(p)
        worst = max(worst, r)
        if r > tol and len(witnesses) < 5:
            witnesses.append({"p": p.tolist(), "max_abs": r})
    checks.append(
        CheckResult(
            "robust_equilibrium",
            not witnesses,
            f"max |f(0,p)|, |df(0,p)| over {samples} samples = {worst:.3e}",
            witnesses,
        )
    )
    square = plant.m == len(plant.outputs)
    checks.append(
        CheckResult("square", square, f"{plant.m} inputs, {len(plant.outputs)} outputs")
    )
    interior = plant.omega.contains(plant.p0, strict=True)
    checks.append(
        CheckResult(
            "p0_interior",
            interior,
            "p0 strictly inside Omega" if interior else "p0 on or outside the boundary of Omega",
            [] if interior else [{"p0": plant.p0.tolist()}],
        )
    )
    return ValidationReport(checks)


# ---------------------------------------------------------------------------
# JSON plant documents


def plant_from_dict(doc: dict) -> UncertainPlant:
    """Build a plant from the JSON document layout documented in the README."""
    space = VariableSpace(
        states=doc["states"], inputs=doc["inputs"], params=doc.get("params", [])
    )
    f = [ex.parse(s, space) for s in doc["f"]]
    g = [[ex.parse(s, space) for s in row] for row in doc["g"]]
    outputs = [ex.parse(s, space) for s in doc["outputs"]]
    p0 = doc.get("p0", [])
    if "omega" in doc:
        omega = ParameterBox(doc["omega"]["lower"], doc["omega"]["upper"])
    else:
        omega = ParameterBox.relative(p0, doc.get("omega_fraction", 0.1))
    return UncertainPlant(space, f, g, outputs, np.asarray(p0, dtype=float), omega, doc.get("name", "plant"))


def plant_to_dict(plant: UncertainPlant) -> dict:
    return {
        "name": plant.name,
        "states": list(plant.space.states),
        "inputs": list(plant.space.inputs),
        "params": list(plant.space.params),
        "f": [ex.to_string(e) for e in plant.f],
        "g": [[ex.to_string(e) for e in row] for row in plant.g],
        "outputs": [ex.to_string(e) for e in plant.outputs],
        "p0": plant.p0.tolist(),
        "omega": {"lower": plant.omega.lower.tolist(), "upper": plant.omega.upper.tolist()},
    }


def load_plant(path) -> UncertainPlant:
    with open(path, encoding="utf-8") as fh:
        return plant_from_dict(json.load(fh))
