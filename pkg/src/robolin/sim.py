"""Fixed-step closed-loop simulation of the two-loop design.

The inner loop applies the nominal linearizing law at the true state; the
outer loop is the linear minimax LQG controller driven by noisy measurements
of the transformed state. The truth plant may carry dynamics the design
plant does not (flexible modes for the hypersonic vehicle).
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import expr as ex
from .feedlin import Diffeomorphism, LieChain, SingularDecouplingError, linearizing_control
from .meanval import LinearizedDesignModel, ResidualMap
from .minimax import Controller, SynthesisWeights
from .plant import ParameterBox, UncertainPlant

__all__ = [
    "NonFiniteDerivativeError",
    "FingerprintMismatchError",
    "ParameterTrajectory",
    "ReferenceSchedule",
    "Scenario",
    "TruthModel",
    "PlantTruth",
    "TimeSeries",
    "IqcReport",
    "rk4_step",
    "simulate_closed_loop",
    "evaluate_cost",
    "check_iqc",
    "export_csv",
    "read_csv",
]


class NonFiniteDerivativeError(FloatingPointError):
    pass


class FingerprintMismatchError(ValueError):
    pass


def rk4_step(deriv: Callable[[float, np.ndarray], np.ndarray], t: float, x, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step."""
    x = np.asarray(x, dtype=float)

    def f(tt, xx):
        d = np.asarray(deriv(tt, xx), dtype=float)
        if not np.all(np.isfinite(d)):
            bad = int(np.flatnonzero(~np.isfinite(np.atleast_1d(d)))[0])
            raise NonFiniteDerivativeError(f"non-finite derivative at t={tt:.6g}, component {bad}")
        return d

    k1 = f(t, x)
    k2 = f(t + dt / 2, x + dt / 2 * k1)
    k3 = f(t + dt / 2, x + dt / 2 * k2)
    k4 = f(t + dt, x + dt * k3)
    return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _linear_rk4(A: np.ndarray, B: np.ndarray, dt: float):
    """Matrices of one RK4 step of x' = A x + B u with u held constant."""
    n = A.shape[0]
    hA = dt * A
    I = np.eye(n)
    Phi = I + hA + hA @ hA / 2 + hA @ hA @ hA / 6 + hA @ hA @ hA @ hA / 24
    Gam = dt * (I + hA / 2 + hA @ hA / 6 + hA @ hA @ hA / 24) @ B
    return Phi, Gam


# ---------------------------------------------------------------------------
# scenario description


@dataclass(frozen=True)
class ParameterTrajectory:
    """p(t) per component: constant, sinusoid about p0, or piecewise linear.

    Component specs are dicts, e.g. ``{"kind": "sinusoid", "amplitude": 0.1,
    "frequency": 0.05, "phase": 0.0}`` where the amplitude is relative to
    |p0_i|; ``{"kind": "constant", "value": 1.2}``;
    ``{"kind": "pwl", "times": [...], "values": [...]}``.
    """

    p0: np.ndarray
    components: tuple[dict, ...]

    @classmethod
    def nominal(cls, p0) -> "ParameterTrajectory":
        p0 = np.asarray(p0, dtype=float)
        return cls(p0, tuple({"kind": "constant", "value": float(v)} for v in p0))

    @classmethod
    def sinusoidal(cls, p0, amplitude: float, frequency: float, phases=None) -> "ParameterTrajectory":
        p0 = np.asarray(p0, dtype=float)
        phases = np.zeros(p0.size) if phases is None else np.asarray(phases, dtype=float)
        comps = tuple(
            {"kind": "sinusoid", "amplitude": amplitude, "frequency": frequency, "phase": float(ph)}
            for ph in phases
        )
        return cls(p0, comps)

    def __post_init__(self):
        p0 = np.atleast_1d(np.asarray(self.p0, dtype=float))
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "components", tuple(dict(c) for c in self.components))
        if len(self.components) != p0.size:
            raise ValueError("one trajectory spec per parameter is required")
        for c in self.components:
            if c.get("kind") not in ("constant", "sinusoid", "pwl"):
                raise ValueError(f"unknown parameter trajectory kind {c.get('kind')!r}")

    def values(self, t) -> np.ndarray:
        """p at the times ``t``; shape (len(t), q) for array input, (q,) for scalar."""
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((tt.size, self.p0.size))
        for i, c in enumerate(self.components):
            kind = c["kind"]
            if kind == "constant":
                out[:, i] = c.get("value", self.p0[i])
            elif kind == "sinusoid":
                amp = c.get("amplitude", 0.1) * abs(self.p0[i])
                out[:, i] = self.p0[i] + amp * np.sin(2 * np.pi * c.get("frequency", 0.05) * tt + c.get("phase", 0.0))
            else:
                out[:, i] = np.interp(tt, c["times"], c["values"])
        return out[0] if np.ndim(t) == 0 else out

    def to_dict(self) -> dict:
        return {"p0": self.p0.tolist(), "components": [dict(c) for c in self.components]}

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterTrajectory":
        return cls(np.asarray(d["p0"], dtype=float), tuple(d["components"]))


@dataclass(frozen=True)
class ReferenceSchedule:
    """Commands per output: ``step``, ``ramp`` or ``hold`` dicts."""

    channels: tuple[dict, ...]

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(dict(c) for c in self.channels))
        for c in self.channels:
            if c.get("kind") not in ("step", "ramp", "hold"):
                raise ValueError(f"unknown reference kind {c.get('kind')!r}")

    @classmethod
    def zero(cls, m: int) -> "ReferenceSchedule":
        return cls(tuple({"kind": "hold", "value": 0.0} for _ in range(m)))

    @classmethod
    def steps(cls, values, time: float = 0.0) -> "ReferenceSchedule":
        return cls(tuple({"kind": "step", "time": time, "value": float(v)} for v in values))

    def value(self, t: float) -> np.ndarray:
        out = np.empty(len(self.channels))
        for i, c in enumerate(self.channels):
            init = c.get("initial", 0.0)
            if c["kind"] == "hold":
                out[i] = c["value"]
            elif c["kind"] == "step":
                out[i] = c["value"] if t >= c.get("time", 0.0) else init
            else:
                t0, t1 = c.get("start", 0.0), c["end"]
                frac = min(max((t - t0) / (t1 - t0), 0.0), 1.0) if t1 > t0 else float(t >= t0)
                out[i] = init + frac * (c["value"] - init)
        return out

    def to_dict(self) -> dict:
        return {"channels": [dict(c) for c in self.channels]}


@dataclass(frozen=True)
class Scenario:
    t_final: float
    dt: float
    parameters: ParameterTrajectory
    references: ReferenceSchedule
    x0: np.ndarray | None = None
    noise_intensity: float = 0.0
    noise_seed: int = 0
    input_lower: np.ndarray | None = None
    input_upper: np.ndarray | None = None
    blowup: float = 1e8
    name: str = "scenario"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_final >= self.dt:
            raise ValueError("t_final must be at least dt")
        if self.noise_intensity < 0:
            raise ValueError("noise intensity must be nonnegative")

    @property
    def steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def check_parameters(self, omega: ParameterBox) -> None:
        vals = self.parameters.values(self.times)
        span = np.maximum(np.abs(omega.lower), np.abs(omega.upper))
        slack = 1e-12 * np.maximum(span, 1.0)
        bad = np.any((vals < omega.lower - slack) | (vals > omega.upper + slack), axis=1)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise ValueError(f"parameter trajectory leaves Omega at t={self.times[k]:.6g}")

    def to_dict(self) -> dict:
        arr = lambda a: None if a is None else np.asarray(a).tolist()  # noqa: E731
        return {
            "name": self.name,
            "t_final": self.t_final,
            "dt": self.dt,
            "parameters": self.parameters.to_dict(),
            "references": self.references.to_dict(),
            "x0": arr(self.x0),
            "noise_intensity": self.noise_intensity,
            "noise_seed": self.noise_seed,
            "input_lower": arr(self.input_lower),
            "input_upper": arr(self.input_upper),
            "blowup": self.blowup,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        arr = lambda a: None if a is None else np.asarray(a, dtype=float)  # noqa: E731
        return cls(
            t_final=float(d["t_final"]),
            dt=float(d["dt"]),
            parameters=ParameterTrajectory.from_dict(d["parameters"]),
            references=ReferenceSchedule(tuple(d["references"]["channels"])),
            x0=arr(d.get("x0")),
            noise_intensity=float(d.get("noise_intensity", 0.0)),
            noise_seed=int(d.get("noise_seed", 0)),
            input_lower=arr(d.get("input_lower")),
            input_upper=arr(d.get("input_upper")),
            blowup=float(d.get("blowup", 1e8)),
            name=d.get("name", "scenario"),
        )


# ---------------------------------------------------------------------------
# truth plants


class TruthModel:
    """What the simulator needs from the plant it drives.

    ``design_state`` maps a truth state to the design-plant state on which
    the transform and linearizing law act; ``to_truth_input`` maps the
    design input to the controls applied to the truth plant.
    """

    state_names: tuple[str, ...]
    input_names: tuple[str, ...]

    def initial_state(self) -> np.ndarray:
        raise NotImplementedError

    def derivative(self, t: float, x: np.ndarray, u: np.ndarray, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def design_state(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_truth_input(self, u_design: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class PlantTruth(TruthModel):
    """The design plant itself used as truth."""

    def __init__(self, plant: UncertainPlant):
        self.plant = plant
        self.state_names = tuple(plant.space.states)
        self.input_names = tuple(plant.space.inputs)
        exprs = list(plant.f) + [e for row in plant.g for e in row]
        self._fn = ex.compile_exprs(exprs, plant.space.states + plant.space.params)

    def initial_state(self) -> np.ndarray:
        return np.zeros(self.plant.n)

    def derivative(self, t, x, u, p):
        n, m = self.plant.n, self.plant.m
        vals = self._fn(list(map(float, x)) + list(map(float, p)))
        f = np.array(vals[:n])
        g = np.array(vals[n:]).reshape(n, m)
        return f + g @ u

    def design_state(self, x):
        return x

    def to_truth_input(self, u_design):
        return np.asarray(u_design, dtype=float)


# ---------------------------------------------------------------------------
# time series


@dataclass
class TimeSeries:
    columns: list[str]
    data: np.ndarray
    aborted: bool = False
    events: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._index = {c: i for i, c in enumerate(self.columns)}

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self._index[name]]

    def group(self, prefix: str) -> np.ndarray:
        idx = [i for i, c in enumerate(self.columns) if c.startswith(prefix + "_")]
        return self.data[:, idx]

    @property
    def t(self) -> np.ndarray:
        return self.data[:, 0]

    @property
    def dt(self) -> float:
        return float(self.meta.get("dt", self.t[1] - self.t[0] if len(self.t) > 1 else 0.0))


def simulate_closed_loop(
    scenario: Scenario,
    plant: UncertainPlant,
    transform: Diffeomorphism,
    chain: LieChain,
    controller: Controller,
    model: LinearizedDesignModel,
    truth: TruthModel | None = None,
    residual: ResidualMap | None = None,
    allow_mismatch: bool = False,
) -> TimeSeries:
    """Run the closed loop on a uniform grid of ``scenario.steps`` RK4 steps.

    Each step measures y~ = C2 chi + noise with chi from the uncertain
    transform at the true p(t), sets v = K chihat, computes u from the
    linearizing law at the true state with nominal parameters, applies
    saturation, and advances the truth plant (with the integral states) and
    the controller by one RK4 step. Rows are logged at t = 0, dt, ..., t_final.
    """
    if controller.model_fingerprint != model.fingerprint():
        msg = "controller fingerprint does not match the design model"
        if not allow_mismatch:
            raise FingerprintMismatchError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    scenario.check_parameters(plant.omega)
    truth = PlantTruth(plant) if truth is None else truth
    m, nbar = model.m, model.nbar
    ny = model.ny
    dt, N = scenario.dt, scenario.steps
    x = truth.initial_state() if scenario.x0 is None else np.array(scenario.x0, dtype=float)
    nx = x.size
    integrals = np.zeros(len(transform.integral_positions))
    chihat = np.zeros(nbar)
    Phi_c, Gam_c = _linear_rk4(controller.Ac, controller.Bc, dt)
    rng = np.random.default_rng(scenario.noise_seed)
    noise_scale = math.sqrt(scenario.noise_intensity / dt)
    out_fn = ex.compile_exprs(list(plant.outputs), plant.space.states)
    nu = len(truth.input_names)
    lower = scenario.input_lower
    upper = scenario.input_upper
    E1inv = np.linalg.inv(model.E1)
    s_in = model.conventions.input_scale
    ref_cache: dict[tuple, np.ndarray] = {}

    columns = (
        ["t"]
        + [f"x_{s}" for s in truth.state_names]
        + [f"chi_{i}" for i in range(nbar)]
        + [f"chihat_{i}" for i in range(nbar)]
        + [f"u_{s}" for s in truth.input_names]
        + [f"v_{i}" for i in range(m)]
        + [f"y_{i}" for i in range(m)]
        + [f"ref_{i}" for i in range(m)]
        + ["diag_zeta1", "diag_z"]
        + [f"diag_sat_{s}" for s in truth.input_names]
        + ["diag_singular"]
        + [f"diag_p_{s}" for s in plant.space.params]
    )
    rows = np.full((N + 1, len(columns)), np.nan)
    events: list = []
    aborted = False
    u_prev = np.zeros(m)
    p_all = scenario.parameters.values(scenario.times)

    def reference_state(yc: np.ndarray) -> np.ndarray:
        key = tuple(yc.tolist())
        if key not in ref_cache:
            ref_cache[key] = transform.invert_nominal(np.zeros(len(transform.state_positions)), yc)[0]
        return ref_cache[key]

    last = N
    for k in range(N + 1):
        t = k * dt
        p = p_all[k]
        yc = scenario.references.value(t)
        xd = truth.design_state(x)
        chi = transform.evaluate(xd, p, yc, integrals)
        y = np.array(out_fn(list(map(float, xd))))
        v = controller.K @ chihat
        singular = 0.0
        try:
            u_d = linearizing_control(chain, xd, v)
        except SingularDecouplingError as err:
            singular = 1.0
            u_d = u_prev
            events.append({"t": t, "event": "singular_decoupling", "detail": str(err)})
        u_prev = u_d
        u = truth.to_truth_input(u_d)
        sat = np.zeros(nu)
        if lower is not None:
            sat = np.where(u < lower, 1.0, sat)
            u = np.maximum(u, lower)
        if upper is not None:
            sat = np.where(u > upper, 1.0, sat)
            u = np.minimum(u, upper)
        z = model.C1 @ chi + model.D1 @ v
        zeta = 0.0
        if residual is not None:
            w = residual.residual_at(xd, v, p) - residual.residual_at(reference_state(yc), np.zeros(m), p)
            zeta = float(np.linalg.norm(E1inv @ w) / s_in)
        rows[k] = np.concatenate(
            [[t], x, chi, chihat, u, v, y, yc, [zeta, float(np.linalg.norm(z))], sat, [singular], p]
        )
        if k == N:
            break
        # advance truth (with integral states) and controller
        meas = model.C2 @ chi
        if noise_scale > 0:
            meas = meas + noise_scale * rng.standard_normal(ny)
        params = scenario.parameters

        def deriv(tt, s, u=u, params=params):
            xx = s[:nx]
            pp = params.values(tt)
            dx = truth.derivative(tt, xx, u, pp)
            yy = np.array(out_fn(list(map(float, truth.design_state(xx)))))
            return np.concatenate([dx, yy - scenario.references.value(tt)])

        try:
            s_next = rk4_step(deriv, t, np.concatenate([x, integrals]), dt)
        except (NonFiniteDerivativeError, FloatingPointError, ex.ExprDomainError) as err:
            events.append({"t": t, "event": "abort", "detail": str(err)})
            aborted, last = True, k
            break
        x, integrals = s_next[:nx], s_next[nx:]
        chihat = Phi_c @ chihat + Gam_c @ meas
        if not (np.all(np.isfinite(x)) and np.linalg.norm(x) <= scenario.blowup):
            events.append({"t": t + dt, "event": "abort", "detail": "state bound exceeded"})
            aborted, last = True, k
            break
    data = rows[: last + 1]
    return TimeSeries(
        columns,
        data,
        aborted=aborted,
        events=events,
        meta={"dt": dt, "steps": N, "scenario": scenario.name},
    )


def evaluate_cost(ts: TimeSeries, weights: SynthesisWeights) -> float:
    """J = (1 / 2T) sum_k dt (chi_k' R chi_k + v_k' G v_k) over the N steps."""
    chi = ts.group("chi")
    v = ts.group("v")
    if len(ts.t) < 2:
        return 0.0
    dt = ts.dt
    chi, v = chi[:-1], v[:-1]
    T = dt * len(chi)
    run = np.einsum("ki,ij,kj->k", chi, weights.R, chi) + np.einsum("ki,ij,kj->k", v, weights.G, v)
    return float(dt * run.sum() / (2 * T))


@dataclass
class IqcReport:
    zeta_energy: float
    z_energy: float
    margin: float
    holds: bool
    tol: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_iqc(ts: TimeSeries, tol: float = 1e-9) -> IqcReport:
    """Sum dt |zeta1|^2 <= sum dt |z|^2 + tol over the logged run."""
    dt = ts.dt
    zeta = ts.column("diag_zeta1")[:-1]
    z = ts.column("diag_z")[:-1]
    lhs = float(dt * np.sum(zeta**2))
    rhs = float(dt * np.sum(z**2))
    return IqcReport(lhs, rhs, rhs - lhs, bool(lhs <= rhs + tol), tol)


def _csv_text(ts: TimeSeries) -> str:
    buf = io.StringIO()
    buf.write(",".join(ts.columns) + "\n")
    for row in ts.data:
        buf.write(",".join("%.17g" % v for v in row) + "\n")
    return buf.getvalue()


def export_csv(ts: TimeSeries, path) -> None:
    """Write header plus one row per logged time, atomically."""
    text = _csv_text(ts)
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", encoding="ascii", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_csv(path) -> TimeSeries:
    with open(path, encoding="ascii", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader], dtype=float)
    data = data.reshape(-1, len(header))
    meta = {"dt": float(data[1, 0] - data[0, 0])} if len(data) > 1 else {}
    return TimeSeries(header, data, meta=meta)
