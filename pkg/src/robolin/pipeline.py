"""Configuration-driven design pipeline shared by the demos and the CLI.

A run configuration is a JSON document with the sections ``plant``,
``linearize``, ``bound``, ``design``, ``weights``, ``synthesis``, ``verify``,
``scenario`` and ``checks``; see :data:`CONFIG_SCHEMA`. The stages are

    linearize -> bound -> assemble -> synthesize -> verify -> simulate

and each returns plain objects that the CLI serializes.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import ahfv
from . import expr as ex
from .feedlin import (
    BrunovskyModel,
    Diffeomorphism,
    LieChain,
    RelativeDegreeProfile,
    StateBox,
    brunovsky_form,
    build_transform,
    relative_degree,
)
from .meanval import (
    AssemblyConventions,
    HyperBox,
    LinearizedDesignModel,
    ResidualMap,
    SamplingPlan,
    UncertaintyBound,
    assemble_design_model,
    bound_rho,
    build_residual_map,
)
from .minimax import (
    Controller,
    SynthesisWeights,
    TauCertificate,
    VerificationReport,
    build_controller,
    optimize_tau,
    verify_design,
)
from .plant import DecomposedPlant, UncertainPlant, decompose, plant_from_dict
from .sim import (
    IqcReport,
    ParameterTrajectory,
    PlantTruth,
    ReferenceSchedule,
    Scenario,
    TimeSeries,
    TruthModel,
    check_iqc,
    evaluate_cost,
    simulate_closed_loop,
)

__all__ = [
    "CONFIG_SCHEMA",
    "SCHEMA_VERSION",
    "ConfigError",
    "Linearization",
    "Design",
    "RunSummary",
    "builtin_config",
    "builtin_names",
    "validate_config",
    "load_config",
    "fingerprint",
    "linearize",
    "compute_bound",
    "assemble",
    "synthesize",
    "verify",
    "build_scenario",
    "simulate",
    "run_pipeline",
]

SCHEMA_VERSION = 1

_vec = {"type": "array", "items": {"type": "number"}}
_mat_or_diag = {
    "oneOf": [
        _vec,
        {"type": "array", "items": _vec},
    ]
}

CONFIG_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["name", "plant", "linearize", "bound", "design", "weights"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "plant": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "builtin": {"enum": ["ahfv"]},
                "coefficients": {"type": "string"},
                "output_units": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2, "maxItems": 2},
                "omega_fraction": {"type": "number", "minimum": 0},
                "path": {"type": "string"},
                "inline": {"type": "object"},
            },
            "oneOf": [
                {"required": ["builtin"]},
                {"required": ["path"]},
                {"required": ["inline"]},
            ],
        },
        "linearize": {
            "type": "object",
            "additionalProperties": False,
            "required": ["state_box"],
            "properties": {
                "state_box": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "with_integrators": {"type": "boolean"},
                "samples": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "commands": {"type": "array", "items": {"type": "string"}},
            },
        },
        "bound": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "chi_half": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "v_half": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "param_scale": {
                    "oneOf": [{"enum": ["zero", "normalized", "raw"]}, {"type": "array", "items": {"type": "number"}}]
                },
                "rho": {"type": "number", "minimum": 0},
                "sampling": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "grid_points": {"type": "integer", "minimum": 2},
                        "max_grid_axes": {"type": "integer", "minimum": 0},
                        "random": {"type": "integer", "minimum": 0},
                        "vertex_max_axes": {"type": "integer", "minimum": 0},
                        "budget": {"type": "integer", "minimum": 1},
                        "seed": {"type": "integer", "minimum": 0},
                        "polish": {"type": "integer", "minimum": 0},
                        "margin": {"type": "number", "minimum": 1},
                        "chunk": {"type": "integer", "minimum": 1},
                    },
                },
            },
        },
        "design": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "measured": {"oneOf": [{"const": "all"}, {"type": "array", "items": {"type": "integer", "minimum": 0}}]},
                "output_scale": {"type": "number", "exclusiveMinimum": 0},
                "input_scale": {"type": "number", "exclusiveMinimum": 0},
                "E1": {"type": "array", "items": _vec},
            },
        },
        "weights": {
            "type": "object",
            "additionalProperties": False,
            "required": ["R", "G"],
            "properties": {"R": _mat_or_diag, "G": _mat_or_diag},
        },
        "synthesis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tau_bracket": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2, "maxItems": 2},
                "budget": {"type": "integer", "minimum": 1},
                "wtau_inverse": {"enum": ["scaled", "printed"]},
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delta_samples": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "scenario": {
            "type": "object",
            "additionalProperties": False,
            "required": ["t_final", "dt", "references"],
            "properties": {
                "name": {"type": "string"},
                "t_final": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "parameters": {
                    "type": "object",
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["nominal", "sinusoidal", "explicit"]},
                        "amplitude": {"type": "number", "minimum": 0},
                        "frequency": {"type": "number", "minimum": 0},
                        "phases": _vec,
                        "components": {"type": "array", "items": {"type": "object"}},
                    },
                },
                "references": {"type": "array", "items": {"type": "object", "required": ["kind"]}},
                "x0": _vec,
                "noise_intensity": {"type": "number", "minimum": 0},
                "noise_seed": {"type": "integer", "minimum": 0},
                "input_lower": _vec,
                "input_upper": _vec,
                "blowup": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "checks": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tracking_tol": {"type": "number", "exclusiveMinimum": 0},
                "settle_time": {"type": "number", "minimum": 0},
                "cost_factor": {"type": "number", "minimum": 1},
                "iqc_tol": {"type": "number", "minimum": 0},
            },
        },
    },
}


class ConfigError(ValueError):
    """Schema or consistency violation; ``path`` is a JSON pointer."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path or '/'}: {message}")
        self.path = path or "/"


def _pointer(parts) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


def validate_config(cfg: dict) -> dict:
    """Validate against :data:`CONFIG_SCHEMA`; the first error (by path) is raised."""
    import jsonschema

    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _pointer(err.absolute_path))
    return cfg


def builtin_names() -> list[str]:
    root = resources.files("robolin.data").joinpath("demos")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def builtin_config(name: str) -> dict:
    """Bundled demo configuration by name (``scalar``, ``double_integrator``, ...)."""
    path = resources.files("robolin.data").joinpath("demos", f"{name}.json")
    if not path.is_file():
        raise ConfigError(f"unknown bundled config {name!r}; available: {builtin_names()}")
    cfg = json.loads(path.read_text(encoding="utf-8"))
    return validate_config(cfg)


def load_config(path) -> dict:
    """Read and validate a config file; relative plant paths resolve against it."""
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid JSON: {err}") from err
    validate_config(cfg)
    base = os.path.dirname(os.path.abspath(path))
    plant = cfg["plant"]
    for key in ("path", "coefficients"):
        if key in plant and not os.path.isabs(plant[key]):
            plant[key] = os.path.join(base, plant[key])
        if key in plant and not os.path.exists(plant[key]):
            raise ConfigError(f"file not found: {plant[key]}", f"/plant/{key}")
    return cfg


def fingerprint(obj) -> str:
    """sha256 of the canonical JSON form of ``obj``."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# stages


@dataclass
class Linearization:
    config: dict
    plant: UncertainPlant
    decomposed: DecomposedPlant
    profile: RelativeDegreeProfile
    chain: LieChain
    transform: Diffeomorphism
    brunovsky: BrunovskyModel
    truth: TruthModel
    param_scale: np.ndarray
    _residual: ResidualMap | None = field(default=None, repr=False)

    @property
    def residual(self) -> ResidualMap:
        # built lazily: the AHFV map takes a few seconds to assemble
        if self._residual is None:
            self._residual = build_residual_map(
                self.decomposed, self.chain, self.transform, param_scale=self.param_scale
            )
        return self._residual

    def to_dict(self) -> dict:
        return {
            "plant": self.plant.name,
            "relative_degree": list(self.profile.r),
            "brunovsky": {
                "A": self.brunovsky.A.tolist(),
                "B": self.brunovsky.B.tolist(),
                "block_sizes": list(self.brunovsky.block_sizes),
            },
            "transform": {
                "commands": list(self.transform.commands),
                "components": [None if c is None else ex.to_string(c) for c in self.transform.components],
            },
        }


def _param_scale(spec, plant: UncertainPlant) -> np.ndarray:
    q = plant.q
    if isinstance(spec, list):
        if len(spec) != q:
            raise ConfigError(f"expected {q} entries", "/bound/param_scale")
        return np.asarray(spec, dtype=float)
    if spec == "zero":
        return np.zeros(q)
    if spec == "normalized":
        return (plant.omega.upper - plant.omega.lower) / 2
    return np.ones(q)


def linearize(cfg: dict) -> Linearization:
    """Build the plant, relative degrees, Brunovsky model and transform."""
    pc = cfg["plant"]
    lc = cfg["linearize"]
    with_int = lc.get("with_integrators", True)
    if "builtin" in pc:
        coeffs = ahfv.load_coefficients(pc.get("coefficients"))
        trim = ahfv.design_trim(coeffs)
        plant = ahfv.simplified_design_plant(
            coeffs,
            omega_fraction=pc.get("omega_fraction", 0.1),
            trim=trim,
            output_units=pc.get("output_units", (1.0, 1.0)),
        )
        truth: TruthModel = ahfv.AhfvTruth(coeffs, trim)
        commands = lc.get("commands", ["V_c", "h_c"])
    else:
        if "path" in pc:
            with open(pc["path"], encoding="utf-8") as fh:
                doc = json.load(fh)
        else:
            doc = pc["inline"]
        try:
            plant = plant_from_dict(doc)
        except (KeyError, TypeError) as err:
            raise ConfigError(f"malformed plant document: {err}", "/plant") from err
        truth = PlantTruth(plant)
        commands = lc.get("commands")
    if len(lc["state_box"]) != plant.n:
        raise ConfigError(f"expected {plant.n} half widths", "/linearize/state_box")
    dec = decompose(plant)
    profile = relative_degree(
        dec, StateBox.symmetric(lc["state_box"]), seed=lc.get("seed", 0), samples=lc.get("samples", 200)
    )
    transform = build_transform(dec, profile.chain, commands=commands, with_integrators=with_int)
    brun = brunovsky_form(profile, with_integrators=with_int)
    scale = _param_scale(cfg["bound"].get("param_scale", "zero"), plant)
    return Linearization(cfg, plant, dec, profile, profile.chain, transform, brun, truth, scale)


def _box(cfg: dict, lin: Linearization) -> HyperBox:
    bc = cfg["bound"]
    nbar, m = lin.brunovsky.B.shape
    chi = bc.get("chi_half")
    v = bc.get("v_half")
    if chi is None or v is None:
        raise ConfigError("chi_half and v_half are required unless rho is given", "/bound")
    if len(chi) != nbar:
        raise ConfigError(f"expected {nbar} entries", "/bound/chi_half")
    if len(v) != m:
        raise ConfigError(f"expected {m} entries", "/bound/v_half")
    return HyperBox.symmetric(chi, v)


def compute_bound(
    cfg: dict, lin: Linearization, seed: int | None = None, samples: int | None = None
) -> UncertaintyBound:
    """rho-tilde from the configured box, or the fixed value when ``rho`` is set."""
    bc = cfg["bound"]
    if "rho" in bc:
        return UncertaintyBound(float(bc["rho"]), np.zeros(0), 0, 0, float(bc["rho"]))
    sp = dict(bc.get("sampling", {}))
    if seed is not None:
        sp["seed"] = seed
    if samples is not None:
        sp["random"] = samples
    return bound_rho(lin.residual, _box(cfg, lin), lin.plant.omega, SamplingPlan(**sp))


def assemble(cfg: dict, lin: Linearization, bound: UncertaintyBound | float) -> LinearizedDesignModel:
    dc = cfg["design"]
    nbar = lin.brunovsky.A.shape[0]
    measured = dc.get("measured", "all")
    measured = tuple(range(nbar)) if measured == "all" else tuple(measured)
    conv = AssemblyConventions(
        measured,
        E1=None if dc.get("E1") is None else np.asarray(dc["E1"], dtype=float),
        output_scale=dc.get("output_scale", 10.0),
        input_scale=dc.get("input_scale", 0.1),
    )
    return assemble_design_model(lin.brunovsky, bound, conv)


def _weights(cfg: dict, nbar: int, m: int) -> SynthesisWeights:
    def mat(v, k, name):
        a = np.asarray(v, dtype=float)
        a = np.diag(a) if a.ndim == 1 else a
        if a.shape != (k, k):
            raise ConfigError(f"expected a {k} x {k} matrix or {k} diagonal entries", f"/weights/{name}")
        return a

    wc = cfg["weights"]
    return SynthesisWeights(mat(wc["R"], nbar, "R"), mat(wc["G"], m, "G"))


@dataclass
class Design:
    model: LinearizedDesignModel
    weights: SynthesisWeights
    certificate: TauCertificate
    controller: Controller


def synthesize(
    cfg: dict, model: LinearizedDesignModel, tau_bracket: tuple[float, float] | None = None
) -> Design:
    sc = cfg.get("synthesis", {})
    weights = _weights(cfg, model.nbar, model.m)
    bracket = tuple(tau_bracket) if tau_bracket is not None else tuple(sc.get("tau_bracket", (1e-3, 1e3)))
    cert = optimize_tau(
        model, weights, bracket=bracket, budget=sc.get("budget", 64), wtau_inverse=sc.get("wtau_inverse", "scaled")
    )
    return Design(model, weights, cert, build_controller(model, weights, cert))


def verify(cfg: dict, model: LinearizedDesignModel, controller: Controller) -> VerificationReport:
    vc = cfg.get("verify", {})
    return verify_design(model, controller, delta_samples=vc.get("delta_samples", 32), seed=vc.get("seed", 0))


def build_scenario(cfg: dict, lin: Linearization, tf=None, dt=None, seed=None) -> Scenario:
    if "scenario" not in cfg:
        raise ConfigError("no scenario configured", "/scenario")
    sc = copy.deepcopy(cfg["scenario"])
    p0 = lin.plant.p0
    pspec = sc.get("parameters", {"kind": "nominal"})
    kind = pspec["kind"]
    if kind == "nominal":
        params = ParameterTrajectory.nominal(p0)
    elif kind == "sinusoidal":
        phases = pspec.get("phases")
        if phases is not None and len(phases) != p0.size:
            raise ConfigError(f"expected {p0.size} phases", "/scenario/parameters/phases")
        params = ParameterTrajectory.sinusoidal(p0, pspec.get("amplitude", 0.1), pspec.get("frequency", 0.05), phases)
    else:
        params = ParameterTrajectory(p0, tuple(pspec.get("components", [])))
    if len(sc["references"]) != lin.plant.m:
        raise ConfigError(f"expected {lin.plant.m} reference channels", "/scenario/references")
    arr = lambda a: None if a is None else np.asarray(a, dtype=float)  # noqa: E731
    return Scenario(
        t_final=float(tf if tf is not None else sc["t_final"]),
        dt=float(dt if dt is not None else sc["dt"]),
        parameters=params,
        references=ReferenceSchedule(tuple(sc["references"])),
        x0=arr(sc.get("x0")),
        noise_intensity=float(sc.get("noise_intensity", 0.0)),
        noise_seed=int(seed if seed is not None else sc.get("noise_seed", 0)),
        input_lower=arr(sc.get("input_lower")),
        input_upper=arr(sc.get("input_upper")),
        blowup=float(sc.get("blowup", 1e8)),
        name=sc.get("name", cfg["name"]),
    )


@dataclass
class RunSummary:
    steps: int
    aborted: bool
    final_error: list
    relative_error: list
    tracking_ok: bool
    max_abs_u: list
    saturated_steps: list
    empirical_J: float
    W_tau: float
    cost_ok: bool
    iqc: IqcReport
    box_ok: bool
    box_excess: float
    singular_steps: int
    events: list

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["iqc"] = self.iqc.to_dict()
        return d


def _summarize(cfg: dict, lin: Linearization, design: Design, scenario: Scenario, ts: TimeSeries) -> RunSummary:
    ck = cfg.get("checks", {})
    tol = ck.get("tracking_tol", 0.02)
    settle = ck.get("settle_time", 0.75 * scenario.t_final)
    y, ref, t = ts.group("y"), ts.group("ref"), ts.t
    err = y - ref
    window = t >= settle
    if not np.any(window):
        window = t >= t[-1]
    final = err[-1].tolist()
    mag = np.max(np.abs(ref), axis=0)
    worst = np.max(np.abs(err[window]), axis=0)
    rel = np.where(mag > 0, worst / np.where(mag > 0, mag, 1.0), worst)
    # channels without a command must stay within tol in absolute terms
    tracking_ok = bool(not ts.aborted and np.all(rel <= tol))
    J = evaluate_cost(ts, design.weights)
    W = design.certificate.W_tau
    iqc = check_iqc(ts, ck.get("iqc_tol", 1e-9))
    excess = 0.0
    bc = cfg["bound"]
    if "chi_half" in bc and "v_half" in bc:
        chi = np.abs(ts.group("chi"))
        v = np.abs(ts.group("v"))
        pos = list(lin.transform.state_positions)
        ch = np.asarray(bc["chi_half"], dtype=float)
        ratios = [np.max(chi[:, pos] / np.where(ch[pos] > 0, ch[pos], np.inf))] if pos else []
        vh = np.asarray(bc["v_half"], dtype=float)
        ratios.append(np.max(v / np.where(vh > 0, vh, np.inf)))
        excess = float(max(ratios))
    u = np.abs(ts.group("u"))
    return RunSummary(
        steps=len(t) - 1,
        aborted=bool(ts.aborted),
        final_error=final,
        relative_error=rel.tolist(),
        tracking_ok=tracking_ok,
        max_abs_u=np.max(u, axis=0).tolist(),
        saturated_steps=np.sum(ts.group("diag_sat"), axis=0).astype(int).tolist(),
        empirical_J=J,
        W_tau=W,
        cost_ok=bool(J <= W * ck.get("cost_factor", 1.05)),
        iqc=iqc,
        box_ok=bool(excess <= 1.0),
        box_excess=excess,
        singular_steps=int(np.sum(ts.column("diag_singular"))),
        events=list(ts.events),
    )


def simulate(
    cfg: dict, lin: Linearization, design: Design, scenario: Scenario, allow_mismatch: bool = False
) -> tuple[TimeSeries, RunSummary]:
    ts = simulate_closed_loop(
        scenario,
        lin.plant,
        lin.transform,
        lin.chain,
        design.controller,
        design.model,
        truth=lin.truth,
        residual=lin.residual if cfg["bound"].get("rho") is None else None,
        allow_mismatch=allow_mismatch,
    )
    return ts, _summarize(cfg, lin, design, scenario, ts)


@dataclass
class PipelineResult:
    linearization: Linearization
    bound: UncertaintyBound
    design: Design
    verification: VerificationReport
    scenario: Scenario | None
    series: TimeSeries | None
    summary: RunSummary | None


def run_pipeline(cfg: dict, simulate_run: bool = True, tf=None, dt=None, seed=None) -> PipelineResult:
    lin = linearize(cfg)
    bound = compute_bound(cfg, lin)
    model = assemble(cfg, lin, bound)
    design = synthesize(cfg, model)
    report = verify(cfg, model, design.controller)
    scen = ts = summ = None
    if simulate_run and "scenario" in cfg:
        scen = build_scenario(cfg, lin, tf=tf, dt=dt, seed=seed)
        ts, summ = simulate(cfg, lin, design, scen)
    return PipelineResult(lin, bound, design, report, scen, ts, summ)
