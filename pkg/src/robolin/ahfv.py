"""Longitudinal air-breathing hypersonic vehicle: curve-fit truth model and design plant.

Truth state (13): V, gamma, h, alpha, Q, n1, n2, n3, n1dot, n2dot, n3dot,
phi, phidot. The last two come from the second-order fuel-ratio actuator.

The design plant keeps the seven rigid/actuator states, drops the flexible
modes and the control-surface terms of the drag fit, ties the canard to the
elevator through the interconnect gain, fixes the diffuser area ratio at one
and is written in deviation coordinates about a numerically computed trim
point, so its origin is an equilibrium at nominal parameters.

Coefficient values come from a JSON file; the bundled one holds placeholder
magnitudes only (see its ``_note``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np
from scipy import optimize

from . import expr as ex
from .expr import VariableSpace
from .feedlin import Diffeomorphism, LieChain, build_transform
from .plant import DecomposedPlant, ParameterBox, UncertainPlant
from .sim import TruthModel

__all__ = [
    "MissingCoefficientError",
    "DensityDomainError",
    "AhfvCoefficients",
    "AhfvTrim",
    "AhfvTruth",
    "TRUTH_STATES",
    "DESIGN_STATES",
    "DESIGN_INPUTS",
    "PARAMETERS",
    "load_coefficients",
    "density",
    "forces_moments",
    "truth_dynamics",
    "design_trim",
    "truth_trim",
    "simplified_design_plant",
    "ahfv_transform",
]

TRUTH_STATES = ("V", "gamma", "h", "alpha", "Q", "n1", "n2", "n3", "n1dot", "n2dot", "n3dot", "phi", "phidot")
DESIGN_STATES = ("V", "h", "gamma", "alpha", "phi", "phidot", "Q")
DESIGN_INPUTS = ("delta_e", "phi_c")
PARAMETERS = ("CL_alpha", "CM_dc", "CTphi_aM2", "CTphi_M2", "dCl", "dCd", "dCT", "dCM", "dCTphi")

_REQUIRED = {
    "geometry": ("m", "Iyy", "S", "cbar", "zT", "g"),
    "atmosphere": ("rho0", "h0", "scale_height", "M0", "h_min", "h_max"),
    "lift": ("alpha", "de", "dc", "dtau1", "dtau2", "zero"),
    "moment": ("alpha", "de", "dc", "dtau1", "dtau2", "zero"),
    "drag": ("alpha_dtau1_sq", "alpha_dtau1", "de_sq", "de", "dc_sq", "dc", "alpha_de", "alpha_dc", "dtau1", "zero"),
    "thrust_phi": ("alpha", "alpha_Minv2", "alpha_dtau1", "Minv2", "dtau1_sq", "dtau1", "zero"),
    "thrust": ("Ad", "alpha", "Minv2", "dtau1", "zero"),
    "flex": ("zeta", "omega", "E1", "E2"),
    "actuator": ("zeta", "omega_n"),
    "uncertainty_nominals": ("dCl", "dCd", "dCT", "dCM", "dCTphi"),
    "trim": ("V", "h"),
}
_FORCE_KEYS = ("alpha", "de", "dc", "dtau1", "dtau2", "zero")


class MissingCoefficientError(KeyError):
    pass


class DensityDomainError(ValueError):
    pass


@dataclass(frozen=True)
class AhfvCoefficients:
    """Coefficient sets keyed as in ``ahfv_coeffs.json``."""

    data: dict

    def __post_init__(self):
        d = self.data
        for group, keys in _REQUIRED.items():
            if group not in d:
                raise MissingCoefficientError(f"missing coefficient group '{group}'")
            for k in keys:
                if k not in d[group]:
                    raise MissingCoefficientError(f"missing coefficient '{group}.{k}'")
        gf = d.get("generalized_forces")
        if not isinstance(gf, list) or len(gf) != 3:
            raise MissingCoefficientError("missing coefficient group 'generalized_forces' (3 entries)")
        for i, row in enumerate(gf):
            for k in _FORCE_KEYS:
                if k not in row:
                    raise MissingCoefficientError(f"missing coefficient 'generalized_forces[{i}].{k}'")
        geo, act, flex = d["geometry"], d["actuator"], d["flex"]
        for k in ("m", "Iyy", "S"):
            if not geo[k] > 0:
                raise ValueError(f"geometry.{k} must be positive")
        if not act["omega_n"] > 0 or not 0 < act["zeta"] <= 1:
            raise ValueError("actuator needs omega_n > 0 and 0 < zeta <= 1")
        if not 0 < flex["zeta"] <= 1 or any(not w > 0 for w in flex["omega"]):
            raise ValueError("flex modes need omega > 0 and 0 < zeta <= 1")
        if len(flex["omega"]) != 3 or len(flex["E1"]) != 3 or len(flex["E2"]) != 3:
            raise ValueError("flex needs three modes and 1 x 3 rows E1, E2")
        if not d["atmosphere"]["rho0"] > 0:
            raise ValueError("atmosphere.rho0 must be positive")
        if d["lift"]["dc"] == 0 and d.get("interconnect_gain") is None:
            raise ValueError("lift.dc must be nonzero when the interconnect gain is derived")

    def __getitem__(self, group: str) -> dict:
        return self.data[group]

    @property
    def interconnect_gain(self) -> float:
        """delta_c / delta_e; default cancels the control-surface lift."""
        k = self.data.get("interconnect_gain")
        if k is None:
            return -self.data["lift"]["de"] / self.data["lift"]["dc"]
        return float(k)

    @property
    def p0(self) -> np.ndarray:
        d, u = self.data, self.data["uncertainty_nominals"]
        return np.array(
            [
                d["lift"]["alpha"],
                d["moment"]["dc"],
                d["thrust_phi"]["alpha_Minv2"],
                d["thrust_phi"]["Minv2"],
                u["dCl"], u["dCd"], u["dCT"], u["dCM"], u["dCTphi"],
            ],
            dtype=float,
        )

    def with_values(self, updates: dict) -> "AhfvCoefficients":
        """Copy with ``{"group.key": value}`` replacements."""
        d = json.loads(json.dumps(self.data))
        for path, value in updates.items():
            group, key = path.split(".", 1)
            d[group][key] = value
        return AhfvCoefficients(d)


def load_coefficients(path=None) -> AhfvCoefficients:
    """Read a coefficient file; the bundled placeholder set by default."""
    if path is None:
        text = resources.files("robolin.data").joinpath("ahfv_coeffs.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return AhfvCoefficients(json.loads(text))


def density(h: float, c: AhfvCoefficients) -> float:
    a = c["atmosphere"]
    if not (a["h_min"] <= h <= a["h_max"]):
        raise DensityDomainError(f"altitude {h:.6g} outside the density model envelope [{a['h_min']}, {a['h_max']}]")
    return a["rho0"] * math.exp(-(h - a["h0"]) / a["scale_height"])


def _param_values(c: AhfvCoefficients, p) -> dict:
    p = c.p0 if p is None else np.asarray(p, dtype=float)
    return dict(zip(PARAMETERS, map(float, p)))


def forces_moments(s: Sequence[float], controls: dict, c: AhfvCoefficients, p=None) -> dict:
    """Forces and moments of the full curve-fit model.

    ``controls`` holds ``de``, ``dc``, ``phi`` and ``Ad``. With ``p`` given,
    its first four entries replace the corresponding fit coefficients and
    the five increments are added to C_L, C_D, C_T, C_M and C_T,phi.
    Without ``p`` the nominal values are used.
    """
    V, h, alpha = float(s[0]), float(s[2]), float(s[3])
    n = np.asarray(s[5:8], dtype=float)
    de, dc, phi, Ad = controls["de"], controls["dc"], controls["phi"], controls.get("Ad", 1.0)
    pv = _param_values(c, p)
    lift, mom, drag = c["lift"], c["moment"], c["drag"]
    tphi, thr, geo = c["thrust_phi"], c["thrust"], c["geometry"]
    flex = c["flex"]
    dt1 = float(np.dot(flex["E1"], n))
    dt2 = float(np.dot(flex["E2"], n))
    qbar = 0.5 * density(h, c) * V * V
    mach = V / c["atmosphere"]["M0"]
    Minv2 = mach**-2

    CL = (
        pv["CL_alpha"] * alpha + lift["de"] * de + lift["dc"] * dc
        + lift["dtau1"] * dt1 + lift["dtau2"] * dt2 + lift["zero"] + pv["dCl"]
    )
    CM = (
        mom["alpha"] * alpha + mom["de"] * de + pv["CM_dc"] * dc
        + mom["dtau1"] * dt1 + mom["dtau2"] * dt2 + mom["zero"] + pv["dCM"]
    )
    a1 = alpha + dt1
    CD = (
        drag["alpha_dtau1_sq"] * a1**2 + drag["alpha_dtau1"] * a1
        + drag["de_sq"] * de**2 + drag["de"] * de + drag["dc_sq"] * dc**2 + drag["dc"] * dc
        + drag["alpha_de"] * alpha * de + drag["alpha_dc"] * alpha * dc
        + drag["dtau1"] * dt1 + drag["zero"] + pv["dCd"]
    )
    CTphi = (
        tphi["alpha"] * alpha + pv["CTphi_aM2"] * alpha * Minv2 + tphi["alpha_dtau1"] * alpha * dt1
        + pv["CTphi_M2"] * Minv2 + tphi["dtau1_sq"] * dt1**2 + tphi["dtau1"] * dt1
        + tphi["zero"] + pv["dCTphi"]
    )
    CT = thr["Ad"] * Ad + thr["alpha"] * alpha + thr["Minv2"] * Minv2 + thr["dtau1"] * dt1 + thr["zero"] + pv["dCT"]
    CN = [
        r["alpha"] * alpha + r["de"] * de + r["dc"] * dc + r["dtau1"] * dt1 + r["dtau2"] * dt2 + r["zero"]
        for r in c["generalized_forces"]
    ]
    S = geo["S"]
    T = qbar * (phi * CTphi + CT)
    return {
        "L": qbar * S * CL,
        "D": qbar * S * CD,
        "T": T,
        "Myy": geo["zT"] * T + qbar * S * geo["cbar"] * CM,
        "N": [qbar * cn for cn in CN],
        "qbar": qbar,
        "Mach": mach,
        "dtau1": dt1,
        "dtau2": dt2,
        "CL": CL,
        "CD": CD,
        "CM": CM,
        "CT": CT,
        "CTphi": CTphi,
    }


def truth_dynamics(s: Sequence[float], controls: dict, c: AhfvCoefficients, p=None) -> np.ndarray:
    """Time derivative of the 13 truth states.

    ``controls`` holds ``de``, ``dc``, ``phi_c`` and ``Ad``; the thrust uses
    the actuator state phi.
    """
    s = np.asarray(s, dtype=float)
    V, gamma, h, alpha, Q = s[:5]
    n, nd = s[5:8], s[8:11]
    phi, phid = s[11], s[12]
    if not V > 0:
        raise ValueError("truth dynamics require V > 0")
    fm = forces_moments(s, {"de": controls["de"], "dc": controls["dc"], "phi": phi, "Ad": controls.get("Ad", 1.0)}, c, p)
    geo, flex, act = c["geometry"], c["flex"], c["actuator"]
    m, g = geo["m"], geo["g"]
    T, L, D = fm["T"], fm["L"], fm["D"]
    Vdot = (T * math.cos(alpha) - D) / m - g * math.sin(gamma)
    gdot = (L + T * math.sin(alpha)) / (m * V) - g * math.cos(gamma) / V
    hdot = V * math.sin(gamma)
    adot = Q - gdot
    Qdot = fm["Myy"] / geo["Iyy"]
    om = np.asarray(flex["omega"], dtype=float)
    ndd = -2 * flex["zeta"] * om * nd - om**2 * n + np.asarray(fm["N"])
    wn, z = act["omega_n"], act["zeta"]
    phidd = -2 * z * wn * phid - wn**2 * phi + wn**2 * controls["phi_c"]
    return np.concatenate([[Vdot, gdot, hdot, adot, Qdot], nd, ndd, [phid, phidd]])


# ---------------------------------------------------------------------------
# trim


@dataclass(frozen=True)
class AhfvTrim:
    V: float
    h: float
    alpha: float
    delta_e: float
    phi: float
    n: tuple[float, float, float] = (0.0, 0.0, 0.0)
    residual: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__, n=list(self.n))

    def truth_state(self) -> np.ndarray:
        s = np.zeros(13)
        s[0], s[2], s[3] = self.V, self.h, self.alpha
        s[5:8] = self.n
        s[11] = self.phi
        return s


def _simplified_rates(V, h, gamma, alpha, phi, Q, de, c: AhfvCoefficients, pv: dict, lib):
    """V', gamma', Q' of the simplified model; ``lib`` is ``math`` or the expression module."""
    geo, atm = c["geometry"], c["atmosphere"]
    lift, mom, drag, tphi, thr = c["lift"], c["moment"], c["drag"], c["thrust_phi"], c["thrust"]
    rho = atm["rho0"] * lib.exp((h - atm["h0"]) * (-1.0 / atm["scale_height"]))
    qbar = rho * V * V * 0.5
    Minv2 = (V * (1.0 / atm["M0"])) ** -2 if lib is math else ex.power(V * (1.0 / atm["M0"]), -2)
    ratio = lift["de"] / lift["dc"]
    CL = pv["CL_alpha"] * alpha + lift["zero"] + pv["dCl"]
    CM = mom["alpha"] * alpha + (mom["de"] - pv["CM_dc"] * ratio) * de + mom["zero"] + pv["dCM"]
    CD = drag["alpha_dtau1_sq"] * alpha * alpha + drag["alpha_dtau1"] * alpha + drag["zero"] + pv["dCd"]
    # the alpha * M^-2 term is read as linear in alpha
    CTphi = tphi["alpha"] * alpha + pv["CTphi_aM2"] * alpha * Minv2 + pv["CTphi_M2"] * Minv2 + tphi["zero"] + pv["dCTphi"]
    CT = thr["Ad"] * 1.0 + thr["alpha"] * alpha + thr["Minv2"] * Minv2 + thr["zero"] + pv["dCT"]
    S, m, g = geo["S"], geo["m"], geo["g"]
    T = qbar * (phi * CTphi + CT)
    L = qbar * S * CL
    D = qbar * S * CD
    Myy = geo["zT"] * T + qbar * S * geo["cbar"] * CM
    Vdot = (T * lib.cos(alpha) - D) * (1.0 / m) - g * lib.sin(gamma)
    gdot = (L + T * lib.sin(alpha)) / (m * V) - g * lib.cos(gamma) / V
    Qdot = Myy * (1.0 / geo["Iyy"])
    return Vdot, gdot, Qdot


def design_trim(c: AhfvCoefficients, V: float | None = None, h: float | None = None) -> AhfvTrim:
    """Level-flight trim of the simplified model at nominal parameters."""
    V = c["trim"]["V"] if V is None else V
    h = c["trim"]["h"] if h is None else h
    pv = _param_values(c, None)
    scale = np.array([1.0, 1e-3, 1.0])

    def eqs(z):
        a, de, phi = z
        return np.array(_simplified_rates(V, h, 0.0, a, phi, 0.0, de, c, pv, math)) / scale

    sol = optimize.root(eqs, [0.03, 0.0, 0.2], method="hybr", options={"xtol": 1e-14})
    res = float(np.max(np.abs(eqs(sol.x) * scale)))
    if res > 1e-9:
        raise RuntimeError(f"design trim did not converge (residual {res:.3e})")
    a, de, phi = map(float, sol.x)
    return AhfvTrim(V, h, a, de, phi, residual=res)


def truth_trim(c: AhfvCoefficients, V: float | None = None, h: float | None = None, p=None) -> AhfvTrim:
    """Level-flight trim of the full model, flexible modes at static deflection."""
    start = design_trim(c, V, h)
    k = c.interconnect_gain

    def eqs(z):
        a, de, phi = z[:3]
        s = start.truth_state()
        s[3], s[5:8], s[11] = a, z[3:6], phi
        d = truth_dynamics(s, {"de": de, "dc": k * de, "phi_c": phi, "Ad": 1.0}, c, p)
        return np.concatenate([[d[0], d[1] * 1e3, d[4]], d[8:11]])

    sol = optimize.root(eqs, [start.alpha, start.delta_e, start.phi, 0.0, 0.0, 0.0], method="hybr", options={"xtol": 1e-14})
    res = float(np.max(np.abs(eqs(sol.x))))
    if res > 1e-8:
        raise RuntimeError(f"truth trim did not converge (residual {res:.3e})")
    a, de, phi = map(float, sol.x[:3])
    return AhfvTrim(start.V, start.h, a, de, phi, tuple(map(float, sol.x[3:6])), res)


# ---------------------------------------------------------------------------
# design plant


def simplified_design_plant(
    c: AhfvCoefficients,
    p0_overrides: dict | None = None,
    omega_fraction: float = 0.1,
    trim: AhfvTrim | None = None,
    output_units: Sequence[float] = (1.0, 1.0),
) -> UncertainPlant:
    """Seven-state uncertain design plant in deviation coordinates about trim.

    States are deviations of (V, h, gamma, alpha, phi, phidot, Q) from trim,
    inputs are deviations of (delta_e, phi_c), outputs are the V and h
    deviations divided by ``output_units`` and the nine parameters are those
    of ``PARAMETERS``.
    """
    if p0_overrides:
        upd = {}
        keys = {
            "CL_alpha": "lift.alpha", "CM_dc": "moment.dc", "CTphi_aM2": "thrust_phi.alpha_Minv2",
            "CTphi_M2": "thrust_phi.Minv2", "dCl": "uncertainty_nominals.dCl", "dCd": "uncertainty_nominals.dCd",
            "dCT": "uncertainty_nominals.dCT", "dCM": "uncertainty_nominals.dCM", "dCTphi": "uncertainty_nominals.dCTphi",
        }
        for name, value in p0_overrides.items():
            if name not in keys:
                raise MissingCoefficientError(f"unknown parameter '{name}'")
            upd[keys[name]] = value
        c = c.with_values(upd)
    trim = design_trim(c) if trim is None else trim
    space = VariableSpace(states=DESIGN_STATES, inputs=DESIGN_INPUTS, params=PARAMETERS)
    dV, dh, dgam, dal, dphi, dphid, dQ = (ex.var(s) for s in DESIGN_STATES)
    pv = {name: ex.var(name) for name in PARAMETERS}
    V = dV + trim.V
    h = dh + trim.h
    alpha = dal + trim.alpha
    phi = dphi + trim.phi
    # drift at the trim elevator; the elevator deviation enters through g
    Vdot, gdot, Qdot = _simplified_rates(V, h, dgam, alpha, phi, dQ, ex.const(trim.delta_e), c, pv, ex)
    act = c["actuator"]
    wn, z = act["omega_n"], act["zeta"]
    f = [
        Vdot,
        V * ex.sin(dgam),
        gdot,
        dQ - gdot,
        dphid,
        -2 * z * wn * dphid - wn**2 * dphi,
        Qdot,
    ]
    geo, atm, lift, mom = c["geometry"], c["atmosphere"], c["lift"], c["moment"]
    rho = atm["rho0"] * ex.exp((h - atm["h0"]) * (-1.0 / atm["scale_height"]))
    qbar = rho * V * V * 0.5
    b_de = qbar * (geo["S"] * geo["cbar"] / geo["Iyy"]) * (mom["de"] - pv["CM_dc"] * (lift["de"] / lift["dc"]))
    zero = ex.ZERO
    g = [
        [zero, zero],
        [zero, zero],
        [zero, zero],
        [zero, zero],
        [zero, zero],
        [zero, ex.const(wn**2)],
        [b_de, zero],
    ]
    p0 = c.p0
    sV, sh = (float(v) for v in output_units)
    if not (sV > 0 and sh > 0):
        raise ValueError("output units must be positive")
    return UncertainPlant(
        space, f, g, [dV * (1.0 / sV), dh * (1.0 / sh)], p0, ParameterBox.relative(p0, omega_fraction), name="ahfv"
    )


def ahfv_transform(plant: DecomposedPlant, chain: LieChain) -> Diffeomorphism:
    """chi = [int(V - V_c), V - V_c, V', V'', int(h - h_c), h - h_c, h', h'', h''']."""
    return build_transform(plant, chain, commands=("V_c", "h_c"), with_integrators=True)


class AhfvTruth(TruthModel):
    """Full curve-fit model driven through the design-plant input map."""

    state_names = TRUTH_STATES
    input_names = ("delta_e", "phi_c")

    def __init__(self, c: AhfvCoefficients, trim: AhfvTrim, initial: AhfvTrim | None = None):
        self.c = c
        self.trim = trim
        self.initial = initial if initial is not None else truth_trim(c, trim.V, trim.h)
        self.k = c.interconnect_gain

    def initial_state(self) -> np.ndarray:
        return self.initial.truth_state()

    def derivative(self, t, x, u, p):
        de, phic = float(u[0]), float(u[1])
        return truth_dynamics(x, {"de": de, "dc": self.k * de, "phi_c": phic, "Ad": 1.0}, self.c, p)

    def design_state(self, x):
        tr = self.trim
        return np.array([x[0] - tr.V, x[2] - tr.h, x[1], x[3] - tr.alpha, x[11] - tr.phi, x[12], x[4]])

    def to_truth_input(self, u_design):
        return np.array([self.trim.delta_e + u_design[0], self.trim.phi + u_design[1]])
