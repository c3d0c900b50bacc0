import copy
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robolin import ahfv
from robolin import expr as ex
from robolin.plant import validate
from robolin.sim import rk4_step

BASE = ahfv.load_coefficients()
RAW = json.loads(json.dumps(BASE.data))
SPEC_STATE = np.zeros(13)
SPEC_STATE[[0, 2, 3]] = [7850.0, 85000.0, 0.02]


def zeroed(**keep):
    """Coefficient set with every aerodynamic/propulsive fit term zero, then ``keep`` applied."""
    d = copy.deepcopy(RAW)
    for group in ("lift", "moment", "drag", "thrust_phi", "thrust", "uncertainty_nominals"):
        d[group] = {k: 0.0 for k in d[group]}
    d["generalized_forces"] = [{k: 0.0 for k in row} for row in d["generalized_forces"]]
    d["interconnect_gain"] = 0.0
    for path, value in keep.items():
        group, key = path.split("__")
        d[group][key] = value
    return ahfv.AhfvCoefficients(d)


def oracle_forces(d, s, de, dc, phi, Ad=1.0):
    """Straight transcription of the curve fits, working on the raw JSON dict."""
    V, h, a = s[0], s[2], s[3]
    n = np.asarray(s[5:8])
    t1 = sum(e * x for e, x in zip(d["flex"]["E1"], n))
    t2 = sum(e * x for e, x in zip(d["flex"]["E2"], n))
    atm = d["atmosphere"]
    q = atm["rho0"] * math.exp((atm["h0"] - h) / atm["scale_height"]) * V**2 / 2
    Mi2 = (atm["M0"] / V) ** 2
    u = d["uncertainty_nominals"]

    def lin(c):
        return np.dot([c["alpha"], c["de"], c["dc"], c["dtau1"], c["dtau2"], c["zero"]], [a, de, dc, t1, t2, 1.0])

    cd, tp, tt = d["drag"], d["thrust_phi"], d["thrust"]
    CL = lin(d["lift"]) + u["dCl"]
    CM = lin(d["moment"]) + u["dCM"]
    CD = np.dot(
        [cd["alpha_dtau1_sq"], cd["alpha_dtau1"], cd["de_sq"], cd["de"], cd["dc_sq"], cd["dc"],
         cd["alpha_de"], cd["alpha_dc"], cd["dtau1"], cd["zero"]],
        [(a + t1) ** 2, a + t1, de**2, de, dc**2, dc, a * de, a * dc, t1, 1.0],
    ) + u["dCd"]
    CTphi = np.dot(
        [tp["alpha"], tp["alpha_Minv2"], tp["alpha_dtau1"], tp["Minv2"], tp["dtau1_sq"], tp["dtau1"], tp["zero"]],
        [a, a * Mi2, a * t1, Mi2, t1**2, t1, 1.0],
    ) + u["dCTphi"]
    CT = np.dot([tt["Ad"], tt["alpha"], tt["Minv2"], tt["dtau1"], tt["zero"]], [Ad, a, Mi2, t1, 1.0]) + u["dCT"]
    g = d["geometry"]
    T = q * (phi * CTphi + CT)
    return {
        "L": q * g["S"] * CL, "D": q * g["S"] * CD, "T": T,
        "Myy": g["zT"] * T + q * g["S"] * g["cbar"] * CM,
        "N": [q * lin(r) for r in d["generalized_forces"]],
    }


class TestForcesMoments:
    def test_constant_lift_isolated(self):
        c = zeroed(lift__zero=0.3)
        fm = ahfv.forces_moments(SPEC_STATE, {"de": 0.1, "dc": 0.0, "phi": 0.3}, c)
        assert fm["L"] == pytest.approx(fm["qbar"] * 17.0 * 0.3, rel=1e-15)
        assert fm["D"] == 0.0 and fm["T"] == 0.0 and fm["Myy"] == 0.0

    def test_rigid_state_has_no_flex_increments(self):
        fm = ahfv.forces_moments(SPEC_STATE, {"de": 0.1, "dc": 0.05, "phi": 0.3}, BASE)
        assert fm["dtau1"] == 0.0 and fm["dtau2"] == 0.0
        d = copy.deepcopy(RAW)
        for group in ("lift", "moment"):
            d[group]["dtau1"] = d[group]["dtau2"] = 123.0
        d["drag"]["dtau1"] = d["thrust_phi"]["dtau1"] = d["thrust_phi"]["dtau1_sq"] = d["thrust"]["dtau1"] = 7.0
        other = ahfv.forces_moments(SPEC_STATE, {"de": 0.1, "dc": 0.05, "phi": 0.3}, ahfv.AhfvCoefficients(d))
        for k in ("L", "D", "T", "Myy"):
            assert other[k] == fm[k]

    @pytest.mark.parametrize("n", [(0.0, 0.0, 0.0), (0.5, -0.3, 0.2)])
    def test_independent_transcription(self, n):
        s = SPEC_STATE.copy()
        s[5:8] = n
        de = 0.1
        dc = BASE.interconnect_gain * de
        got = ahfv.forces_moments(s, {"de": de, "dc": dc, "phi": 0.3}, BASE)
        want = oracle_forces(RAW, s, de, dc, 0.3)
        for k in ("L", "D", "T", "Myy"):
            assert got[k] == pytest.approx(want[k], rel=1e-10)
        np.testing.assert_allclose(got["N"], want["N"], rtol=1e-10)

    def test_coefficient_linearity(self):
        c0 = RAW["lift"]["zero"]
        ctl = {"de": 0.1, "dc": 0.0, "phi": 0.3}
        L1 = ahfv.forces_moments(SPEC_STATE, ctl, BASE)["L"]
        L2 = ahfv.forces_moments(SPEC_STATE, ctl, BASE.with_values({"lift.zero": 2 * c0}))["L"]
        L0 = ahfv.forces_moments(SPEC_STATE, ctl, BASE.with_values({"lift.zero": 0.0}))["L"]
        assert L2 - L0 == pytest.approx(2 * (L1 - L0), rel=1e-12)

    def test_density_envelope(self):
        s = SPEC_STATE.copy()
        s[2] = 150_000.0
        with pytest.raises(ahfv.DensityDomainError):
            ahfv.forces_moments(s, {"de": 0.0, "dc": 0.0, "phi": 0.3}, BASE)


class TestTruthDynamics:
    controls = {"de": 0.0, "dc": 0.0, "phi_c": 0.3}

    def test_level_flight_has_no_climb(self):
        assert ahfv.truth_dynamics(SPEC_STATE, self.controls, BASE)[2] == 0.0

    def test_thrust_drag_balance(self):
        s = SPEC_STATE.copy()
        s[3] = 0.0
        fm = ahfv.forces_moments(s, {"de": 0.0, "dc": 0.0, "phi": 0.0}, BASE)
        s[11] = (fm["qbar"] * RAW["geometry"]["S"] * fm["CD"] - fm["qbar"] * fm["CT"]) / (fm["qbar"] * fm["CTphi"])
        fm = ahfv.forces_moments(s, {"de": 0.0, "dc": 0.0, "phi": s[11]}, BASE)
        assert fm["T"] == pytest.approx(fm["D"], rel=1e-12)
        assert ahfv.truth_dynamics(s, self.controls, BASE)[0] == pytest.approx(0.0, abs=1e-9)

    def test_modal_decay(self):
        c = zeroed()
        zeta = RAW["flex"]["zeta"]
        s = SPEC_STATE.copy()
        s[5:8] = 1.0
        s[11] = 0.3
        dt, T = 1e-4, 0.5
        for k in range(int(round(T / dt))):
            s = rk4_step(lambda t, x: ahfv.truth_dynamics(x, {"de": 0.0, "dc": 0.0, "phi_c": 0.3}, c), k * dt, s, dt)
        for i, w in enumerate(RAW["flex"]["omega"]):
            wd = w * math.sqrt(1 - zeta**2)
            exact = math.exp(-zeta * w * T) * (math.cos(wd * T) + zeta * w / wd * math.sin(wd * T))
            assert s[5 + i] == pytest.approx(exact, abs=1e-6)

    def test_actuator(self):
        s = SPEC_STATE.copy()
        s[11], s[12] = 0.2, 0.1
        d = ahfv.truth_dynamics(s, {"de": 0.0, "dc": 0.0, "phi_c": 0.5}, BASE)
        wn, z = RAW["actuator"]["omega_n"], RAW["actuator"]["zeta"]
        assert d[11] == 0.1
        assert d[12] == pytest.approx(-2 * z * wn * 0.1 - wn**2 * 0.2 + wn**2 * 0.5, rel=1e-15)

    def test_requires_positive_speed(self):
        s = SPEC_STATE.copy()
        s[0] = 0.0
        with pytest.raises(ValueError):
            ahfv.truth_dynamics(s, self.controls, BASE)


class TestCoefficients:
    def test_missing_field_named(self):
        d = copy.deepcopy(RAW)
        del d["drag"]["alpha_dc"]
        with pytest.raises(ahfv.MissingCoefficientError, match="drag.alpha_dc"):
            ahfv.AhfvCoefficients(d)

    def test_missing_generalized_force(self):
        d = copy.deepcopy(RAW)
        del d["generalized_forces"][1]["dtau2"]
        with pytest.raises(ahfv.MissingCoefficientError, match=r"generalized_forces\[1\]"):
            ahfv.AhfvCoefficients(d)

    def test_invalid_values(self):
        d = copy.deepcopy(RAW)
        d["actuator"]["zeta"] = 1.5
        with pytest.raises(ValueError):
            ahfv.AhfvCoefficients(d)

    def test_unknown_override(self):
        with pytest.raises(ahfv.MissingCoefficientError):
            ahfv.simplified_design_plant(BASE, {"CL_beta": 1.0})

    def test_interconnect_cancels_surface_lift(self):
        k = BASE.interconnect_gain
        assert RAW["lift"]["de"] + RAW["lift"]["dc"] * k == pytest.approx(0.0, abs=1e-15)


@pytest.fixture(scope="module")
def plant():
    return ahfv.simplified_design_plant(BASE)


class TestDesignPlant:
    def test_parameter_vector(self, plant):
        assert len(plant.space.params) == 9 and plant.p0.size == 9
        np.testing.assert_allclose(plant.omega.lower, 0.9 * np.abs(plant.p0), rtol=1e-15)
        np.testing.assert_allclose(plant.omega.upper, 1.1 * np.abs(plant.p0), rtol=1e-15)

    def test_overrides(self):
        plant = ahfv.simplified_design_plant(BASE, {"CL_alpha": 5.0})
        assert plant.p0[0] == 5.0

    def test_validation(self, plant):
        rep = validate(plant, samples=50, seed=0)
        assert rep["square"].passed and rep["p0_interior"].passed
        assert rep["nominal_equilibrium"].passed
        # the trim moves with the parameters, so the origin is not a robust equilibrium
        assert not rep["robust_equilibrium"].passed

    def test_drift_matches_direct_evaluation(self, plant, rng):
        trim = ahfv.design_trim(BASE)
        pv = dict(zip(ahfv.PARAMETERS, plant.p0))
        f = ex.compile_exprs(list(plant.f), list(plant.space.states) + list(plant.space.params))
        for _ in range(20):
            x = rng.uniform(-1, 1, 7) * [10, 100, 0.01, 0.01, 0.05, 0.05, 0.01]
            got = f(list(x) + list(plant.p0))
            V, h, gam, al, ph, phd, Q = x + [trim.V, trim.h, 0, trim.alpha, trim.phi, 0, 0]
            Vd, gd, Qd = ahfv._simplified_rates(V, h, gam, al, ph, Q, trim.delta_e, BASE, pv, math)
            np.testing.assert_allclose([got[0], got[2], got[6]], [Vd, gd, Qd], rtol=1e-10, atol=1e-13)
            assert got[1] == pytest.approx(V * math.sin(gam), rel=1e-12)

    def test_simplification_fidelity(self, rng):
        # with n = 0 and the canard tied to the elevator only the dropped drag terms differ
        k = BASE.interconnect_gain
        pv = dict(zip(ahfv.PARAMETERS, BASE.p0))
        cd, S, m = RAW["drag"], RAW["geometry"]["S"], RAW["geometry"]["m"]
        for _ in range(1000):
            V = rng.uniform(7000, 8500)
            h = rng.uniform(75_000, 95_000)
            gam, al, ph, Q, de = rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.1), rng.uniform(0.05, 1.0), \
                rng.uniform(-0.05, 0.05), rng.uniform(-0.3, 0.3)
            dc = k * de
            s = np.zeros(13)
            s[[0, 1, 2, 3, 4, 11]] = V, gam, h, al, Q, ph
            truth = ahfv.truth_dynamics(s, {"de": de, "dc": dc, "phi_c": ph}, BASE)
            Vd, gd, Qd = ahfv._simplified_rates(V, h, gam, al, ph, Q, de, BASE, pv, math)
            dropped = (cd["de_sq"] * de**2 + cd["de"] * de + cd["dc_sq"] * dc**2 + cd["dc"] * dc
                       + cd["alpha_de"] * al * de + cd["alpha_dc"] * al * dc)
            qbar = 0.5 * ahfv.density(h, BASE) * V * V
            assert truth[0] == pytest.approx(Vd - qbar * S * dropped / m, rel=1e-9, abs=1e-9)
            assert truth[1] == pytest.approx(gd, rel=1e-9, abs=1e-12)
            assert truth[4] == pytest.approx(Qd, rel=1e-9, abs=1e-12)


class TestTrim:
    def test_design_trim_is_equilibrium(self):
        trim = ahfv.design_trim(BASE)
        pv = dict(zip(ahfv.PARAMETERS, BASE.p0))
        rates = ahfv._simplified_rates(trim.V, trim.h, 0.0, trim.alpha, trim.phi, 0.0, trim.delta_e, BASE, pv, math)
        assert max(abs(r) for r in rates) <= 1e-9

    def test_truth_trim_is_equilibrium(self):
        trim = ahfv.truth_trim(BASE)
        k = BASE.interconnect_gain
        d = ahfv.truth_dynamics(trim.truth_state(), {"de": trim.delta_e, "dc": k * trim.delta_e, "phi_c": trim.phi}, BASE)
        assert np.max(np.abs(d)) <= 1e-8

    @given(st.floats(7000, 8500), st.floats(75_000, 95_000))
    def test_trim_across_envelope(self, V, h):
        trim = ahfv.design_trim(BASE, V, h)
        assert 0.0 < trim.phi < 1.5 and abs(trim.alpha) < 0.2

    def test_truth_model_maps(self):
        trim = ahfv.design_trim(BASE)
        truth = ahfv.AhfvTruth(BASE, trim)
        x = truth.initial_state()
        xd = truth.design_state(x)
        assert xd.shape == (7,) and abs(xd[0]) < 1e-9 and abs(xd[1]) < 1e-9
        np.testing.assert_allclose(truth.to_truth_input([0.0, 0.0]), [trim.delta_e, trim.phi])
