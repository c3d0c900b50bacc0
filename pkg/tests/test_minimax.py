import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robolin import pipeline as P
from robolin.feedlin import brunovsky_form
from robolin.meanval import AssemblyConventions, LinearizedDesignModel, assemble_design_model
from robolin.minimax import (
    Controller,
    Infeasible,
    NoFeasibleTauError,
    SynthesisWeights,
    TauCertificate,
    build_controller,
    closed_loop,
    cost_bound,
    optimize_tau,
    solve_design_pair,
    verify_design,
)
from tests.helpers import lqg_oracle, random_lqg_model


def scalar_model(A=-1.0, B1=1.0, B2=1.0, C2=1.0, D2=1.0):
    m = lambda v: np.array([[float(v)]])  # noqa: E731
    return LinearizedDesignModel(
        m(A), m(B1), m(B2), m(0), m(C2), m(0), m(D2), 0.0, m(1), m(0), m(0), (1,), AssemblyConventions((0,)),
    )


ONE = SynthesisWeights.diagonal([1.0], [1.0])


def scalar_split_model():
    """A = -1, B1 = C2 = 1 with independent process and measurement noise."""
    m = lambda v: np.array(v, dtype=float)  # noqa: E731
    return LinearizedDesignModel(
        m([[-1]]), m([[1]]), m([[1, 0]]), m([[0]]), m([[1]]), m([[0]]), m([[0, 1]]), 0.0, m([[1]]),
        m([[0]]), m([[0]]), (1,), AssemblyConventions((0,)),
    )


def literal_residuals(model, weights, cert):
    """Frobenius residuals of both Riccati equations written out in their original form."""
    tau, Y, X = cert.tau, cert.Y, cert.X
    ti = 0.0 if math.isinf(tau) else 1.0 / tau
    A, B1, B2, C1, C2, D1, D2 = model.A, model.B1, model.B2, model.C1, model.C2, model.D1, model.D2
    t = 0.0 if math.isinf(tau) else tau
    R_t = weights.R + t * C1.T @ C1
    G_t = weights.G + t * D1.T @ D1
    U_t = t * C1.T @ D1
    Gam = D2 @ D2.T
    Gi = np.linalg.inv(Gam)
    Ay = A - B2 @ D2.T @ Gi @ C2
    ry = Ay @ Y + Y @ Ay.T - Y @ (C2.T @ Gi @ C2 - ti * R_t) @ Y + B2 @ (np.eye(D2.shape[1]) - D2.T @ Gi @ D2) @ B2.T
    Gti = np.linalg.inv(G_t)
    Ax = A - B1 @ Gti @ U_t.T
    rx = X @ Ax + Ax.T @ X + (R_t - U_t @ Gti @ U_t.T) - X @ (B1 @ Gti @ B1.T - ti * B2 @ B2.T) @ X
    return np.linalg.norm(ry, "fro"), np.linalg.norm(rx, "fro")


def lqg_cost(model, weights):
    X, Y, K, L = lqg_oracle(model.A, model.B1, model.B2, model.C2, model.D2, weights.R, weights.G)
    return float(np.trace(Y @ weights.R) + np.trace(L @ (model.D2 @ model.D2.T) @ L.T @ X))


class TestDesignPair:
    def test_lqg_limit_matches_oracle(self, rng):
        for _ in range(5):
            model = random_lqg_model(rng)
            w = SynthesisWeights(np.eye(4), np.eye(2))
            cert = solve_design_pair(model, w, math.inf)
            X, Y, K, L = lqg_oracle(model.A, model.B1, model.B2, model.C2, model.D2, w.R, w.G)
            np.testing.assert_allclose(cert.X, X, rtol=1e-8, atol=1e-10)
            np.testing.assert_allclose(cert.Y, Y, rtol=1e-8, atol=1e-10)

    def test_scalar_control_equation(self):
        cert = solve_design_pair(scalar_split_model(), ONE, math.inf)
        # -2 X - X^2 + 1 = 0, and the filter equation has the same scalar data
        assert cert.X[0, 0] == pytest.approx(math.sqrt(2) - 1, abs=1e-12)
        assert cert.Y[0, 0] == pytest.approx(math.sqrt(2) - 1, abs=1e-12)

    def test_uncertainty_requires_finite_tau(self):
        model = assemble_design_model(
            brunovsky_form([1]),
            0.1, AssemblyConventions((0, 1), output_scale=1, input_scale=1),
        )
        with pytest.raises(ValueError):
            solve_design_pair(model, SynthesisWeights.diagonal([1, 1], [1]), math.inf)
        with pytest.raises(ValueError):
            solve_design_pair(model, SynthesisWeights.diagonal([1, 1], [1]), -1.0)

    def test_huge_tau_breaks_coupling_at_ten_to_tenth_scaling(self, ahfv_design):
        cfg, lin, bound, _ = ahfv_design
        conv = AssemblyConventions(tuple(range(9)), output_scale=10.0, input_scale=0.1)
        model = assemble_design_model(lin.brunovsky, bound, conv)
        w = P._weights(cfg, 9, 2)
        res = solve_design_pair(model, w, 1e6)
        assert isinstance(res, Infeasible)
        assert "coupling_pd" in res.reason
        with pytest.raises(NoFeasibleTauError) as info:
            optimize_tau(model, w, bracket=(1e3, 1e6), budget=8)
        assert len(info.value.grid) == 8

    @pytest.mark.parametrize("name", ["scalar", "double_integrator", "ahfv"])
    def test_certificate_honesty(self, name, bundled_designs):
        cfg, lin, bound, design = bundled_designs[name]
        cert = design.certificate
        ry, rx = literal_residuals(design.model, design.weights, cert)
        assert ry <= 1e-8 * (1 + np.linalg.norm(cert.Y, "fro") ** 2)
        assert rx <= 1e-8 * (1 + np.linalg.norm(cert.X, "fro") ** 2)
        assert all(cert.flags.values())


class TestCostBound:
    def test_zero_filter_solution(self):
        model = scalar_model()
        cert = TauCertificate(1.0, np.zeros((1, 1)), np.array([[0.7]]), math.inf, {})
        B2, D2 = model.B2, model.D2
        expected = np.trace(B2 @ D2.T @ np.linalg.inv(D2 @ D2.T) @ D2 @ B2.T @ cert.X)
        assert cost_bound(model, ONE, cert) == pytest.approx(expected, rel=1e-15)

    @pytest.mark.parametrize("mode", ["scaled", "printed"])
    def test_scalar_hand_expansion(self, mode):
        # (Y + 1)^2 X / (1 - Y X) + Y R at Y = X = 1/2: 2.25 * (2/3) + 0.5
        cert = TauCertificate(1.0, np.array([[0.5]]), np.array([[0.5]]), math.inf, {}, wtau_inverse=mode)
        assert cost_bound(scalar_model(), ONE, cert) == pytest.approx(2.0, abs=1e-14)

    def test_printed_and_scaled_differ_away_from_unit_tau(self):
        Y, X = np.array([[0.5]]), np.array([[0.5]])
        a = cost_bound(scalar_model(), ONE, TauCertificate(4.0, Y, X, math.inf, {}, wtau_inverse="scaled"))
        b = cost_bound(scalar_model(), ONE, TauCertificate(4.0, Y, X, math.inf, {}, wtau_inverse="printed"))
        assert a != b

    def test_large_tau_approaches_lqg_cost(self, rng):
        for _ in range(3):
            model = random_lqg_model(rng)
            w = SynthesisWeights(np.eye(4), np.eye(2))
            oracle = lqg_cost(model, w)
            assert solve_design_pair(model, w, 1e6).W_tau == pytest.approx(oracle, rel=0.01)
            assert solve_design_pair(model, w, math.inf).W_tau == pytest.approx(oracle, rel=1e-8)


class TestOptimizeTau:
    def test_degenerate_bracket(self):
        cert = optimize_tau(scalar_split_model(), ONE, bracket=(5.0, 5.0))
        assert cert.tau == 5.0

    def test_monotone_without_uncertainty(self, rng):
        model = random_lqg_model(rng)
        w = SynthesisWeights(np.eye(4), np.eye(2))
        taus = np.geomspace(1e-1, 1e4, 200)
        vals = []
        for tau in taus:
            res = solve_design_pair(model, w, float(tau))
            vals.append(res.W_tau if isinstance(res, TauCertificate) else math.inf)
        finite = np.array([v for v in vals if math.isfinite(v)])
        assert finite.size > 100
        assert np.all(np.diff(finite) <= 1e-9 * finite[:-1])
        best = optimize_tau(model, w, bracket=(1e-1, 1e4))
        assert math.isinf(best.tau)
        assert best.W_tau <= finite.min()

    def test_bad_bracket(self):
        with pytest.raises(ValueError):
            optimize_tau(scalar_model(), ONE, bracket=(10.0, 1.0))

    @pytest.mark.parametrize("name", ["scalar", "double_integrator", "double_integrator_nominal", "ahfv"])
    def test_beats_log_grid(self, name, bundled_designs):
        cfg, _, _, design = bundled_designs[name]
        lo, hi = cfg.get("synthesis", {}).get("tau_bracket", (1e-3, 1e3))
        best = design.certificate.W_tau
        for tau in np.geomspace(lo, hi, 50):
            res = solve_design_pair(design.model, design.weights, float(tau))
            if isinstance(res, TauCertificate):
                assert best <= res.W_tau

    def test_reproducible(self, bundled_designs):
        _, _, _, design = bundled_designs["double_integrator"]
        cfg = P.builtin_config("double_integrator")
        a = optimize_tau(design.model, design.weights, bracket=cfg["synthesis"]["tau_bracket"])
        b = optimize_tau(design.model, design.weights, bracket=cfg["synthesis"]["tau_bracket"])
        assert a.tau == b.tau and np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)


class TestController:
    def test_lqg_gains(self, rng):
        for _ in range(5):
            model = random_lqg_model(rng)
            w = SynthesisWeights(np.eye(4), np.eye(2))
            ctrl = build_controller(model, w, solve_design_pair(model, w, math.inf))
            _, _, K, L = lqg_oracle(model.A, model.B1, model.B2, model.C2, model.D2, w.R, w.G)
            np.testing.assert_allclose(ctrl.K, K, rtol=1e-6, atol=1e-9)
            np.testing.assert_allclose(ctrl.Bc, L, rtol=1e-6, atol=1e-9)
            np.testing.assert_allclose(ctrl.Ac, model.A + model.B1 @ K - L @ model.C2, rtol=1e-6, atol=1e-9)

    def test_tau_terms_vanish_like_inverse_tau(self, rng):
        model = random_lqg_model(rng)
        w = SynthesisWeights(np.eye(4), np.eye(2))
        scaled = []
        for tau in (1e2, 1e3, 1e4, 1e5):
            c = build_controller(model, w, solve_design_pair(model, w, tau))
            gap = np.linalg.norm(c.Ac - (model.A + model.B1 @ c.K - c.Bc @ model.C2))
            scaled.append(gap * tau)
        assert max(scaled) <= 2 * min(scaled)

    def test_scalar_demo_stability(self, bundled_designs):
        _, _, _, design = bundled_designs["scalar"]
        Acl, _ = closed_loop(design.model, design.controller)
        assert np.all(np.linalg.eigvals(Acl).real < 0)
        rep = verify_design(design.model, design.controller)
        assert rep.perturbed_abscissa < 0

    def test_round_trip(self, bundled_designs):
        ctrl = bundled_designs["double_integrator"][3].controller
        back = Controller.from_dict(ctrl.to_dict())
        assert back.fingerprint() == ctrl.fingerprint()

    def test_infeasible_certificate_rejected(self):
        cert = TauCertificate(1.0, np.eye(1), np.eye(1), math.inf, {"Y_pd": True})
        with pytest.raises(ValueError):
            build_controller(scalar_model(), ONE, cert)


class TestVerify:
    @pytest.mark.parametrize("name", ["scalar", "double_integrator", "double_integrator_nominal", "ahfv"])
    def test_bundled(self, name, bundled_designs):
        _, _, _, design = bundled_designs[name]
        rep = verify_design(design.model, design.controller)
        assert rep.passed and rep.stable
        assert rep.hinf_certified <= 1 + 1e-6
        assert rep.hinf_psi <= rep.sqrt_tau * (1 + 1e-6)

    def test_lqg_equivalent(self, rng):
        model = random_lqg_model(rng)
        w = SynthesisWeights(np.eye(4), np.eye(2))
        rep = verify_design(model, build_controller(model, w, solve_design_pair(model, w, math.inf)))
        assert rep.stable and math.isfinite(rep.hinf_psi)

    def test_fingerprint_mismatch(self, bundled_designs):
        _, _, _, design = bundled_designs["scalar"]
        other = bundled_designs["double_integrator"][3].model
        ctrl = design.controller
        rep = verify_design(design.model, Controller(ctrl.Ac, ctrl.Bc, ctrl.K, ctrl.certificate, ctrl.weights, "x"))
        assert not rep.passed and not rep.fingerprint_match
        assert other.fingerprint() != design.model.fingerprint()


@given(st.floats(0.1, 10.0), st.floats(0.1, 10.0))
def test_weights_scale_with_cost(r, g):
    # scaling both weights by c scales X and hence W by c on the LQG limit
    model = scalar_split_model()
    a = solve_design_pair(model, SynthesisWeights.diagonal([r], [g]), math.inf)
    b = solve_design_pair(model, SynthesisWeights.diagonal([2 * r], [2 * g]), math.inf)
    np.testing.assert_allclose(b.X, 2 * a.X, rtol=1e-9)
