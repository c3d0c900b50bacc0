import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "robolin", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("robolin")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ahfv_design():
    """Linearization, bound and synthesized design of the bundled AHFV demo (built once)."""
    from robolin import pipeline as P

    cfg = P.builtin_config("ahfv")
    lin = P.linearize(cfg)
    bound = P.compute_bound(cfg, lin)
    model = P.assemble(cfg, lin, bound)
    design = P.synthesize(cfg, model)
    return cfg, lin, bound, design


@pytest.fixture(scope="session")
def ahfv_run(ahfv_design):
    """Full 200 s demo run at dt = 0.005 (shared by the end-to-end tests)."""
    import time

    from robolin import pipeline as P

    cfg, lin, bound, design = ahfv_design
    scen = P.build_scenario(cfg, lin)
    t0 = time.perf_counter()
    ts, summary = P.simulate(cfg, lin, design, scen)
    return ts, summary, time.perf_counter() - t0


@pytest.fixture(scope="session")
def bundled_designs(ahfv_design):
    """name -> (cfg, lin, bound, design) for every bundled demo config."""
    from robolin import pipeline as P

    out = {"ahfv": ahfv_design}
    for name in P.builtin_names():
        if name == "ahfv":
            continue
        cfg = P.builtin_config(name)
        lin = P.linearize(cfg)
        bound = P.compute_bound(cfg, lin)
        model = P.assemble(cfg, lin, bound)
        out[name] = (cfg, lin, bound, P.synthesize(cfg, model))
    return out
