import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bayesadv.dataio import SynthConfig, apply_normalize, fit_normalize, split, synth_gen
from bayesadv.network import Architecture
from bayesadv.svgd import TrainConfig, train

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_net(rng, widths=None, activation="elu", layer_norm=True):
    """Small architecture plus one randomly initialized particle (non-zero biases)."""
    from bayesadv.network import init_params, ParamParticle

    if widths is None:
        # layer norm over two or three units is too curved for a 1e-4 finite-difference step
        widths = (int(rng.integers(3, 9)), int(rng.integers(4, 9)), int(rng.integers(4, 7)), 1)
    arch = Architecture(widths, activation, layer_norm)
    p = init_params(arch, int(rng.integers(1 << 30)))
    theta = p.flat() + 0.1 * rng.standard_normal(arch.n_params)
    return ParamParticle.from_flat(arch, theta)


@pytest.fixture(scope="session")
def small_data():
    d = synth_gen(SynthConfig(n_samples=1200, n_features=12, seed=3))
    tr, va, te = split(d, (0.7, 0.1, 0.2), seed=3)
    tr, stats = fit_normalize(tr)
    return tr, apply_normalize(va, stats), apply_normalize(te, stats), stats


@pytest.fixture(scope="session")
def small_ensemble(small_data):
    tr, va, _, stats = small_data
    cfg = TrainConfig(
        n_particles=3, epochs=3, batch_size=64, learning_rate=3e-3, seed=1,
        arch=Architecture((12, 16, 8, 1)),
    )
    return train(tr, va, cfg, stats)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} | {detail}")
