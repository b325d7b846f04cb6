"""Shared fixtures and the acceptance-criteria summary."""

import time
import warnings
from dataclasses import dataclass, replace

import pytest

from blockwatch import pipeline, simgen
from blockwatch.olae import TrainConfig
from blockwatch.pipeline import PipelineConfig
from blockwatch.stats import CusumConfig

SMALL = PipelineConfig(
    window_len=10, hidden_dim=8, latent_dim=3,
    train=TrainConfig(epochs=3, batch_size=64, learning_rate=3e-3),
    cusum=CusumConfig(d=5), calib_reps=20, calib_horizon=600,
)


@pytest.fixture(scope="session")
def small_config():
    return SMALL


@pytest.fixture(scope="session")
def bench_spec():
    return simgen.default_spec(0)


@pytest.fixture(scope="session")
def in_control(bench_spec):
    return simgen.generate(bench_spec, 3000, seed=100)


@pytest.fixture(scope="session")
def small_plant(bench_spec, in_control):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return pipeline.offline_learn(in_control, bench_spec.partition(), SMALL)


@pytest.fixture(scope="session")
def small_baseline(bench_spec, in_control):
    cfg = replace(SMALL, train=replace(SMALL.train, ortho_weight=0.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return pipeline.offline_learn(in_control, bench_spec.partition(), cfg)


@dataclass(frozen=True)
class Benchmark:
    spec: simgen.ProcessSpec
    in_control: object
    plant: pipeline.PlantArtifacts
    ref_sd: object           # in-control stdevs that scale injected faults
    train_seconds: float


def train_benchmark(n_samples: int, config: PipelineConfig = PipelineConfig()) -> Benchmark:
    spec = simgen.default_spec(0)
    ic = simgen.generate(spec, n_samples, seed=100)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        plant = pipeline.offline_learn(ic, spec.partition(), config)
    return Benchmark(spec, ic, plant, ic.values.std(axis=0), time.perf_counter() - t0)


@pytest.fixture(scope="session")
def benchmark():
    """Default configuration on 20000 in-control samples, for monitoring checks.

    The 6000-sample validation split is what the CUSUM threshold and block
    limits are calibrated on; half that leaves held-out FAR near 0.05.
    """
    return train_benchmark(20000)


@pytest.fixture(scope="session")
def ortho_benchmark():
    """Default configuration on 10000 samples, for code geometry checks."""
    return train_benchmark(10000)


@pytest.fixture(scope="session")
def ortho_baseline(ortho_benchmark):
    """Same data and seeds as ``ortho_benchmark`` with the orthogonality weight at 0."""
    cfg = ortho_benchmark.plant.config
    return train_benchmark(ortho_benchmark.in_control.n_samples,
                           replace(cfg, train=replace(cfg.train, ortho_weight=0.0)))


def validation_codes(bench: Benchmark) -> list:
    """Per-block codes of the chronological validation split."""
    from blockwatch import olae
    from blockwatch.core import apply_standardizer, chronological_split, sliding_windows
    cfg = bench.plant.config
    _, val = chronological_split(bench.in_control, cfg.train_fraction)
    z = apply_standardizer(bench.plant.standardizer, val).values
    return [olae.encode_batch(b.model, sliding_windows(z[:, list(b.variables)],
                                                       cfg.window_len))
            for b in bench.plant.blocks]


# criterion number -> (passed, detail); filled by acceptance tests
VERDICTS: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def verdict(request):
    """Record a criterion outcome from named sub-checks, then assert it."""
    n = request.node.get_closest_marker("criterion").args[0]

    def record(checks: dict, detail: str = ""):
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        text = detail + (f" [failed: {', '.join(failed)}]" if failed else "")
        VERDICTS[n] = (ok, text)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {text}")
        assert ok, text

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark and rep.failed and mark.args[0] not in VERDICTS:
        VERDICTS[mark.args[0]] = (False, f"error in {rep.when}: {call.excinfo.typename}")


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(VERDICTS):
        ok, text = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {text}")
