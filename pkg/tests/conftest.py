import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from couplearn.config import preset
from couplearn.simulator import simulate

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# long preset-A runs shared by the acceptance and property tests
LONG_T = 100_000
LONG_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(autouse=True)
def _quiet_contractivity_warning(caplog):
    caplog.set_level(logging.ERROR, logger="couplearn.simulator")


def _long_run(seed):
    cfg = preset("cucker-smale-a")
    return simulate(cfg.build_spec(), cfg.build_coupling(), LONG_T, seed, burn_in=cfg.burn_in)


@pytest.fixture(scope="session")
def preset_a():
    cfg = preset("cucker-smale-a")
    return cfg, cfg.build_spec(), cfg.build_coupling(), cfg.build_basis()


@pytest.fixture(scope="session")
def preset_b():
    cfg = preset("formation-b")
    return cfg, cfg.build_spec(), cfg.build_coupling(), cfg.build_basis()


@pytest.fixture(scope="session")
def long_runs_a():
    """Preset-A trajectories of 10^5 steps for five seeds, simulated in parallel."""
    with ProcessPoolExecutor(max_workers=len(LONG_SEEDS)) as pool:
        return dict(zip(LONG_SEEDS, pool.map(_long_run, LONG_SEEDS)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _long_run_b(seed):
    cfg = preset("formation-b")
    return simulate(cfg.build_spec(), cfg.build_coupling(), LONG_T, seed, burn_in=cfg.burn_in)


@pytest.fixture(scope="session")
def long_runs_b():
    with ProcessPoolExecutor(max_workers=len(LONG_SEEDS)) as pool:
        return dict(zip(LONG_SEEDS, pool.map(_long_run_b, LONG_SEEDS)))


# -- acceptance verdicts ---------------------------------------------------

@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line, then assert it."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number, title, ok, detail=""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        lines.append(line)
        print(line)
        assert ok, line

    return record


_VERDICTS = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
