import time

import pytest
from hypothesis import HealthCheck, settings

from prsans.experiments import (SansBenchmarkConfig, pretrain_source, run_adaptation_sweep,
                                run_restoration_benchmark)

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance verdict lines, printed again in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def verdict():
    """Record and print one acceptance line; returns the pass flag for asserting."""
    def record(tag: str, passed: bool, detail: str) -> bool:
        line = f"{tag} {'PASS' if passed else 'FAIL'} {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


class SansRun:
    """One full pretrain -> adaptation sweep -> restoration benchmark pass."""

    def __init__(self, cfg: SansBenchmarkConfig):
        self.cfg = cfg
        t0 = time.perf_counter()
        self.source, self.source_curve = pretrain_source(cfg)
        self.sweep = run_adaptation_sweep(cfg, self.source)
        self.sweep_seconds = time.perf_counter() - t0
        t1 = time.perf_counter()
        self.bench = run_restoration_benchmark(cfg, self.sweep.models[max(cfg.k_values)])
        self.bench_seconds = time.perf_counter() - t1


@pytest.fixture(scope="session")
def sans_run() -> SansRun:
    return SansRun(SansBenchmarkConfig())
