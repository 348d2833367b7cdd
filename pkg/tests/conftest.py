import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from inkubator import toyworld
from inkubator.ink import Alphabet, StrokeSample

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_world():
    cfg = toyworld.ToyConfig(n_train=80, n_val=20, n_test=20, n_real_test=40, writers_per_cluster=4,
                             exclude_fraction=0.3, master_seed=7)
    return cfg, toyworld.build_dataset(cfg)


@pytest.fixture
def abc():
    return Alphabet(tuple("abc"))


def random_sample(rng, T=20, content="ab", sid="x"):
    moves = np.column_stack([rng.normal(size=T), rng.normal(size=T), rng.integers(0, 2, size=T)])
    return StrokeSample(id=sid, content=content, moves=moves)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line, print it, then assert the verdict."""

    def record(number: int, title: str, ok: bool, detail: str):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'} {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
