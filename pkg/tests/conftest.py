import numpy as np
import pytest
from hypothesis import settings

from hatenet.design import Design, stream
from hatenet.generators import random_hate_instance

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def small_instances(count=20, seed=20261017, sizes=(10, 11, 12)):
    """Seeded random instances used by the exact enumeration checks."""
    out = []
    for k in range(count):
        rng = stream(seed, k)
        n = sizes[k % len(sizes)]
        r1 = (0.5, 0.3, 0.65)[k % 3]
        g, p = random_hate_instance(n, rng, edge_prob=0.35, keep_prob=0.6)
        out.append((g, p, Design(r1)))
    return out


@pytest.fixture(scope="session")
def instances():
    return small_instances()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    """Record one acceptance line; printed together at the end of the run."""

    def _record(number, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
