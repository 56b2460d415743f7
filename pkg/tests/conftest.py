import numpy as np
import pytest

from fsinkhorn.measures import DiscreteMeasure

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str = ""):
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_measure(rng, n, d=2, uniform=False):
    pts = rng.uniform(0.0, 1.0, (n, d))
    if uniform:
        return DiscreteMeasure.uniform(pts)
    w = rng.uniform(0.5, 1.5, n)
    return DiscreteMeasure(pts, w / w.sum())
