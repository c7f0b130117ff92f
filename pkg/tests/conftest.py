import numpy as np
import pytest

from parot import family as F
from parot import hf, reduction

RESOLUTIONS = {4: 2, 16: 4, 100: 10, 400: 20}


@pytest.fixture(scope="session")
def gauss():
    return F.gaussian_family(100, 100)


@pytest.fixture(scope="session")
def gauss_cost(gauss):
    return hf.quadratic_cost(gauss.support_x, gauss.support_y)


@pytest.fixture(scope="session")
def test_alphas():
    rng = np.random.default_rng(0)
    return [F.random_alpha(rng, 2, 2) for _ in range(50)]


@pytest.fixture(scope="session")
def hf_truth(gauss, gauss_cost, test_alphas):
    """Exact costs on the shared test set."""
    return np.array([hf.solve_lp(gauss_cost, *F.blend(gauss, a)).cost for a in test_alphas])


class _Models(dict):
    def __init__(self, family, C):
        super().__init__()
        self.family, self.C = family, C

    def __missing__(self, R):
        model = reduction.build_offline(self.family, F.training_grid(2, 2, RESOLUTIONS[R]),
                                        reduction.LPBackend(), self.C)
        self[R] = model
        return model


@pytest.fixture(scope="session")
def models(gauss, gauss_cost):
    """Reduced models of the Gaussian benchmark keyed by R, built on first use."""
    return _Models(gauss, gauss_cost)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, ok, detail):
        ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
