import numpy as np
import pytest

from rashomon_grs.data import Dataset, split_dataset
from rashomon_grs.models import LinearModel, MlpHyper, gen_quadratic, train_mlp


@pytest.fixture(scope="session")
def quad():
    return gen_quadratic(12000, seed=0)


@pytest.fixture(scope="session")
def quad_splits(quad):
    return split_dataset(quad, (0.8, 0.1, 0.1), seed=0)


@pytest.fixture(scope="session")
def quad_mlp(quad_splits):
    # default hyper-parameters; trained once per session (tens of seconds)
    return train_mlp(quad_splits[0], MlpHyper(seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def linear_data(n=40, p=3, seed=0, noise=0.0, w=(1.5, -2.0, 0.5)):
    """Linear targets from known weights; the exact model is returned alongside."""
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, p))
    W = np.asarray(w[:p], dtype=float).reshape(p, 1)
    Y = X @ W + 0.3 + noise * r.normal(size=(n, 1))
    return Dataset(X, Y), LinearModel(W, np.array([0.3]))


@pytest.fixture
def small_linear():
    return linear_data()


# --------------------------------------------------------------------------
# acceptance summary: one line per criterion, printed after the run
# --------------------------------------------------------------------------

ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
