import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from compreg.simplex import CompositionDataset

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def compositions(D, min_part=0.0):
    """Hypothesis strategy for D-part compositions; ``min_part > 0`` keeps them interior."""
    return st.lists(
        st.floats(min_value=max(min_part, 0.0), max_value=1.0, allow_nan=False),
        min_size=D,
        max_size=D,
    ).filter(lambda v: sum(v) > 1e-3).map(lambda v: np.asarray(v) / np.sum(v))


def random_dataset(rng, N, D_s=3, D_r=3, alpha=1.0):
    X = rng.dirichlet(np.full(D_s, alpha), N)
    Y = rng.dirichlet(np.full(D_r, alpha), N)
    return CompositionDataset(X, Y)


def categorical_dataset(rng, N, D_s, D_r, y_categorical=True):
    """Vertex predictors; each predictor category appears at least once."""
    xi = np.concatenate([np.arange(D_s), rng.integers(0, D_s, N - D_s)])
    X = np.eye(D_s)[xi]
    if y_categorical:
        Y = np.eye(D_r)[rng.integers(0, D_r, N)]
    else:
        Y = rng.dirichlet(np.ones(D_r), N)
    return CompositionDataset(X, Y), xi


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(RESULTS):
        status, title, note = RESULTS[n]
        tr.write_line(f"criterion {n:2d}: {status}  {title}  ({note})")
