import numpy as np
import pytest
import scipy.sparse as sp

from confpgd.assembly import OperatorPair, assemble_pair
from confpgd.spaces import make_interval


def pair_from(A, M, tag="dense"):
    """OperatorPair around arbitrary SPD matrices (interval only fixes the size)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = A.shape[0]
    return OperatorPair(A, M, tag, make_interval(1.0, n + 1, grading=1.0))


def random_spd_pair(rng, n):
    X = rng.standard_normal((n, n))
    Y = rng.standard_normal((n, n))
    return pair_from(X @ X.T + n * np.eye(n), Y @ Y.T + n * np.eye(n))


def fem_pair(alpha, n, grading=None):
    return assemble_pair(make_interval(alpha, n, grading=grading), "fem")


def grunwald_pair(alpha, n):
    return assemble_pair(make_interval(alpha, n, grading=1.0), "grunwald")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def dense(X):
    return X.toarray() if sp.issparse(X) else np.asarray(X)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import SUMMARY
    except ImportError:
        return
    if SUMMARY:
        terminalreporter.section("acceptance criteria")
        for k in sorted(SUMMARY):
            terminalreporter.write_line(SUMMARY[k])
