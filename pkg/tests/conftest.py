import gzip
import os
import shutil

import numpy as np
import pytest

DATA = os.path.join(os.path.dirname(__file__), "data")

# 5x5 example with an exact rank-2 ReLU decomposition
EX1_M = np.array([
    [3, 0, 0, 0, 0],
    [0, 0, 0, 5, 4],
    [0, 1, 4, 3, 0],
    [0, 0, 0, 4, 5],
    [5, 1, 0, 0, 0],
], dtype=float)
EX1_X = np.array([
    [3, -1, -4, -3, 0],
    [-5, -1, 0, 5, 4],
    [-3, 1, 4, 3, 0],
    [-4, -2, -3, 4, 5],
    [5, 1, 0, -5, -4],
], dtype=float)
EX1_LEFT = np.array([[-2, 2, 2, 1, -2], [-1, -1, 1, -2, 1]], dtype=float).T
EX1_RIGHT = np.array([[-2, 0, 1, 2, 1], [1, 1, 2, -1, -2]], dtype=float)


@pytest.fixture
def ex1():
    return EX1_M.copy(), EX1_X.copy(), EX1_LEFT.copy(), EX1_RIGHT.copy()


def sparse_nonneg(rng, m, n, zero_frac=0.6):
    a = rng.uniform(0.1, 1.0, size=(m, n))
    a[rng.uniform(size=(m, n)) < zero_frac] = 0.0
    return a


@pytest.fixture(scope="session")
def mnist_files(tmp_path_factory):
    """Uncompressed IDX files holding 5000 MNIST digits, 500 per class."""
    d = tmp_path_factory.mktemp("mnist")
    out = []
    for name in ("mnist5k-images-idx3-ubyte", "mnist5k-labels-idx1-ubyte"):
        dst = d / name
        with gzip.open(os.path.join(DATA, name + ".gz"), "rb") as src, open(dst, "wb") as fh:
            shutil.copyfileobj(src, fh)
        out.append(str(dst))
    return tuple(out)


_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and item.module.__name__.endswith("test_acceptance"):
        doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
        _ACCEPTANCE.append(("PASS" if rep.passed else "FAIL", doc))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for status, doc in _ACCEPTANCE:
        terminalreporter.write_line(f"[{status}] {doc}")
