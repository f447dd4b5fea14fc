import os
import sys
from pathlib import Path

# Pin BLAS pools before numpy ever loads; the determinism contract
# (and the acceptance byte-comparisons) assume single-threaded kernels.
os.environ.setdefault("TIDE_THREADS", "1")
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ[var] = os.environ["TIDE_THREADS"]

sys.path.insert(0, str(Path(__file__).resolve().parent))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from tide.graph import make_graph  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def two_clique():
    """Two nodes, one edge, one feature each; the smallest useful graph."""
    return make_graph(X=[[1.0], [3.0]], edges=[[0, 1]], y=[0, 1],
                      masks={"train": [0, 1]})


@pytest.fixture
def path3():
    return make_graph(X=[[0.0], [1.0], [2.0]], edges=[[0, 1], [1, 2]],
                      y=[0, 1, 0], masks={"train": [0, 1, 2]})


def random_graph(rng, n=None, d=2, p=0.3):
    """Erdos-Renyi-ish scratch graph for property tests."""
    if n is None:
        n = int(rng.integers(2, 12))
    upper = np.transpose(np.triu_indices(n, k=1))
    keep = rng.random(len(upper)) < p
    edges = upper[keep]
    X = rng.normal(size=(n, d))
    y = rng.integers(0, 2, size=n)
    return make_graph(X, edges, y, masks={"train": list(range(n))}, C=2)
