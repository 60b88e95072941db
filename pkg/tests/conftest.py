import numpy as np
import pytest

from aggforge.graph import build_csr

G3_EDGES = [(0, 2), (1, 2), (2, 0)]


def random_edges(rng, n, density, shuffle=True, self_loops=True):
    """Bernoulli(density) over all ordered pairs; returned in random order unless ``shuffle`` is off."""
    mask = rng.random((n, n)) < density
    if not self_loops:
        np.fill_diagonal(mask, False)
    src, dst = np.nonzero(mask)
    edges = np.stack([src, dst], axis=1).astype(np.int64)
    if shuffle:
        edges = edges[rng.permutation(len(edges))]
    return edges


def random_graph(rng, n_max=200, dens=(0.01, 0.5), shuffle=True):
    n = int(rng.integers(1, n_max + 1))
    density = float(rng.uniform(*dens))
    edges = random_edges(rng, n, density, shuffle)
    return build_csr(edges, n), edges


def int_features(rng, rows, d, nonzero=False):
    x = rng.integers(-9, 10, size=(rows, d)).astype(np.int64)
    if nonzero:
        x[x == 0] = 1
    return x


@pytest.fixture
def g3():
    return build_csr(G3_EDGES, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
