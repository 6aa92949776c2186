import numpy as np
import pytest

from sgkl import apply_mask, build_knn_graph, graph_spectrum
from sgkl.graphs import ObservedSignalSet


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_graph(rng, n=12, k=3, scale=0.8):
    coords = rng.uniform(0.0, 1.0, size=(n, 2))
    return build_knn_graph(coords, k, scale)


def random_problem(rng, n=10, j=2, k_signals=3, missing=0.3, psi=None):
    """Small coding problem: graph, spectrum, psi, and masked random signals."""
    graph = random_graph(rng, n=n)
    lap, dec = graph_spectrum(graph)
    if psi is None:
        mu = rng.uniform(0.0, 2.0, size=j)
        scale = rng.uniform(0.25, 0.7, size=j)
        psi = np.concatenate([mu, scale])
    values = rng.standard_normal((n, k_signals))
    mask = apply_mask(values, missing, seed=int(rng.integers(1 << 31)))
    return graph, lap, dec, psi, ObservedSignalSet(values, mask)
