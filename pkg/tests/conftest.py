import numpy as np
import pytest

from hgoe.graphs import Graph, GraphDataset


def random_graph(rng, n, p, source="rand", gid=0, feature_dim=1):
    upper = np.triu(rng.random((n, n)) < p, 1)
    adj = (upper | upper.T).astype(np.uint8)
    return Graph(adj, rng.random((n, feature_dim)), source, gid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_dataset(rng):
    graphs = [random_graph(rng, int(rng.integers(3, 12)), 0.4, "small", i) for i in range(20)]
    return GraphDataset("small", tuple(graphs), 1)
