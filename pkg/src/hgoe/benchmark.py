"""Bundled synthetic benchmark built from stochastic block models."""

from __future__ import annotations

import numpy as np

from .graphs import Graph, GraphDataset


def sbm_adjacency(sizes, p_in: float, p_out: float, rng, shuffle: bool = True) -> np.ndarray:
    """Adjacency of a block model with the given block sizes; node order optionally shuffled."""
    z = np.repeat(np.arange(len(sizes)), sizes)
    probs = np.where(z[:, None] == z[None, :], p_in, p_out)
    n = len(z)
    upper = np.triu(rng.random((n, n)) < probs, 1)
    adj = (upper | upper.T).astype(np.uint8)
    if shuffle:
        order = rng.permutation(n)
        adj = adj[np.ix_(order, order)]
    return adj


def _two_blocks(n):
    return [n // 2, n - n // 2]


def generate_sbm_benchmark(n_id: int = 400, n_ood: int = 200, n_aux: int = 400, seed: int = 0,
                           size_range=(20, 40)) -> dict[str, GraphDataset]:
    """Three datasets sharing one constant node feature dimension.

    ``sbm_id`` mixes two subgroups of two-block SBMs (0.6/0.1 and 0.5/0.05),
    ``sbm_ood`` holds Erdos-Renyi graphs at p=0.3 (a flat 0.3/0.3 block
    model), and ``sbm_aux`` holds Erdos-Renyi graphs of varied size and density
    with random node features.
    """
    rng = np.random.default_rng(seed)
    lo, hi = size_range
    id_graphs = []
    for gid in range(n_id):
        p_in, p_out = (0.6, 0.1) if gid % 2 == 0 else (0.5, 0.05)
        n = int(rng.integers(lo, hi + 1))
        adj = sbm_adjacency(_two_blocks(n), p_in, p_out, rng)
        id_graphs.append(Graph(adj, np.ones((n, 1)), "sbm_id", gid))
    ood_graphs = []
    for gid in range(n_ood):
        n = int(rng.integers(lo, hi + 1))
        adj = sbm_adjacency(_two_blocks(n), 0.3, 0.3, rng)
        ood_graphs.append(Graph(adj, np.ones((n, 1)), "sbm_ood", gid))
    aux_graphs = []
    for gid in range(n_aux):
        n = int(rng.integers(10, 51))
        p = float(rng.uniform(0.05, 0.6))
        adj = sbm_adjacency([n], p, p, rng)
        aux_graphs.append(Graph(adj, rng.random((n, 1)), "sbm_aux", gid))
    return {
        "sbm_id": GraphDataset("sbm_id", tuple(id_graphs), 1),
        "sbm_ood": GraphDataset("sbm_ood", tuple(ood_graphs), 1),
        "sbm_aux": GraphDataset("sbm_aux", tuple(aux_graphs), 1),
    }
