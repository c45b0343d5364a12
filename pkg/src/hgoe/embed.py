"""Graph-level embeddings, random-walk return features and k-means subgrouping."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ClusteringError


@dataclass(frozen=True)
class EmbeddingConfig:
    """Settings of the deterministic graph summary embedding.

    A learned embedder (e.g. a contrastive model trained 50 iterations with a
    32-dimensional output) can replace :func:`graph_summary_embedding` as long
    as it yields fixed-length vectors; the clustering and detector stages only
    see arrays.
    """

    d_s: int = 16
    wl_iterations: int = 3
    wl_dim: int = 64
    feature_dim: int = 1

    @property
    def dim(self) -> int:
        return self.wl_dim + 2 * self.d_s + 3

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SubgroupAssignment:
    labels: np.ndarray
    k: int
    centroids: np.ndarray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0


def transition_matrix(adjacency) -> np.ndarray:
    """Column-normalized random-walk matrix ``A D^-1``; isolated nodes get zero columns."""
    a = np.asarray(adjacency, dtype=np.float64)
    deg = a.sum(axis=0)
    inv = np.zeros_like(deg)
    np.divide(1.0, deg, out=inv, where=deg > 0)
    return a * inv[None, :]


def diffusion_node_features(adjacency, d_s: int = 16) -> np.ndarray:
    """Return probabilities ``[T_ii, (T^2)_ii, ..., (T^d_s)_ii]`` for every node i."""
    if d_s < 1:
        raise ValueError("d_s must be >= 1")
    t = transition_matrix(adjacency)
    out = np.empty((t.shape[0], d_s))
    power = t
    for k in range(d_s):
        out[:, k] = np.diagonal(power)
        if k + 1 < d_s:
            power = power @ t
    # float noise can push values a hair outside the probability range
    np.clip(out, 0.0, 1.0, out=out)
    return out


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("ascii"), digest_size=8).digest(), "big")


def wl_histogram(adjacency, iterations: int = 3, dim: int = 64) -> np.ndarray:
    """L1-normalized histogram of hashed WL subtree labels, all rounds pooled.

    Every node starts with the same label; nodes without neighbours keep their
    label across rounds.
    """
    adj = np.asarray(adjacency)
    n = adj.shape[0]
    neighbors = [np.flatnonzero(adj[i]) for i in range(n)]
    labels = [format(_stable_hash("0"), "016x")] * n
    hist = np.zeros(dim)
    for it in range(iterations + 1):
        for lab in labels:
            hist[int(lab, 16) % dim] += 1
        if it == iterations:
            break
        new = []
        for i in range(n):
            if len(neighbors[i]) == 0:
                new.append(labels[i])
                continue
            multiset = ",".join(sorted(labels[j] for j in neighbors[i]))
            new.append(format(_stable_hash(f"{labels[i]}|{multiset}"), "016x"))
        labels = new
    return hist / hist.sum()


def graph_summary_embedding(graph, d_s: int = 16, wl_iterations: int = 3, wl_dim: int = 64) -> np.ndarray:
    """Fixed-length structural summary of a graph.

    Layout: hashed WL histogram (``wl_dim``), mean and max of the diffusion
    features (``d_s`` each), then ``log1p(nodes)``, ``log1p(edges)`` and the
    mean degree. Node order does not affect the result.
    """
    if wl_dim < 8:
        raise ValueError("wl_dim must be >= 8")
    adj = np.asarray(graph.adjacency)
    n = adj.shape[0]
    hist = wl_histogram(adj, wl_iterations, wl_dim)
    # rounding and exact summation make pooling independent of node order
    diff = np.round(diffusion_node_features(adj, d_s), 12)
    diff_sorted = np.sort(diff, axis=0)
    mean_pool = np.array([math.fsum(col) / n for col in diff_sorted.T])
    max_pool = diff_sorted[-1]
    m = int(np.triu(adj, 1).sum())
    tail = np.array([math.log1p(n), math.log1p(m), 2.0 * m / n])
    return np.concatenate([hist, mean_pool, max_pool, tail])


def embed_graphs(graphs, config: EmbeddingConfig) -> np.ndarray:
    if not graphs:
        return np.zeros((0, config.dim))
    return np.vstack(
        [graph_summary_embedding(g, config.d_s, config.wl_iterations, config.wl_dim) for g in graphs]
    )


def embedding_column_names(config: EmbeddingConfig) -> list[str]:
    return (
        [f"wl_{i}" for i in range(config.wl_dim)]
        + [f"diff_mean_{k + 1}" for k in range(config.d_s)]
        + [f"diff_max_{k + 1}" for k in range(config.d_s)]
        + ["log_nodes", "log_edges", "mean_degree"]
    )


def write_embeddings_csv(path, embeddings, config: EmbeddingConfig, graph_ids=None) -> None:
    embeddings = np.asarray(embeddings)
    if graph_ids is None:
        graph_ids = range(len(embeddings))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["graph_id"] + embedding_column_names(config))
        for gid, row in zip(graph_ids, embeddings):
            w.writerow([gid] + [repr(float(x)) for x in row])


# ---------------------------------------------------------------------------
# k-means


def _sq_dists(x, centroids):
    return ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(x, k, rng):
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # all remaining points coincide with a centre; pick an unused index
            unused = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(unused))
        chosen.append(idx)
        closest = np.minimum(closest, ((x - x[idx]) ** 2).sum(axis=1))
    return x[chosen].copy()


def _assign(x, centroids):
    k = len(centroids)
    d = _sq_dists(x, centroids)
    labels = np.argmin(d, axis=1)
    own = d[np.arange(len(x)), labels]
    for j in range(k):
        if np.any(labels == j):
            continue
        # reseed the empty cluster at the worst-served point of a multi-member cluster
        counts = np.bincount(labels, minlength=k)
        movable = counts[labels] > 1
        cand = np.where(movable, own, -np.inf)
        p = int(np.argmax(cand))
        labels[p] = j
        own[p] = 0.0
    return labels


def _update(x, labels, k):
    centroids = np.empty((k, x.shape[1]))
    for j in range(k):
        centroids[j] = x[labels == j].mean(axis=0)
    return centroids


def _inertia(x, labels, centroids):
    return float(((x - centroids[labels]) ** 2).sum())


def kmeans(embeddings, k: int = 3, seed: int = 0, max_iter: int = 100, rel_tol: float = 1e-4) -> SubgroupAssignment:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when the relative inertia change drops below ``rel_tol`` or after
    ``max_iter`` rounds. Empty clusters are reseeded at the point farthest from
    its current centroid, so every label in ``range(k)`` is used.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ClusteringError("kmeans needs a non-empty 2-d array of embeddings")
    if k < 1 or len(x) < k:
        raise ClusteringError(f"cannot form k={k} clusters from {len(x)} points")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    history: list[float] = []
    labels = None
    it = 0
    for it in range(1, max_iter + 1):
        labels = _assign(x, centroids)
        centroids = _update(x, labels, k)
        inertia = _inertia(x, labels, centroids)
        history.append(inertia)
        if len(history) > 1:
            prev = history[-2]
            if prev == 0 or (prev - inertia) / prev < rel_tol:
                break
    return SubgroupAssignment(labels, k, centroids, history[-1], history, it)
