"""Outlier exposure sets: external pools, mixup-synthesized internal outliers and their union."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .embed import diffusion_node_features
from .errors import AlignmentError, AssemblyError, PoolError, SynthesisError
from .graphon import bernoulli_sample, downsample_graphon, mixup_graphons, random_size
from .graphs import Graph, GraphDataset, write_json_dataset

EXTERNAL = "external"
INTERNAL = "internal"


@dataclass(frozen=True)
class SynthesisConfig:
    lambda_range: tuple[float, float] = (0.01, 1.0)
    total_count: int = 0
    ext_int_ratio: tuple[float, float] = (1.0, 1.0)
    d_s: int = 16
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.lambda_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"lambda_range must satisfy 0 <= lo <= hi <= 1, got {self.lambda_range}")
        a, b = self.ext_int_ratio
        if a < 0 or b < 0 or a + b <= 0:
            raise ValueError(f"invalid external:internal ratio {self.ext_int_ratio}")

    def split_counts(self, total: int | None = None) -> tuple[int, int]:
        total = self.total_count if total is None else total
        a, b = self.ext_int_ratio
        n_ext = int(round(total * a / (a + b)))
        return n_ext, total - n_ext


class OutlierPool:
    """Graphs from auxiliary datasets, with per-node diffusion features cached for alignment."""

    def __init__(self, graphs, feature_dim: int, excluded_names=(), d_s: int = 16):
        self.graphs = tuple(graphs)
        self.feature_dim = feature_dim
        self.excluded_names = frozenset(excluded_names)
        self.d_s = d_s
        self._cache = {}
        for g in self.graphs:
            if g.feature_dim != feature_dim:
                raise PoolError(f"pool graph from {g.source_dataset!r} has feature_dim {g.feature_dim}")
            if g.source_dataset in self.excluded_names:
                raise PoolError(f"pool contains a graph from excluded dataset {g.source_dataset!r}")

    def __len__(self):
        return len(self.graphs)

    def node_index(self, d_s: int | None = None):
        """Stacked diffusion and feature rows of all pool nodes in (graph, node) order,
        plus the unique diffusion rows and the first stacked index holding each.
        Computed once per ``d_s``."""
        d_s = self.d_s if d_s is None else d_s
        if d_s not in self._cache:
            if not self.graphs:
                raise AlignmentError("outlier pool is empty")
            diff = np.vstack([diffusion_node_features(g.adjacency, d_s) for g in self.graphs])
            feats = np.vstack([g.features for g in self.graphs])
            uniq, first = np.unique(diff, axis=0, return_index=True)
            self._cache[d_s] = (diff, feats, uniq, first)
        return self._cache[d_s]


def build_external_pool(all_datasets, id_name: str, ood_name: str, feature_dim: int, d_s: int = 16) -> OutlierPool:
    """Union of every dataset with ``feature_dim`` features except the ID and OOD datasets."""
    excluded = {id_name, ood_name}
    graphs = []
    for ds in all_datasets:
        if ds.name in excluded or ds.feature_dim != feature_dim:
            continue
        graphs.extend(g for g in ds.graphs if g.source_dataset not in excluded)
    if not graphs:
        raise PoolError(
            f"no auxiliary graphs with feature_dim {feature_dim} remain after excluding "
            f"{sorted(excluded)}; supply auxiliary datasets with matching node features"
        )
    return OutlierPool(graphs, feature_dim, excluded, d_s)


def align_features(structure, pool: OutlierPool, d_s: int = 16) -> np.ndarray:
    """Copy, for every node of ``structure``, the features of the pool node with the
    nearest diffusion vector (Euclidean). Ties go to the earliest (graph, node)."""
    if len(pool) == 0:
        raise AlignmentError("cannot align features against an empty pool")
    _, feats, uniq, first = pool.node_index(d_s)
    query = diffusion_node_features(structure, d_s)
    out = np.empty((query.shape[0], pool.feature_dim))
    for i, q in enumerate(query):
        dist = ((uniq - q) ** 2).sum(axis=1)
        best = np.flatnonzero(dist == dist.min())
        out[i] = feats[first[best].min()]
    return out


def pair_schedule(k: int, count: int) -> list[tuple[int, int]]:
    pairs = list(combinations(range(k), 2))
    if not pairs:
        raise SynthesisError("internal outliers need at least two subgroups")
    return [pairs[t % len(pairs)] for t in range(count)]


@dataclass(frozen=True)
class InternalOutlier:
    graph: Graph
    pair: tuple[int, int]
    lam: float
    size: int


def generate_internal_outliers_detailed(graphons, count: int, config: SynthesisConfig, pool: OutlierPool) -> list[InternalOutlier]:
    graphons = list(graphons)
    if len(graphons) < 2:
        raise SynthesisError(f"need at least two subgroup graphons, got {len(graphons)}")
    if count < 1:
        return []
    lo, hi = config.lambda_range
    out = []
    for t, (i, j) in enumerate(pair_schedule(len(graphons), count)):
        rng = np.random.default_rng([config.seed, t])
        lam = float(lo if lo == hi else rng.uniform(lo, hi))
        mixed = mixup_graphons(graphons[i], graphons[j], lam)
        r = random_size(mixed.resolution, rng)
        probs = downsample_graphon(mixed, r, rng)
        adj = bernoulli_sample(probs, rng)
        feats = align_features(adj, pool, config.d_s)
        out.append(InternalOutlier(Graph(adj, feats, INTERNAL, t), (i, j), lam, r))
    return out


def generate_internal_outliers(graphons, count: int, config: SynthesisConfig, pool: OutlierPool) -> list[Graph]:
    """Synthesize ``count`` graphs from mixed subgroup graphons.

    Subgroup pairs ``(i, j)``, ``i < j``, are visited round-robin. Each graph
    draws its own mixing weight, size, latent positions and edges from a
    stream seeded by ``(config.seed, index)``, then borrows node features
    from the pool.
    """
    return [o.graph for o in generate_internal_outliers_detailed(graphons, count, config, pool)]


@dataclass
class OutlierSet:
    graphs: list[Graph]
    origin: list[str]
    counts: tuple[int, int] = field(default=(0, 0))

    def __len__(self):
        return len(self.graphs)


def assemble_oe_set(pool: OutlierPool, internal, config: SynthesisConfig) -> OutlierSet:
    """Draw the external share from ``pool``, take the internal share from ``internal``, shuffle."""
    internal = list(internal)
    n_ext, n_int = config.split_counts()
    if n_ext > len(pool):
        raise AssemblyError(
            f"requested {n_ext} external outliers but the pool holds {len(pool)} "
            f"(short by {n_ext - len(pool)})"
        )
    if n_int > len(internal):
        raise AssemblyError(
            f"requested {n_int} internal outliers but only {len(internal)} were generated "
            f"(short by {n_int - len(internal)})"
        )
    rng = np.random.default_rng([config.seed, 1 << 20])
    ext_idx = rng.choice(len(pool), size=n_ext, replace=False) if n_ext else np.array([], int)
    graphs = [pool.graphs[int(i)] for i in ext_idx] + internal[:n_int]
    origin = [EXTERNAL] * n_ext + [INTERNAL] * n_int
    perm = rng.permutation(len(graphs))
    return OutlierSet([graphs[i] for i in perm], [origin[i] for i in perm], (n_ext, n_int))


def write_outlier_set(oe: OutlierSet, path, feature_dim: int, name: str = "outliers", extra=None) -> None:
    ds = GraphDataset(name, tuple(oe.graphs), feature_dim)
    write_json_dataset(ds, path, origins=oe.origin, extra=extra)
