"""Graph data model, dataset ingestion and ID/OOD split assembly."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AssemblyError, DimensionError, FormatError, IngestionError, SplitError

FEATURE_POLICIES = ("auto", "labels", "constant")


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with a dense node-feature matrix.

    ``adjacency`` is a symmetric 0/1 ``uint8`` matrix with an empty diagonal and
    ``features`` a ``float64`` matrix with one row per node. Both arrays are
    made read-only on construction.
    """

    adjacency: np.ndarray
    features: np.ndarray
    source_dataset: str = ""
    graph_id: int = 0

    def __post_init__(self):
        adj = np.asarray(self.adjacency)
        feats = np.asarray(self.features, dtype=np.float64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise FormatError(f"adjacency must be a non-empty square matrix, got shape {adj.shape}")
        if not np.isin(adj, (0, 1)).all():
            raise FormatError("adjacency entries must be 0 or 1")
        adj = adj.astype(np.uint8)
        if not np.array_equal(adj, adj.T):
            raise FormatError("adjacency must be symmetric")
        if adj.diagonal().any():
            raise FormatError("adjacency must have a zero diagonal")
        if feats.ndim != 2 or feats.shape[0] != adj.shape[0] or feats.shape[1] < 1:
            raise FormatError(
                f"features must be a ({adj.shape[0]}, d>=1) matrix, got shape {feats.shape}"
            )
        adj.setflags(write=False)
        feats = feats.copy() if feats is self.features else feats
        feats.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "features", feats)

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def edge_count(self) -> int:
        return int(np.triu(self.adjacency, 1).sum())

    def edges(self) -> list[tuple[int, int]]:
        """Upper-triangular edge list ``(i, j)`` with ``i < j``, row-major order."""
        rows, cols = np.nonzero(np.triu(self.adjacency, 1))
        return [(int(i), int(j)) for i, j in zip(rows, cols)]

    @classmethod
    def from_edges(cls, n, edges, features=None, source_dataset="", graph_id=0) -> "Graph":
        adj = np.zeros((n, n), dtype=np.uint8)
        for i, j in edges:
            if i == j:
                continue
            adj[i, j] = adj[j, i] = 1
        if features is None:
            features = np.ones((n, 1))
        return cls(adj, features, source_dataset, graph_id)


@dataclass(frozen=True)
class GraphDataset:
    name: str
    graphs: tuple[Graph, ...]
    feature_dim: int

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        for g in self.graphs:
            if g.feature_dim != self.feature_dim:
                raise DimensionError(
                    f"graph {g.graph_id} of {self.name!r} has feature_dim {g.feature_dim}, "
                    f"dataset declares {self.feature_dim}"
                )

    def __len__(self) -> int:
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    def node_counts(self) -> np.ndarray:
        return np.array([g.node_count for g in self.graphs], dtype=np.int64)


@dataclass(frozen=True)
class SplitSpec:
    train: tuple[int, ...]
    test_id: tuple[int, ...]
    seed: int


@dataclass(frozen=True)
class LabeledTestSet:
    graphs: tuple[Graph, ...]
    labels: tuple[int, ...]

    def __len__(self):
        return len(self.graphs)


# ---------------------------------------------------------------------------
# TU plain-text format


def _read_int_pairs(path: Path) -> list[tuple[int, int, int]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.replace(" ", "").split(",")
            if len(parts) != 2:
                raise FormatError(f"{path.name}:{lineno}: expected 'u, v', got {line!r}")
            try:
                out.append((int(parts[0]), int(parts[1]), lineno))
            except ValueError:
                raise FormatError(f"{path.name}:{lineno}: non-integer node id in {line!r}") from None
    return out


def _read_column(path: Path, conv=int) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(conv(line))
            except ValueError:
                raise FormatError(f"{path.name}:{lineno}: cannot parse {line!r}") from None
    return out


def _read_rows(path: Path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(x) for x in line.split(",")])
            except ValueError:
                raise FormatError(f"{path.name}:{lineno}: cannot parse {line!r}") from None
            if rows and len(rows[-1]) != len(rows[0]):
                raise FormatError(f"{path.name}:{lineno}: ragged attribute row")
    return np.array(rows, dtype=np.float64)


def load_tu_dataset(directory, name: str, default_feature_policy: str = "auto") -> GraphDataset:
    """Read a dataset stored in the TU plain-text layout.

    ``NAME_A.txt`` and ``NAME_graph_indicator.txt`` are required. Node features
    come from ``NAME_node_attributes.txt`` under the ``auto`` policy when it
    exists, otherwise from a one-hot encoding of ``NAME_node_labels.txt``,
    otherwise a constant ``1.0``. The ``labels`` policy skips attributes and
    ``constant`` ignores both files. Edges are symmetrized and deduplicated.
    """
    if default_feature_policy not in FEATURE_POLICIES:
        raise ValueError(f"unknown feature policy {default_feature_policy!r}")
    directory = Path(directory)
    a_path = directory / f"{name}_A.txt"
    gi_path = directory / f"{name}_graph_indicator.txt"
    for p in (a_path, gi_path):
        if not p.is_file():
            raise IngestionError(f"missing required file {p}")

    indicator = np.array(_read_column(gi_path), dtype=np.int64)
    num_nodes = len(indicator)
    if num_nodes == 0:
        return GraphDataset(name, (), 1)
    # graph ids in the indicator are 1-based and contiguous in file order
    graph_labels, first_idx = np.unique(indicator, return_index=True)
    order = np.argsort(first_idx, kind="stable")
    graph_labels = graph_labels[order]
    node_lists = {int(g): np.flatnonzero(indicator == g) for g in graph_labels}
    local_index = np.empty(num_nodes, dtype=np.int64)
    for nodes in node_lists.values():
        local_index[nodes] = np.arange(len(nodes))

    edges_by_graph: dict[int, list[tuple[int, int]]] = {int(g): [] for g in graph_labels}
    for u, v, lineno in _read_int_pairs(a_path):
        if not (1 <= u <= num_nodes and 1 <= v <= num_nodes):
            raise FormatError(f"{a_path.name}:{lineno}: node id out of range 1..{num_nodes}")
        gu, gv = indicator[u - 1], indicator[v - 1]
        if gu != gv:
            raise FormatError(
                f"{a_path.name}:{lineno}: edge ({u}, {v}) joins graph {gu} and graph {gv}"
            )
        edges_by_graph[int(gu)].append((int(local_index[u - 1]), int(local_index[v - 1])))

    attr_path = directory / f"{name}_node_attributes.txt"
    label_path = directory / f"{name}_node_labels.txt"
    if default_feature_policy == "auto" and attr_path.is_file():
        feats = _read_rows(attr_path)
        if feats.ndim == 1:
            feats = feats[:, None]
    elif default_feature_policy in ("auto", "labels") and label_path.is_file():
        labels = np.array(_read_column(label_path), dtype=np.int64)
        vocab, inv = np.unique(labels, return_inverse=True)
        feats = np.zeros((len(labels), len(vocab)))
        feats[np.arange(len(labels)), inv] = 1.0
    else:
        feats = np.ones((num_nodes, 1))
    if feats.shape[0] != num_nodes:
        raise FormatError(
            f"node feature file has {feats.shape[0]} rows, graph indicator has {num_nodes}"
        )

    graphs = []
    for gid, g in enumerate(graph_labels):
        nodes = node_lists[int(g)]
        n = len(nodes)
        adj = np.zeros((n, n), dtype=np.uint8)
        for i, j in edges_by_graph[int(g)]:
            if i != j:
                adj[i, j] = adj[j, i] = 1
        graphs.append(Graph(adj, feats[nodes], name, gid))
    return GraphDataset(name, tuple(graphs), feats.shape[1])


# ---------------------------------------------------------------------------
# JSON interchange format


def dataset_to_dict(dataset: GraphDataset, origins: Sequence[str] | None = None) -> dict:
    graphs = []
    for k, g in enumerate(dataset.graphs):
        entry = {
            "n": g.node_count,
            "edges": [[i, j] for i, j in g.edges()],
            "features": g.features.tolist(),
            "graph_id": g.graph_id,
            "source_dataset": g.source_dataset,
        }
        if origins is not None:
            entry["origin"] = origins[k]
        graphs.append(entry)
    return {"name": dataset.name, "feature_dim": dataset.feature_dim, "graphs": graphs}


def write_json_dataset(dataset: GraphDataset, path, origins=None, extra: dict | None = None) -> None:
    doc = dataset_to_dict(dataset, origins)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def dataset_from_dict(doc: dict) -> GraphDataset:
    try:
        name = str(doc["name"])
        feature_dim = int(doc["feature_dim"])
        entries = doc["graphs"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"dataset document lacks required key: {exc}") from None
    graphs = []
    for k, entry in enumerate(entries):
        n = int(entry["n"])
        if n < 1:
            raise FormatError(f"graph {k}: node count must be positive")
        adj = np.zeros((n, n), dtype=np.uint8)
        for e in entry.get("edges", []):
            i, j = int(e[0]), int(e[1])
            if not (0 <= i < n and 0 <= j < n):
                raise FormatError(f"graph {k}: edge [{i}, {j}] out of range for n={n}")
            if i != j:
                adj[i, j] = adj[j, i] = 1
        rows = entry.get("features")
        if rows is None:
            feats = np.ones((n, 1))
        else:
            if len(rows) != n or any(len(r) != feature_dim for r in rows):
                raise FormatError(f"graph {k}: features must be {n} rows of length {feature_dim}")
            feats = np.array(rows, dtype=np.float64).reshape(n, feature_dim)
        graphs.append(
            Graph(adj, feats, entry.get("source_dataset", name), int(entry.get("graph_id", k)))
        )
    return GraphDataset(name, tuple(graphs), feature_dim)


def load_json_dataset(path) -> GraphDataset:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"missing dataset file {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    return dataset_from_dict(doc)


def load_dataset(data_root, name: str, feature_policy: str = "auto") -> GraphDataset:
    """Resolve ``name`` under ``data_root`` as ``NAME.json`` or a TU directory."""
    root = Path(data_root)
    json_path = root / f"{name}.json"
    if json_path.is_file():
        return load_json_dataset(json_path)
    for d in (root / name, root / name / "raw", root):
        if (d / f"{name}_A.txt").is_file():
            return load_tu_dataset(d, name, feature_policy)
    raise IngestionError(f"dataset {name!r} not found under {root} (tried {json_path} and TU layout)")


# ---------------------------------------------------------------------------
# splits


def split_in_distribution(dataset, train_fraction: float = 0.9, seed: int = 0) -> SplitSpec:
    """Random train/test split of the ID graphs.

    The train size is ``round(train_fraction * N)`` with halves rounded up,
    clamped so both sides stay non-empty.
    """
    n = len(dataset)
    if not 0 < train_fraction < 1:
        raise SplitError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if n < 2:
        raise SplitError(f"need at least 2 graphs to split, got {n}")
    n_train = min(max(int(math.floor(train_fraction * n + 0.5)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return SplitSpec(
        tuple(sorted(int(i) for i in perm[:n_train])),
        tuple(sorted(int(i) for i in perm[n_train:])),
        seed,
    )


def assemble_test_set(id_test: Sequence[Graph], ood_dataset: GraphDataset, seed: int = 0) -> LabeledTestSet:
    id_test = list(id_test)
    if id_test and ood_dataset.graphs and id_test[0].feature_dim != ood_dataset.feature_dim:
        raise DimensionError(
            f"ID feature_dim {id_test[0].feature_dim} != OOD feature_dim {ood_dataset.feature_dim}"
        )
    if len(ood_dataset) < len(id_test):
        raise AssemblyError(
            f"OOD pool {ood_dataset.name!r} has {len(ood_dataset)} graphs, need {len(id_test)}"
        )
    pick = np.random.default_rng(seed).choice(len(ood_dataset), size=len(id_test), replace=False)
    ood = [ood_dataset.graphs[int(i)] for i in pick]
    return LabeledTestSet(tuple(id_test + ood), tuple([0] * len(id_test) + [1] * len(ood)))
