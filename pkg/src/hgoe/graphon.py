"""Step-function graphons: USVT estimation, mixup, resizing and Bernoulli sampling."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import DimensionError, EstimationError, SizeError

MAX_RESOLUTION = 200


@dataclass(frozen=True, eq=False)
class Graphon:
    """Symmetric ``D x D`` matrix of edge probabilities."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
            raise DimensionError(f"graphon must be a square matrix with D >= 2, got {m.shape}")
        if not np.array_equal(m, m.T):
            raise ValueError("graphon must be symmetric")
        if m.min() < 0 or m.max() > 1:
            raise ValueError("graphon entries must lie in [0, 1]")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def resolution(self) -> int:
        return self.matrix.shape[0]

    def to_dict(self) -> dict:
        return {"resolution": self.resolution, "rows": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Graphon":
        g = cls(np.array(doc["rows"], dtype=np.float64))
        if g.resolution != int(doc["resolution"]):
            raise DimensionError("resolution field disagrees with the row count")
        return g


def default_resolution(node_counts, cap: int = MAX_RESOLUTION) -> int:
    """90th percentile of the training node counts (rounded up), capped at ``cap``."""
    counts = np.asarray(node_counts)
    if counts.size == 0:
        raise EstimationError("no node counts to derive a resolution from")
    return int(max(2, min(int(np.ceil(np.percentile(counts, 90))), cap)))


# ---------------------------------------------------------------------------
# estimation


def alignment_order(adjacency, method: str = "spectral", margin: float = 2.5, alpha: float = 0.01) -> np.ndarray:
    """Node order used to place a graph on the common ``[0, 1]`` grid.

    ``degree`` sorts by degree, descending, ties by index. ``spectral``
    only reorders nodes when the graph carries structure beyond Erdos-Renyi
    noise: a significant non-leading eigenpair of the adjacency (absolute
    eigenvalue above ``margin * sqrt(n p (1 - p))``) orders nodes by that
    eigenvector; otherwise over-dispersed degrees (chi-square test at level
    ``alpha``) order by degree; otherwise the input order is kept. Sorting
    pure noise would carve artificial structure into the average.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    n = a.shape[0]
    idx = np.arange(n)
    deg = a.sum(axis=1)
    if method == "degree":
        return np.lexsort((idx, -deg))
    if method != "spectral":
        raise ValueError(f"unknown alignment method {method!r}")
    if n < 3:
        return np.lexsort((idx, -deg))
    p = deg.sum() / (n * (n - 1))
    if p <= 0 or p >= 1:
        return idx
    evals, evecs = np.linalg.eigh(a)
    ranked = np.argsort(-np.abs(evals), kind="stable")
    noise_edge = margin * np.sqrt(n * p * (1 - p))
    second = ranked[1]
    if abs(evals[second]) > noise_edge:
        v = evecs[:, second]
        # eigenvector sign is arbitrary; orient so the heavier tail comes first
        skew = np.sum(v**3)
        if skew < 0 or (skew == 0 and v[np.argmax(np.abs(v))] < 0):
            v = -v
        v = np.round(v, 12)
        return np.lexsort((idx, -deg, -v))
    dispersion = ((deg - deg.mean()) ** 2).sum() / (p * (1 - p) * (n - 1))
    if dispersion > stats.chi2.ppf(1 - alpha, n - 1):
        return np.lexsort((idx, -deg))
    return idx


def aligned_adjacency(adjacency, resolution: int, method: str = "spectral") -> np.ndarray:
    a = np.asarray(adjacency, dtype=np.float64)
    order = alignment_order(a, method)[:resolution]
    out = np.zeros((resolution, resolution))
    m = len(order)
    out[:m, :m] = a[np.ix_(order, order)]
    return out


def usvt(matrix, svt_coefficient: float | None = None) -> np.ndarray:
    """Universal singular value thresholding of a square matrix.

    Singular values below ``svt_coefficient * sqrt(D)`` are dropped (the
    leading one is always kept), the reconstruction is clipped to ``[0, 1]`` and symmetrized. The default
    coefficient is ``2.02 * sqrt(mean entry)``.
    """
    m = np.asarray(matrix, dtype=np.float64)
    d = m.shape[0]
    if svt_coefficient is None:
        svt_coefficient = 2.02 * np.sqrt(max(m.mean(), 0.0))
    u, s, vt = np.linalg.svd(m)
    keep = s >= svt_coefficient * np.sqrt(d)
    keep[0] = True
    s = np.where(keep, s, 0.0)
    r = np.clip((u * s) @ vt, 0.0, 1.0)
    return (r + r.T) / 2


def estimate_graphon_usvt(graphs, resolution: int, svt_coefficient: float | None = None,
                          alignment: str = "spectral") -> Graphon:
    """Average the aligned adjacencies of ``graphs`` on a ``resolution`` grid and denoise by USVT.

    Graphs smaller than the grid are zero-padded; larger ones keep their first
    ``resolution`` nodes in alignment order.
    """
    graphs = list(graphs)
    if not graphs:
        raise EstimationError("cannot estimate a graphon from an empty graph list")
    if resolution < 2:
        raise EstimationError(f"resolution must be >= 2, got {resolution}")
    acc = np.zeros((resolution, resolution))
    for g in graphs:
        adj = g.adjacency if hasattr(g, "adjacency") else g
        acc += aligned_adjacency(adj, resolution, alignment)
    acc /= len(graphs)
    # the diagonal is structurally zero (no self-loops); impute it by the row's off-diagonal mean
    np.fill_diagonal(acc, acc.sum(axis=1) / (resolution - 1))
    return Graphon(usvt(acc, svt_coefficient))


# ---------------------------------------------------------------------------
# mixup and sampling


def mixup_graphons(w_i: Graphon, w_j: Graphon, lam: float) -> Graphon:
    """Convex combination ``lam * W_i + (1 - lam) * W_j``."""
    if w_i.resolution != w_j.resolution:
        raise DimensionError(f"resolution mismatch: {w_i.resolution} vs {w_j.resolution}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    m = lam * w_i.matrix + (1.0 - lam) * w_j.matrix
    m = np.clip((m + m.T) / 2, 0.0, 1.0)
    return Graphon(m)


def random_size(n_max: int, seed=None) -> int:
    """Uniform integer in ``{2, ..., n_max}``. ``seed`` may be a Generator."""
    if n_max < 2:
        raise SizeError(f"n_max must be >= 2, got {n_max}")
    return int(np.random.default_rng(seed).integers(2, n_max + 1))


def downsample_graphon(graphon: Graphon, r: int, seed=None, latents=None) -> np.ndarray:
    """Induced ``r x r`` submatrix at sorted uniform latent positions.

    A position ``u`` maps to the 1-based row ``ceil(u * D)`` clamped to
    ``[1, D]``. ``latents`` overrides the random draw.
    """
    d = graphon.resolution
    if not 2 <= r <= d:
        raise SizeError(f"r must lie in [2, {d}], got {r}")
    if latents is None:
        u = np.random.default_rng(seed).random(r)
    else:
        u = np.asarray(latents, dtype=np.float64)
        if u.shape != (r,):
            raise SizeError(f"expected {r} latent positions, got shape {u.shape}")
    u = np.sort(u)
    idx = np.clip(np.ceil(u * d).astype(np.int64), 1, d) - 1
    return graphon.matrix[np.ix_(idx, idx)].copy()


def bernoulli_sample(probs, seed=None) -> np.ndarray:
    """Symmetric 0/1 adjacency with edge ``(i, j)``, ``i < j``, present with probability ``probs[i, j]``."""
    p = np.asarray(probs, dtype=np.float64)
    r = p.shape[0]
    draws = np.random.default_rng(seed).random((r, r))
    upper = np.triu(draws < p, 1)
    return (upper | upper.T).astype(np.uint8)


# ---------------------------------------------------------------------------
# export


def write_graphon_csv(graphon: Graphon, path, fmt: str = "%.6g") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in graphon.matrix:
            w.writerow([fmt % x for x in row])


def read_graphon_csv(path) -> Graphon:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [[float(x) for x in row] for row in csv.reader(fh) if row]
    m = np.array(rows)
    # six significant digits can break exact symmetry only if the source was asymmetric
    return Graphon((m + m.T) / 2)


def write_graphon_json(graphon: Graphon, path) -> None:
    Path(path).write_text(json.dumps(graphon.to_dict()), encoding="utf-8")


def read_graphon_json(path) -> Graphon:
    return Graphon.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
