"""One-class scoring head trained with a boundary-aware outlier exposure loss.

The score of a graph embedding ``x`` is the squared distance between the
head's output and a fixed center,

    f(x) = || MLP(standardize(x)) - c ||^2,

and ``s = sigmoid(f)`` is the normalized score. Training minimizes

    sum_ID f(G) + beta * sum_OE l_ba(s(G'), tau)

where ``l_ba(s, tau) = -(l - s)^gamma * max(log s, tau)`` and ``tau`` is a
log-space statistic of the ID normalized scores, refreshed every epoch and
treated as a constant by the gradient.
"""

from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .embed import EmbeddingConfig, embed_graphs
from .errors import DimensionError, DomainError, NumericError, TrainingError

TAU_STRATEGIES = ("min", "mean", "max", "none")


@dataclass(frozen=True)
class LossParams:
    l: float = 2.0
    gamma: float = 2.0
    beta: float = 1.0
    tau_strategy: str = "min"

    def __post_init__(self):
        if not self.l > 1:
            raise ValueError(f"l must exceed 1, got {self.l}")
        if self.gamma < 0 or self.beta < 0:
            raise ValueError("gamma and beta must be non-negative")
        if self.tau_strategy not in TAU_STRATEGIES:
            raise ValueError(f"tau_strategy must be one of {TAU_STRATEGIES}")


@dataclass
class TrainState:
    tau_current: float = 0.0
    epoch: int = 0
    loss_history: list[float] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)


@dataclass(frozen=True)
class ScoreRecord:
    graph_id: int
    raw: float
    normalized: float
    label: int | None = None


@dataclass
class ScoringModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    center: np.ndarray
    input_mean: np.ndarray
    input_scale: np.ndarray
    embedding_config: EmbeddingConfig = field(default_factory=EmbeddingConfig)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, params) -> None:
        self.weights = [np.array(p, dtype=np.float64) for p in params[0::2]]
        self.biases = [np.array(p, dtype=np.float64) for p in params[1::2]]

    def copy(self) -> "ScoringModel":
        return copy.deepcopy(self)

    @property
    def embedding_dim(self) -> int:
        return self.weights[0].shape[1]

    def _forward(self, x):
        a = (np.atleast_2d(np.asarray(x, dtype=np.float64)) - self.input_mean) / self.input_scale
        acts = [a]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            a = z if k == last else np.tanh(z)
            acts.append(a)
        return acts

    def hidden(self, x) -> np.ndarray:
        return self._forward(x)[-1]

    def score(self, x) -> np.ndarray:
        """Raw scores ``f`` for a batch of embeddings (rows)."""
        diff = self.hidden(x) - self.center
        return (diff**2).sum(axis=1)


# ---------------------------------------------------------------------------
# model construction and persistence


def init_model(embedding_dim: int, hidden_dim: int, seed: int, id_embeddings,
               embedding_config: EmbeddingConfig | None = None, depth: int = 1) -> ScoringModel:
    """Build a ``depth``-layer head (tanh between layers, linear output of width ``hidden_dim``).

    Weights and biases are uniform in ``+-1/sqrt(fan_in)``; inputs are
    standardized with the ID statistics; the center is the mean ID output.
    """
    x = np.asarray(id_embeddings, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("init_model needs at least one ID embedding")
    if x.shape[1] != embedding_dim:
        raise DimensionError(f"embeddings have dim {x.shape[1]}, expected {embedding_dim}")
    rng = np.random.default_rng(seed)
    sizes = [embedding_dim] + [hidden_dim] * depth
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 1e-8, scale, 1.0)
    if embedding_config is None:
        embedding_config = EmbeddingConfig()
    model = ScoringModel(weights, biases, np.zeros(hidden_dim), mean, scale, embedding_config)
    model.center = model.hidden(x).mean(axis=0)
    return model


def model_to_dict(model: ScoringModel, loss_params: LossParams | None = None, extra=None) -> dict:
    doc = {
        "layers": [
            {"shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
            for w, b in zip(model.weights, model.biases)
        ],
        "center": model.center.tolist(),
        "input_mean": model.input_mean.tolist(),
        "input_scale": model.input_scale.tolist(),
        "embedding_config": model.embedding_config.to_dict(),
        "loss_params": asdict(loss_params) if loss_params else None,
    }
    if extra:
        doc.update(extra)
    return doc


def model_from_dict(doc: dict) -> tuple[ScoringModel, LossParams | None]:
    weights, biases = [], []
    for layer in doc["layers"]:
        weights.append(np.array(layer["weight"], dtype=np.float64).reshape(layer["shape"]))
        biases.append(np.array(layer["bias"], dtype=np.float64))
    model = ScoringModel(
        weights,
        biases,
        np.array(doc["center"], dtype=np.float64),
        np.array(doc["input_mean"], dtype=np.float64),
        np.array(doc["input_scale"], dtype=np.float64),
        EmbeddingConfig(**doc["embedding_config"]),
    )
    lp = doc.get("loss_params")
    return model, (LossParams(**lp) if lp else None)


def save_checkpoint(model, path, loss_params=None, extra=None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, loss_params, extra)), encoding="utf-8")


def load_checkpoint(path):
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# loss


def log_sigmoid(f):
    return -np.logaddexp(0.0, -np.asarray(f, dtype=np.float64))


def sigmoid(f):
    return np.exp(log_sigmoid(f))


def boundary_aware_loss(s, tau, l: float = 2.0, gamma: float = 2.0):
    """``-(l - s)^gamma * max(log s, tau)`` for ``s`` in ``(0, 1)``."""
    s = np.asarray(s, dtype=np.float64)
    if np.any((s <= 0) | (s >= 1)) or np.any(np.isnan(s)):
        raise DomainError("s must lie strictly inside (0, 1)")
    out = -((l - s) ** gamma) * np.maximum(np.log(s), tau)
    return float(out) if out.ndim == 0 else out


def boundary_aware_loss_piecewise(s, tau, l: float = 2.0, gamma: float = 2.0):
    """Branch form: ``-(l-s)^gamma log s`` above the threshold, ``-tau (l-s)^gamma`` at or below."""
    s = np.asarray(s, dtype=np.float64)
    if np.any((s <= 0) | (s >= 1)) or np.any(np.isnan(s)):
        raise DomainError("s must lie strictly inside (0, 1)")
    logs = np.log(s)
    weight = (l - s) ** gamma
    above = logs > tau
    out = np.where(above, -weight * logs, -np.where(above, 0.0, tau) * weight)
    return float(out) if out.ndim == 0 else out


def _ba_from_raw(f, tau, l, gamma):
    """Loss and its derivative with respect to the raw score ``f``."""
    logs = log_sigmoid(f)
    s = np.exp(logs)
    one_minus = np.exp(log_sigmoid(-f))
    gap = l - s
    weight = gap**gamma
    above = logs > tau
    t = np.where(above, 0.0, tau)
    loss = np.where(above, -weight * logs, -t * weight)
    dweight = gamma * gap ** (gamma - 1) if gamma != 0 else np.zeros_like(s)
    ds_df = s * one_minus
    dl_ds = np.where(above, dweight * logs - weight / s, t * dweight)
    return loss, dl_ds * ds_df


def tau_from_scores(raw_scores, strategy: str = "min") -> float:
    if strategy == "none":
        return -math.inf
    logs = log_sigmoid(raw_scores)
    if logs.size == 0:
        raise ValueError("tau needs at least one ID score")
    return float({"min": np.min, "mean": np.mean, "max": np.max}[strategy](logs))


def compute_tau(model: ScoringModel, id_embeddings, strategy: str = "min") -> float:
    """ID-boundary threshold in log space: ``strategy`` over ID of ``log sigmoid(f)``."""
    if strategy not in TAU_STRATEGIES:
        raise ValueError(f"unknown tau strategy {strategy!r}")
    if strategy == "none":
        return -math.inf
    return tau_from_scores(model.score(id_embeddings), strategy)


def loss_terms(model, id_batch, oe_batch, params: LossParams, tau: float) -> tuple[float, float]:
    """``(sum_ID f, sum_OE l_ba)``; the OE term is unweighted."""
    id_term = float(model.score(id_batch).sum())
    oe_batch = np.asarray(oe_batch, dtype=np.float64)
    if oe_batch.size == 0:
        return id_term, 0.0
    loss, _ = _ba_from_raw(model.score(oe_batch), tau, params.l, params.gamma)
    return id_term, float(loss.sum())


def total_loss(model, id_batch, oe_batch, params: LossParams, tau: float) -> float:
    id_term, oe_term = loss_terms(model, id_batch, oe_batch, params, tau)
    if params.beta == 0:
        return id_term
    return id_term + params.beta * oe_term


def _backward(model: ScoringModel, x, upstream) -> list[np.ndarray]:
    acts = model._forward(x)
    delta = 2.0 * (acts[-1] - model.center) * upstream[:, None]
    grads = [None] * (2 * len(model.weights))
    for k in range(len(model.weights) - 1, -1, -1):
        grads[2 * k] = delta.T @ acts[k]
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ model.weights[k]) * (1.0 - acts[k] ** 2)
    return grads


def gradient(model, id_batch, oe_batch, params: LossParams, tau: float) -> list[np.ndarray]:
    """Gradient of :func:`total_loss` for ``[W1, b1, W2, b2, ...]``; ``tau`` held fixed."""
    id_batch = np.atleast_2d(np.asarray(id_batch, dtype=np.float64))
    grads = _backward(model, id_batch, np.ones(len(id_batch)))
    oe_batch = np.asarray(oe_batch, dtype=np.float64)
    if params.beta != 0 and oe_batch.size:
        oe_batch = np.atleast_2d(oe_batch)
        _, dl_df = _ba_from_raw(model.score(oe_batch), tau, params.l, params.gamma)
        oe_grads = _backward(model, oe_batch, params.beta * dl_df)
        grads = [g + h for g, h in zip(grads, oe_grads)]
    return grads


# ---------------------------------------------------------------------------
# training


def train(model: ScoringModel, id_train_embeddings, oe_embeddings, params: LossParams,
          epochs: int = 100, lr: float = 1e-2, batch_size: int = 64, seed: int = 0):
    """Mini-batch SGD on the total objective.

    Each epoch recomputes ``tau`` on the full ID set, shuffles both sets with
    independent streams and splits the outliers over as many batches as the
    ID data. Steps use the batch gradient divided by the ID batch size.
    Returns a trained copy and the per-epoch state.
    """
    x_id = np.asarray(id_train_embeddings, dtype=np.float64)
    if x_id.ndim != 2 or len(x_id) == 0:
        raise ValueError("training needs at least one ID embedding")
    x_oe = np.asarray(oe_embeddings, dtype=np.float64)
    if x_oe.size == 0:
        x_oe = np.zeros((0, x_id.shape[1]))
    model = model.copy()
    state = TrainState()
    n_batches = max(1, math.ceil(len(x_id) / batch_size))
    for epoch in range(1, epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            model, state = _epoch(model, state, x_id, x_oe, params, epoch, lr, n_batches, seed)
    return model, state


def _epoch(model, state, x_id, x_oe, params, epoch, lr, n_batches, seed):
    tau = compute_tau(model, x_id, params.tau_strategy)
    id_order = np.random.default_rng([seed, epoch, 0]).permutation(len(x_id))
    oe_order = np.random.default_rng([seed, epoch, 1]).permutation(len(x_oe))
    id_parts = np.array_split(id_order, n_batches)
    oe_parts = np.array_split(oe_order, n_batches)
    for ib, ob in zip(id_parts, oe_parts):
        if len(ib) == 0:
            continue
        grads = gradient(model, x_id[ib], x_oe[ob], params, tau)
        step = lr / len(ib)
        model.set_params([p - step * g for p, g in zip(model.params, grads)])
    id_term, oe_term = loss_terms(model, x_id, x_oe, params, tau)
    total = id_term + params.beta * oe_term if params.beta else id_term
    if not (math.isfinite(total) and all(np.isfinite(p).all() for p in model.params)):
        raise TrainingError(
            f"non-finite loss at epoch {epoch} (id_term={id_term}, oe_term={oe_term}, tau={tau}); "
            "lower the learning rate"
        )
    state.epoch = epoch
    state.tau_current = tau
    state.loss_history.append(total)
    state.records.append(
        {"epoch": epoch, "total": total, "id_term": id_term, "oe_term": oe_term, "tau": tau}
    )
    return model, state


def write_loss_history(state: TrainState, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "total", "id_term", "oe_term", "tau"])
        for r in state.records:
            w.writerow([r["epoch"], repr(r["total"]), repr(r["id_term"]), repr(r["oe_term"]), repr(r["tau"])])


# ---------------------------------------------------------------------------
# scoring


def score_embeddings(model, embeddings, graph_ids=None, labels=None) -> list[ScoreRecord]:
    raw = model.score(embeddings) if len(embeddings) else np.zeros(0)
    norm = sigmoid(raw)
    ids = range(len(raw)) if graph_ids is None else graph_ids
    labs = [None] * len(raw) if labels is None else labels
    return [ScoreRecord(int(g), float(r), float(s), None if y is None else int(y))
            for g, r, s, y in zip(ids, raw, norm, labs)]


def score_dataset(model: ScoringModel, graphs, labels=None) -> list[ScoreRecord]:
    """Embed ``graphs`` with the model's embedding settings and score them, in input order."""
    graphs = list(graphs)
    fd = model.embedding_config.feature_dim
    for g in graphs:
        if g.feature_dim != fd:
            raise DimensionError(
                f"graph {g.graph_id} from {g.source_dataset!r} has feature_dim {g.feature_dim}; "
                f"the model was built for feature_dim {fd}"
            )
    emb = embed_graphs(graphs, model.embedding_config)
    if len(graphs) and emb.shape[1] != model.embedding_dim:
        raise DimensionError(f"embedding dim {emb.shape[1]} != model input dim {model.embedding_dim}")
    return score_embeddings(model, emb, [g.graph_id for g in graphs], labels)


def mahalanobis_score(id_train_embeddings, query_embeddings, ridge: float = 1e-6) -> np.ndarray:
    """``(x - mu)^T (Sigma + ridge I)^-1 (x - mu)`` with ID sample mean and covariance."""
    x = np.asarray(id_train_embeddings, dtype=np.float64)
    q = np.atleast_2d(np.asarray(query_embeddings, dtype=np.float64))
    if len(x) < 2:
        raise ValueError("Mahalanobis scoring needs at least two ID embeddings")
    mu = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False)) + ridge * np.eye(x.shape[1])
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericError("regularized covariance is singular; increase the ridge") from None
    z = solve_triangular(chol, (q - mu).T, lower=True)
    return np.maximum((z**2).sum(axis=0), 0.0)
