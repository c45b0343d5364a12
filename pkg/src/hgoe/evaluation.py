"""AUC, score and graphon exports, and the seed-replicated experiment runner."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .benchmark import generate_sbm_benchmark
from .config import ExperimentConfig
from .detector import LossParams, ScoreRecord, init_model, score_embeddings, train
from .embed import EmbeddingConfig, embed_graphs, kmeans
from .errors import DataError, HGOEError, MetricError
from .graphon import Graphon, default_resolution, estimate_graphon_usvt, write_graphon_csv
from .graphs import LabeledTestSet, assemble_test_set, load_dataset, split_in_distribution
from .synth import (
    OutlierSet,
    SynthesisConfig,
    assemble_oe_set,
    build_external_pool,
    generate_internal_outliers_detailed,
)

log = logging.getLogger(__name__)

GAMMA_GRID = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
LAMBDA_GRID = ((0.01, 1.0), (0.1, 0.9), (0.3, 0.7), (0.4, 0.6))
TAU_GRID = ("min", "mean", "max", "none")


# ---------------------------------------------------------------------------
# metric and exports


def auc(scores, labels) -> float:
    """Probability that an OOD (label 1) score exceeds an ID (label 0) score, ties counting half.

    Computed from the rank sum of the OOD scores.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise MetricError("scores and labels differ in length")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != len(y):
        raise MetricError("labels must be 0 (ID) or 1 (OOD)")
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both ID and OOD samples")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def export_score_histogram(records, bins: int, path) -> list[tuple[float, float, int, int]]:
    """Write per-bin ID/OOD counts of the normalized scores over ``[0, 1]``; the last bin is closed."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    id_counts = np.zeros(bins, dtype=np.int64)
    ood_counts = np.zeros(bins, dtype=np.int64)
    for r in records:
        if r.label is None:
            raise ValueError(f"record {r.graph_id} is unlabeled")
        b = min(int(math.floor(r.normalized * bins)), bins - 1)
        (ood_counts if r.label == 1 else id_counts)[b] += 1
    rows = [(i / bins, (i + 1) / bins, int(id_counts[i]), int(ood_counts[i])) for i in range(bins)]
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "id_count", "ood_count"])
            for lo, hi, a, b in rows:
                w.writerow([repr(lo), repr(hi), a, b])
    except OSError as exc:
        raise OSError(f"cannot write histogram to {path}: {exc}") from exc
    return rows


def export_graphon_heatmap(graphon: Graphon, path, source_subgroups=None, lam=None, extra=None) -> Path:
    """CSV matrix with six significant digits plus ``<stem>.meta.json`` describing its origin."""
    path = Path(path)
    try:
        write_graphon_csv(graphon, path)
        meta = {
            "resolution": graphon.resolution,
            "source_subgroups": list(source_subgroups) if source_subgroups is not None else None,
            "lambda": lam,
        }
        if extra:
            meta.update(extra)
        meta_path = path.with_name(path.stem + ".meta.json")
        meta_path.write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write graphon heatmap to {path}: {exc}") from exc
    return meta_path


def write_scores_csv(records, path, sources=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "graph_id", "source", "raw", "normalized", "label"])
        for k, r in enumerate(records):
            src = sources[k] if sources is not None else ""
            w.writerow([k, r.graph_id, src, repr(r.raw), repr(r.normalized), "" if r.label is None else r.label])


# ---------------------------------------------------------------------------
# experiment pipeline


def load_experiment_datasets(config: ExperimentConfig) -> dict:
    names = [config.id_dataset, config.ood_dataset, *config.auxiliary_datasets]
    if config.benchmark:
        if config.benchmark != "sbm":
            raise DataError(f"unknown benchmark {config.benchmark!r}")
        bench = generate_sbm_benchmark(seed=config.benchmark_seed)
        missing = [n for n in names if n not in bench]
        if missing:
            raise DataError(f"benchmark 'sbm' provides {sorted(bench)}, config asks for {missing}")
        return {n: bench[n] for n in names}
    root = config.data_root or os.environ.get("HGOE_DATA_ROOT")
    if not root:
        raise DataError("no data_root configured and HGOE_DATA_ROOT is unset")
    return {n: load_dataset(root, n, config.feature_policy) for n in names}


def effective_config(config: ExperimentConfig) -> ExperimentConfig:
    """Apply the single-run ablation switch to the loss and synthesis sections."""
    overrides = {
        "no_internal": {"synthesis.ext_int_ratio": [1.0, 0.0]},
        "no_external": {"synthesis.ext_int_ratio": [0.0, 1.0]},
        "no_oe": {"loss.beta": 0.0},
        "tau_min": {"loss.tau_strategy": "min"},
        "tau_mean": {"loss.tau_strategy": "mean"},
        "tau_max": {"loss.tau_strategy": "max"},
        "tau_none": {"loss.tau_strategy": "none"},
    }.get(config.ablation, {})
    return config.with_overrides(overrides)


def stage_seed(seed: int, stage: int) -> int:
    return int(np.random.SeedSequence([seed, stage]).generate_state(1)[0])


def embedding_config_for(config: ExperimentConfig, feature_dim: int) -> EmbeddingConfig:
    e = config.embedding
    return EmbeddingConfig(e.d_s, e.wl_iterations, e.wl_dim, feature_dim)


def loss_params_for(config: ExperimentConfig) -> LossParams:
    c = config.loss
    return LossParams(float(c.l), float(c.gamma), float(c.beta), c.tau_strategy)


@dataclass
class SeedArtifacts:
    seed: int
    train_graphs: list = field(default_factory=list)
    test_set: LabeledTestSet | None = None
    train_embeddings: np.ndarray | None = None
    assignment: object = None
    resolution: int = 0
    graphons: list = field(default_factory=list)
    internal: list = field(default_factory=list)
    oe_set: OutlierSet | None = None
    model: object = None
    state: object = None
    records: list = field(default_factory=list)
    auc: float | None = None


def prepare_subgroups(config, datasets, seed, art: SeedArtifacts) -> SeedArtifacts:
    id_ds = datasets[config.id_dataset]
    split = split_in_distribution(id_ds, config.train_fraction, stage_seed(seed, 0))
    art.train_graphs = [id_ds[i] for i in split.train]
    art.test_set = assemble_test_set(
        [id_ds[i] for i in split.test_id], datasets[config.ood_dataset], stage_seed(seed, 1)
    )
    emb_cfg = embedding_config_for(config, id_ds.feature_dim)
    art.train_embeddings = embed_graphs(art.train_graphs, emb_cfg)
    sg = config.subgroups
    art.assignment = kmeans(art.train_embeddings, sg.k, stage_seed(seed, 2), sg.max_iter, sg.rel_tol)
    return art


def prepare_outliers(config, datasets, seed, art: SeedArtifacts) -> SeedArtifacts:
    id_ds = datasets[config.id_dataset]
    total = config.synthesis.total_count or len(art.train_graphs)
    syn = SynthesisConfig(
        tuple(config.synthesis.lambda_range),
        int(total),
        tuple(config.synthesis.ext_int_ratio),
        config.embedding.d_s,
        stage_seed(seed, 3),
    )
    n_ext, n_int = syn.split_counts()
    pool = build_external_pool(
        list(datasets.values()), config.id_dataset, config.ood_dataset, id_ds.feature_dim, config.embedding.d_s
    )
    g = config.graphon
    art.resolution = g.resolution or default_resolution(
        [x.node_count for x in art.train_graphs], g.max_resolution
    )
    labels = art.assignment.labels
    art.graphons = [
        estimate_graphon_usvt(
            [art.train_graphs[i] for i in np.flatnonzero(labels == c)],
            art.resolution,
            g.svt_coefficient,
            g.alignment,
        )
        for c in range(art.assignment.k)
    ]
    art.internal = generate_internal_outliers_detailed(art.graphons, n_int, syn, pool) if n_int else []
    art.oe_set = assemble_oe_set(pool, [o.graph for o in art.internal], syn)
    return art


def fit_detector(config, datasets, seed, art: SeedArtifacts, oe_embeddings=None) -> SeedArtifacts:
    id_ds = datasets[config.id_dataset]
    emb_cfg = embedding_config_for(config, id_ds.feature_dim)
    if oe_embeddings is None:
        graphs = art.oe_set.graphs if art.oe_set is not None else []
        oe_embeddings = embed_graphs(graphs, emb_cfg)
    t = config.training
    model = init_model(emb_cfg.dim, t.hidden_dim, stage_seed(seed, 4), art.train_embeddings, emb_cfg, t.depth)
    art.model, art.state = train(
        model, art.train_embeddings, oe_embeddings, loss_params_for(config),
        t.epochs, t.lr, t.batch_size, stage_seed(seed, 5),
    )
    return art


def evaluate_detector(config, art: SeedArtifacts) -> SeedArtifacts:
    graphs = art.test_set.graphs
    emb = embed_graphs(list(graphs), art.model.embedding_config)
    art.records = score_embeddings(art.model, emb, [g.graph_id for g in graphs], art.test_set.labels)
    art.auc = auc([r.normalized for r in art.records], art.test_set.labels)
    return art


def run_seed(config: ExperimentConfig, datasets: dict, seed: int) -> SeedArtifacts:
    """Split, subgroup, synthesize, train and score for one seed."""
    art = SeedArtifacts(seed)
    prepare_subgroups(config, datasets, seed, art)
    if config.loss.beta != 0:
        prepare_outliers(config, datasets, seed, art)
    fit_detector(config, datasets, seed, art)
    return evaluate_detector(config, art)


@dataclass
class SeedResult:
    seed: int
    auc: float | None
    runtime_s: float
    error: str | None = None
    records: list[ScoreRecord] = field(default_factory=list)
    sources: list[str] = field(default_factory=list)


@dataclass
class ExperimentReport:
    label: str
    config: dict
    config_digest: str
    per_seed: list[SeedResult]
    mean: float
    std: float
    runtime_s: float

    @property
    def aucs(self) -> list[float]:
        return [r.auc for r in self.per_seed if r.auc is not None]

    def to_dict(self, include_timing: bool = False) -> dict:
        per_seed = []
        for r in self.per_seed:
            entry = {"seed": r.seed, "auc": r.auc, "runtime_s": r.runtime_s if include_timing else None}
            if r.error is not None:
                entry["error"] = r.error
            per_seed.append(entry)
        return {
            "config_digest": self.config_digest,
            "label": self.label,
            "per_seed": per_seed,
            "mean": self.mean,
            "std": self.std,
            "config": self.config,
        }

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, indent=2) + "\n"


def _seed_job(args) -> SeedResult:
    config, datasets, seed = args
    start = time.perf_counter()
    try:
        art = run_seed(config, datasets, seed)
    except HGOEError as exc:
        log.warning("seed %d failed: %s", seed, exc)
        return SeedResult(seed, None, time.perf_counter() - start, f"{type(exc).__name__}: {exc}")
    sources = [g.source_dataset for g in art.test_set.graphs]
    return SeedResult(seed, art.auc, time.perf_counter() - start, None, art.records, sources)


def run_experiment(config: ExperimentConfig, datasets: dict | None = None, jobs: int = 1,
                   label: str | None = None) -> ExperimentReport:
    """Run every seed of a single (non-sweep) configuration and aggregate AUC mean and std."""
    config.validate()
    if config.ablation in ("gamma_sweep", "lambda_range_sweep"):
        raise ValueError(f"{config.ablation} is a grid; use run_grid")
    cfg = effective_config(config)
    if datasets is None:
        datasets = load_experiment_datasets(cfg)
    start = time.perf_counter()
    seeds = sorted(int(s) for s in cfg.seeds)
    jobs_args = [(cfg, datasets, s) for s in seeds]
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(seeds))) as ex:
            results = list(ex.map(_seed_job, jobs_args))
    else:
        results = [_seed_job(a) for a in jobs_args]
    results.sort(key=lambda r: r.seed)
    aucs = [r.auc for r in results if r.auc is not None]
    if not aucs:
        errors = "; ".join(f"seed {r.seed}: {r.error}" for r in results)
        raise DataError(f"no seed completed successfully ({errors})")
    doc = cfg.to_dict()
    return ExperimentReport(
        label or config.ablation,
        doc,
        cfg.digest(),
        results,
        float(np.mean(aucs)),
        float(np.std(aucs)),
        time.perf_counter() - start,
    )


def grid_points(grid: str) -> list[tuple[str, dict]]:
    if grid in ("gamma", "gamma_sweep"):
        return [(f"gamma={g:g}", {"loss.gamma": g}) for g in GAMMA_GRID]
    if grid in ("lambda", "lambda_range_sweep"):
        return [(f"lambda={lo:g}-{hi:g}", {"synthesis.lambda_range": [lo, hi]}) for lo, hi in LAMBDA_GRID]
    if grid == "tau":
        return [(f"tau={t}", {"ablation": f"tau_{t}"}) for t in TAU_GRID]
    if grid == "outliers":
        return [(a, {"ablation": a}) for a in ("full", "no_internal", "no_external", "no_oe")]
    raise ValueError(f"unknown grid {grid!r}; choose gamma, lambda, tau or outliers")


def run_grid(config: ExperimentConfig, grid: str, datasets: dict | None = None, jobs: int = 1):
    """One report per grid point, in grid order."""
    base = config.with_overrides({"ablation": "full"}) if config.ablation.endswith("_sweep") else config
    if datasets is None:
        datasets = load_experiment_datasets(base)
    reports = []
    for label, overrides in grid_points(grid):
        cfg = base.with_overrides(overrides)
        reports.append((label, run_experiment(cfg, datasets, jobs, label)))
    return reports


def summary_table(reports) -> str:
    """Fixed-width text table of AUC mean and std (in percent) per report."""
    lines = [f"{'label':<24}{'mean AUC %':>12}{'std %':>10}{'seeds':>8}"]
    lines.append("-" * len(lines[0]))
    for rep in reports:
        ok = len(rep.aucs)
        lines.append(f"{rep.label:<24}{100 * rep.mean:>12.2f}{100 * rep.std:>10.2f}{ok:>5}/{len(rep.per_seed):<2}")
    return "\n".join(lines) + "\n"
