"""Command-line entry point for graph-level OOD detection with hybrid outlier exposure.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from .benchmark import generate_sbm_benchmark
from .config import ExperimentConfig, load_config, parse_override
from .detector import load_checkpoint, save_checkpoint, score_dataset, write_loss_history
from .embed import write_embeddings_csv
from .errors import DataError, DimensionError, NumericError
from .evaluation import (
    SeedArtifacts,
    auc,
    effective_config,
    embedding_config_for,
    export_graphon_heatmap,
    export_score_histogram,
    fit_detector,
    load_experiment_datasets,
    loss_params_for,
    prepare_outliers,
    prepare_subgroups,
    run_experiment,
    run_grid,
    summary_table,
    write_scores_csv,
)
from .graphon import mixup_graphons
from .graphs import load_json_dataset, load_tu_dataset, write_json_dataset
from .synth import write_outlier_set

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("hgoe")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", type=Path, help="JSON config (nested or flat dotted keys)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key; repeatable")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="parallel seed jobs")
    p.add_argument("--seed-list", help="comma-separated seeds, e.g. 0,1,2")
    p.add_argument("--output", type=Path, default=Path("hgoe-out"), help="output directory")
    p.add_argument("--benchmark", choices=["sbm"], help="use the bundled synthetic benchmark")
    p.add_argument("--timing", action="store_true", help="embed wall-clock runtimes in reports")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hgoe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="convert TU or JSON datasets to validated JSON")
    _common(p)
    p.add_argument("--input", type=Path, help="TU directory or JSON file")
    p.add_argument("--name", help="dataset name (TU file prefix)")
    p.add_argument("--format", choices=["tu", "json"], default="tu")
    p.add_argument("--feature-policy", choices=["auto", "labels", "constant"], default="auto")

    p = sub.add_parser("subgroups", help="embed and cluster the ID training graphs")
    _common(p)

    p = sub.add_parser("synth", help="build the outlier set and export graphon heatmaps")
    _common(p)

    p = sub.add_parser("train", help="fit the scoring model")
    _common(p)

    p = sub.add_parser("eval", help="score the test set with a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("run", help="full pipeline over all seeds")
    _common(p)

    p = sub.add_parser("ablate", help="one run per grid point")
    _common(p)
    p.add_argument("--grid", required=True, choices=["gamma", "lambda", "tau", "outliers"])
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for text in args.overrides:
        try:
            key, value = parse_override(text)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        overrides[key] = value
    if args.benchmark:
        overrides["benchmark"] = args.benchmark
    if args.seed_list:
        try:
            overrides["seeds"] = [int(s) for s in args.seed_list.split(",") if s.strip()]
        except ValueError:
            raise UsageError(f"--seed-list must be comma-separated integers, got {args.seed_list!r}") from None
    try:
        cfg = cfg.with_overrides(overrides)
        cfg.validate()
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _manifest(out: Path, digest: str, files) -> None:
    _write_json(out / "manifest.json", {"config_digest": digest, "files": sorted(str(f) for f in files)})


def _safe(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.]+", "_", label)


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args, cfg, out: Path) -> list[str]:
    written = []
    if args.benchmark:
        datasets = list(generate_sbm_benchmark(seed=cfg.benchmark_seed).values())
    else:
        if args.input is None:
            raise UsageError("ingest needs --input (or --benchmark sbm)")
        if args.format == "json":
            datasets = [load_json_dataset(args.input)]
        else:
            if not args.name:
                raise UsageError("TU ingestion needs --name")
            datasets = [load_tu_dataset(args.input, args.name, args.feature_policy)]
    summary = []
    for ds in datasets:
        path = out / f"{ds.name}.json"
        write_json_dataset(ds, path)
        written.append(path.name)
        counts = ds.node_counts()
        summary.append({
            "name": ds.name,
            "graphs": len(ds),
            "feature_dim": ds.feature_dim,
            "mean_nodes": float(counts.mean()) if len(counts) else 0.0,
        })
    _write_json(out / "ingest.json", {"config_digest": cfg.digest(), "datasets": summary})
    written.append("ingest.json")
    return written


def _seed_and_data(cfg):
    cfg = effective_config(cfg)
    return cfg, load_experiment_datasets(cfg), int(cfg.seeds[0])


def cmd_subgroups(args, cfg, out):
    cfg, datasets, seed = _seed_and_data(cfg)
    art = prepare_subgroups(cfg, datasets, seed, SeedArtifacts(seed))
    emb_cfg = embedding_config_for(cfg, datasets[cfg.id_dataset].feature_dim)
    write_embeddings_csv(out / "embeddings.csv", art.train_embeddings, emb_cfg,
                         [g.graph_id for g in art.train_graphs])
    a = art.assignment
    _write_json(out / "subgroups.json", {
        "config_digest": cfg.digest(),
        "seed": seed,
        "k": a.k,
        "graph_ids": [g.graph_id for g in art.train_graphs],
        "labels": a.labels.tolist(),
        "centroids": a.centroids.tolist(),
        "inertia": a.inertia,
        "inertia_history": a.inertia_history,
    })
    return ["embeddings.csv", "subgroups.json"]


def cmd_synth(args, cfg, out):
    cfg, datasets, seed = _seed_and_data(cfg)
    art = SeedArtifacts(seed)
    prepare_subgroups(cfg, datasets, seed, art)
    prepare_outliers(cfg, datasets, seed, art)
    digest = cfg.digest()
    written = []
    fd = datasets[cfg.id_dataset].feature_dim
    write_outlier_set(art.oe_set, out / "outliers.json", fd, extra={"config_digest": digest})
    written.append("outliers.json")
    extra = {"config_digest": digest}
    for c, w in enumerate(art.graphons):
        name = f"graphon_subgroup{c}.csv"
        meta = export_graphon_heatmap(w, out / name, [c], None, extra)
        written += [name, meta.name]
    for i in range(len(art.graphons)):
        for j in range(i + 1, len(art.graphons)):
            name = f"graphon_mix_{i}_{j}.csv"
            mixed = mixup_graphons(art.graphons[i], art.graphons[j], 0.5)
            meta = export_graphon_heatmap(mixed, out / name, [i, j], 0.5, extra)
            written += [name, meta.name]
    _write_json(out / "synth.json", {
        "config_digest": digest,
        "seed": seed,
        "resolution": art.resolution,
        "counts": {"external": art.oe_set.counts[0], "internal": art.oe_set.counts[1]},
        "internal": [{"index": k, "pair": list(o.pair), "lambda": o.lam, "size": o.size}
                     for k, o in enumerate(art.internal)],
    })
    written.append("synth.json")
    return written


def cmd_train(args, cfg, out):
    cfg, datasets, seed = _seed_and_data(cfg)
    art = SeedArtifacts(seed)
    prepare_subgroups(cfg, datasets, seed, art)
    if cfg.loss.beta != 0:
        prepare_outliers(cfg, datasets, seed, art)
    fit_detector(cfg, datasets, seed, art)
    save_checkpoint(art.model, out / "checkpoint.json", loss_params_for(cfg),
                    {"config_digest": cfg.digest(), "seed": seed})
    write_loss_history(art.state, out / "loss_history.csv")
    return ["checkpoint.json", "loss_history.csv"]


def cmd_eval(args, cfg, out):
    cfg, datasets, seed = _seed_and_data(cfg)
    try:
        model, _ = load_checkpoint(args.checkpoint)
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise DataError(f"cannot read checkpoint {args.checkpoint}: {exc}") from None
    fd = datasets[cfg.id_dataset].feature_dim
    if model.embedding_config.feature_dim != fd:
        raise DimensionError(
            f"checkpoint expects feature_dim {model.embedding_config.feature_dim}, "
            f"dataset {cfg.id_dataset!r} has feature_dim {fd}"
        )
    art = SeedArtifacts(seed)
    prepare_subgroups(cfg, datasets, seed, art)
    records = score_dataset(model, art.test_set.graphs, art.test_set.labels)
    value = auc([r.normalized for r in records], art.test_set.labels)
    write_scores_csv(records, out / "scores.csv", [g.source_dataset for g in art.test_set.graphs])
    export_score_histogram(records, cfg.histogram_bins, out / "histogram.csv")
    _write_json(out / "eval.json", {"config_digest": cfg.digest(), "seed": seed, "auc": value})
    print(f"AUC {value:.4f}")
    return ["scores.csv", "histogram.csv", "eval.json"]


def _write_report(rep, out: Path, stem: str, timing: bool, bins: int) -> list[str]:
    written = [f"{stem}.json"]
    (out / f"{stem}.json").write_text(rep.to_json(include_timing=timing), encoding="utf-8")
    for r in rep.per_seed:
        if r.auc is None:
            continue
        name = f"{stem}_seed{r.seed}"
        write_scores_csv(r.records, out / f"{name}_scores.csv", r.sources)
        export_score_histogram(r.records, bins, out / f"{name}_histogram.csv")
        written += [f"{name}_scores.csv", f"{name}_histogram.csv"]
    return written


def _timing_doc(reports):
    return {label: {"total_s": rep.runtime_s, "per_seed": {str(r.seed): r.runtime_s for r in rep.per_seed}}
            for label, rep in reports}


def cmd_run(args, cfg, out):
    if cfg.ablation in ("gamma_sweep", "lambda_range_sweep"):
        reports = run_grid(cfg, cfg.ablation, jobs=args.jobs)
        written = []
        for label, rep in reports:
            written += _write_report(rep, out, f"report_{_safe(label)}", args.timing, cfg.histogram_bins)
    else:
        rep = run_experiment(cfg, jobs=args.jobs)
        reports = [(rep.label, rep)]
        written = _write_report(rep, out, "report", args.timing, cfg.histogram_bins)
    (out / "summary.txt").write_text(summary_table([r for _, r in reports]), encoding="utf-8")
    _write_json(out / "timing.json", _timing_doc(reports))
    print(summary_table([r for _, r in reports]), end="")
    return written + ["summary.txt", "timing.json"]


def cmd_ablate(args, cfg, out):
    reports = run_grid(cfg, args.grid, jobs=args.jobs)
    written = []
    for label, rep in reports:
        written += _write_report(rep, out, f"report_{_safe(label)}", args.timing, cfg.histogram_bins)
    (out / "summary.txt").write_text(summary_table([r for _, r in reports]), encoding="utf-8")
    _write_json(out / "timing.json", _timing_doc(reports))
    print(summary_table([r for _, r in reports]), end="")
    return written + ["summary.txt", "timing.json"]


COMMANDS = {
    "ingest": cmd_ingest,
    "subgroups": cmd_subgroups,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "run": cmd_run,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_usage(sys.stderr)
        print("hgoe: error: a subcommand is required", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
        out = args.output
        out.mkdir(parents=True, exist_ok=True)
        written = COMMANDS[args.command](args, cfg, out)
        _manifest(out, cfg.digest(), written)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hgoe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, json.JSONDecodeError) as exc:
        print(f"hgoe: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"hgoe: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
