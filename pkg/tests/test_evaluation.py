import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pair_count_auc
from hgoe.benchmark import generate_sbm_benchmark
from hgoe.config import ExperimentConfig, config_digest
from hgoe.detector import ScoreRecord
from hgoe.errors import MetricError
from hgoe.evaluation import (
    SeedArtifacts,
    auc,
    effective_config,
    embedding_config_for,
    evaluate_detector,
    export_graphon_heatmap,
    export_score_histogram,
    fit_detector,
    grid_points,
    prepare_subgroups,
    run_experiment,
    run_seed,
    summary_table,
)
from hgoe.graphon import Graphon, mixup_graphons, read_graphon_csv


@pytest.fixture(scope="module")
def bench():
    return generate_sbm_benchmark(n_id=60, n_ood=30, n_aux=80, seed=1)


def small_config(**overrides):
    base = {
        "seeds": [0, 1],
        "training.epochs": 5,
        "training.hidden_dim": 8,
        "embedding.d_s": 6,
        "embedding.wl_dim": 16,
        "embedding.wl_iterations": 2,
        "subgroups.k": 2,
    }
    base.update(overrides)
    return ExperimentConfig().with_overrides(base)


def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.4] * 6, [0, 0, 0, 1, 1, 1]) == 0.5
    assert auc([0.1, 0.7, 0.5, 0.9], [0, 0, 1, 1]) == 0.75


def test_auc_matches_pair_counting():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        # coarse grid forces ties
        scores = np.round(rng.random(n), int(rng.integers(1, 4)))
        assert auc(scores, labels) == pair_count_auc(scores, labels)


def test_auc_single_class_errors():
    with pytest.raises(MetricError):
        auc([0.1, 0.2], [0, 0])
    with pytest.raises(MetricError):
        auc([0.1, 0.2], [1, 1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=4, max_size=40, unique=True), st.integers(0, 2**32 - 1))
def test_auc_monotone_invariance_and_flip(scores, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, len(scores))
    labels[0], labels[1] = 0, 1
    s = np.array(scores, dtype=np.float64)
    base = auc(s, labels)
    # maps that stay strictly increasing in floating point on integer inputs
    a, b = int(rng.integers(1, 9)), int(rng.integers(-50, 50))
    for f in (lambda x: a * x + b, lambda x: np.exp(x / 100), lambda x: x**3):
        assert auc(f(s), labels) == base
    assert auc(s, labels) + auc(s, 1 - labels) == 1.0


def records(pairs):
    return [ScoreRecord(i, 0.0, s, y) for i, (s, y) in enumerate(pairs)]


def test_histogram_conservation_and_edges(tmp_path):
    rng = np.random.default_rng(1)
    recs = records([(float(rng.random()), int(rng.integers(0, 2))) for _ in range(100)] + [(1.0, 1), (0.0, 0)])
    rows = export_score_histogram(recs, 10, tmp_path / "h.csv")
    assert sum(r[2] for r in rows) == sum(1 for r in recs if r.label == 0)
    assert sum(r[3] for r in rows) == sum(1 for r in recs if r.label == 1)
    assert rows[0][0] == 0.0 and rows[-1][1] == 1.0
    single = export_score_histogram(records([(1.0, 1)]), 4, tmp_path / "s.csv")
    assert single[-1][3] == 1
    one = export_score_histogram(recs, 1, tmp_path / "one.csv")
    assert len(one) == 1 and one[0][2] + one[0][3] == len(recs)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,id_count,ood_count" and len(lines) == 11


def test_histogram_io_error_names_path(tmp_path):
    bad = tmp_path / "missing" / "h.csv"
    with pytest.raises(OSError, match="missing"):
        export_score_histogram(records([(0.5, 0)]), 2, bad)


def test_heatmap_export(tmp_path):
    m = np.random.default_rng(0).random((6, 6))
    w = Graphon((m + m.T) / 2)
    meta = export_graphon_heatmap(w, tmp_path / "w.csv", [0, 2], 0.3)
    np.testing.assert_allclose(read_graphon_csv(tmp_path / "w.csv").matrix, w.matrix, atol=1e-6)
    doc = json.loads(meta.read_text())
    assert doc == {"resolution": 6, "source_subgroups": [0, 2], "lambda": 0.3}
    export_graphon_heatmap(Graphon(np.full((3, 3), 0.5)), tmp_path / "c.csv")
    cells = [c for line in (tmp_path / "c.csv").read_text().splitlines() for c in line.split(",")]
    assert cells == ["0.5"] * 9
    mix = mixup_graphons(w, Graphon(np.full((6, 6), 0.5)), 0.25)
    meta = export_graphon_heatmap(mix, tmp_path / "mix.csv", [0, 1], 0.25)
    assert json.loads(meta.read_text())["lambda"] == 0.25


def test_grid_points():
    assert len(grid_points("gamma")) == 7
    assert len(grid_points("lambda")) == 4
    assert [o for _, o in grid_points("tau")] == [{"ablation": f"tau_{t}"} for t in ("min", "mean", "max", "none")]
    with pytest.raises(ValueError):
        grid_points("nope")


def test_effective_config_wiring():
    cfg = ExperimentConfig()
    assert effective_config(cfg.with_overrides({"ablation": "no_oe"})).loss.beta == 0.0
    assert effective_config(cfg.with_overrides({"ablation": "no_internal"})).synthesis.ext_int_ratio == [1.0, 0.0]
    assert effective_config(cfg.with_overrides({"ablation": "no_external"})).synthesis.ext_int_ratio == [0.0, 1.0]
    assert effective_config(cfg.with_overrides({"ablation": "tau_none"})).loss.tau_strategy == "none"


@pytest.mark.parametrize("ablation,expected", [("no_internal", "external"), ("no_external", "internal")])
def test_ratio_ablations_wire_outlier_origin(bench, ablation, expected):
    cfg = effective_config(small_config(ablation=ablation))
    art = run_seed(cfg, bench, 0)
    assert set(art.oe_set.origin) == {expected}
    assert len(art.oe_set) == len(art.train_graphs)
    assert all(g.source_dataset not in {cfg.id_dataset, cfg.ood_dataset} for g in art.oe_set.graphs)


def test_no_oe_equals_empty_outlier_set(bench):
    report = run_experiment(small_config(ablation="no_oe"), bench)
    cfg = small_config()
    for res in report.per_seed:
        art = prepare_subgroups(cfg, bench, res.seed, SeedArtifacts(res.seed))
        dim = embedding_config_for(cfg, 1).dim
        fit_detector(cfg, bench, res.seed, art, oe_embeddings=np.zeros((0, dim)))
        assert evaluate_detector(cfg, art).auc == res.auc


def test_report_determinism_and_shape(bench):
    cfg = small_config(seeds=[7])
    a = run_experiment(cfg, bench).to_json()
    b = run_experiment(cfg, bench).to_json()
    assert a == b
    doc = json.loads(a)
    assert doc["config_digest"] == config_digest(effective_config(cfg).to_dict())
    assert [e["seed"] for e in doc["per_seed"]] == [7]
    assert doc["std"] == 0.0 and doc["mean"] == doc["per_seed"][0]["auc"]
    assert 0.0 <= doc["mean"] <= 1.0


def test_report_aggregates(bench):
    rep = run_experiment(small_config(seeds=[2, 0, 1]), bench)
    assert [r.seed for r in rep.per_seed] == [0, 1, 2]
    assert rep.mean == pytest.approx(np.mean(rep.aucs)) and rep.std == pytest.approx(np.std(rep.aucs))
    assert "full" in summary_table([rep])


def test_failed_seed_reported(bench):
    # an OOD pool smaller than the test split aborts every seed
    tiny = dict(bench)
    tiny["sbm_ood"] = type(bench["sbm_ood"])("sbm_ood", bench["sbm_ood"].graphs[:2], 1)
    with pytest.raises(Exception, match="no seed completed"):
        run_experiment(small_config(), tiny)
