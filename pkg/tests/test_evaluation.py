"""Metric, pipeline, ablation, scaling, sweep, and timing tests."""

import csv
import json

import numpy as np
import pytest

from vrec.backbone import Backbone, ModelConfig
from vrec.datasets import SynthConfig, chronological_split, generate_synthetic
from vrec.evaluation import (
    REFERENCE_OVERHEAD_PCT,
    ablate,
    config_fingerprint,
    evaluate,
    ndcg_at_k,
    recall_at_k,
    run_pipeline,
    step_scalability,
    sweep,
    timing_overhead,
    write_metrics_csv,
)
from vrec.reasoning import run_reasoning
from vrec.training import TrainHyper
from vrec.verifiers import make_bank

MICRO_SYNTH = SynthConfig(n_users=8, n_items=12, n_groups=3, stickiness=0.9,
                          seq_len_range=(12, 16), seed=1)
MICRO_MODEL = ModelConfig(d_m=8, layers=1, heads=1, n_items=12, max_positions=16,
                          m=1, seed=1)
MICRO_HYPER = TrainHyper(lr=1e-3, epochs=1, batch=8, seed=1)
MICRO_DIMS = [("category", 3)]


# -- metric definitions ----------------------------------------------------


def test_recall_examples():
    assert recall_at_k([3, 1, 2], target=1, k=1) == 0.0
    assert recall_at_k([3, 1, 2], target=1, k=2) == 1.0
    assert recall_at_k([3, 1, 2], target=9, k=3) == 0.0


def test_ndcg_examples():
    assert ndcg_at_k([7, 1, 2], target=7, k=5) == 1.0
    assert ndcg_at_k([7, 1, 2], target=1, k=5) == pytest.approx(1.0 / np.log2(3), abs=1e-15)
    assert ndcg_at_k([7, 1, 2], target=2, k=5) == pytest.approx(0.5, abs=1e-15)
    assert ndcg_at_k([7, 1, 2], target=2, k=2) == 0.0


def test_metric_batch_mean():
    ranked_lists = [[0, 1, 2], [1, 0, 2], [2, 1, 0], [2, 0, 1]]
    hits = [recall_at_k(r, target=0, k=1) for r in ranked_lists]
    assert np.mean(hits) == 0.25


# -- evaluate --------------------------------------------------------------


def test_evaluate_matches_direct_ranking():
    items, logs, _ = generate_synthetic(MICRO_SYNTH)
    split = chronological_split(logs)
    bb = Backbone(MICRO_MODEL)
    report = evaluate(bb, None, split.test, m=0, ks=(1, 5))

    emb = bb.params()["tok_emb"].data
    exp_recall = {1: 0.0, 5: 0.0}
    exp_ndcg = {1: 0.0, 5: 0.0}
    for s in split.test:
        hidden = bb.encode(s.history)
        scores = emb[: MICRO_MODEL.n_items] @ hidden.data[-1]
        order = np.lexsort((np.arange(len(scores)), -scores))
        for k in (1, 5):
            top = order[:k].tolist()
            exp_recall[k] += float(s.target in top)
            if s.target in top:
                exp_ndcg[k] += 1.0 / np.log2(top.index(s.target) + 2)
    n = len(split.test)
    for k in (1, 5):
        assert report.recall[k] == pytest.approx(exp_recall[k] / n, abs=1e-12)
        assert report.ndcg[k] == pytest.approx(exp_ndcg[k] / n, abs=1e-12)
    assert report.n_samples == n


def test_evaluate_deterministic():
    _, logs, _ = generate_synthetic(MICRO_SYNTH)
    split = chronological_split(logs)
    bb = Backbone(MICRO_MODEL)
    bank = make_bank([("a", 3)], d_m=8, seed=1)
    a = evaluate(bb, bank, split.test, m=1)
    b = evaluate(bb, bank, split.test, m=1)
    assert a.recall == b.recall and a.ndcg == b.ndcg
    assert a.fingerprint == b.fingerprint


def test_evaluate_empty_samples():
    bb = Backbone(MICRO_MODEL)
    report = evaluate(bb, None, [], m=0)
    assert report.n_samples == 0
    assert report.recall[5] == 0.0


def test_fingerprint_order_independent():
    assert config_fingerprint({"a": 1, "b": 2}) == config_fingerprint({"b": 2, "a": 1})
    assert config_fingerprint({"a": 1}) != config_fingerprint({"a": 2})


# -- CSV writer ------------------------------------------------------------


def test_metrics_csv_exact_bytes(tmp_path):
    path = tmp_path / "m.csv"
    write_metrics_csv(path, [{"variant": "full", "recall@5": 0.5, "n_samples": 8},
                             {"variant": "ablated", "recall@5": 1 / 3}],
                      ["variant", "recall@5", "n_samples"])
    raw = path.read_bytes()
    assert raw == b"variant,recall@5,n_samples\nfull,0.5,8\nablated,0.3333333333333333,\n"


# -- pipeline --------------------------------------------------------------


def test_run_pipeline_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    result = run_pipeline(MICRO_SYNTH, MICRO_MODEL, MICRO_HYPER, MICRO_DIMS, out_dir=out)
    for name in ("stage0.ckpt", "stage1.ckpt", "final.ckpt", "stage0_log.csv",
                 "stage1_log.csv", "stage2_log.csv", "metrics.csv", "report.json"):
        assert (out / name).exists(), name
    assert result.bank is not None
    assert result.report.n_samples == len(result.split.test)

    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["fingerprint"] == result.report.fingerprint
    assert report["recall"]["5"] == result.report.recall[5]

    with (out / "metrics.csv").open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["variant"] == "final"
    assert float(rows[0]["recall@5"]) == result.report.recall[5]


def test_run_pipeline_without_bank(tmp_path):
    out = tmp_path / "nb"
    result = run_pipeline(MICRO_SYNTH, MICRO_MODEL, MICRO_HYPER, MICRO_DIMS,
                          use_bank=False, out_dir=out)
    assert result.bank is None
    assert not (out / "stage1.ckpt").exists()
    assert (out / "final.ckpt").exists()


# -- ablation --------------------------------------------------------------


def test_ablate_unknown_variant():
    with pytest.raises(ValueError, match="unknown ablation variant"):
        ablate(MICRO_SYNTH, MICRO_MODEL, MICRO_HYPER, MICRO_DIMS, variants=["bogus"])


def test_ablate_single_dimension_not_configured():
    with pytest.raises(ValueError, match="not configured"):
        ablate(MICRO_SYNTH, MICRO_MODEL, MICRO_HYPER, MICRO_DIMS, variants=["single-cf"])


def test_ablate_default_is_full(tmp_path):
    rows = ablate(MICRO_SYNTH, MICRO_MODEL, MICRO_HYPER, MICRO_DIMS,
                  out_dir=tmp_path)
    assert [r["variant"] for r in rows] == ["full"]
    assert (tmp_path / "ablation.csv").exists()


def test_ablate_rows_per_variant(tmp_path):
    rows = ablate(MICRO_SYNTH, MICRO_MODEL, MICRO_HYPER, MICRO_DIMS,
                  variants=["full", "no-verifier"], out_dir=tmp_path)
    assert [r["variant"] for r in rows] == ["full", "no-verifier"]
    for row in rows:
        assert 0.0 <= row["recall@5"] <= 1.0
        assert 0.0 <= row["ndcg@10"] <= 1.0
    lines = (tmp_path / "ablation.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 3


# -- scaling and sweeps ------------------------------------------------------


def test_step_scalability_m_zero(tmp_path):
    rows = step_scalability(MICRO_SYNTH, MICRO_MODEL, MICRO_HYPER, MICRO_DIMS,
                            steps=[0], out_dir=tmp_path)
    assert rows[0]["m"] == 0
    assert 0.0 <= rows[0]["recall@5"] <= 1.0
    assert (tmp_path / "steps.csv").exists()


def test_sweep_unknown_param():
    with pytest.raises(ValueError, match="unknown sweep parameter"):
        sweep("dropout", [0.1], MICRO_SYNTH, MICRO_MODEL, MICRO_HYPER, MICRO_DIMS)


def test_sweep_single_value(tmp_path):
    rows = sweep("beta", [0.0], MICRO_SYNTH, MICRO_MODEL, MICRO_HYPER, MICRO_DIMS,
                 out_dir=tmp_path)
    assert rows[0]["param"] == "beta"
    assert rows[0]["value"] == 0.0
    assert 0.0 <= rows[0]["recall@5"] <= 1.0
    assert (tmp_path / "sweep_beta.csv").exists()


# -- timing ------------------------------------------------------------------


def test_timing_overhead_smoke(tmp_path):
    _, logs, _ = generate_synthetic(MICRO_SYNTH)
    split = chronological_split(logs)
    bb = Backbone(MICRO_MODEL)
    bank = make_bank([("a", 3)], d_m=8, seed=1)
    result = timing_overhead(bb, bank, split.test, steps=[1], warmup=2,
                             min_samples=20, out_dir=tmp_path)
    row = result["rows"][0]
    assert row["m"] == 1
    assert row["t_without_s"] > 0 and row["t_with_s"] > 0
    assert np.isfinite(row["overhead_pct"])
    assert result["reference_overhead_pct"] == REFERENCE_OVERHEAD_PCT
    assert (tmp_path / "bench.json").exists()
    assert (tmp_path / "bench.csv").exists()


def test_timing_identical_conditions_near_zero():
    # with m=0 verification never runs, so both conditions time the same code
    _, logs, _ = generate_synthetic(MICRO_SYNTH)
    split = chronological_split(logs)
    bb = Backbone(MICRO_MODEL)
    bank = make_bank([("a", 3)], d_m=8, seed=1)
    result = timing_overhead(bb, bank, split.test, steps=[0], warmup=5, min_samples=60)
    assert abs(result["rows"][0]["overhead_pct"]) < 75.0
