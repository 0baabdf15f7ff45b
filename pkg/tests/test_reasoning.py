"""Reason-verify loop tests: stepping, recommendation, homogeneity."""

import json

import numpy as np
import pytest

from vrec.backbone import Backbone, ModelConfig
from vrec.numerics import Rng, Tensor
from vrec.reasoning import (
    ReasoningTrace,
    export_traces,
    greedy_recommend,
    homogeneity,
    recommend,
    run_reasoning,
)
from vrec.verifiers import make_bank


def small_backbone(m=2, seed=0):
    return Backbone(ModelConfig(d_m=16, layers=2, heads=2, n_items=12,
                                max_positions=20, m=m, seed=seed))


def test_m0_empty_trace_equals_plain_backbone():
    bb = small_backbone()
    trace, hidden = run_reasoning(bb, None, [0, 3, 5], 0)
    assert trace.steps == [] and trace.m == 0
    plain = bb.encode([0, 3, 5])
    assert np.array_equal(hidden.data, plain.data)
    assert recommend(bb, hidden).tolist() == bb.rank_items(plain, 2).tolist()


def test_no_bank_adjusted_equals_raw():
    bb = small_backbone()
    trace, _ = run_reasoning(bb, None, [1, 4], 3)
    assert len(trace.steps) == 3
    for raw, adj, verdict in trace.steps:
        assert verdict is None
        assert adj is raw


def test_bank_absent_independent_of_verifier_state():
    bb = small_backbone()
    _, h1 = run_reasoning(bb, None, [2, 6, 9], 2)
    make_bank([("a", 4)], d_m=16, seed=99)  # unrelated bank must not matter
    _, h2 = run_reasoning(bb, None, [2, 6, 9], 2)
    assert np.array_equal(h1.data, h2.data)


def test_confident_bank_injects_prototype_columns():
    bb = small_backbone()
    bank = make_bank([("sharp", 3)], d_m=16, seed=1)
    bank.verifiers[0].b_last.data[:] = [40.0, 0.0, 0.0]
    trace, _ = run_reasoning(bb, bank, [0, 5], 2)
    for raw, adj, verdict in trace.steps:
        assert verdict.c[0].item() == 1.0
        col = bank.verifiers[0].w_last.data[:, verdict.j_star[0]]
        assert np.array_equal(adj.data, col)


def test_trace_determinism():
    bb = small_backbone()
    bank = make_bank([("a", 4), ("b", 3)], d_m=16, seed=2)
    t1, h1 = run_reasoning(bb, bank, [3, 7, 1], 3)
    t2, h2 = run_reasoning(bb, bank, [3, 7, 1], 3)
    assert np.array_equal(h1.data, h2.data)
    for (r1, a1, v1), (r2, a2, v2) in zip(t1.steps, t2.steps):
        assert np.array_equal(r1.data, r2.data)
        assert np.array_equal(a1.data, a2.data)
        assert v1.j_star == v2.j_star


def test_steps_feed_forward():
    # verified and unverified runs diverge after the first adjusted step
    bb = small_backbone()
    bank = make_bank([("a", 4)], d_m=16, seed=3)
    bank.verifiers[0].b_last.data[:] = [25.0, 0.0, 0.0, 0.0]
    t_plain, h_plain = run_reasoning(bb, None, [0, 5], 2)
    t_bank, h_bank = run_reasoning(bb, bank, [0, 5], 2)
    assert np.array_equal(t_plain.steps[0][0].data, t_bank.steps[0][0].data)
    assert not np.array_equal(t_plain.steps[1][0].data, t_bank.steps[1][0].data)
    assert not np.array_equal(h_plain.data, h_bank.data)


def test_sequence_budget_enforced():
    bb = Backbone(ModelConfig(d_m=16, layers=1, heads=2, n_items=12,
                              max_positions=5, m=0, seed=0))
    with pytest.raises(ValueError, match="max_positions"):
        run_reasoning(bb, None, [0, 1, 2, 3], 2)


def test_greedy_matches_rank_one():
    bb = small_backbone()
    _, hidden = run_reasoning(bb, None, [4, 8], 2)
    assert greedy_recommend(bb, hidden) == recommend(bb, hidden, 1)[0]
    assert greedy_recommend(bb, hidden) == recommend(bb, hidden)[0]


def fake_trace(vectors):
    steps = [(Tensor(v), Tensor(v), None) for v in vectors]
    return ReasoningTrace(steps=steps, m=len(steps))


def test_homogeneity_identical_vectors():
    v = Rng(4).normal((16,))
    traces = [fake_trace([v]) for _ in range(4)]
    h, proj = homogeneity(traces, 0)
    assert h == pytest.approx(1.0, abs=1e-12)
    assert proj.shape == (4, 2)


def test_homogeneity_orthogonal_vectors():
    a = np.zeros(16)
    b = np.zeros(16)
    a[0] = 1.0
    b[1] = 1.0
    h, _ = homogeneity([fake_trace([a]), fake_trace([b])], 0)
    assert h == pytest.approx(0.0, abs=1e-12)


def test_homogeneity_matches_brute_force():
    rng = Rng(5)
    vecs = [rng.normal((16,)) for _ in range(8)]
    h, _ = homogeneity([fake_trace([v]) for v in vecs], 0)
    sims = []
    for i in range(8):
        for j in range(i + 1, 8):
            sims.append(vecs[i] @ vecs[j] / (np.linalg.norm(vecs[i]) * np.linalg.norm(vecs[j])))
    assert h == pytest.approx(np.mean(sims), abs=1e-12)


def test_homogeneity_needs_two_traces():
    with pytest.raises(ValueError, match="at least 2"):
        homogeneity([fake_trace([np.ones(4)])], 0)


def test_export_traces_jsonl(tmp_path):
    bb = small_backbone()
    bank = make_bank([("a", 4), ("b", 3)], d_m=16, seed=6)
    traces = [run_reasoning(bb, bank, h, 2)[0] for h in ([0, 3], [5, 1, 7])]
    path = tmp_path / "traces.jsonl"
    export_traces(traces, path)
    lines = [json.loads(l) for l in path.read_text(encoding="utf-8").splitlines()]
    assert len(lines) == 2
    for line in lines:
        assert line["m"] == 2 and len(line["steps"]) == 2
        for step in line["steps"]:
            assert len(step["f"]) == 2 and len(step["w"]) == 2 and len(step["classes"]) == 2
            assert "r" not in step

    export_traces(traces, path, include_vectors=True)
    first = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
    assert len(first["steps"][0]["r"]) == 16
    assert len(first["steps"][0]["r_star"]) == 16
