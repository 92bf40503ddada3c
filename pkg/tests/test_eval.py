import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import simmia
from simmia.evalreport import (
    asr,
    build_report,
    compare_attacks,
    fraction_sweep,
    roc_curve,
)
from conftest import quick_attack_config


def pairwise_auc_oracle(scores, truth):
    """Exhaustive P(member score > non-member score) + half ties, exact."""
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(truth)
    member = s[t == 1]
    non = s[t == 0]
    num = 0
    for m in member:
        for n in non:
            if m > n:
                num += 2
            elif m == n:
                num += 1
    return num / (2 * member.size * non.size)


class TestAsr:
    def test_all_correct(self):
        assert asr(np.array([1, 0, 1]), np.array([1, 0, 1])) == 1.0

    def test_complement(self):
        assert asr(np.array([0, 1]), np.array([1, 0])) == 0.0

    def test_hand_case(self):
        assert asr(np.array([1, 0, 0, 0]), np.array([1, 1, 0, 0])) == 0.75

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            asr(np.array([1]), np.array([1, 0]))


class TestRocCurve:
    def test_perfect_separation(self):
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        truth = np.array([1, 1, 0, 0])
        points, auc = roc_curve(scores, truth)
        assert auc == 1.0
        assert points[0] == (0.0, 0.0) and points[-1] == (1.0, 1.0)

    def test_chance_level_on_random_scores(self):
        rng = np.random.default_rng(1)
        scores = rng.random(4000)
        truth = rng.integers(0, 2, 4000)
        _, auc = roc_curve(scores, truth)
        assert abs(auc - 0.5) <= 0.03

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="both classes"):
            roc_curve(np.array([0.1, 0.2]), np.array([1, 1]))

    def test_monotone_endpoints(self):
        rng = np.random.default_rng(2)
        scores = np.round(rng.random(200), 2)  # force ties
        truth = rng.integers(0, 2, 200)
        points, _ = roc_curve(scores, truth)
        fprs = [p[0] for p in points]
        tprs = [p[1] for p in points]
        assert fprs == sorted(fprs) and tprs == sorted(tprs)
        assert points[0] == (0.0, 0.0) and points[-1] == (1.0, 1.0)

    def test_exact_pairwise_oracle_small_instances(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            n = int(rng.integers(2, 13))
            truth = np.zeros(n, dtype=int)
            truth[: int(rng.integers(1, n))] = 1
            rng.shuffle(truth)
            # mix continuous scores and coarse ones so ties occur
            if rng.random() < 0.5:
                scores = rng.integers(0, 4, n).astype(float)
            else:
                scores = rng.random(n)
            _, auc = roc_curve(scores, truth)
            assert auc == pairwise_auc_oracle(scores, truth)

    @given(
        seed=st.integers(0, 100_000),
        n=st.integers(2, 12),
        coarse=st.booleans(),
    )
    @settings(max_examples=120, deadline=None)
    def test_exact_pairwise_oracle_property(self, seed, n, coarse):
        rng = np.random.default_rng(seed)
        truth = np.zeros(n, dtype=int)
        truth[: int(rng.integers(1, n))] = 1
        rng.shuffle(truth)
        scores = (
            rng.integers(0, 3, n).astype(float) if coarse else rng.random(n)
        )
        _, auc = roc_curve(scores, truth)
        assert auc == pairwise_auc_oracle(scores, truth)


class TestBuildReport:
    def test_confusion_and_asr_consistent(self):
        scores = np.array([0.9, 0.6, 0.4, 0.2])
        decisions = (scores >= 0.5).astype(np.uint8)
        truth = np.array([1, 0, 1, 0], dtype=np.uint8)
        report = build_report(scores, decisions, truth)
        c = report.confusion
        assert c == {"tp": 1, "fp": 1, "tn": 1, "fn": 1}
        total = sum(c.values())
        assert report.asr == (c["tp"] + c["tn"]) / total

    def test_roc_invariants(self):
        rng = np.random.default_rng(9)
        scores = rng.random(50)
        truth = rng.integers(0, 2, 50).astype(np.uint8)
        truth[0], truth[1] = 0, 1
        report = build_report(scores, (scores >= 0.5).astype(np.uint8), truth)
        assert report.roc[0] == (0.0, 0.0) and report.roc[-1] == (1.0, 1.0)
        assert 0.0 <= report.auc <= 1.0


class TestCompare:
    def test_single_kind_matches_standalone_run(self, small_gap_dataset, small_refs):
        ds, _ = small_gap_dataset
        cfg = quick_attack_config(epochs=4, width=8)
        table = compare_attacks(ds, small_refs, ["sd"], cfg)
        model = simmia.train_attack("sd", ds, small_refs, cfg)
        standalone = simmia.evaluate_attack(model, ds)
        assert table.rows[0].asr_mean == standalone.asr
        assert table.rows[0].auc_mean == standalone.auc
        assert table.rows[0].n_runs == 1

    def test_multi_seed_aggregation(self, small_gap_dataset, small_refs):
        ds, _ = small_gap_dataset
        cfg = quick_attack_config(epochs=3, width=8)
        table = compare_attacks(ds, small_refs, ["sd", "fe"], cfg, seeds=[0, 1, 2])
        for row in table.rows:
            assert row.n_runs == 3
            assert 0.0 <= row.asr_mean <= 1.0 and row.asr_std >= 0.0
        text = table.to_text()
        assert "sd" in text and "fe" in text

    def test_csv_output(self, tmp_path, small_gap_dataset, small_refs):
        ds, _ = small_gap_dataset
        table = compare_attacks(ds, small_refs, ["fe"], quick_attack_config(epochs=2, width=8))
        out = tmp_path / "cmp.csv"
        table.write_csv(out)
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("attack,") and lines[1].startswith("fe,")


class TestFractionSweep:
    def test_fe_rows_constant_across_fractions(self, small_gap_dataset):
        ds, _ = small_gap_dataset
        cfg = quick_attack_config(epochs=3, width=8)
        table = fraction_sweep(ds, [0.1, 0.5, 1.0], ["fe"], cfg, seeds=[0, 1])
        means = {c.fraction: c.asr_mean for c in table.cells}
        assert means[0.1] == means[0.5] == means[1.0]

    def test_anchor_counts_follow_fraction(self, small_gap_dataset):
        ds, _ = small_gap_dataset
        cfg = quick_attack_config(epochs=2, width=8)
        table = fraction_sweep(ds, [0.1, 1.0], ["sd"], cfg, seeds=[0])
        counts = {c.fraction: c.n_anchors for c in table.cells}
        pool = ds.rows_in_split(simmia.Split.REFERENCE_POOL).size
        assert counts[1.0] == pool and counts[0.1] == max(1, round(0.1 * pool))

    def test_bad_fraction_rejected(self, small_gap_dataset):
        ds, _ = small_gap_dataset
        with pytest.raises(ValueError):
            fraction_sweep(ds, [0.0], ["sd"], quick_attack_config(epochs=1), seeds=[0])


class TestDeterminism:
    def test_reports_identical_across_runs(self, small_gap_dataset, small_refs):
        ds, _ = small_gap_dataset
        cfg = quick_attack_config(epochs=3, width=8)
        a = compare_attacks(ds, small_refs, ["sd", "tloss"], cfg)
        b = compare_attacks(ds, small_refs, ["sd", "tloss"], cfg)
        assert a.to_text() == b.to_text()
        for kind in ("sd", "tloss"):
            ra, rb = a.reports[kind][0], b.reports[kind][0]
            assert ra.asr == rb.asr and ra.auc == rb.auc and ra.roc == rb.roc
