import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import simmia
from simmia.similarity import distance_matrix, sample_reference_set
from simmia.stats import gap_summary, per_reference_stats, stat_cdf
from simmia.store import Split


def brute_force_below_auc(member_vals, nonmember_vals):
    below = (member_vals[:, None] < nonmember_vals[None, :]).sum()
    ties = (member_vals[:, None] == nonmember_vals[None, :]).sum()
    return (below + 0.5 * ties) / (member_vals.size * nonmember_vals.size)


class TestPerReferenceStats:
    def test_constant_columns(self):
        dm = np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 2.0], [2.0, 2.0]])
        membership = np.array([1, 1, 0, 0])
        stats = per_reference_stats(dm, membership)
        for s in stats:
            assert s.mean_member == 1.0 and s.mean_nonmember == 2.0
            assert s.std_member == 0.0 and s.std_nonmember == 0.0

    def test_hand_matrix(self):
        dm = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        stats = per_reference_stats(dm, np.array([1, 1, 0]))
        assert stats[0].mean_member == 2.0
        assert stats[0].mean_nonmember == 5.0

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="both"):
            per_reference_stats(np.ones((3, 2)), np.array([1, 1, 1]))

    def test_population_std(self):
        dm = np.array([[0.0], [2.0], [9.0]])
        stats = per_reference_stats(dm, np.array([1, 1, 0]))
        assert stats[0].std_member == 1.0  # population std of {0, 2}

    def test_synthetic_gap_margin_on_most_anchors(self, small_gap_dataset, small_refs):
        ds, _ = small_gap_dataset
        rows = ds.rows_in_split(Split.ATTACK_EVAL)
        dm = distance_matrix(rows, small_refs, ds)
        stats = per_reference_stats(dm, ds.membership[rows])
        frac = np.mean([s.mean_member < s.mean_nonmember for s in stats])
        assert frac >= 0.95


class TestStatCdf:
    def test_singleton(self):
        assert stat_cdf(np.array([5.0])) == [(5.0, 1.0)]

    def test_tie_handling(self):
        points = stat_cdf(np.array([1.0, 1.0, 3.0]))
        assert points == [(1.0, 2.0 / 3.0), (3.0, 1.0)]

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            stat_cdf(np.array([]))

    def test_member_cdf_dominates_on_gap_data(self, small_gap_dataset, small_refs):
        ds, _ = small_gap_dataset
        rows = ds.rows_in_split(Split.ATTACK_EVAL)
        dm = distance_matrix(rows, small_refs, ds)
        membership = ds.membership[rows]
        mean_m = dm[membership == 1].mean(axis=1)
        mean_n = dm[membership == 0].mean(axis=1)
        # at the pooled median, the member CDF has accumulated more mass
        pooled_median = np.median(np.concatenate([mean_m, mean_n]))

        def cdf_at(points, x):
            level = 0.0
            for value, cum in points:
                if value > x:
                    break
                level = cum
            return level

        assert cdf_at(stat_cdf(mean_m), pooled_median) > cdf_at(stat_cdf(mean_n), pooled_median)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=60))
    @settings(max_examples=60, deadline=None)
    def test_monotone_and_ends_at_one(self, values):
        points = stat_cdf(np.array(values))
        fractions = [c for _, c in points]
        assert all(b > a for a, b in zip(fractions, fractions[1:]))
        assert fractions[-1] == 1.0
        supports = [v for v, _ in points]
        assert supports == sorted(supports)


class TestGapSummary:
    def test_identical_distributions_near_half(self):
        rng = np.random.default_rng(0)
        dm = rng.standard_normal((4000, 10)) ** 2
        membership = np.array([1, 0] * 2000)
        out = gap_summary(dm, membership)
        assert abs(out["mean_gap_auc"] - 0.5) <= 0.03
        assert abs(out["std_gap_auc"] - 0.5) <= 0.03

    def test_perfect_separation(self):
        dm = np.vstack([np.full((5, 3), 1.0), np.full((5, 3), 9.0)])
        dm += np.arange(10)[:, None] * 1e-3  # break per-target std ties
        membership = np.array([1] * 5 + [0] * 5)
        assert gap_summary(dm, membership)["mean_gap_auc"] == 1.0

    def test_matches_brute_force_pairwise_oracle(self, small_gap_dataset, small_refs):
        ds, _ = small_gap_dataset
        rows = ds.rows_in_split(Split.ATTACK_EVAL)
        dm = distance_matrix(rows, small_refs, ds)
        membership = ds.membership[rows]
        out = gap_summary(dm, membership)
        assert out["mean_gap_auc"] > 0.70
        per_mean = dm.mean(axis=1)
        per_std = dm.std(axis=1)
        for key, values in (("mean_gap_auc", per_mean), ("std_gap_auc", per_std)):
            oracle = brute_force_below_auc(values[membership == 1], values[membership == 0])
            assert abs(out[key] - oracle) < 1e-12

    def test_label_shuffle_kills_separation(self, small_gap_dataset, small_refs):
        ds, _ = small_gap_dataset
        rows = ds.rows_in_split(Split.ATTACK_EVAL)
        dm = distance_matrix(rows, small_refs, ds)
        rng = np.random.default_rng(42)
        shuffled = rng.permutation(ds.membership[rows])
        out = gap_summary(dm, shuffled)
        assert abs(out["mean_gap_auc"] - 0.5) <= 0.03
        assert abs(out["std_gap_auc"] - 0.5) <= 0.03
