import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import simmia
from simmia.similarity import (
    ReferenceSet,
    distance_matrix,
    sample_reference_set,
    similarity_vector,
)
from simmia.store import Split, make_dataset


def pool_dataset(n=1000, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    ds = make_dataset(rng.standard_normal((n, dim)).astype(np.float32))
    return ds.with_splits(np.full(n, int(Split.REFERENCE_POOL), dtype=np.uint8))


def brute_force_distances(ds, target_rows, anchor_rows):
    out = np.zeros((len(target_rows), len(anchor_rows)))
    for i, t in enumerate(target_rows):
        for j, a in enumerate(anchor_rows):
            diff = ds.vectors[t].astype(np.float64) - ds.vectors[a].astype(np.float64)
            out[i, j] = np.sum(diff * diff)
    return out


class TestSampleReferenceSet:
    def test_full_fraction_takes_all_pool_rows(self):
        ds = pool_dataset(n=37)
        refs = sample_reference_set(ds, 1.0, seed=5)
        assert sorted(refs.row_ids.tolist()) == list(range(37))
        # canonical seeded order, not ascending
        assert refs.row_ids.tolist() != list(range(37))

    def test_four_percent_of_thousand_is_forty(self):
        ds = pool_dataset(n=1000)
        refs = sample_reference_set(ds, 0.04, seed=1)
        assert refs.n == 40

    def test_deterministic(self):
        ds = pool_dataset()
        a = sample_reference_set(ds, 0.3, seed=9)
        b = sample_reference_set(ds, 0.3, seed=9)
        assert np.array_equal(a.row_ids, b.row_ids)

    def test_empty_pool_rejected(self):
        ds = make_dataset(np.zeros((4, 2), dtype=np.float32))
        with pytest.raises(ValueError, match="empty"):
            sample_reference_set(ds, 0.5, seed=0)

    def test_fraction_validation(self):
        ds = pool_dataset(n=10)
        for bad in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                sample_reference_set(ds, bad, seed=0)

    def test_minimum_one_anchor(self):
        ds = pool_dataset(n=10)
        assert sample_reference_set(ds, 0.01, seed=0).n == 1

    def test_overlap_ablation_widens_pool(self):
        ds = pool_dataset(n=20)
        splits = ds.splits.copy()
        splits[:10] = int(Split.ATTACK_TRAIN)
        ds = simmia.make_dataset(ds.vectors, membership=[1] * 10 + [None] * 10,
                                 splits=splits)
        default = sample_reference_set(ds, 1.0, seed=1)
        assert default.n == 10  # anchors disjoint from attack splits
        widened = sample_reference_set(
            ds, 1.0, seed=1, pool_splits=(Split.REFERENCE_POOL, Split.ATTACK_TRAIN)
        )
        assert widened.n == 20


class TestSimilarityVector:
    def test_target_equals_anchor_gives_zero(self):
        ds = pool_dataset(n=5)
        refs = ReferenceSet(row_ids=np.array([2]), seed=0, fraction=1.0)
        sv = similarity_vector(ds.record(2), refs, ds)
        assert sv.values[0] == 0.0

    def test_three_four_five_triangle(self):
        ds = make_dataset(np.array([[0.0, 0.0], [3.0, 4.0]], dtype=np.float32))
        refs = ReferenceSet(row_ids=np.array([1]), seed=0, fraction=1.0)
        sv = similarity_vector(ds.record(0), refs, ds)
        assert sv.values[0] == 25.0

    def test_matches_brute_force(self):
        ds = pool_dataset(n=10, dim=8, seed=3)
        refs = sample_reference_set(ds, 0.5, seed=4)
        oracle = brute_force_distances(ds, range(10), refs.row_ids)
        for t in range(10):
            sv = similarity_vector(ds.record(t), refs, ds)
            rel = np.abs(sv.values - oracle[t]) / np.maximum(oracle[t], 1e-300)
            rel[oracle[t] == 0.0] = np.abs(sv.values[oracle[t] == 0.0])
            assert rel.max() < 1e-12

    def test_dimension_mismatch(self):
        ds = pool_dataset(n=5, dim=3)
        other = pool_dataset(n=5, dim=4)
        refs = sample_reference_set(ds, 1.0, seed=0)
        with pytest.raises(ValueError, match="dim"):
            similarity_vector(other.record(0), refs, ds)


class TestDistanceMatrix:
    def test_empty_targets(self):
        ds = pool_dataset(n=6)
        refs = sample_reference_set(ds, 0.5, seed=0)
        dm = distance_matrix([], refs, ds)
        assert dm.shape == (0, 3)

    def test_single_pair_reduces_to_similarity_vector(self):
        ds = pool_dataset(n=6, seed=2)
        refs = ReferenceSet(row_ids=np.array([4]), seed=0, fraction=1.0)
        dm = distance_matrix([1], refs, ds)
        sv = similarity_vector(ds.record(1), refs, ds)
        assert dm.shape == (1, 1) and dm[0, 0] == sv.values[0]

    def test_matches_brute_force_oracle(self):
        ds = pool_dataset(n=600, dim=16, seed=7)
        refs = sample_reference_set(ds, 0.1, seed=8)
        targets = np.arange(100)
        dm = distance_matrix(targets, refs, ds)
        oracle = brute_force_distances(ds, targets, refs.row_ids)
        rel = np.abs(dm - oracle) / np.maximum(oracle, 1e-300)
        assert rel.max() < 1e-12

    def test_rows_bitwise_equal_per_target_computation(self):
        # chunked matrix assembly must match serial per-row evaluation exactly
        ds = pool_dataset(n=300, dim=6, seed=9)
        refs = sample_reference_set(ds, 0.5, seed=10)
        targets = np.arange(120)
        dm = distance_matrix(targets, refs, ds)
        for t in targets[::17]:
            sv = similarity_vector(ds.record(int(t)), refs, ds)
            assert np.array_equal(dm[t], sv.values)

    def test_anchor_permutation_permutes_entries(self):
        ds = pool_dataset(n=40, dim=5, seed=11)
        refs = sample_reference_set(ds, 0.5, seed=12)
        perm = np.random.default_rng(13).permutation(refs.n)
        permuted = ReferenceSet(row_ids=refs.row_ids[perm], seed=refs.seed,
                                fraction=refs.fraction)
        sv = similarity_vector(ds.record(0), refs, ds)
        sv_p = similarity_vector(ds.record(0), permuted, ds)
        assert np.array_equal(sv.values[perm], sv_p.values)


@given(seed=st.integers(0, 10_000), dim=st.integers(1, 6))
@settings(max_examples=30, deadline=None)
def test_distance_properties(seed, dim):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(dim)
    b = rng.standard_normal(dim)
    dab = np.sum((a - b) ** 2)
    dba = np.sum((b - a) ** 2)
    assert dab == dba >= 0.0
    assert np.sum((a - a) ** 2) == 0.0
