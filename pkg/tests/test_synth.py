import math

import numpy as np
import pytest

import simmia
from simmia.evalreport import sweep_threshold
from simmia.store import Split, save_dataset
from simmia.synth import (
    SynthConfig,
    centers_dataset,
    generate,
    known_center_score,
    oracle_threshold_attack,
)


def cfg(**kw):
    base = dict(
        k=10, dim=8, per_identity_members=20, per_identity_nonmembers=20,
        sigma_train=0.1, sigma_test=0.3, seed=0,
    )
    base.update(kw)
    return SynthConfig(**base)


class TestGenerate:
    def test_shapes_and_labels(self):
        ds, gt = generate(cfg())
        assert ds.n == 10 * 40 and ds.dim == 8
        assert gt.centers.shape == (10, 8)
        assert int((ds.membership == 1).sum()) == 200

    def test_deterministic_bytes(self, tmp_path):
        a, _ = generate(cfg(seed=42))
        b, _ = generate(cfg(seed=42))
        pa, pb = tmp_path / "a.emb1", tmp_path / "b.emb1"
        save_dataset(a, pa)
        save_dataset(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_zero_sigma_members_equal_centers(self):
        ds, gt = generate(cfg(sigma_train=0.0))
        members = np.flatnonzero(ds.membership == 1)
        for r in members[:20]:
            identity = int(ds.identities[r])
            assert np.array_equal(
                ds.vectors[r].astype(np.float64), gt.centers[identity]
            )

    def test_null_case_identical_distributions(self):
        ds, gt = generate(cfg(sigma_train=0.2, sigma_test=0.2, per_identity_members=200,
                              per_identity_nonmembers=200, seed=5))
        d = ds.vectors.astype(np.float64) - gt.centers[ds.identities]
        r_m = (d[ds.membership == 1] ** 2).sum(1)
        r_n = (d[ds.membership == 0] ** 2).sum(1)
        assert abs(r_m.mean() - r_n.mean()) < 0.05 * r_m.mean()

    def test_gap_case_member_distances_smaller(self):
        # brute-force distance means over the generated data
        ds, gt = generate(cfg(k=50, dim=64, sigma_train=0.1, sigma_test=0.3, seed=3))
        d = ds.vectors.astype(np.float64) - gt.centers[ds.identities]
        dist = np.sqrt((d ** 2).sum(1))
        assert dist[ds.membership == 1].mean() < dist[ds.membership == 0].mean()

    def test_coherent_layout_identity_level_membership(self):
        ds, _ = generate(cfg(layout="coherent"))
        for j in range(10):
            rows = np.flatnonzero(ds.identities == j)
            bits = set(ds.membership[rows].tolist())
            assert bits == {1 if j % 2 == 0 else 0}

    def test_coherent_layout_needs_even_k(self):
        with pytest.raises(ValueError, match="even"):
            cfg(k=9, layout="coherent")

    def test_validation(self):
        with pytest.raises(ValueError):
            cfg(k=1)
        with pytest.raises(ValueError):
            cfg(sigma_train=-0.1)
        with pytest.raises(ValueError):
            cfg(outlier_fraction=1.5)

    def test_centers_sidecar_round_trip(self, tmp_path):
        ds, gt = generate(cfg(seed=8))
        side = centers_dataset(gt)
        path = tmp_path / "centers.emb1"
        save_dataset(side, path)
        back = simmia.load_dataset(path)
        assert np.array_equal(back.vectors.astype(np.float64), gt.centers)


class TestKnownCenterScore:
    def test_equidistant_gives_log_k(self):
        k, dim = 6, 6
        centers = np.eye(dim)[:k] * 2.0
        gt = simmia.SynthGroundTruth(centers=centers, config=cfg(k=k, dim=dim))
        x = np.zeros(dim)
        for kernel in ("gaussian", "inverse_distance"):
            assert known_center_score(x, 2, gt, kernel) == pytest.approx(math.log(k), abs=1e-12)

    def test_at_own_center_near_zero_from_above(self):
        centers = np.zeros((3, 4))
        centers[0, 0] = 1.0
        centers[1, 0] = 50.0
        centers[2, 1] = 50.0
        gt = simmia.SynthGroundTruth(centers=centers, config=cfg(k=3, dim=4))
        score = known_center_score(centers[0], 0, gt, "gaussian")
        assert 0.0 <= score < 1e-6

    def test_identity_out_of_range(self):
        _, gt = generate(cfg())
        with pytest.raises(ValueError, match="out of range"):
            known_center_score(np.zeros(8), 10, gt)

    def test_member_scores_lower_on_gap_data(self):
        ds, gt = generate(cfg(k=50, dim=64, seed=2))
        scores = np.array(
            [
                known_center_score(ds.vectors[r].astype(np.float64), int(ds.identities[r]), gt)
                for r in range(ds.n)
            ]
        )
        assert scores[ds.membership == 1].mean() < scores[ds.membership == 0].mean()


class TestOracle:
    def test_threshold_sweep_separable_toy(self):
        scores = np.array([0.1, 0.2, 0.8, 0.9])
        labels = np.array([1, 1, 0, 0], dtype=np.uint8)
        thr = sweep_threshold(scores, labels)
        assert 0.2 < thr < 0.8
        assert (((scores <= thr).astype(np.uint8) == labels).mean()) == 1.0

    def test_null_asr_near_half(self):
        ds, gt = generate(cfg(k=20, dim=16, sigma_train=0.2, sigma_test=0.2,
                              per_identity_members=150, per_identity_nonmembers=150, seed=6))
        ds = simmia.assign_splits(ds, simmia.SplitCounts(700, 700, 1400, 1400, 500), seed=7)
        rep = oracle_threshold_attack(ds, gt, "gaussian")
        assert 0.47 <= rep.asr <= 0.53

    def test_gap_asr_above_070(self):
        ds, gt = generate(cfg(k=50, dim=64, per_identity_members=90,
                              per_identity_nonmembers=90, seed=9))
        ds = simmia.assign_splits(ds, simmia.SplitCounts(1000, 1000, 1500, 1500, 500), seed=10)
        rep = oracle_threshold_attack(ds, gt, "inverse_distance")
        assert rep.asr > 0.70
        # the fixed-bandwidth gaussian kernel normalizes away the shared
        # norm shift, so it only has to beat chance here
        rep_g = oracle_threshold_attack(ds, gt, "gaussian")
        assert rep_g.asr > 0.55

    def test_missing_identities_rejected(self):
        ds, gt = generate(cfg())
        stripped = simmia.make_dataset(ds.vectors, membership=list(ds.membership))
        stripped = simmia.assign_splits(stripped, simmia.SplitCounts(5, 5, 5, 5, 5), seed=0)
        with pytest.raises(ValueError, match="identity"):
            oracle_threshold_attack(stripped, gt)

    def test_gap_monotone_in_sigma_ratio(self):
        # oracle ASR averaged over 5 seeds is non-decreasing in sigma_test/sigma_train
        means = []
        for ratio in (1.0, 2.0, 3.0):
            asrs = []
            for seed in range(5):
                ds, gt = generate(cfg(k=20, dim=16, sigma_train=0.1,
                                      sigma_test=0.1 * ratio,
                                      per_identity_members=60,
                                      per_identity_nonmembers=60, seed=seed))
                ds = simmia.assign_splits(
                    ds, simmia.SplitCounts(300, 300, 500, 500, 200), seed=seed + 50
                )
                asrs.append(oracle_threshold_attack(ds, gt).asr)
            means.append(np.mean(asrs))
        assert means[0] <= means[1] <= means[2]
