"""Synthetic embedding generator with a controllable generalization gap.

Identity clusters sit on a sphere; member samples are drawn with a tighter
spread than non-member samples, which is the distance-distribution shift the
attacks exploit. Two layouts are supported:

``mixed``
    every identity cluster holds both member and non-member rows, so neither
    location nor identity carries any membership information by itself;

``coherent``
    each identity is wholly member or wholly non-member (alternating), the
    way retrieval benchmarks split people between train and test; this is the
    regime where identity-level (user-level) attacks are meaningful.

Per-identity noise scale and anisotropy knobs add nuisance variation so the
raw-embedding baseline cannot trivially separate the classes through vector
norms alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .evalreport import EvalReport, build_report, sweep_threshold
from .store import EmbeddingDataset, Split, make_dataset

KERNELS = ("inverse_distance", "gaussian")
INVERSE_DISTANCE_EPS = 1e-9


@dataclass(frozen=True)
class SynthConfig:
    k: int
    dim: int
    per_identity_members: int
    per_identity_nonmembers: int
    sigma_train: float
    sigma_test: float
    center_scale: float = 2.0
    seed: int = 0
    layout: str = "mixed"
    identity_scale_spread: float = 1.0
    anisotropy: float = 1.0
    outlier_fraction: float = 0.0
    outlier_scale: float = 3.0

    def __post_init__(self) -> None:
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if self.sigma_train < 0 or self.sigma_test < 0:
            raise ValueError("sigmas must be non-negative")
        if self.center_scale <= 0:
            raise ValueError("center_scale must be positive")
        if self.per_identity_members < 1 or self.per_identity_nonmembers < 1:
            raise ValueError("per-identity counts must be at least 1")
        if self.layout not in ("mixed", "coherent"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.layout == "coherent" and self.k % 2 != 0:
            raise ValueError("coherent layout needs an even number of identities")
        if self.identity_scale_spread < 1 or self.anisotropy < 1:
            raise ValueError("identity_scale_spread and anisotropy must be >= 1")
        if not 0.0 <= self.outlier_fraction < 1.0 or self.outlier_scale < 1.0:
            raise ValueError("outlier_fraction must be in [0, 1) and outlier_scale >= 1")


@dataclass(frozen=True)
class SynthGroundTruth:
    centers: np.ndarray  # (k, dim) float64, exactly representable in float32
    config: SynthConfig


def generate(config: SynthConfig) -> Tuple[EmbeddingDataset, SynthGroundTruth]:
    """Deterministically generate a dataset plus its identity centers."""
    rng = np.random.default_rng(config.seed)
    k, dim = config.k, config.dim

    raw = rng.standard_normal((k, dim))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    centers32 = (raw * config.center_scale).astype(np.float32)
    centers = centers32.astype(np.float64)

    spread = config.identity_scale_spread
    if spread > 1.0:
        scales = np.exp(rng.uniform(-math.log(spread), math.log(spread), k))
    else:
        scales = np.ones(k)

    maps = None
    if config.anisotropy > 1.0:
        la = math.log(config.anisotropy)
        maps = []
        for _ in range(k):
            q, _r = np.linalg.qr(rng.standard_normal((dim, dim)))
            lam = np.exp(rng.uniform(-la, la, dim))
            lam /= lam.mean()
            maps.append(q * np.sqrt(lam))

    def draw(identity: int, count: int, sigma: float) -> np.ndarray:
        if sigma == 0.0:
            return np.tile(centers[identity], (count, 1))
        noise = rng.standard_normal((count, dim))
        if maps is not None:
            noise = noise @ maps[identity].T
        if config.outlier_fraction > 0.0:
            hit = rng.random(count) < config.outlier_fraction
            noise[hit] *= config.outlier_scale
        return centers[identity] + sigma * scales[identity] * noise

    blocks, idents, membs = [], [], []

    def emit(identity: int, count: int, sigma: float, member: int) -> None:
        blocks.append(draw(identity, count, sigma))
        idents.extend([identity] * count)
        membs.extend([member] * count)

    for j in range(k):
        if config.layout == "mixed":
            emit(j, config.per_identity_members, config.sigma_train, 1)
            emit(j, config.per_identity_nonmembers, config.sigma_test, 0)
        else:
            if j % 2 == 0:
                emit(j, config.per_identity_members, config.sigma_train, 1)
            else:
                emit(j, config.per_identity_nonmembers, config.sigma_test, 0)

    ds = make_dataset(
        np.vstack(blocks).astype(np.float32),
        identities=idents,
        membership=membs,
        provenance=f"synthetic layout={config.layout} seed={config.seed}",
    )
    return ds, SynthGroundTruth(centers=centers, config=config)


def centers_dataset(gt: SynthGroundTruth) -> EmbeddingDataset:
    """Ground-truth sidecar: the centers in container layout, one row per identity."""
    k = gt.centers.shape[0]
    return make_dataset(
        gt.centers.astype(np.float32),
        identities=list(range(k)),
        provenance="synthetic ground-truth centers",
    )


def ground_truth_from_dataset(ds: EmbeddingDataset, config: SynthConfig) -> SynthGroundTruth:
    """Rebuild a ground truth from a sidecar written by centers_dataset."""
    return SynthGroundTruth(centers=ds.vectors.astype(np.float64), config=config)


def _center_similarities(x: np.ndarray, centers: np.ndarray, kernel: str) -> np.ndarray:
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    diff = centers - x
    sq = (diff * diff).sum(axis=1)
    if kernel == "gaussian":
        return np.exp(-sq / 2.0)
    return 1.0 / (INVERSE_DISTANCE_EPS + np.sqrt(sq))


def known_center_score(
    x: np.ndarray, y: int, gt: SynthGroundTruth, kernel: str = "inverse_distance"
) -> float:
    """Negative log share of the target's similarity mass at its own center.

    Lower scores indicate stronger member evidence: members sit nearer their
    own center, which makes the own-center share larger.
    """
    k = gt.centers.shape[0]
    if not 0 <= y < k:
        raise ValueError(f"identity {y} out of range [0, {k})")
    vec = np.asarray(x, dtype=np.float64)
    if vec.shape != (gt.centers.shape[1],):
        raise ValueError(f"vector shape {vec.shape} does not match centers")
    sims = _center_similarities(vec, gt.centers, kernel)
    return float(-np.log(sims[y] / sims.sum()))


def _score_rows(ds: EmbeddingDataset, rows: np.ndarray, gt: SynthGroundTruth, kernel: str) -> np.ndarray:
    out = np.empty(rows.size)
    for i, r in enumerate(rows):
        out[i] = known_center_score(
            ds.vectors[r].astype(np.float64), int(ds.identities[r]), gt, kernel
        )
    return out


def oracle_threshold_attack(
    ds: EmbeddingDataset, gt: SynthGroundTruth, kernel: str = "inverse_distance"
) -> EvalReport:
    """Known-center diagnostic attack: tune a threshold on attack_train scores,
    report on attack_eval."""
    if not ds.has_identity:
        raise ValueError("oracle attack needs identity labels")
    train_rows = ds.rows_in_split(Split.ATTACK_TRAIN)
    eval_rows = ds.rows_in_split(Split.ATTACK_EVAL)
    if train_rows.size == 0 or eval_rows.size == 0:
        raise ValueError("oracle attack needs populated attack splits")

    train_scores = _score_rows(ds, train_rows, gt, kernel)
    train_labels = ds.membership[train_rows].astype(np.uint8)
    thr = sweep_threshold(train_scores, train_labels)

    eval_scores = _score_rows(ds, eval_rows, gt, kernel)
    eval_labels = ds.membership[eval_rows].astype(np.uint8)
    decisions = (eval_scores <= thr).astype(np.uint8)
    return build_report(
        member_scores=-eval_scores,
        decisions=decisions,
        truth=eval_labels,
        meta={
            "attack": "oracle",
            "kernel": kernel,
            "threshold": thr,
            "synth_seed": gt.config.seed,
        },
    )
