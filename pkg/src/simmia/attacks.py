"""The similarity-distribution attack, its anchor-selector variant, and the
feature, proxy-loss, and user-level baselines.

Every learned attack shares the same MLP backbone (four tanh hidden layers,
sigmoid output) with the input width set by its feature kind: N anchor
distances for sd/as_sd, the K-dimensional embedding for fe, and a fixed
4-value intra-class summary for the user-level variants. Inputs are
standardized with affine parameters fitted on attack_train; the
standardization is part of the trained model and travels with checkpoints.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import FormatError, TrainingError
from .evalreport import EvalReport, build_report, sweep_threshold
from .similarity import ReferenceSet, SimilarityVector, distance_matrix, similarity_vector
from .store import (
    IDENTITY_ABSENT,
    MEMBERSHIP_ABSENT,
    EmbeddingDataset,
    EmbeddingRecord,
    Split,
)
from . import tinynet
from .tinynet import DenseLayer, TrainConfig

KIND_SD = "sd"
KIND_AS_SD = "as_sd"
KIND_FE = "fe"
KIND_TLOSS = "tloss"
KIND_U = "u"

U_VARIANT_POSITIVES = {"low": 2, "mid": 4}  # "high" uses every positive
U_FEATURE_WIDTH = 4

ALL_KIND_NAMES = ("sd", "as_sd", "fe", "tloss", "u_low", "u_mid", "u_high")


def parse_kind(name: str) -> Tuple[str, Optional[str]]:
    """Map a CLI kind name onto (kind, u_variant)."""
    if name in (KIND_SD, KIND_AS_SD, KIND_FE, KIND_TLOSS):
        return name, None
    if name.startswith("u_") and name[2:] in ("low", "mid", "high"):
        return KIND_U, name[2:]
    raise ValueError(f"unknown attack kind {name!r}")


def kind_name(kind: str, u_variant: Optional[str]) -> str:
    return f"u_{u_variant}" if kind == KIND_U else kind


@dataclass(frozen=True)
class FeatureNorm:
    """Per-feature affine standardization fitted on attack_train."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "FeatureNorm":
        x = np.asarray(x, dtype=np.float64)
        std = x.std(axis=0)
        return cls(mean=x.mean(axis=0), std=np.maximum(std, 1e-12))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


@dataclass(frozen=True)
class AttackConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    hidden_width: int = 512
    hidden_layers: int = 4
    margin: float = 0.3
    max_negatives: int = 100
    sample_seed: int = 0

    def with_seed(self, seed: int) -> "AttackConfig":
        return replace(self, train=replace(self.train, seed=seed), sample_seed=seed)


@dataclass
class AttackModel:
    kind: str
    u_variant: Optional[str] = None
    net: Optional[List[DenseLayer]] = None
    selector: Optional[List[DenseLayer]] = None
    refs: Optional[ReferenceSet] = None
    threshold: Optional[float] = None
    feature_norm: Optional[FeatureNorm] = None
    embed_norm: Optional[FeatureNorm] = None
    margin: float = 0.3
    max_negatives: int = 100
    sample_seed: int = 0
    loss_curve: List[float] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Feature constructions
# ---------------------------------------------------------------------------


def sd_features(target: EmbeddingRecord, refs: ReferenceSet, ds: EmbeddingDataset) -> np.ndarray:
    """The anchor-distance vector, in anchor order."""
    return similarity_vector(target, refs, ds).values


def selector_weights(target_embedding: np.ndarray, selector: Sequence[DenseLayer]) -> np.ndarray:
    """Per-anchor weights in (0,1): sigmoid over the two-layer selector."""
    out, _ = tinynet.forward(selector, np.asarray(target_embedding, dtype=np.float64))
    return out


def rescale(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Elementwise product of selector weights and the similarity vector."""
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if w.shape != v.shape:
        raise ValueError(f"weight/vector length mismatch: {w.shape} vs {v.shape}")
    return w * v


def _positives_of(ds: EmbeddingDataset, row_id: int) -> np.ndarray:
    identity = int(ds.identities[row_id])
    if identity == IDENTITY_ABSENT:
        raise ValueError(f"row {row_id} has no identity label")
    pos = np.flatnonzero(ds.identities == identity)
    return pos[pos != row_id]


def _pairwise_sq(points: np.ndarray) -> np.ndarray:
    g = points @ points.T
    sq = np.diag(g)
    d = sq[:, None] - 2.0 * g + sq[None, :]
    return np.maximum(d, 0.0)


def u_features(
    target: EmbeddingRecord,
    ds: EmbeddingDataset,
    variant: str,
    seed: int = 0,
) -> np.ndarray:
    """[mean, std, min, max] of intra-class squared distances.

    The pair set covers the target plus the sampled positives; low/mid sample
    2/4 positives without replacement (seeded per target), high uses all.
    """
    if variant not in ("low", "mid", "high"):
        raise ValueError(f"unknown user-level variant {variant!r}")
    pos = _positives_of(ds, target.row_id)
    if variant == "high":
        if pos.size < 1:
            raise ValueError(f"row {target.row_id}: no positives share its identity")
        chosen = np.sort(pos)
    else:
        need = U_VARIANT_POSITIVES[variant]
        if pos.size < need:
            raise ValueError(
                f"row {target.row_id}: needs {need} positives, only {pos.size} available"
            )
        rng = np.random.default_rng((seed, target.row_id))
        chosen = rng.permutation(np.sort(pos))[:need]
    points = np.vstack(
        [np.asarray(target.vector, dtype=np.float64), ds.vectors[chosen].astype(np.float64)]
    )
    d = _pairwise_sq(points)
    iu = np.triu_indices(points.shape[0], k=1)
    vals = d[iu]
    return np.array([vals.mean(), vals.std(), vals.min(), vals.max()])


def tloss_score(
    target: EmbeddingRecord,
    ds: EmbeddingDataset,
    seed: int = 0,
    margin: float = 0.3,
    max_negatives: int = 100,
) -> float:
    """Mean triplet hinge with the target as anchor.

    Positives are every other row of the target's identity; negatives are a
    seeded sample of other-identity rows, at most ``max_negatives``.
    Distances are squared Euclidean, matching the rest of the toolkit.
    """
    pos = _positives_of(ds, target.row_id)
    if pos.size == 0:
        raise ValueError(f"row {target.row_id}: no positive with the same identity")
    identity = int(ds.identities[target.row_id])
    neg_pool = np.flatnonzero(
        (ds.identities != identity) & (ds.identities != IDENTITY_ABSENT)
    )
    if neg_pool.size == 0:
        raise ValueError(f"row {target.row_id}: no other-identity rows to sample")
    if neg_pool.size > max_negatives:
        rng = np.random.default_rng((seed, target.row_id))
        neg = rng.permutation(neg_pool)[:max_negatives]
    else:
        neg = neg_pool

    anchor = np.asarray(target.vector, dtype=np.float64)
    dp = ((ds.vectors[np.sort(pos)].astype(np.float64) - anchor) ** 2).sum(axis=1)
    dn = ((ds.vectors[np.sort(neg)].astype(np.float64) - anchor) ** 2).sum(axis=1)
    hinge = np.maximum(0.0, dp[:, None] - dn[None, :] + margin)
    return float(hinge.mean())


def _feature_matrix(
    kind: str,
    ds: EmbeddingDataset,
    rows: np.ndarray,
    refs: Optional[ReferenceSet],
    u_variant: Optional[str],
    sample_seed: int,
) -> np.ndarray:
    if kind in (KIND_SD, KIND_AS_SD):
        if refs is None:
            raise ValueError(f"{kind} needs a reference set")
        return distance_matrix(rows, refs, ds)
    if kind == KIND_FE:
        return ds.vectors[rows].astype(np.float64)
    if kind == KIND_U:
        out = np.empty((rows.size, U_FEATURE_WIDTH))
        for i, r in enumerate(rows):
            out[i] = u_features(ds.record(int(r)), ds, u_variant, sample_seed)
        return out
    raise ValueError(f"no feature matrix for kind {kind!r}")


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _attack_train_rows(ds: EmbeddingDataset) -> Tuple[np.ndarray, np.ndarray]:
    rows = ds.rows_in_split(Split.ATTACK_TRAIN)
    if rows.size == 0:
        raise ValueError("attack_train split is empty")
    labels = ds.membership[rows].astype(np.uint8)
    if not (labels == 1).any() or not (labels == 0).any():
        raise ValueError("attack_train split must contain both classes")
    return rows, labels


def _mlp_sizes(input_width: int, config: AttackConfig) -> Tuple[List[int], List[str]]:
    sizes = [input_width] + [config.hidden_width] * config.hidden_layers + [1]
    acts = ["tanh"] * config.hidden_layers + ["sigmoid"]
    return sizes, acts


def _train_plain(
    kind: str,
    ds: EmbeddingDataset,
    refs: Optional[ReferenceSet],
    config: AttackConfig,
    u_variant: Optional[str],
) -> AttackModel:
    rows, labels = _attack_train_rows(ds)
    feats = _feature_matrix(kind, ds, rows, refs, u_variant, config.sample_seed)
    norm = FeatureNorm.fit(feats)
    sizes, acts = _mlp_sizes(feats.shape[1], config)
    net = tinynet.make_mlp(sizes, acts, config.train.seed)
    net, curve = tinynet.train(net, norm.apply(feats), labels, config.train)
    return AttackModel(
        kind=kind,
        u_variant=u_variant,
        net=net,
        refs=refs if kind == KIND_SD else None,
        feature_norm=norm,
        margin=config.margin,
        max_negatives=config.max_negatives,
        sample_seed=config.sample_seed,
        loss_curve=curve,
    )


def _train_as_sd(ds: EmbeddingDataset, refs: ReferenceSet, config: AttackConfig) -> AttackModel:
    """Joint end-to-end training of the anchor selector and the MLP."""
    rows, labels = _attack_train_rows(ds)
    v = distance_matrix(rows, refs, ds)
    x = ds.vectors[rows].astype(np.float64)
    vnorm = FeatureNorm.fit(v)
    xnorm = FeatureNorm.fit(x)
    vstd = vnorm.apply(v)
    xstd = xnorm.apply(x)
    y = labels.astype(np.float64)

    k_dim = ds.dim
    n_anchors = refs.n
    rng = np.random.default_rng(config.train.seed)
    selector = tinynet.init_layers([k_dim, k_dim, n_anchors], ["tanh", "sigmoid"], rng)
    sizes, acts = _mlp_sizes(n_anchors, config)
    net = tinynet.init_layers(sizes, acts, rng)

    params = tinynet.net_params(selector) + tinynet.net_params(net)
    opt = tinynet.make_optimizer(params, config.train)
    order_rng = np.random.default_rng(config.train.seed)
    n = rows.size
    curve: List[float] = []
    for epoch in range(config.train.epochs):
        order = order_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.train.batch_size):
            idx = order[start : start + config.train.batch_size]
            xb, vb, yb = xstd[idx], vstd[idx], y[idx]
            w, tape_s = tinynet.forward(selector, xb)
            u = w * vb
            out, tape_m = tinynet.forward(net, u)
            p = out[:, 0]
            losses, dldp = tinynet.bce_loss(p, yb)
            batch_loss = float(losses.mean())
            if not np.isfinite(batch_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            total += float(losses.sum())
            grad_out = (dldp / len(idx))[:, None]
            mlp_grads, g_u = tinynet.backward(net, tape_m, grad_out)
            sel_grads, _ = tinynet.backward(selector, tape_s, g_u * vb)
            flat = [g for pair in sel_grads for g in pair]
            flat += [g for pair in mlp_grads for g in pair]
            opt.step(params, flat)
        curve.append(total / n)

    return AttackModel(
        kind=KIND_AS_SD,
        net=net,
        selector=selector,
        refs=refs,
        feature_norm=vnorm,
        embed_norm=xnorm,
        margin=config.margin,
        max_negatives=config.max_negatives,
        sample_seed=config.sample_seed,
        loss_curve=curve,
    )


def _train_tloss(ds: EmbeddingDataset, config: AttackConfig) -> AttackModel:
    rows, labels = _attack_train_rows(ds)
    scores = np.array(
        [
            tloss_score(ds.record(int(r)), ds, config.sample_seed, config.margin, config.max_negatives)
            for r in rows
        ]
    )
    thr = sweep_threshold(scores, labels)
    return AttackModel(
        kind=KIND_TLOSS,
        threshold=thr,
        margin=config.margin,
        max_negatives=config.max_negatives,
        sample_seed=config.sample_seed,
    )


def train_attack(
    kind: str,
    ds: EmbeddingDataset,
    refs: Optional[ReferenceSet],
    config: Optional[AttackConfig] = None,
) -> AttackModel:
    """Train one attack. ``kind`` accepts the CLI names, including u_low/u_mid/u_high."""
    config = config or AttackConfig()
    base, u_variant = parse_kind(kind)
    if base in (KIND_TLOSS, KIND_U) and not ds.has_identity:
        raise ValueError(f"{kind} needs identity labels")
    if base == KIND_AS_SD:
        if refs is None:
            raise ValueError("as_sd needs a reference set")
        return _train_as_sd(ds, refs, config)
    if base == KIND_TLOSS:
        return _train_tloss(ds, config)
    return _train_plain(base, ds, refs, config, u_variant)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def scores_for_rows(model: AttackModel, ds: EmbeddingDataset, rows: np.ndarray) -> np.ndarray:
    """Member-evidence scores in [0,1] for many rows at once."""
    rows = np.asarray(rows, dtype=np.int64)
    if model.kind == KIND_TLOSS:
        raw = np.array(
            [
                tloss_score(ds.record(int(r)), ds, model.sample_seed, model.margin, model.max_negatives)
                for r in rows
            ]
        )
        return 1.0 / (1.0 + np.exp(raw - model.threshold))
    if model.kind == KIND_AS_SD:
        v = distance_matrix(rows, model.refs, ds)
        x = ds.vectors[rows].astype(np.float64)
        w, _ = tinynet.forward(model.selector, model.embed_norm.apply(x))
        u = w * model.feature_norm.apply(v)
        out, _ = tinynet.forward(model.net, u)
        return out[:, 0]
    feats = _feature_matrix(model.kind, ds, rows, model.refs, model.u_variant, model.sample_seed)
    out, _ = tinynet.forward(model.net, model.feature_norm.apply(feats))
    return out[:, 0]


def infer(model: AttackModel, target: EmbeddingRecord, ds: EmbeddingDataset) -> Tuple[float, int]:
    """Score one target; decision 1 means "member" (score >= 0.5)."""
    score = float(scores_for_rows(model, ds, np.array([target.row_id]))[0])
    return score, int(score >= 0.5)


def evaluate_attack(
    model: AttackModel, ds: EmbeddingDataset, rows: Optional[np.ndarray] = None
) -> EvalReport:
    """EvalReport over attack_eval (or explicit rows with membership labels)."""
    if rows is None:
        rows = ds.rows_in_split(Split.ATTACK_EVAL)
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("no rows to evaluate")
    truth = ds.membership[rows]
    if (truth == MEMBERSHIP_ABSENT).any():
        raise ValueError("evaluation rows must all carry membership labels")
    scores = scores_for_rows(model, ds, rows)
    decisions = (scores >= 0.5).astype(np.uint8)
    return build_report(
        member_scores=scores,
        decisions=decisions,
        truth=truth.astype(np.uint8),
        meta={
            "attack": kind_name(model.kind, model.u_variant),
            "n_eval": int(rows.size),
            "n_anchors": model.refs.n if model.refs is not None else 0,
        },
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"ATK1"
CHECKPOINT_VERSION = 1

_KIND_CODES = {KIND_SD: 0, KIND_AS_SD: 1, KIND_FE: 2, KIND_TLOSS: 3, KIND_U: 4}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
_VARIANT_CODES = {None: 255, "low": 0, "mid": 1, "high": 2}
_VARIANT_NAMES = {v: k for k, v in _VARIANT_CODES.items()}


def _write_norm(fh, norm: Optional[FeatureNorm]) -> None:
    if norm is None:
        fh.write(struct.pack("<I", 0))
        return
    fh.write(struct.pack("<I", norm.mean.size))
    fh.write(np.ascontiguousarray(norm.mean, dtype="<f8").tobytes())
    fh.write(np.ascontiguousarray(norm.std, dtype="<f8").tobytes())


def _read_norm(fh) -> Optional[FeatureNorm]:
    (size,) = struct.unpack("<I", fh.read(4))
    if size == 0:
        return None
    mean = np.frombuffer(fh.read(8 * size), dtype="<f8").copy()
    std = np.frombuffer(fh.read(8 * size), dtype="<f8").copy()
    return FeatureNorm(mean=mean, std=std)


def save_model(model: AttackModel, path: Union[str, Path]) -> None:
    """Versioned binary checkpoint; includes the bound anchor row ids."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<H", CHECKPOINT_VERSION))
    buf.write(
        struct.pack(
            "<BBBBB",
            _KIND_CODES[model.kind],
            _VARIANT_CODES[model.u_variant],
            1 if model.net is not None else 0,
            1 if model.selector is not None else 0,
            1 if model.refs is not None else 0,
        )
    )
    thr = model.threshold if model.threshold is not None else float("nan")
    buf.write(struct.pack("<ddIq", thr, model.margin, model.max_negatives, model.sample_seed))
    if model.net is not None:
        tinynet.write_layers(buf, model.net)
    if model.selector is not None:
        tinynet.write_layers(buf, model.selector)
    if model.refs is not None:
        buf.write(struct.pack("<qdQ", model.refs.seed, model.refs.fraction, model.refs.n))
        buf.write(np.ascontiguousarray(model.refs.row_ids, dtype="<i8").tobytes())
    _write_norm(buf, model.feature_norm)
    _write_norm(buf, model.embed_norm)
    Path(path).write_bytes(buf.getvalue())


def load_model(path: Union[str, Path]) -> AttackModel:
    raw = Path(path).read_bytes()
    fh = io.BytesIO(raw)
    if fh.read(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not an attack checkpoint")
    (version,) = struct.unpack("<H", fh.read(2))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    kind_code, var_code, has_net, has_sel, has_refs = struct.unpack("<BBBBB", fh.read(5))
    thr, margin, max_neg, sample_seed = struct.unpack(
        "<ddIq", fh.read(struct.calcsize("<ddIq"))
    )
    net = tinynet.read_layers(fh) if has_net else None
    selector = tinynet.read_layers(fh) if has_sel else None
    refs = None
    if has_refs:
        seed, fraction, n = struct.unpack("<qdQ", fh.read(24))
        row_ids = np.frombuffer(fh.read(8 * n), dtype="<i8").copy()
        refs = ReferenceSet(row_ids=row_ids, seed=seed, fraction=fraction)
    feature_norm = _read_norm(fh)
    embed_norm = _read_norm(fh)
    return AttackModel(
        kind=_KIND_NAMES[kind_code],
        u_variant=_VARIANT_NAMES[var_code],
        net=net,
        selector=selector,
        refs=refs,
        threshold=None if np.isnan(thr) else float(thr),
        feature_norm=feature_norm,
        embed_norm=embed_norm,
        margin=margin,
        max_negatives=max_neg,
        sample_seed=sample_seed,
    )
