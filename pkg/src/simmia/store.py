"""Embedding dataset model and its on-disk containers.

Datasets are immutable after construction: every mutating operation returns a
new instance. Vectors are held as float32 (the container precision); all
downstream arithmetic converts to float64. A record's absent identity is
encoded as -1 and absent membership as 255, matching the binary container.
"""
from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .errors import CapacityError, FormatError

MAGIC = b"EMB1"
CONTAINER_VERSION = 1

FLAG_IDENTITY = 0x1
FLAG_MEMBERSHIP = 0x2
FLAG_SPLIT = 0x4

IDENTITY_ABSENT = -1
MEMBERSHIP_ABSENT = 255


class Split(IntEnum):
    ATTACK_TRAIN = 0
    ATTACK_EVAL = 1
    REFERENCE_POOL = 2
    UNLABELED = 3


SPLIT_NAMES = {
    "attack_train": Split.ATTACK_TRAIN,
    "attack_eval": Split.ATTACK_EVAL,
    "reference_pool": Split.REFERENCE_POOL,
    "unlabeled": Split.UNLABELED,
}
SPLIT_TO_NAME = {v: k for k, v in SPLIT_NAMES.items()}


@dataclass(frozen=True)
class EmbeddingRecord:
    """One row of a dataset, materialized on demand."""

    row_id: int
    vector: np.ndarray  # float32, length dim
    identity: Optional[int]
    membership: Optional[int]
    split: Split


@dataclass(frozen=True)
class EmbeddingDataset:
    """Columnar store of embedding rows.

    ``vectors`` is (n, dim) float32; ``identities`` is (n,) int32 with -1 for
    absent; ``membership`` is (n,) uint8 with 255 for absent; ``splits`` is
    (n,) uint8 of :class:`Split` values. Provenance is free text and is not
    persisted by the binary container.
    """

    vectors: np.ndarray
    identities: np.ndarray
    membership: np.ndarray
    splits: np.ndarray
    provenance: str = ""

    @property
    def n(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def has_identity(self) -> bool:
        return bool((self.identities != IDENTITY_ABSENT).any())

    @property
    def has_membership(self) -> bool:
        return bool((self.membership != MEMBERSHIP_ABSENT).any())

    def record(self, row_id: int) -> EmbeddingRecord:
        if not 0 <= row_id < self.n:
            raise IndexError(f"row_id {row_id} out of range [0, {self.n})")
        ident = int(self.identities[row_id])
        memb = int(self.membership[row_id])
        return EmbeddingRecord(
            row_id=row_id,
            vector=self.vectors[row_id],
            identity=None if ident == IDENTITY_ABSENT else ident,
            membership=None if memb == MEMBERSHIP_ABSENT else memb,
            split=Split(int(self.splits[row_id])),
        )

    def records(self) -> Iterator[EmbeddingRecord]:
        for i in range(self.n):
            yield self.record(i)

    def rows_in_split(self, split: Split) -> np.ndarray:
        return np.flatnonzero(self.splits == int(split))

    def with_splits(self, splits: np.ndarray) -> "EmbeddingDataset":
        return replace(self, splits=np.asarray(splits, dtype=np.uint8))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingDataset):
            return NotImplemented
        return (
            self.vectors.shape == other.vectors.shape
            and np.array_equal(self.vectors, other.vectors)
            and np.array_equal(self.identities, other.identities)
            and np.array_equal(self.membership, other.membership)
            and np.array_equal(self.splits, other.splits)
            and self.provenance == other.provenance
        )


def make_dataset(
    vectors: np.ndarray,
    identities: Optional[Sequence[Optional[int]]] = None,
    membership: Optional[Sequence[Optional[int]]] = None,
    splits: Optional[Sequence[Union[int, Split]]] = None,
    provenance: str = "",
) -> EmbeddingDataset:
    """Build and validate a dataset from per-column values.

    ``None`` entries in identities/membership mean "absent".
    """
    vec = np.ascontiguousarray(np.asarray(vectors, dtype=np.float32))
    if vec.ndim != 2:
        raise FormatError(f"vectors must be 2-D, got shape {vec.shape}")
    n = vec.shape[0]

    if identities is None:
        ident = np.full(n, IDENTITY_ABSENT, dtype=np.int32)
    else:
        ident = np.array(
            [IDENTITY_ABSENT if v is None else int(v) for v in identities],
            dtype=np.int32,
        )
    if membership is None:
        memb = np.full(n, MEMBERSHIP_ABSENT, dtype=np.uint8)
    else:
        memb = np.array(
            [MEMBERSHIP_ABSENT if v is None else int(v) for v in membership],
            dtype=np.uint8,
        )
    if splits is None:
        spl = np.full(n, int(Split.UNLABELED), dtype=np.uint8)
    else:
        spl = np.array([int(v) for v in splits], dtype=np.uint8)

    ds = EmbeddingDataset(vec, ident, memb, spl, provenance)
    validate_dataset(ds)
    return ds


def validate_dataset(ds: EmbeddingDataset) -> None:
    """Check every dataset invariant; raise FormatError naming the first violation."""
    n, dim = ds.vectors.shape
    if dim < 1:
        raise FormatError("dataset dimension must be at least 1")
    for name, col, dtype in (
        ("identities", ds.identities, np.int32),
        ("membership", ds.membership, np.uint8),
        ("splits", ds.splits, np.uint8),
    ):
        if col.shape != (n,):
            raise FormatError(f"{name} column has shape {col.shape}, expected ({n},)")
        if col.dtype != dtype:
            raise FormatError(f"{name} column has dtype {col.dtype}, expected {dtype}")

    bad = ~np.isfinite(ds.vectors)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise FormatError(f"non-finite vector entry at row {row}")

    present = ds.identities[ds.identities != IDENTITY_ABSENT]
    if present.size:
        if present.min() < 0:
            row = int(np.flatnonzero((ds.identities != IDENTITY_ABSENT) & (ds.identities < 0))[0])
            raise FormatError(f"negative identity at row {row}")
        alphabet = np.unique(present)
        k = int(alphabet[-1]) + 1
        if alphabet.size != k:
            missing = sorted(set(range(k)) - set(int(a) for a in alphabet))
            raise FormatError(
                f"identity alphabet is not dense: {alphabet.size} labels, max {k - 1}, "
                f"missing {missing[:5]}"
            )

    bad_memb = ~np.isin(ds.membership, (0, 1, MEMBERSHIP_ABSENT))
    if bad_memb.any():
        row = int(np.flatnonzero(bad_memb)[0])
        raise FormatError(f"membership at row {row} is not 0, 1, or absent")

    bad_split = ds.splits > int(Split.UNLABELED)
    if bad_split.any():
        row = int(np.flatnonzero(bad_split)[0])
        raise FormatError(f"unknown split value {int(ds.splits[row])} at row {row}")

    attack = np.isin(ds.splits, (int(Split.ATTACK_TRAIN), int(Split.ATTACK_EVAL)))
    missing_memb = attack & (ds.membership == MEMBERSHIP_ABSENT)
    if missing_memb.any():
        row = int(np.flatnonzero(missing_memb)[0])
        raise FormatError(f"attack-split row {row} has no membership bit")


def num_identities(ds: EmbeddingDataset) -> int:
    present = ds.identities[ds.identities != IDENTITY_ABSENT]
    return 0 if present.size == 0 else int(present.max()) + 1


# ---------------------------------------------------------------------------
# EMB1 binary container
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sHHQI")


def save_dataset(ds: EmbeddingDataset, path: Union[str, Path]) -> None:
    """Write the EMB1 container. Byte-deterministic for equal datasets."""
    validate_dataset(ds)
    flags = FLAG_SPLIT
    if ds.has_identity:
        flags |= FLAG_IDENTITY
    if ds.has_membership:
        flags |= FLAG_MEMBERSHIP

    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, CONTAINER_VERSION, flags, ds.n, ds.dim))
    buf.write(np.ascontiguousarray(ds.vectors, dtype="<f4").tobytes())
    if flags & FLAG_IDENTITY:
        buf.write(np.ascontiguousarray(ds.identities, dtype="<i4").tobytes())
    if flags & FLAG_MEMBERSHIP:
        buf.write(np.ascontiguousarray(ds.membership, dtype=np.uint8).tobytes())
    if flags & FLAG_SPLIT:
        buf.write(np.ascontiguousarray(ds.splits, dtype=np.uint8).tobytes())
    Path(path).write_bytes(buf.getvalue())


def _load_container(path: Path) -> EmbeddingDataset:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, flags, n, dim = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")

    expected = _HEADER.size + n * dim * 4
    if flags & FLAG_IDENTITY:
        expected += n * 4
    if flags & FLAG_MEMBERSHIP:
        expected += n
    if flags & FLAG_SPLIT:
        expected += n
    if len(raw) != expected:
        raise FormatError(f"{path}: size {len(raw)} does not match header (expected {expected})")

    off = _HEADER.size
    vec = np.frombuffer(raw, dtype="<f4", count=n * dim, offset=off).reshape(n, dim)
    off += n * dim * 4
    if flags & FLAG_IDENTITY:
        ident = np.frombuffer(raw, dtype="<i4", count=n, offset=off).astype(np.int32)
        off += n * 4
    else:
        ident = np.full(n, IDENTITY_ABSENT, dtype=np.int32)
    if flags & FLAG_MEMBERSHIP:
        memb = np.frombuffer(raw, dtype=np.uint8, count=n, offset=off).copy()
        off += n
    else:
        memb = np.full(n, MEMBERSHIP_ABSENT, dtype=np.uint8)
    if flags & FLAG_SPLIT:
        spl = np.frombuffer(raw, dtype=np.uint8, count=n, offset=off).copy()
    else:
        spl = np.full(n, int(Split.UNLABELED), dtype=np.uint8)

    ds = EmbeddingDataset(vec.astype(np.float32), ident, memb, spl)
    validate_dataset(ds)
    return ds


# ---------------------------------------------------------------------------
# Text ingestion formats
# ---------------------------------------------------------------------------


def _parse_optional_int(text: str, what: str, row: int) -> Optional[int]:
    text = text.strip()
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        raise FormatError(f"row {row}: invalid {what} {text!r}") from None


def _parse_split(text: str, row: int) -> Split:
    text = text.strip()
    if text == "":
        return Split.UNLABELED
    if text not in SPLIT_NAMES:
        raise FormatError(f"row {row}: unknown split {text!r}")
    return SPLIT_NAMES[text]


def _finalize_rows(rows: list, path: Path) -> EmbeddingDataset:
    if not rows:
        raise FormatError(f"{path}: no records")
    ids = [r[0] for r in rows]
    if sorted(ids) != list(range(len(rows))):
        raise FormatError(f"{path}: id column is not a dense permutation of [0, {len(rows)})")
    rows.sort(key=lambda r: r[0])
    vec = np.array([r[1] for r in rows], dtype=np.float32)
    ds = make_dataset(
        vec,
        identities=[r[2] for r in rows],
        membership=[r[3] for r in rows],
        splits=[r[4] for r in rows],
    )
    return ds


def _load_csv(path: Path) -> EmbeddingDataset:
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if len(header) < 5 or header[:4] != ["id", "identity", "membership", "split"]:
            raise FormatError(f"{path}: bad CSV header {header[:4]!r}")
        dim = len(header) - 4
        expected_f = [f"f{i}" for i in range(dim)]
        if header[4:] != expected_f:
            raise FormatError(f"{path}: feature columns must be f0..f{dim - 1}")

        rows = []
        for lineno, cells in enumerate(reader):
            if not cells:
                continue
            if len(cells) != 4 + dim:
                raise FormatError(
                    f"row {lineno}: expected {4 + dim} columns, got {len(cells)} "
                    f"(dimension mismatch)"
                )
            rid = _parse_optional_int(cells[0], "id", lineno)
            if rid is None:
                raise FormatError(f"row {lineno}: missing id")
            try:
                vec = [float(c) for c in cells[4:]]
            except ValueError:
                raise FormatError(f"row {lineno}: non-numeric feature value") from None
            if not all(np.isfinite(vec)):
                raise FormatError(f"row {lineno}: non-finite feature value")
            rows.append(
                (
                    rid,
                    vec,
                    _parse_optional_int(cells[1], "identity", lineno),
                    _parse_optional_int(cells[2], "membership", lineno),
                    _parse_split(cells[3], lineno),
                )
            )
    return _finalize_rows(rows, path)


def _load_jsonl(path: Path) -> EmbeddingDataset:
    rows = []
    dim = None
    with path.open() as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"row {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise FormatError(f"row {lineno}: record is not an object")
            if "id" not in obj:
                raise FormatError(f"row {lineno}: missing id")
            fkeys = sorted(
                (k for k in obj if k.startswith("f") and k[1:].isdigit()),
                key=lambda k: int(k[1:]),
            )
            if dim is None:
                dim = len(fkeys)
                if dim == 0:
                    raise FormatError(f"row {lineno}: no feature fields f0..fK-1")
            if [f"f{i}" for i in range(dim)] != fkeys:
                raise FormatError(
                    f"row {lineno}: expected features f0..f{dim - 1}, got {len(fkeys)} "
                    f"(dimension mismatch)"
                )
            vec = [float(obj[k]) for k in fkeys]
            if not all(np.isfinite(vec)):
                raise FormatError(f"row {lineno}: non-finite feature value")
            ident = obj.get("identity")
            memb = obj.get("membership")
            split_name = obj.get("split") or "unlabeled"
            if split_name not in SPLIT_NAMES:
                raise FormatError(f"row {lineno}: unknown split {split_name!r}")
            rows.append(
                (
                    int(obj["id"]),
                    vec,
                    None if ident is None else int(ident),
                    None if memb is None else int(memb),
                    SPLIT_NAMES[split_name],
                )
            )
    return _finalize_rows(rows, path)


def load_dataset(path: Union[str, Path], format: str = "container") -> EmbeddingDataset:
    """Load a dataset from the EMB1 container, CSV, or JSONL."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: no such file")
    if format == "container":
        return _load_container(path)
    if format == "csv":
        return _load_csv(path)
    if format == "jsonl":
        return _load_jsonl(path)
    raise FormatError(f"unknown dataset format {format!r}")


def save_csv(ds: EmbeddingDataset, path: Union[str, Path]) -> None:
    """Write the CSV text form (mainly for inspection and ingest tests)."""
    validate_dataset(ds)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "identity", "membership", "split"] + [f"f{i}" for i in range(ds.dim)])
        for rec in ds.records():
            writer.writerow(
                [
                    rec.row_id,
                    "" if rec.identity is None else rec.identity,
                    "" if rec.membership is None else rec.membership,
                    SPLIT_TO_NAME[rec.split],
                ]
                + [repr(v.item()) for v in rec.vector]
            )


def save_jsonl(ds: EmbeddingDataset, path: Union[str, Path]) -> None:
    validate_dataset(ds)
    with Path(path).open("w") as fh:
        for rec in ds.records():
            obj = {
                "id": rec.row_id,
                "identity": rec.identity,
                "membership": rec.membership,
                "split": SPLIT_TO_NAME[rec.split],
            }
            for i, v in enumerate(rec.vector):
                obj[f"f{i}"] = v.item()
            fh.write(json.dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# Split assignment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitCounts:
    attack_train_members: int
    attack_train_nonmembers: int
    attack_eval_members: int
    attack_eval_nonmembers: int
    reference_pool: int


def assign_splits(ds: EmbeddingDataset, counts: SplitCounts, seed: int) -> EmbeddingDataset:
    """Assign disjoint split tags by seeded sampling without replacement.

    Attack splits draw from the labeled member/non-member populations; the
    reference pool draws from whatever rows remain (any membership status).
    Rows not selected anywhere are tagged unlabeled.
    """
    for name, value in vars(counts).items():
        if value < 0:
            raise CapacityError(f"split count {name} must be non-negative, got {value}")

    members = np.flatnonzero(ds.membership == 1)
    nonmembers = np.flatnonzero(ds.membership == 0)
    need_m = counts.attack_train_members + counts.attack_eval_members
    need_n = counts.attack_train_nonmembers + counts.attack_eval_nonmembers
    if len(members) < need_m:
        raise CapacityError(
            f"need {need_m} member rows, dataset has {len(members)} "
            f"(short {need_m - len(members)})"
        )
    if len(nonmembers) < need_n:
        raise CapacityError(
            f"need {need_n} non-member rows, dataset has {len(nonmembers)} "
            f"(short {need_n - len(nonmembers)})"
        )

    rng = np.random.default_rng(seed)
    perm_m = rng.permutation(members)
    perm_n = rng.permutation(nonmembers)

    splits = np.full(ds.n, int(Split.UNLABELED), dtype=np.uint8)
    atm, aem = counts.attack_train_members, counts.attack_eval_members
    atn, aen = counts.attack_train_nonmembers, counts.attack_eval_nonmembers
    splits[perm_m[:atm]] = int(Split.ATTACK_TRAIN)
    splits[perm_m[atm:atm + aem]] = int(Split.ATTACK_EVAL)
    splits[perm_n[:atn]] = int(Split.ATTACK_TRAIN)
    splits[perm_n[atn:atn + aen]] = int(Split.ATTACK_EVAL)

    remaining = np.flatnonzero(splits == int(Split.UNLABELED))
    if len(remaining) < counts.reference_pool:
        raise CapacityError(
            f"need {counts.reference_pool} reference-pool rows, only "
            f"{len(remaining)} remain (short {counts.reference_pool - len(remaining)})"
        )
    pool = rng.permutation(remaining)[: counts.reference_pool]
    splits[pool] = int(Split.REFERENCE_POOL)

    out = ds.with_splits(splits)
    validate_dataset(out)
    return out
