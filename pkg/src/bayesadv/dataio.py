"""Labeled feature-vector datasets: file formats, synthetic data, scaling, splits.

Two on-disk formats are supported:

* CSV -- a header row, one column per feature, then a final ``label`` column.
* MB01 binary -- ``b"MB01"``, u32 version (=1), u64 n_samples, u32 n_features,
  ``n_samples`` label bytes, then row-major little-endian float32 features.

Features are held in memory as float64. The binary format stores float32, so
only float32-representable data survives a binary round trip unchanged;
:func:`synth_gen` produces data on that grid.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError

BIN_MAGIC = b"MB01"
BIN_VERSION = 1
_BIN_HEADER = struct.Struct("<4sIQI")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise DimensionError(f"features must be 2-D, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise DimensionError(
                f"{y.shape[0] if y.ndim == 1 else y.shape} labels for {x.shape[0]} rows"
            )
        if y.size and not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        x = x.copy()
        y = y.astype(np.int64)
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, idx, name: str | None = None) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.name if name is None else name)

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(features, self.labels, self.name)


@dataclass(frozen=True)
class NormStats:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).ravel()
        hi = np.asarray(self.max, dtype=np.float64).ravel()
        if lo.shape != hi.shape:
            raise DimensionError("min and max must have the same length")
        if np.any(lo > hi):
            raise ValueError("NormStats requires min <= max for every feature")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def identity(cls, dim: int) -> "NormStats":
        return cls(np.zeros(dim), np.ones(dim))

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["min"], dtype=np.float64), np.array(d["max"], dtype=np.float64))


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 10_000
    n_features: int = 64
    class_separation: float = 1.0
    sparsity: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_samples <= 0 or self.n_features <= 0:
            raise ValueError("n_samples and n_features must be positive")
        if self.class_separation < 0:
            raise ValueError("class_separation must be non-negative")
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError("sparsity must lie in [0, 1]")


# ---------------------------------------------------------------------------
# file formats


def _check_format(fmt: str) -> str:
    if fmt not in ("csv", "bin"):
        raise ValueError(f"unknown dataset format {fmt!r}")
    return fmt


def infer_format(path) -> str:
    return "csv" if str(path).lower().endswith(".csv") else "bin"


def save_dataset(d: Dataset, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = _check_format(format or infer_format(path))
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"f{j}" for j in range(d.feature_dim)] + ["label"])
            for row, label in zip(d.features, d.labels):
                w.writerow([repr(float(v)) for v in row] + [int(label)])
        return
    n, m = d.features.shape
    with open(path, "wb") as fh:
        fh.write(_BIN_HEADER.pack(BIN_MAGIC, BIN_VERSION, n, m))
        fh.write(d.labels.astype(np.uint8).tobytes())
        fh.write(d.features.astype("<f4").tobytes(order="C"))


def load_dataset(path, format: str | None = None) -> Dataset:
    path = Path(path)
    fmt = _check_format(format or infer_format(path))
    if fmt == "csv":
        return _load_csv(path)
    return _load_bin(path)


def _load_csv(path: Path) -> Dataset:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV file") from None
        if not header or header[-1].strip() != "label":
            raise FormatError(f"{path}: last header column must be 'label'")
        width = len(header)
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DimensionError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row[:-1]])
                label = float(row[-1])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if label not in (0.0, 1.0):
                raise ValueError(f"{path}:{lineno}: label {row[-1]!r} not in {{0,1}}")
            labels.append(int(label))
    x = np.array(rows, dtype=np.float64).reshape(len(rows), width - 1)
    return Dataset(x, np.array(labels, dtype=np.int64), name=path.stem)


def _load_bin(path: Path) -> Dataset:
    raw = path.read_bytes()
    if len(raw) < _BIN_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, m = _BIN_HEADER.unpack_from(raw)
    if magic != BIN_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != BIN_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = _BIN_HEADER.size + n + 4 * n * m
    if len(raw) != expected:
        raise DimensionError(f"{path}: expected {expected} bytes for {n}x{m}, found {len(raw)}")
    off = _BIN_HEADER.size
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=off)
    if not np.isin(labels, (0, 1)).all():
        raise ValueError(f"{path}: label byte outside {{0,1}}")
    x = np.frombuffer(raw, dtype="<f4", count=n * m, offset=off + n).reshape(n, m)
    return Dataset(x.astype(np.float64), labels.astype(np.int64), name=path.stem)


# ---------------------------------------------------------------------------
# synthetic data

# One in eight features carries a large class gap; the rest carry small gaps of
# either sign. Clean training leans on the many weak features, which an L-inf
# adversary can exploit; the strong ones survive moderate budgets.
_STRONG_FRACTION = 1 / 8
_STRONG_GAP = 0.45
_WEAK_GAP = 0.08
_BASE = 0.35
_NOISE = 0.15


def synth_gen(cfg: SynthConfig) -> Dataset:
    """Two-class mixture of sparse, non-negative, count-like features.

    Each feature is active with probability ``1 - sparsity``. Active values are
    ``clip(base + y * gap_j + noise, 0, 1)`` scaled by a per-feature magnitude,
    so columns look like counts on wildly different ranges until normalized.
    ``gap_j`` scales linearly with ``class_separation``.
    """
    rng = np.random.default_rng(cfg.seed)
    n, m = cfg.n_samples, cfg.n_features

    labels = rng.permutation(np.arange(n) % 2)

    n_strong = max(1, int(round(m * _STRONG_FRACTION)))
    gaps = np.empty(m)
    gaps[:n_strong] = _STRONG_GAP
    gaps[n_strong:] = _WEAK_GAP * rng.choice((-1.0, 1.0), size=m - n_strong)
    gaps = gaps[rng.permutation(m)] * cfg.class_separation

    values = _BASE + labels[:, None] * gaps[None, :] + rng.normal(0.0, _NOISE, size=(n, m))
    values = np.clip(values, 0.0, 1.0)
    active = rng.random((n, m)) >= cfg.sparsity
    scale = 10.0 ** rng.uniform(0.0, 3.0, size=m)
    x = np.where(active, values, 0.0) * scale
    x = x.astype(np.float32).astype(np.float64)
    return Dataset(x, labels, name=f"synth-{cfg.seed}")


# ---------------------------------------------------------------------------
# scaling and splitting


def fit_normalize(d: Dataset) -> tuple[Dataset, NormStats]:
    if len(d) == 0:
        raise ValueError("cannot fit normalization on an empty dataset")
    stats = NormStats(d.features.min(axis=0), d.features.max(axis=0))
    return apply_normalize(d, stats), stats


def apply_normalize(d: Dataset, s: NormStats) -> Dataset:
    return d.with_features(normalize_array(d.features, s))


def normalize_array(x: np.ndarray, s: NormStats) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != s.min.shape[0]:
        raise DimensionError(f"data has {x.shape[-1]} features, stats have {s.min.shape[0]}")
    span = s.max - s.min
    const = span == 0
    out = (x - s.min) / np.where(const, 1.0, span)
    out = np.where(const, 0.0, out)
    return np.clip(out, 0.0, 1.0)


def denormalize_array(x: np.ndarray, s: NormStats) -> np.ndarray:
    """Map [0,1] features back to raw units (constant features return ``min``)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != s.min.shape[0]:
        raise DimensionError(f"data has {x.shape[-1]} features, stats have {s.min.shape[0]}")
    return s.min + x * (s.max - s.min)


def split(d: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Stratified, seeded partition into ``len(fractions)`` datasets.

    Rows keep their original relative order inside each part.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.ndim != 1 or fr.size == 0 or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be positive and sum to 1, got {tuple(fractions)}")
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[] for _ in fr]
    for cls in (0, 1):
        idx = np.flatnonzero(d.labels == cls)
        idx = idx[rng.permutation(idx.size)]
        counts = [int(round(f * idx.size)) for f in fr[:-1]]
        if sum(counts) > idx.size:
            counts[-1] -= sum(counts) - idx.size
        bounds = np.cumsum([0] + counts)
        for k in range(len(fr)):
            hi = bounds[k + 1] if k < len(fr) - 1 else idx.size
            parts[k].append(idx[bounds[k]:hi])
    names = ("train", "val", "test") if len(fr) == 3 else tuple(f"part{k}" for k in range(len(fr)))
    return tuple(
        d.subset(np.sort(np.concatenate(p)), name=f"{d.name}-{nm}" if d.name else nm)
        for p, nm in zip(parts, names)
    )


def batches(n: int, batch_size: int, rng: np.random.Generator | None = None):
    """Yield index arrays covering ``range(n)``; shuffled when ``rng`` is given."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
