"""A miniature problem space: sectioned byte programs, their feature map, padding.

A :class:`ToyProgram` is an ordered list of named byte sections plus an opaque
``payload_tag``. The tag stands in for the program's behaviour: a transform is
functionality-preserving exactly when it leaves the tag untouched.

:func:`phi` maps a program to a 259-dim vector in ``[0, 1]``:

* 256 byte-histogram entries (normalized to sum to 1),
* ``section_count / 32``,
* ``log2(total_size) / 20``,
* tag presence bit.

Appending ``n`` bytes to a program of ``N`` section bytes moves every histogram
entry by at most ``n / (N + n)``, the section feature by ``1/32`` and the size
feature by ``log2(1 + n/N) / 20`` (:func:`padding_displacement_bound`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import Dataset
from .ensemble import posterior_predict
from .errors import ConstraintError, FormatError

FEATURE_DIM = 259
MAX_SECTIONS_SCALE = 32.0
LOG_SIZE_SCALE = 20.0
DEFAULT_MAX_SIZE = 1 << 20
PAD_BYTE = 0xA9

TPRG_MAGIC = b"TPRG"
TPRG_VERSION = 1


@dataclass(frozen=True)
class ToyProgram:
    sections: tuple[tuple[str, bytes], ...]
    payload_tag: bytes = b""
    max_size: int = DEFAULT_MAX_SIZE

    def __post_init__(self):
        secs = tuple((str(n), bytes(b)) for n, b in self.sections)
        if not secs:
            raise ConstraintError("a program needs at least one section")
        object.__setattr__(self, "sections", secs)
        object.__setattr__(self, "payload_tag", bytes(self.payload_tag))
        if self.size > self.max_size:
            raise ConstraintError(f"program size {self.size} exceeds max {self.max_size}")

    @property
    def size(self) -> int:
        return sum(len(b) for _, b in self.sections)

    def byte_counts(self) -> np.ndarray:
        counts = np.zeros(256, dtype=np.int64)
        for _, b in self.sections:
            counts += np.bincount(np.frombuffer(b, dtype=np.uint8), minlength=256)
        return counts


def _features(counts: np.ndarray, n_sections, size, tag_present) -> np.ndarray:
    """Vectorized feature map; ``counts`` may be ``(256,)`` or ``(k, 256)``."""
    counts = np.asarray(counts, dtype=np.float64)
    size = np.asarray(size, dtype=np.float64)
    total = np.where(size > 0, size, 1.0)
    hist = counts / (total[..., None] if counts.ndim > 1 else total)
    sec = np.clip(np.asarray(n_sections, dtype=np.float64) / MAX_SECTIONS_SCALE, 0.0, 1.0)
    logsz = np.clip(np.log2(np.maximum(size, 1.0)) / LOG_SIZE_SCALE, 0.0, 1.0)
    tag = np.asarray(float(bool(tag_present)))
    tail = np.stack(np.broadcast_arrays(sec, logsz, tag), axis=-1)
    if counts.ndim > 1:
        tail = np.broadcast_to(tail, (counts.shape[0], 3))
    return np.concatenate([hist, tail], axis=-1)


def phi(z: ToyProgram) -> np.ndarray:
    return _features(z.byte_counts(), len(z.sections), z.size, len(z.payload_tag) > 0)


def phi_batch(programs) -> np.ndarray:
    return np.stack([phi(z) for z in programs]) if programs else np.zeros((0, FEATURE_DIM))


def omega_valid(original: ToyProgram, transformed: ToyProgram) -> bool:
    """Functionality is preserved iff the payload tag is unchanged and the size cap holds."""
    return transformed.payload_tag == original.payload_tag and transformed.size <= transformed.max_size


def pad_attack(z: ToyProgram, n_bytes: int, byte_val: int = PAD_BYTE, name: str = ".pad") -> ToyProgram:
    """Append a new section of ``n_bytes`` copies of ``byte_val``."""
    if n_bytes < 0 or not 0 <= byte_val <= 255:
        raise ValueError("need n_bytes >= 0 and a byte value in [0, 255]")
    if z.size + n_bytes > z.max_size:
        raise ConstraintError(f"padding {n_bytes} bytes exceeds max size {z.max_size}")
    return ToyProgram(z.sections + ((name, bytes([byte_val]) * n_bytes),), z.payload_tag, z.max_size)


def padding_displacement_bound(size: int, n_bytes: int) -> float:
    """Analytic upper bound on ``||phi(pad(z)) - phi(z)||_inf`` for a ``size``-byte program."""
    size, n_bytes = int(size), int(n_bytes)
    hist = n_bytes / (size + n_bytes) if size + n_bytes > 0 else 0.0
    logsz = (np.log2(max(size + n_bytes, 1)) - np.log2(max(size, 1))) / LOG_SIZE_SCALE
    return float(max(hist, 1.0 / MAX_SECTIONS_SCALE, logsz))


def greedy_pad_search(e, z: ToyProgram, budget: int, step: int, byte_candidates=range(256)):
    """Gradient-free padding search against the ensemble's posterior predictive.

    Grows a single new section ``step`` bytes at a time, each time choosing the
    candidate byte that most lowers the malware probability (ties go to the
    lowest byte). Stops on evasion (< 0.5) or when the budget is spent.
    Returns ``(program, evaded)``.
    """
    cands = np.array(sorted(set(int(b) for b in byte_candidates)), dtype=np.int64)
    if budget > 0 and (step <= 0 or cands.size == 0):
        raise ValueError("need step > 0 and at least one candidate byte")
    counts = z.byte_counts()
    tag = len(z.payload_tag) > 0
    n_sec, size = len(z.sections), z.size
    score = posterior_predict(e, _features(counts, n_sec, size, tag)[None, :])[0]
    added = np.zeros(256, dtype=np.int64)
    used = 0
    while score >= 0.5 and used + step <= budget and size + used + step <= z.max_size:
        trial = np.tile(counts + added, (cands.size, 1))
        trial[np.arange(cands.size), cands] += step
        feats = _features(trial, n_sec + 1, np.full(cands.size, size + used + step), tag)
        probs = posterior_predict(e, feats)
        k = int(np.argmin(probs))
        added[cands[k]] += step
        used += step
        score = probs[k]
    if used == 0:
        return z, bool(score < 0.5)
    pad = b"".join(bytes([v]) * int(added[v]) for v in range(256) if added[v])
    return ToyProgram(z.sections + ((".pad", pad),), z.payload_tag, z.max_size), bool(score < 0.5)


@dataclass
class Lemma1Report:
    n_programs: int
    n_detected: int
    n_evasions: int
    violations: int
    max_linf: float
    upsilon_eps: float
    omega_rejections: int = 0
    details: dict = field(default_factory=dict)

    @property
    def detection_rate(self) -> float:
        return 1.0 - self.n_evasions / self.n_programs if self.n_programs else float("nan")

    def to_dict(self) -> dict:
        return {
            "n_programs": self.n_programs,
            "n_detected_clean": self.n_detected,
            "n_evasions": self.n_evasions,
            "violations": self.violations,
            "max_linf": self.max_linf,
            "upsilon_eps": self.upsilon_eps,
            "omega_rejections": self.omega_rejections,
            "detection_rate_under_attack": self.detection_rate,
            **self.details,
        }


def lemma1_check(
    e,
    programs,
    attack: str = "pad",
    upsilon_eps: float | str | None = "analytic",
    pad_bytes: int = 1000,
    byte_val: int = PAD_BYTE,
    greedy_step: int = 256,
    greedy_candidates=range(256),
    delta_lb=-np.inf,
    delta_ub=np.inf,
    tol: float = 1e-12,
) -> Lemma1Report:
    """Check that each problem-space evasion has a feature-space counterpart inside the radius.

    Every program is transformed (``pad`` or ``greedy``); a transformed program
    that keeps its tag and scores below 0.5 is an evasion. For each evasion the
    feature displacement must lie in the L-inf ball of radius ``upsilon_eps``
    and in ``[delta_lb, delta_ub]``, and ``phi(z) + delta`` must itself evade.
    ``upsilon_eps`` may be a number, ``"analytic"`` (the largest padding bound
    over the corpus) or ``None``/``"observed"`` (the largest displacement seen).
    """
    programs = list(programs)
    originals, transformed = [], []
    rejected = 0
    for z in programs:
        if attack == "pad":
            zt = pad_attack(z, pad_bytes, byte_val)
        elif attack == "greedy":
            zt, _ = greedy_pad_search(e, z, pad_bytes, greedy_step, greedy_candidates)
        else:
            raise ValueError(f"unknown attack {attack!r}")
        if not omega_valid(z, zt):
            rejected += 1
            continue
        originals.append(z)
        transformed.append(zt)

    x = phi_batch(originals)
    x_t = phi_batch(transformed)
    delta = x_t - x
    linf = np.abs(delta).max(axis=1) if len(x) else np.zeros(0)
    p_clean = posterior_predict(e, x) if len(x) else np.zeros(0)
    p_t = posterior_predict(e, x_t) if len(x) else np.zeros(0)
    evaded = p_t < 0.5

    if upsilon_eps == "analytic":
        eps = max((padding_displacement_bound(z.size, pad_bytes) for z in originals), default=0.0)
    elif upsilon_eps is None or upsilon_eps == "observed":
        eps = float(linf.max()) if linf.size else 0.0
    else:
        eps = float(upsilon_eps)

    in_ball = linf <= eps + tol
    in_box = np.all((delta >= np.asarray(delta_lb) - tol) & (delta <= np.asarray(delta_ub) + tol), axis=1)
    feature_evades = posterior_predict(e, x + delta) < 0.5 if len(x) else np.zeros(0, dtype=bool)
    violations = int(np.sum(evaded & ~(in_ball & in_box & feature_evades)))
    return Lemma1Report(
        n_programs=len(originals),
        n_detected=int(np.sum(p_clean >= 0.5)),
        n_evasions=int(np.sum(evaded)),
        violations=violations,
        max_linf=float(linf.max()) if linf.size else 0.0,
        upsilon_eps=eps,
        omega_rejections=rejected,
        details={"attack": attack, "pad_bytes": pad_bytes, "byte": byte_val},
    )


# ---------------------------------------------------------------------------
# toy corpus

# Class-conditional statistics. Benign programs carry a small extra share of
# bytes 0xA8-0xAF; malware barely any. That band separates the classes cleanly
# but through histogram entries well under one percent, which padding with
# 0xA9 swamps. The zero-byte share, section count and tag presence differ
# between classes with heavy overlap, and padding barely moves them. The
# remaining low (0x01-0x7F) and high (0x80-0xFF) bytes are class-independent.
_ZERO_SHARE = {1: (0.25, 0.50), 0: (0.10, 0.35)}
_HIGH_SHARE = (0.10, 0.30)
_BAND = (0xA8, 0xB0)
_BAND_SHARE = {1: (0.0, 0.01), 0: (0.02, 0.05)}
_SECTIONS = {1: (2, 6), 0: (3, 8)}
_TAG_PROB = {1: 0.85, 0: 0.15}
_SIZE_RANGE = (1 << 13, 1 << 15)


def _byte_profiles(rng: np.random.Generator):
    """Shared byte distributions over the low (0x01-0x7F) and high (0x80-0xFF) ranges."""
    low = rng.gamma(2.0, size=127)
    high = rng.gamma(2.0, size=128)
    return low / low.sum(), high / high.sum()


def random_program(rng: np.random.Generator, label: int, profiles) -> ToyProgram:
    size = int(rng.integers(*_SIZE_RANGE))
    zero = rng.uniform(*_ZERO_SHARE[label])
    high = rng.uniform(*_HIGH_SHARE)
    band = rng.uniform(*_BAND_SHARE[label])
    low_p, high_p = profiles
    # per-program jitter of the byte profile
    low_p = low_p * rng.lognormal(0.0, 0.3, size=low_p.size)
    high_p = high_p * rng.lognormal(0.0, 0.3, size=high_p.size)
    p = np.concatenate([[zero], (1 - zero - high - band) * low_p / low_p.sum(), high * high_p / high_p.sum()])
    p[_BAND[0]:_BAND[1]] += band / (_BAND[1] - _BAND[0])
    data = rng.choice(256, size=size, p=p).astype(np.uint8)
    n_sec = int(rng.integers(_SECTIONS[label][0], _SECTIONS[label][1] + 1))
    cuts = np.sort(rng.choice(np.arange(1, size), size=n_sec - 1, replace=False)) if n_sec > 1 else []
    chunks = np.split(data, cuts)
    sections = tuple((f".s{i}", c.tobytes()) for i, c in enumerate(chunks))
    tag = rng.bytes(8) if rng.random() < _TAG_PROB[label] else b""
    return ToyProgram(sections, tag)


def toy_corpus(n_programs: int, seed: int = 0) -> tuple[list[ToyProgram], np.ndarray]:
    """Balanced labeled corpus. The shared byte profiles are fixed; ``seed`` drives the rest."""
    rng = np.random.default_rng(seed)
    profiles = _byte_profiles(np.random.default_rng(0))
    labels = rng.permutation(np.arange(n_programs) % 2)
    return [random_program(rng, int(y), profiles) for y in labels], labels


def toy_dataset(programs, labels, name: str = "toy") -> Dataset:
    return Dataset(phi_batch(programs), np.asarray(labels, dtype=np.int64), name)


# ---------------------------------------------------------------------------
# TPRG file format


def save_program(z: ToyProgram, path) -> None:
    Path(path).write_bytes(encode_program(z))


def encode_program(z: ToyProgram) -> bytes:
    out = [TPRG_MAGIC, struct.pack("<II", TPRG_VERSION, len(z.sections))]
    for name, data in z.sections:
        nb = name.encode("utf-8")
        if len(nb) > 255:
            raise ValueError("section name longer than 255 bytes")
        out += [struct.pack("<B", len(nb)), nb, struct.pack("<Q", len(data)), data]
    if len(z.payload_tag) > 0xFFFF:
        raise ValueError("payload tag longer than 65535 bytes")
    out += [struct.pack("<H", len(z.payload_tag)), z.payload_tag]
    return b"".join(out)


def load_program(path, max_size: int = DEFAULT_MAX_SIZE) -> ToyProgram:
    return decode_program(Path(path).read_bytes(), max_size)


def decode_program(raw: bytes, max_size: int = DEFAULT_MAX_SIZE) -> ToyProgram:
    try:
        if raw[:4] != TPRG_MAGIC:
            raise FormatError(f"bad magic {raw[:4]!r}")
        version, n_sec = struct.unpack_from("<II", raw, 4)
        if version != TPRG_VERSION:
            raise FormatError(f"unsupported version {version}")
        off = 12
        sections = []
        for _ in range(n_sec):
            (ln,) = struct.unpack_from("<B", raw, off)
            off += 1
            name = raw[off:off + ln].decode("utf-8")
            off += ln
            (nb,) = struct.unpack_from("<Q", raw, off)
            off += 8
            if off + nb > len(raw):
                raise FormatError("truncated section data")
            sections.append((name, raw[off:off + nb]))
            off += nb
        (tl,) = struct.unpack_from("<H", raw, off)
        off += 2
        tag = raw[off:off + tl]
        if len(tag) != tl or off + tl != len(raw):
            raise FormatError("trailing or missing bytes after payload tag")
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"malformed program file: {exc}") from exc
    return ToyProgram(tuple(sections), tag, max_size)
