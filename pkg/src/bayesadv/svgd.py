"""Stein variational gradient descent over network parameter particles.

Each particle ``theta_i`` moves along

    phi(theta_i) = sum_j [ k(theta_j, theta_i) * grad_j
                           - (gamma / n) * d/dtheta_j k(theta_j, theta_i) ]

with ``theta_i <- theta_i - lr * phi(theta_i)``, where ``grad_j`` is the loss
gradient of particle ``j`` on the current (optionally adversarial) batch and
``k`` is an RBF kernel whose bandwidth is the median pairwise distance.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, eot_pgd
from .dataio import Dataset, NormStats, batches
from .ensemble import Ensemble, as_particles, posterior_predict
from .errors import DimensionError, FormatError, NumericError
from .network import Architecture, ParamParticle, backward_flat, bce_loss, init_params

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "ADVMB"
CHECKPOINT_VERSION = 1

__all__ = [
    "Ensemble",
    "TrainConfig",
    "rbf_kernel",
    "median_bandwidth",
    "svgd_direction",
    "train",
    "posterior_predict",
    "save_checkpoint",
    "load_checkpoint",
]


def _as_matrix(particles) -> np.ndarray:
    if isinstance(particles, np.ndarray):
        theta = np.asarray(particles, dtype=np.float64)
        return theta[:, None] if theta.ndim == 1 else theta
    return np.stack([p.flat() if isinstance(p, ParamParticle) else np.ravel(p) for p in as_particles(particles)])


def _flat(a) -> np.ndarray:
    return a.flat() if isinstance(a, ParamParticle) else np.ravel(np.asarray(a, dtype=np.float64))


def rbf_kernel(a, b, h: float) -> float:
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    a, b = _flat(a), _flat(b)
    if a.shape != b.shape:
        raise DimensionError(f"particle shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.exp(-np.dot(d, d) / (2.0 * h * h)))


def _sq_dists(theta: np.ndarray) -> np.ndarray:
    n = theta.shape[0]
    d2 = np.zeros((n, n))
    for i in range(n):
        diff = theta - theta[i]
        d2[i] = np.einsum("ij,ij->i", diff, diff)
    return d2


def _median_from_sq(d2: np.ndarray) -> float:
    n = d2.shape[0]
    if n < 2:
        return 1.0
    med = float(np.median(np.sqrt(d2[np.triu_indices(n, k=1)])))
    return med if med > 0 else 1.0


def median_bandwidth(particles) -> float:
    """Median of the n(n-1)/2 pairwise Euclidean distances; 1.0 when degenerate."""
    return _median_from_sq(_sq_dists(_as_matrix(particles)))


def svgd_direction(particles, grads, gamma: float) -> np.ndarray:
    """Stein direction for every particle, as an ``(n, n_params)`` array."""
    theta = _as_matrix(particles)
    g = _as_matrix(grads)
    if g.shape != theta.shape:
        raise DimensionError(f"gradient shape {g.shape} != particle shape {theta.shape}")
    n = theta.shape[0]
    d2 = _sq_dists(theta)
    h = _median_from_sq(d2)
    k = np.exp(-d2 / (2.0 * h * h))
    drive = k @ g
    # sum_j k_ij (theta_i - theta_j) / h^2
    repulse = (k.sum(axis=1)[:, None] * theta - k @ theta) / (h * h)
    return drive - (gamma / n) * repulse


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    n_particles: int = 5
    gamma: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 512
    adv: AttackConfig | None = None
    seed: int = 0
    optimizer: str = "adam"
    weight_decay: float = 0.0
    arch: Architecture | None = None
    init: str = "independent"
    init_jitter: float = 1e-3

    def __post_init__(self):
        for name in ("n_particles", "epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.gamma < 0 or self.weight_decay < 0:
            raise ValueError("gamma and weight_decay must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.init not in ("independent", "jitter"):
            raise ValueError("init must be 'independent' or 'jitter'")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["adv"] = self.adv.to_dict() if self.adv is not None else None
        d["arch"] = self.arch.to_dict() if self.arch is not None else None
        return d


class _Adam:
    def __init__(self, shape, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, direction):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * direction
        self.v = self.b2 * self.v + (1 - self.b2) * direction * direction
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return self.lr * mhat / (np.sqrt(vhat) + self.eps)


def initial_particles(arch: Architecture, cfg: TrainConfig) -> np.ndarray:
    """Particle ``i`` is drawn with seed ``(cfg.seed, i)``; ``jitter`` perturbs one draw."""
    if cfg.init == "independent":
        return np.stack([init_params(arch, (cfg.seed, i)).flat() for i in range(cfg.n_particles)])
    base = init_params(arch, (cfg.seed, 0)).flat()
    rng = np.random.default_rng((cfg.seed, 1 << 20))
    return base + cfg.init_jitter * rng.standard_normal((cfg.n_particles, base.size))


def _particles(arch, theta):
    return [ParamParticle.from_flat(arch, theta[i], id=i) for i in range(theta.shape[0])]


def train(
    train_d: Dataset,
    val_d: Dataset | None,
    cfg: TrainConfig,
    norm_stats: NormStats | None = None,
    callback=None,
) -> Ensemble:
    """Fit an SVGD particle ensemble, optionally on per-batch adversarial examples.

    Batches are drawn from ``default_rng(cfg.seed)``. When ``cfg.adv`` is set,
    each batch is replaced by its attack against the current particles before
    the gradients are taken. ``callback(epoch, theta)`` runs after each epoch.
    """
    arch = cfg.arch or Architecture.default(train_d.feature_dim)
    if arch.input_dim != train_d.feature_dim:
        raise DimensionError(f"architecture input {arch.input_dim} != data width {train_d.feature_dim}")
    if val_d is not None and val_d.feature_dim != train_d.feature_dim:
        raise DimensionError("train and validation widths differ")

    theta = initial_particles(arch, cfg)
    opt = _Adam(theta.shape, cfg.learning_rate) if cfg.optimizer == "adam" else None
    rng = np.random.default_rng(cfg.seed)
    X, y = train_d.features, train_d.labels
    history, val_history = [], []

    for epoch in range(cfg.epochs):
        losses, sizes = [], []
        for b, idx in enumerate(batches(len(train_d), cfg.batch_size, rng)):
            try:
                particles = _particles(arch, theta)
                xb, yb = X[idx], y[idx]
                if cfg.adv is not None and cfg.adv.family != "none":
                    xb = eot_pgd(particles, xb, yb, cfg.adv).x_adv
                grads = np.empty_like(theta)
                batch_loss = 0.0
                for i, p in enumerate(particles):
                    grads[i], li = backward_flat(p, xb, yb)
                    batch_loss += li
                if cfg.weight_decay:
                    grads += cfg.weight_decay * theta
                phi = svgd_direction(theta, grads, cfg.gamma)
                step = opt.step(phi) if opt is not None else cfg.learning_rate * phi
                theta = theta - step
                if not np.all(np.isfinite(theta)):
                    raise NumericError("parameters became non-finite")
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
            losses.append(batch_loss / len(particles))
            sizes.append(len(idx))
        history.append(float(np.average(losses, weights=sizes)))
        if val_d is not None and len(val_d):
            p_val = posterior_predict(_particles(arch, theta), val_d.features)
            z = np.log(p_val) - np.log1p(-p_val)
            val_history.append(float(np.mean(bce_loss(z, val_d.labels))))
        log.info("epoch %d train_loss %.5f", epoch, history[-1])
        if callback is not None:
            callback(epoch, theta)

    meta = {
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "learning_rate": cfg.learning_rate,
        "attack": cfg.adv.to_dict() if cfg.adv is not None else None,
        "config": cfg.to_dict(),
        "train_loss": history,
        "val_loss": val_history,
    }
    particles = [ParamParticle.from_flat(arch, theta[i].copy(), id=i) for i in range(theta.shape[0])]
    return Ensemble(particles, arch, norm_stats, cfg.gamma, meta)


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_dict(e: Ensemble) -> dict:
    return {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "architecture": e.architecture.to_dict(),
        "gamma": float(e.gamma),
        "norm_stats": e.norm_stats.to_dict(),
        "train_meta": e.train_meta,
        "particles": [
            {
                "id": p.id,
                "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in zip(p.weights, p.biases)],
            }
            for p in e.particles
        ],
    }


def save_checkpoint(e: Ensemble, path) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(e)), encoding="utf-8")


def ensemble_from_dict(doc: dict) -> Ensemble:
    if not isinstance(doc, dict) or doc.get("magic") != CHECKPOINT_MAGIC:
        raise FormatError("not an ensemble checkpoint (bad magic)")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {doc.get('version')!r}")
    try:
        arch = Architecture.from_dict(doc["architecture"])
        particles = []
        for i, rec in enumerate(doc["particles"]):
            ws = tuple(np.array(layer["w"], dtype=np.float64).reshape(s) for layer, (s, _) in zip(rec["layers"], arch.shapes))
            bs = tuple(np.array(layer["b"], dtype=np.float64) for layer in rec["layers"])
            particles.append(ParamParticle(arch, ws, bs, rec.get("id", i)))
        stats = NormStats.from_dict(doc["norm_stats"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed checkpoint: {exc}") from exc
    return Ensemble(particles, arch, stats, float(doc["gamma"]), doc.get("train_meta", {}))


def load_checkpoint(path) -> Ensemble:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: not a JSON checkpoint: {exc}") from exc
    return ensemble_from_dict(doc)
