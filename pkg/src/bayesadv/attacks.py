"""Feature-space L-inf attacks: FGSM, PGD and expectation-over-particles PGD.

The iterate is tracked as a perturbation ``delta`` from the clean point. Every
step clips ``delta`` into the intersection of the epsilon ball, the
per-feature bounds ``[delta_lb, delta_ub]`` and the valid domain, which is the
same set the two-stage :func:`project` maps onto.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import Dataset
from .ensemble import as_particles, posterior_predict
from .errors import DimensionError, NumericError
from .network import grad_input

FAMILIES = ("fgsm", "pgd", "eot_pgd", "none")
CHUNK = 4096


@dataclass(frozen=True)
class AttackConfig:
    family: str = "eot_pgd"
    epsilon_max: float = 0.1
    alpha: float | None = None
    steps: int = 10
    delta_lb: float | np.ndarray = -np.inf
    delta_ub: float | np.ndarray = np.inf
    domain_lo: float = 0.0
    domain_hi: float = 1.0
    target_malware_only: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if self.epsilon_max < 0:
            raise ValueError("epsilon_max must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.alpha is None:
            object.__setattr__(self, "alpha", 2.5 * self.epsilon_max / self.steps)
        if self.alpha < 0 or (self.alpha == 0 and self.epsilon_max > 0):
            raise ValueError("alpha must be > 0")
        if np.any(np.asarray(self.delta_lb) > 0) or np.any(np.asarray(self.delta_ub) < 0):
            raise ValueError("need delta_lb <= 0 <= delta_ub")
        if self.domain_lo > self.domain_hi:
            raise ValueError("domain_lo > domain_hi")

    def with_budget(self, epsilon: float, **kw) -> "AttackConfig":
        """Copy with a new budget; ``alpha`` is re-derived unless given."""
        fields = dict(self.__dict__)
        fields.update(epsilon_max=epsilon, alpha=None)
        fields.update(kw)
        return AttackConfig(**fields)

    def to_dict(self) -> dict:
        """JSON-safe dict; infinite bounds become ``None``."""
        d = dict(self.__dict__)
        for k in ("delta_lb", "delta_ub"):
            v = np.asarray(d[k], dtype=np.float64)
            if v.ndim == 0:
                d[k] = float(v) if np.isfinite(v) else None
            else:
                d[k] = [float(t) if np.isfinite(t) else None for t in v]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        d = dict(d)
        for k, inf in (("delta_lb", -np.inf), ("delta_ub", np.inf)):
            v = d.get(k, inf)
            if v is None:
                d[k] = inf
            elif isinstance(v, list):
                d[k] = np.array([inf if t is None else t for t in v], dtype=np.float64)
        return cls(**d)


@dataclass(frozen=True)
class AttackResult:
    x_adv: np.ndarray
    success_mask: np.ndarray
    linf_used: np.ndarray


def _delta_box(x0: np.ndarray, cfg: AttackConfig):
    lo = np.maximum(-cfg.epsilon_max, cfg.delta_lb)
    hi = np.minimum(cfg.epsilon_max, cfg.delta_ub)
    return np.maximum(lo, cfg.domain_lo - x0), np.minimum(hi, cfg.domain_hi - x0)


def project(x_cand, x0, cfg: AttackConfig) -> np.ndarray:
    """Clip ``x_cand - x0`` into the ball and bounds, then clip into the domain."""
    x_cand = np.asarray(x_cand, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if x_cand.shape != x0.shape:
        raise DimensionError(f"shape mismatch {x_cand.shape} vs {x0.shape}")
    lo = np.maximum(-cfg.epsilon_max, cfg.delta_lb)
    hi = np.minimum(cfg.epsilon_max, cfg.delta_ub)
    delta = np.clip(x_cand - x0, lo, hi)
    return np.clip(x0 + delta, cfg.domain_lo, cfg.domain_hi)


def ensemble_input_grad(ensemble, X, y) -> np.ndarray:
    """Particle-mean of the per-sample input gradients of the loss."""
    particles = as_particles(ensemble)
    g = grad_input(particles[0], X, y)
    for p in particles[1:]:
        g = g + grad_input(p, X, y)
    g = g / len(particles)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite input gradient")
    return g


def _finish(ensemble, x0, x_adv, y) -> AttackResult:
    pred = (posterior_predict(ensemble, x_adv) >= 0.5).astype(np.int64)
    linf = np.abs(x_adv - x0).max(axis=1) if x0.shape[1] else np.zeros(x0.shape[0])
    return AttackResult(x_adv, pred != y, linf)


def _prep(X, y):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (X.shape[0],))
    return X, y


def _sign_steps(ensemble, X, y, cfg: AttackConfig, step: float, steps: int) -> np.ndarray:
    delta = np.zeros_like(X)
    if cfg.epsilon_max == 0 or X.shape[0] == 0:
        return delta
    lo, hi = _delta_box(X, cfg)
    for _ in range(steps):
        x_t = np.clip(X + delta, cfg.domain_lo, cfg.domain_hi)
        g = ensemble_input_grad(ensemble, x_t, y)
        delta = np.clip(delta + step * np.sign(g), lo, hi)
    return delta


def _chunked(fn, X, y):
    if X.shape[0] <= CHUNK:
        return fn(X, y)
    return np.concatenate([fn(X[s:s + CHUNK], y[s:s + CHUNK]) for s in range(0, X.shape[0], CHUNK)])


def fgsm(ensemble, X, y, cfg: AttackConfig) -> AttackResult:
    """One signed step of size ``epsilon_max`` along the particle-mean gradient."""
    X, y = _prep(X, y)
    delta = _chunked(lambda a, b: _sign_steps(ensemble, a, b, cfg, cfg.epsilon_max, 1), X, y)
    return _finish(ensemble, X, np.clip(X + delta, cfg.domain_lo, cfg.domain_hi), y)


def eot_pgd(ensemble, X, y, cfg: AttackConfig) -> AttackResult:
    """``steps`` signed ascent steps of size ``alpha`` on the particle-mean gradient.

    Starts at the clean point and projects after every step. With a single
    particle this is ordinary PGD.
    """
    X, y = _prep(X, y)
    delta = _chunked(lambda a, b: _sign_steps(ensemble, a, b, cfg, cfg.alpha, cfg.steps), X, y)
    return _finish(ensemble, X, np.clip(X + delta, cfg.domain_lo, cfg.domain_hi), y)


def run_attack(ensemble, X, y, cfg: AttackConfig) -> AttackResult:
    if cfg.family == "fgsm":
        return fgsm(ensemble, X, y, cfg)
    if cfg.family in ("pgd", "eot_pgd"):
        return eot_pgd(ensemble, X, y, cfg)
    X, y = _prep(X, y)
    return _finish(ensemble, X, X.copy(), y)


def attack_dataset(ensemble, d: Dataset, cfg: AttackConfig) -> tuple[Dataset, AttackResult]:
    """Attack every row, or only malware rows when ``target_malware_only``.

    Untouched rows are returned bit-identical; labels never change.
    """
    X, y = d.features, d.labels
    if cfg.family == "none":
        return d, run_attack(ensemble, X, y, cfg)
    rows = np.flatnonzero(y == 1) if cfg.target_malware_only else np.arange(len(d))
    x_adv = np.array(X, copy=True)
    if rows.size:
        x_adv[rows] = run_attack(ensemble, X[rows], y[rows], cfg).x_adv
    return d.with_features(x_adv), _finish(ensemble, X, x_adv, y)


def check_result(x0, result: AttackResult, cfg: AttackConfig, tol: float = 1e-9) -> np.ndarray:
    """Per-row boolean: budget, per-feature bounds and domain all respected."""
    x0 = np.asarray(x0, dtype=np.float64)
    delta = result.x_adv - x0
    ok = np.abs(delta).max(axis=1, initial=0.0) <= cfg.epsilon_max + tol
    ok &= np.all(delta >= np.asarray(cfg.delta_lb) - tol, axis=1)
    ok &= np.all(delta <= np.asarray(cfg.delta_ub) + tol, axis=1)
    ok &= np.all((result.x_adv >= cfg.domain_lo) & (result.x_adv <= cfg.domain_hi), axis=1)
    return ok
