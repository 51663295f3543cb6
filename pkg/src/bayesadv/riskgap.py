"""Clean risk, adversarial risk and the agreement bound on their gap.

For binary outputs the per-particle true-class probability ``p(y|x, theta)``
is the closed form of ``E_{y'~p}[1(y == y')]``. The bound is

    tau = 1 - mean_x exp( mean_theta r_theta(x, x_adv) ),
    r_theta = sum_c p(c|x, theta) log p(c|x_adv, theta),

and ``|R_adv - R| <= tau`` holds exactly for finite particle and sample
averages, so it is checked deterministically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig, attack_dataset
from .dataio import Dataset
from .ensemble import particle_probs
from .network import KAPPA

BOUND_TOL = 1e-9


@dataclass(frozen=True)
class RiskReport:
    R: float
    R_adv: float
    tau: float
    gap: float
    holds: bool
    per_sample_r: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {"R": self.R, "R_adv": self.R_adv, "tau": self.tau, "gap": self.gap, "holds": bool(self.holds)}


def _check_pair(p, name):
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != 2:
        raise ValueError(f"{name} must be a (benign, malware) probability pair")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError(f"{name} does not sum to 1")
    slack = 1e-15
    if np.any(p < KAPPA - slack) or np.any(p > 1.0 - KAPPA + slack):
        raise ValueError(f"{name} has entries outside [kappa, 1 - kappa]")
    return p


def r_theta(p_clean, p_adv):
    """``sum_c p_clean[c] * log(p_adv[c])`` for class-probability pairs (last axis)."""
    p = _check_pair(p_clean, "p_clean")
    q = _check_pair(p_adv, "p_adv")
    out = (p * np.log(q)).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def _r_binary(p1, q1):
    # p1, q1: malware probabilities, already clamped
    return (1.0 - p1) * np.log1p(-q1) + p1 * np.log(q1)


def _true_class(probs, labels):
    return np.where(labels[None, :] == 1, probs, 1.0 - probs)


def _mean(a) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    return math.fsum(a) / a.size


def empirical_risk(e, d: Dataset) -> float:
    """Particle- and sample-mean probability of the true class."""
    if len(d) == 0:
        raise ValueError("empty dataset")
    return _mean(_true_class(particle_probs(e, d.features), d.labels))


def adversarial_risk(e, d: Dataset, cfg: AttackConfig) -> tuple[float, Dataset]:
    """Attack every row (labels kept) and evaluate the clean-risk formula on the result."""
    if cfg.target_malware_only:
        cfg = cfg.with_budget(cfg.epsilon_max, alpha=cfg.alpha, target_malware_only=False)
    d_adv, _ = attack_dataset(e, d, cfg)
    return empirical_risk(e, d_adv), d_adv


def risk_bound(e, d: Dataset, d_adv: Dataset, keep_per_sample: bool = False) -> RiskReport:
    if len(d) != len(d_adv) or d.feature_dim != d_adv.feature_dim:
        raise ValueError("clean and adversarial datasets are not row-aligned")
    if not np.array_equal(d.labels, d_adv.labels):
        raise ValueError("clean and adversarial labels differ")
    if len(d) == 0:
        raise ValueError("empty dataset")
    p = particle_probs(e, d.features)
    q = particle_probs(e, d_adv.features)
    R = _mean(_true_class(p, d.labels))
    R_adv = _mean(_true_class(q, d.labels))
    r_mean = np.array([math.fsum(col) / p.shape[0] for col in _r_binary(p, q).T])
    tau = 1.0 - _mean(np.exp(r_mean))
    gap = abs(R_adv - R)
    return RiskReport(R, R_adv, tau, gap, gap <= tau + BOUND_TOL, r_mean if keep_per_sample else None)


def batched_risk_bound(e, d: Dataset, d_adv: Dataset, batch_size: int) -> list[RiskReport]:
    """One :class:`RiskReport` per consecutive block of ``batch_size`` rows."""
    return [
        risk_bound(e, d.subset(slice(s, s + batch_size)), d_adv.subset(slice(s, s + batch_size)))
        for s in range(0, len(d), batch_size)
    ]
