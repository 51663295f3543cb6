"""ROC/AUC, TPR at a fixed FPR, and robustness-versus-budget sweeps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, run_attack
from .dataio import Dataset
from .ensemble import as_particles, posterior_predict

THRESHOLD = 0.5
TABLE_BUDGETS = (0.0, 0.03, 0.05, 0.1, 0.2, 0.3)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


@dataclass
class RobustnessTable:
    budgets: list[float]
    detection_rate: list[float]
    attack: str
    model: str = ""
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"model": self.model, "attack": self.attack, "budgets": list(self.budgets), "rates": list(self.detection_rate)}


def roc(scores, labels) -> RocCurve:
    """Exact ROC; equal scores form one step, so ties contribute half credit to the AUC."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0 or n_pos + n_neg != y.size:
        raise ValueError("ROC needs binary labels with at least one of each class")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y == 1)[last_of_group]
    fp = np.cumsum(y == 0)[last_of_group]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thr = np.r_[np.inf, s[last_of_group]]
    auc = math.fsum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0)
    return RocCurve(fpr, tpr, thr, auc)


def auc(scores, labels) -> float:
    return roc(scores, labels).auc


def tpr_at_fpr(c: RocCurve, fpr_target: float) -> float:
    """TPR of the last curve point whose FPR does not exceed the target (step rule)."""
    if not 0.0 <= fpr_target <= 1.0:
        raise ValueError("fpr_target must lie in [0, 1]")
    ok = np.flatnonzero(c.fpr <= fpr_target)
    return float(c.tpr[ok[-1]])


def write_roc_csv(c: RocCurve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "tpr", "threshold"])
        for f, t, th in c.points:
            w.writerow([repr(f), repr(t), repr(th)])


def detection_rate(e, X) -> float:
    X = np.atleast_2d(X)
    if X.shape[0] == 0:
        raise ValueError("no rows to score")
    return float(np.mean(posterior_predict(e, X) >= THRESHOLD))


def robustness_sweep(
    e,
    d: Dataset,
    budgets=TABLE_BUDGETS,
    family: str = "eot_pgd",
    steps: int = 10,
    model: str = "",
    base: AttackConfig | None = None,
) -> RobustnessTable:
    """Detection rate on attacked malware at each budget; budget 0 is the clean TPR."""
    mal = d.features[d.labels == 1]
    if mal.shape[0] == 0:
        raise ValueError("dataset has no malware rows")
    ones = np.ones(mal.shape[0], dtype=np.int64)
    base = base or AttackConfig(family=family, epsilon_max=0.0, steps=steps)
    rates = []
    for eps in budgets:
        if eps == 0:
            rates.append(detection_rate(e, mal))
            continue
        cfg = base.with_budget(float(eps), family=family, steps=steps, target_malware_only=True)
        x_adv = run_attack(e, mal, ones, cfg).x_adv
        rates.append(detection_rate(e, x_adv))
    return RobustnessTable([float(b) for b in budgets], rates, family, model, {"steps": steps})


def transferability(e, d: Dataset, budgets=TABLE_BUDGETS, steps: int = 10, model: str = ""):
    """Same model swept under PGD and under FGSM."""
    return (
        robustness_sweep(e, d, budgets, "pgd", steps, model),
        robustness_sweep(e, d, budgets, "fgsm", steps, model),
    )


def particle_aucs(e, d: Dataset) -> list[float]:
    return [auc(posterior_predict([p], d.features), d.labels) for p in as_particles(e)]
