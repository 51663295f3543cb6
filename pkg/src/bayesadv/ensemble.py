"""Particle ensembles and their posterior predictive."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import NormStats
from .errors import DimensionError
from .network import Architecture, ParamParticle, predict_prob


@dataclass
class Ensemble:
    particles: list[ParamParticle]
    architecture: Architecture
    norm_stats: NormStats | None = None
    gamma: float = 0.0
    train_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.particles:
            raise ValueError("an ensemble needs at least one particle")
        for p in self.particles:
            if p.arch != self.architecture:
                raise DimensionError("particle architecture differs from the ensemble's")
        if self.norm_stats is None:
            self.norm_stats = NormStats.identity(self.architecture.input_dim)

    def __len__(self) -> int:
        return len(self.particles)

    def theta(self) -> np.ndarray:
        """Particles stacked as an ``(n, n_params)`` matrix."""
        return np.stack([p.flat() for p in self.particles])


def as_particles(ensemble) -> list[ParamParticle]:
    if isinstance(ensemble, Ensemble):
        return ensemble.particles
    if isinstance(ensemble, ParamParticle):
        return [ensemble]
    return list(ensemble)


def particle_probs(ensemble, x) -> np.ndarray:
    """``(n_particles, n_rows)`` matrix (or ``(n_particles,)`` for one vector) of p(y=1|x, theta_i)."""
    return np.stack([np.asarray(predict_prob(p, x)) for p in as_particles(ensemble)])


def posterior_predict(ensemble, x):
    """Mean of per-particle probabilities (not of logits)."""
    out = particle_probs(ensemble, x).mean(axis=0)
    return float(out) if out.ndim == 0 else out
