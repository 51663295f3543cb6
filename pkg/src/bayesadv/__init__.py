"""Bayesian adversarial learning for malware-style binary detectors.

SVGD particle ensembles trained against an expectation-over-transformation
PGD adversary, a risk-gap bound, and a toy problem-space padding harness.
"""

__version__ = "0.1.0"

from .attacks import AttackConfig, AttackResult, attack_dataset, eot_pgd, fgsm, run_attack
from .dataio import Dataset, NormStats, SynthConfig, load_dataset, save_dataset, split, synth_gen
from .ensemble import Ensemble, posterior_predict
from .errors import ConstraintError, DimensionError, FormatError, NumericError
from .network import Architecture, ParamParticle
from .riskgap import RiskReport, risk_bound
from .svgd import TrainConfig, load_checkpoint, save_checkpoint, svgd_direction, train

__all__ = [
    "Architecture", "AttackConfig", "AttackResult", "ConstraintError", "Dataset", "DimensionError",
    "Ensemble", "FormatError", "NormStats", "NumericError", "ParamParticle", "RiskReport",
    "SynthConfig", "TrainConfig", "attack_dataset", "eot_pgd", "fgsm", "load_checkpoint",
    "load_dataset", "posterior_predict", "risk_bound", "run_attack", "save_checkpoint",
    "save_dataset", "split", "svgd_direction", "synth_gen", "train",
]
