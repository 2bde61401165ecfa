"""Diffusion-based structural causal models with exactly invertible abduction."""

from .counterfactual import (attribute_exogenous, cate_by_group, counterfactual, counterfactual_row, ensemble_run,
                             estimate_ate, fairness_audit, pehe)
from .diffusion import DiffusionMechanismConfig, NoiseSchedule, linear_beta_schedule, train_mechanism
from .exceptions import (ConfigError, DegenerateColumnError, DimensionError, DivergenceError, GraphError,
                         GridMismatchError, NotFittedError, SeedRunError, TrajectoryBlowupError)
from .metrics import cic_score, cmi_score, delta_u, kmd_score, ksg_cmi, mmd2_unbiased, mmd_permutation_test
from .samplers import LatentCode, belm_decode, belm_encode, ddim_decode, ddim_encode
from .scm import (AdditiveNoiseMechanism, CausalGraph, DiffusionMechanism, EmpiricalMechanism, MlpRegressor,
                  StructuralCausalModel)

__all__ = [
    "AdditiveNoiseMechanism", "CausalGraph", "ConfigError", "DegenerateColumnError", "DiffusionMechanism",
    "DiffusionMechanismConfig", "DimensionError", "DivergenceError", "EmpiricalMechanism", "GraphError",
    "GridMismatchError", "LatentCode", "MlpRegressor", "NoiseSchedule", "NotFittedError", "SeedRunError",
    "StructuralCausalModel", "TrajectoryBlowupError", "attribute_exogenous", "belm_decode", "belm_encode",
    "cate_by_group", "cic_score", "cmi_score", "counterfactual", "counterfactual_row", "ddim_decode", "ddim_encode",
    "delta_u", "ensemble_run", "estimate_ate", "fairness_audit", "kmd_score", "ksg_cmi", "linear_beta_schedule",
    "mmd2_unbiased", "mmd_permutation_test", "pehe", "train_mechanism",
]
