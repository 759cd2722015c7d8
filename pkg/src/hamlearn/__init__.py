"""Learning spin-chain Hamiltonians from simulated Pauli measurements.

The package simulates the dynamics of a parametrized spin chain with a
matrix product state, propagates parameter derivatives through every step
(including the truncated SVDs) in forward mode, and fits the parameters to
measurement records by maximum likelihood.
"""

from __future__ import annotations

from .data import Dataset, ExactState, exact_evolve, generate_dataset, read_dataset, write_dataset
from .errors import (
    ContractViolation,
    DimensionError,
    DomainError,
    HamlearnError,
    NumericError,
    ParseError,
    ResourceError,
)
from .hamiltonian import HeisenbergModel, HeisenbergParams, build_trotter_plan, draw_target, make_model
from .learner import LossValue, OptimizerConfig, SimConfig, fit, loss, multi_start, score_mean_exact
from .linalg_ad import SvdJvpConfig, TangentBundle, herm_expm_jvp, svd_jvp
from .mps import Mps, apply_two_site_gate, product_state, sample
from .tebd import born_probability, evolve
from .tensor_core import svd_truncated

__version__ = "0.1.0"

__all__ = [
    "ContractViolation",
    "Dataset",
    "DimensionError",
    "DomainError",
    "ExactState",
    "HamlearnError",
    "HeisenbergModel",
    "HeisenbergParams",
    "LossValue",
    "Mps",
    "NumericError",
    "OptimizerConfig",
    "ParseError",
    "ResourceError",
    "SimConfig",
    "SvdJvpConfig",
    "TangentBundle",
    "apply_two_site_gate",
    "born_probability",
    "build_trotter_plan",
    "draw_target",
    "evolve",
    "exact_evolve",
    "fit",
    "generate_dataset",
    "herm_expm_jvp",
    "loss",
    "make_model",
    "multi_start",
    "product_state",
    "read_dataset",
    "sample",
    "score_mean_exact",
    "svd_jvp",
    "svd_truncated",
    "write_dataset",
]
