"""Hypothesis testing against independence over a two-hop network."""
from .code_model import ErrorProfile, TwoHopCode, exact_errors, mc_errors, weighted_lhs
from .errors import BudgetError, DomainError, ShapeError, TwoHopError
from .kernels import BACKEND
from .prob import FinitePmf, JointPmf, Kernel, TwoHopSource, source_constants

__all__ = [
    "BACKEND",
    "BudgetError",
    "DomainError",
    "ErrorProfile",
    "FinitePmf",
    "JointPmf",
    "Kernel",
    "ShapeError",
    "TwoHopCode",
    "TwoHopError",
    "TwoHopSource",
    "exact_errors",
    "mc_errors",
    "source_constants",
    "weighted_lhs",
]
