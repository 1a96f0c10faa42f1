"""Exact simulation and verification tools for a resetting PDMP in the
small-noise limit."""

from .model import Model, make_builtin_model, validate_model
from .flow import FlowContext
from .sampler import RngStream, simulate, sample_e1_e2, conditional_counts
from .transforms import cde, Z_eps, Z_limit, radius, P_nj_hat

__all__ = [
    "Model", "make_builtin_model", "validate_model", "FlowContext", "RngStream", "simulate",
    "sample_e1_e2", "conditional_counts", "cde", "Z_eps", "Z_limit", "radius", "P_nj_hat",
]
__version__ = "0.1.0"
