"""Optimal execution under transient price impact: exact linear solutions and
neural-network approximate dynamic programming."""
from .market import (AdmissibilityError, MarketState, ModelParams, NoisePath, rescale_params,
                     simulate_path, simulate_paths, stage_cost, step_state, terminal_value)
from .closed_form import (CoeffTable, DeterministicSolution, backward_coeffs, cor4_strategy,
                          deterministic_solution, lf_policy, unconstrained_feedback,
                          unconstrained_value, vwap_policy)
from .quantization import Quantizer, build_quantizer, quantized_expectation

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityError", "MarketState", "ModelParams", "NoisePath", "rescale_params",
    "simulate_path", "simulate_paths", "stage_cost", "step_state", "terminal_value",
    "CoeffTable", "DeterministicSolution", "backward_coeffs", "cor4_strategy",
    "deterministic_solution", "lf_policy", "unconstrained_feedback", "unconstrained_value",
    "vwap_policy", "Quantizer", "build_quantizer", "quantized_expectation",
]
