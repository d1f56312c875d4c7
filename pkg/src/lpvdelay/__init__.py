"""Gain-scheduled state-feedback synthesis for LPV plants with time-varying state delay.

Delay uncertainty is covered by dynamic integral quadratic constraints; the
controller is found from gridded parameter-dependent LMIs and checked by an
analysis LMI and by closed-loop delay-differential simulation.
"""

from .ddesim import Scenario, SimulationTrace, Trajectory, l2_gain_estimate, pulse_scenario, simulate
from .iqc import make_multiplier, realize_filter, select_multipliers, verify_spectral_factorization
from .model import DelayedLpvPlant, DelaySpec, build_augmented, close_loop, example_plant
from .params import ParameterDomain, ParamMatrixFunction, make_grid, monomial_basis
from .synthesis import (SynthesisConfig, SynthesisError, SynthesisResult, minimize_gamma,
                        recover_gains, synthesize, verify_analysis)

__version__ = "0.1.0"

__all__ = [
    "DelaySpec", "DelayedLpvPlant", "ParamMatrixFunction", "ParameterDomain", "Scenario",
    "SimulationTrace", "SynthesisConfig", "SynthesisError", "SynthesisResult", "Trajectory",
    "build_augmented", "close_loop", "example_plant", "l2_gain_estimate", "make_grid",
    "make_multiplier", "minimize_gamma", "monomial_basis", "realize_filter", "recover_gains",
    "pulse_scenario", "select_multipliers", "simulate", "synthesize", "verify_analysis",
    "verify_spectral_factorization",
]
