"""Reflected BSDEs, nonlinear expectations and Dynkin games on binary lattices."""

from .bsde import nonlinear_expectation, solve_bsde, solve_implicit
from .drivers import Driver, ProblemSpec, make_preset_driver
from .game import game_report, maximality_check, value_bruteforce, verify_saddle
from .lattice import (AdaptedProcess, BarrierPair, Lattice, StoppingRule, TimeGrid, TreeKind, build_lattice,
                      enumerate_stopping_rules)
from .mokobodzki import gamma_threshold, generate_barrier_family, threshold_diagnostics
from .rbsde import PenaltyScheme, penalty_study, solve_penalized, solve_rbsde

__all__ = [
    "AdaptedProcess", "BarrierPair", "Driver", "Lattice", "PenaltyScheme", "ProblemSpec", "StoppingRule",
    "TimeGrid", "TreeKind", "build_lattice", "enumerate_stopping_rules", "game_report", "gamma_threshold",
    "generate_barrier_family", "make_preset_driver", "maximality_check", "nonlinear_expectation",
    "penalty_study", "solve_bsde", "solve_implicit", "solve_penalized", "solve_rbsde",
    "threshold_diagnostics", "value_bruteforce", "verify_saddle",
]
