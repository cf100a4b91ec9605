"""Cell models and kinetics steppers."""
from .ionic import (IONIC, IonicModel, MarkovChain, Gate, RateTable, build_rate_tables,
                    get_ionic, rushlarsen_step)
from .models import MODELS, ModelError, RhsModel, get_model
from .solvers import (euler_step, matrix_rush_larsen_step, rk4_step, rush_larsen_gate_step,
                      transition_matrix)

__all__ = [
    "IONIC", "IonicModel", "MarkovChain", "Gate", "RateTable", "build_rate_tables", "get_ionic",
    "rushlarsen_step", "MODELS", "ModelError", "RhsModel", "get_model", "euler_step",
    "matrix_rush_larsen_step", "rk4_step", "rush_larsen_gate_step", "transition_matrix",
]
