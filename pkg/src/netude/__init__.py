"""Recovering the coupling graph of networked oscillators with a hybrid
neural/physics ODE model, trained on a small reverse-mode autodiff tape."""

from .dynamics import OscillatorParams, Trajectory, simulate_oscillators
from .errors import ConfigError, DivergenceError, NonFiniteError, ShapeMismatchError
from .model import UdeModel, init_model, threshold_adjacency
from .training import TrainConfig, alpha_sweep, select_model, train_two_phase

__version__ = "0.1.0"
