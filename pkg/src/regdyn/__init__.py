"""Regularized reinforcement-learning dynamics in finite games."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .choice import choice_map, conjugate_value, inverse_choice
from .coupling import bregman, fenchel, fenchel_profile
from .dynamics import DynamicsSpec, Trajectory, integrate
from .game import Game, StrategyProfile, builtin_game, load_game
from .penalty import PenaltySpec, parse_penalty

__all__ = [
    "BACKEND",
    "DynamicsSpec",
    "Game",
    "PenaltySpec",
    "StrategyProfile",
    "Trajectory",
    "bregman",
    "builtin_game",
    "choice_map",
    "conjugate_value",
    "fenchel",
    "fenchel_profile",
    "integrate",
    "inverse_choice",
    "load_game",
    "parse_penalty",
]
