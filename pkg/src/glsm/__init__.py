"""Gradient-enhanced least squares Monte Carlo pricing of Bermudan options."""

from .basis import build_index_set, eval_basis_matrix, assemble_regression_matrix
from .payoff import Payoff
from .market import BlackScholesMarket, HestonMarket, simulate_brownian
from .pricer import glsm_price, lsm_price, glsm_price_heston

__all__ = [
    "build_index_set",
    "eval_basis_matrix",
    "assemble_regression_matrix",
    "Payoff",
    "BlackScholesMarket",
    "HestonMarket",
    "simulate_brownian",
    "glsm_price",
    "lsm_price",
    "glsm_price_heston",
]
