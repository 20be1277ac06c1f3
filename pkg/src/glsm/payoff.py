"""Payoff functions, discounting and the one-dimensional geometric reduction."""

from dataclasses import dataclass

import numpy as np

KINDS = ("geometric_basket_put", "geometric_basket_call", "max_call", "put_1d")


@dataclass(frozen=True)
class Payoff:
    kind: str
    strike: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown payoff kind {self.kind!r}; choose from {KINDS}")
        if self.strike < 0:
            raise ValueError("strike must be non-negative")

    @property
    def is_put(self):
        return self.kind in ("geometric_basket_put", "put_1d")


def underlying_index(payoff, s):
    """The scalar each payoff is a 1-Lipschitz function of: the geometric
    mean for basket payoffs, the maximum for max-calls, the price itself
    in one dimension."""
    s = np.atleast_2d(s)
    if payoff.kind in ("geometric_basket_put", "geometric_basket_call"):
        return np.exp(np.mean(np.log(s), axis=1))
    if payoff.kind == "max_call":
        return np.max(s, axis=1)
    return s[:, 0]


def payoff_value(payoff, s):
    """Exercise value at prices s; rows of s are states."""
    s = np.asarray(s, dtype=float)
    squeeze = s.ndim == 1
    s = np.atleast_2d(s)
    if np.any(s <= 0):
        raise ValueError("prices must be strictly positive")
    idx = underlying_index(payoff, s)
    if payoff.is_put:
        val = np.maximum(payoff.strike - idx, 0.0)
    else:
        val = np.maximum(idx - payoff.strike, 0.0)
    return float(val[0]) if squeeze else val


def discounted_payoff(payoff, s, t, r):
    if t < 0:
        raise ValueError("time must be non-negative")
    return np.exp(-r * t) * payoff_value(payoff, s)


def in_the_money(payoff, s):
    """Strictly positive exercise value; at-the-money states are out."""
    val = payoff_value(payoff, s)
    return val > 0


def payoff_gradient(payoff, s):
    """Gradient of the exercise value, rows of s strictly in the money.

    Max-call uses the gradient of the largest coordinate (ties broken by
    the first argmax); out-of-the-money rows return zero.
    """
    s = np.atleast_2d(np.asarray(s, dtype=float))
    m, d = s.shape
    grad = np.zeros((m, d))
    itm = in_the_money(payoff, s)
    if not np.any(itm):
        return grad
    sign = -1.0 if payoff.is_put else 1.0
    if payoff.kind in ("geometric_basket_put", "geometric_basket_call"):
        idx = underlying_index(payoff, s)
        grad[itm] = sign * (idx[itm, None] / d) / s[itm]
    elif payoff.kind == "max_call":
        arg = np.argmax(s, axis=1)
        grad[itm, arg[itm]] = 1.0
    else:
        grad[itm, 0] = sign
    return grad


def reduce_geometric(market):
    """Equivalent one-dimensional parameters for geometric basket payoffs.

    s0_hat = geometric mean of s0,
    sigma_hat = (1/d) sqrt(sum_ij sigma_i sigma_j rho_ij),
    div_hat = (1/d) sum_i (div_i + sigma_i^2 / 2) - sigma_hat^2 / 2.
    """
    d = market.dim
    s0_hat = float(np.exp(np.mean(np.log(market.s0))))
    quad = float(market.sigma @ market.corr @ market.sigma)
    sigma_hat = np.sqrt(quad) / d
    div_hat = float(np.mean(market.div + 0.5 * market.sigma**2)) - 0.5 * sigma_hat**2
    return s0_hat, sigma_hat, div_hat
