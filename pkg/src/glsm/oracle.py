"""Independent reference prices: a quadrature lattice for one-dimensional
Bermudan options and closed-form European values.

Geometric basket options in any dimension reduce exactly to a
one-dimensional problem (payoff.reduce_geometric), so this module supplies
ground truth for the Monte Carlo pricers without sharing any code path
with them: backward induction on a log-price grid, Gauss-Hermite
quadrature over the exact lognormal transition, piecewise-cubic
interpolation between nodes.
"""

import math

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.interpolate import CubicSpline

from .payoff import reduce_geometric


class RefinementError(RuntimeError):
    pass


def _norm_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def european_bs(s0, sigma, div, strike, r, horizon, kind="put"):
    """Closed-form Black-Scholes value with continuous dividend yield."""
    if kind not in ("put", "call"):
        raise ValueError("kind must be 'put' or 'call'")
    if strike == 0.0:
        return 0.0 if kind == "put" else s0 * math.exp(-div * horizon)
    vol = sigma * math.sqrt(horizon)
    if vol < 1e-14:
        fwd = s0 * math.exp((r - div) * horizon)
        intrinsic = max(strike - fwd, 0.0) if kind == "put" else max(fwd - strike, 0.0)
        return math.exp(-r * horizon) * intrinsic
    d1 = (math.log(s0 / strike) + (r - div + 0.5 * sigma**2) * horizon) / vol
    d2 = d1 - vol
    if kind == "call":
        return s0 * math.exp(-div * horizon) * _norm_cdf(d1) - strike * math.exp(
            -r * horizon
        ) * _norm_cdf(d2)
    return strike * math.exp(-r * horizon) * _norm_cdf(-d2) - s0 * math.exp(
        -div * horizon
    ) * _norm_cdf(-d1)


def european_geometric_basket(market, payoff, horizon):
    """European value of a geometric basket payoff via the exact 1-d reduction."""
    if payoff.kind not in ("geometric_basket_put", "geometric_basket_call", "put_1d"):
        raise ValueError("closed form requires a geometric basket or 1-d payoff")
    s0_hat, sigma_hat, div_hat = reduce_geometric(market)
    kind = "put" if payoff.is_put else "call"
    return european_bs(s0_hat, sigma_hat, div_hat, payoff.strike, market.r, horizon, kind)


def bermudan_1d(
    s0, sigma, div, strike, r, horizon, n_exercise, kind="put",
    grid_size=2**10, quad_nodes=64, span_sigmas=10.0, return_details=False,
):
    """Bermudan value with exercise dates {dt, 2 dt, ..., horizon}.

    Backward induction on a uniform log-price grid spanning
    +/- span_sigmas * sigma * sqrt(horizon) around log s0.  Each step
    integrates the cubic-spline interpolant of the next value surface
    against the Gaussian log-return density by Gauss-Hermite quadrature,
    discounts, and takes the exercise maximum.  Time-0 exercise enters only
    through the final max against intrinsic value, matching the Monte Carlo
    pricers' convention.
    """
    if n_exercise < 1:
        raise ValueError("need at least one exercise date")
    if kind not in ("put", "call"):
        raise ValueError("kind must be 'put' or 'call'")
    dt = horizon / n_exercise
    half_width = span_sigmas * sigma * math.sqrt(horizon)
    if half_width < 1e-12:
        fwd = s0 * math.exp((r - div) * horizon)
        pay = max(strike - fwd, 0.0) if kind == "put" else max(fwd - strike, 0.0)
        return math.exp(-r * horizon) * pay

    x0 = math.log(s0)
    grid = np.linspace(x0 - half_width, x0 + half_width, grid_size)
    prices = np.exp(grid)
    intrinsic = np.maximum(strike - prices, 0.0) if kind == "put" else np.maximum(prices - strike, 0.0)

    nodes, weights = hermgauss(quad_nodes)
    drift = (r - div - 0.5 * sigma**2) * dt
    shifts = drift + sigma * math.sqrt(2.0 * dt) * nodes
    weights = weights / math.sqrt(math.pi)
    disc = math.exp(-r * dt)

    value = intrinsic.copy()
    boundaries = {}
    for k in range(n_exercise - 1, 0, -1):
        spline = CubicSpline(grid, value)
        cont = np.zeros_like(grid)
        for w, sh in zip(weights, shifts):
            cont += w * spline(np.clip(grid + sh, grid[0], grid[-1]))
        cont *= disc
        if return_details:
            exercised = intrinsic >= cont
            if exercised.any() and intrinsic.max() > 0:
                edge = np.max(prices[exercised]) if kind == "put" else np.min(prices[exercised])
            else:
                edge = math.nan
            boundaries[k] = edge
        value = np.maximum(intrinsic, cont)

    spline = CubicSpline(grid, value)
    cont0 = disc * sum(
        w * float(spline(min(max(x0 + sh, grid[0]), grid[-1]))) for w, sh in zip(weights, shifts)
    )
    pay0 = max(strike - s0, 0.0) if kind == "put" else max(s0 - strike, 0.0)
    v0 = max(pay0, cont0)
    if return_details:
        return v0, boundaries
    return v0


def bermudan_1d_refined(
    s0, sigma, div, strike, r, horizon, n_exercise, kind="put",
    rel_tol=1e-5, max_refinements=4, **kwargs,
):
    """Grid-refined Bermudan value: doubles the node count until the price
    moves by less than rel_tol relative; reports failure to settle."""
    grid_size = kwargs.pop("grid_size", 2**10)
    prev = bermudan_1d(
        s0, sigma, div, strike, r, horizon, n_exercise, kind,
        grid_size=grid_size, **kwargs,
    )
    for _ in range(max_refinements):
        grid_size *= 2
        cur = bermudan_1d(
            s0, sigma, div, strike, r, horizon, n_exercise, kind,
            grid_size=grid_size, **kwargs,
        )
        if abs(cur - prev) <= rel_tol * max(abs(cur), 1e-30):
            return cur
        prev = cur
    raise RefinementError(
        f"price did not settle to {rel_tol:g} within {max_refinements} grid doublings"
    )


def bermudan_geometric_reference(market, payoff, horizon, n_exercise, **kwargs):
    """Reference Bermudan value of a geometric basket via the 1-d reduction."""
    s0_hat, sigma_hat, div_hat = reduce_geometric(market)
    kind = "put" if payoff.is_put else "call"
    return bermudan_1d(
        s0_hat, sigma_hat, div_hat, payoff.strike, market.r, horizon, n_exercise,
        kind, **kwargs,
    )
