"""Backward-induction pricers: gradient-enhanced and classical least
squares Monte Carlo, deltas at every step including t = 0, and exercise
classification.

Value samples are kept discounted to t = 0 throughout.  Per time step,
working backward from expiry: evaluate the Hermite basis at the current
Brownian states, regress the next-step value samples on basis values plus
basis gradients dotted with the Brownian increments (the gradient-enhanced
system; the classical variant regresses on basis values alone), then apply
the exercise rule.  Exercised paths take the discounted payoff, continued
paths take the fitted continuation value, and the final price is the
average discounted payoff along the estimated stopping times, floored by
the immediate exercise value.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import psutil

from . import basis as basis_mod
from . import market as market_mod
from . import payoff as payoff_mod
from .regression import (
    DENSE_NORMAL_MAX_NB,
    LstsqDiagnostics,
    StreamedGradientSystem,
    solve_least_squares,
)

log = logging.getLogger(__name__)

TIMING_KEYS = ("basis", "matrix", "linear", "update")


class PricingError(RuntimeError):
    """Numerical failure inside the backward induction; carries the step."""


def exercise_decision(continuation, exercise, itm):
    """Exercise iff in the money and the fitted continuation value is
    strictly below the exercise value; ties continue."""
    return np.logical_and(itm, continuation < exercise)


@dataclass
class StepSolution:
    step: int
    t: float
    coefficients: np.ndarray
    diagnostics: LstsqDiagnostics


@dataclass
class StepClassification:
    """Per-path exercise data for one time step, for boundary plots."""

    step: int
    states: np.ndarray        # (m, d) asset prices (d <= 2) or (m, 1) payoff index
    payoff: np.ndarray        # discounted exercise values
    continuation: np.ndarray  # fitted discounted continuation values
    exercised: np.ndarray     # bool


@dataclass
class PricingResult:
    price: float
    mc_price: float                  # mean discounted payoff along stopping times
    mc_standard_error: float
    delta: np.ndarray | None
    stopping_steps: np.ndarray       # (m,) exercise step index per path
    dt: float
    n_basis: int
    steps: list = field(default_factory=list, repr=False)
    timings: dict = field(default_factory=dict, repr=False)
    classifications: dict = field(default_factory=dict, repr=False)
    diagnostics_rows: list = field(default_factory=list, repr=False)

    @property
    def stopping_times(self):
        return self.stopping_steps * self.dt

    def coefficients(self, k):
        for s in self.steps:
            if s.step == k:
                return s
        raise KeyError(f"no solution stored for step {k}")


def _classification_states(s_now_t, pay):
    if s_now_t.shape[0] <= 2:
        return np.ascontiguousarray(s_now_t.T)
    return pay.reshape(-1, 1).copy()


def _too_big_for_second_matrix(n_paths, n_basis):
    need = n_paths * n_basis * 8
    avail = psutil.virtual_memory().available
    return need > 0.45 * avail, need, avail


def _sweep(market, payoff, paths, index_set, use_gradient, *,
           tol, max_iter, ridge, collect_steps, keep_coefficients):
    """Shared backward induction; returns everything but price/delta."""
    n_paths, n_steps = paths.n_paths, paths.n_steps
    dt = paths.dt
    horizon = paths.horizon
    nb = index_set.n_basis
    r = market.r

    timings = dict.fromkeys(TIMING_KEYS, 0.0)
    t_start = time.perf_counter()

    s_term_t = market_mod.prices_from_brownian_t(paths.state(n_steps), horizon, market)
    u = np.exp(-r * horizon) * payoff_mod.payoff_value(payoff, s_term_t.T)
    cash = u.copy()
    stop_step = np.full(n_paths, n_steps, dtype=np.int64)

    phi_t = np.empty((nb, n_paths))
    phi = phi_t.T
    big, need, avail = _too_big_for_second_matrix(n_paths, nb)
    use_streamed = use_gradient and (nb > DENSE_NORMAL_MAX_NB or big)
    if use_streamed and big:
        log.warning(
            "regression matrix would need %.1f GB of %.1f GB available; "
            "streaming the normal equations instead of storing it",
            need / 1e9, avail / 1e9,
        )
    a_t = np.empty((nb, n_paths)) if (use_gradient and not use_streamed) else None

    steps, classifications, diag_rows = [], {}, []
    for k in range(n_steps - 1, 0, -1):
        t_k = k * dt
        tic = time.perf_counter()
        basis_mod.eval_basis_t(paths.state(k), t_k, index_set, phi_t)
        toc = time.perf_counter()
        timings["basis"] += toc - tic

        tic = toc
        if not use_gradient:
            system = phi
        elif use_streamed:
            system = StreamedGradientSystem(phi_t, paths.increment(k), index_set, t_k)
        else:
            basis_mod.assemble_t(phi_t, paths.increment(k), index_set, t_k, a_t)
            system = a_t.T
        toc = time.perf_counter()
        timings["matrix"] += toc - tic

        tic = toc
        try:
            beta, diag = solve_least_squares(system, u, tol=tol, max_iter=max_iter, ridge=ridge)
        except Exception as exc:
            raise PricingError(f"regression failed at step {k}: {exc}") from exc
        if not np.all(np.isfinite(beta)):
            raise PricingError(f"regression failed at step {k}: non-finite coefficients")
        toc = time.perf_counter()
        timings["linear"] += toc - tic

        tic = toc
        fitted = phi @ beta
        s_now_t = market_mod.prices_from_brownian_t(paths.state(k), t_k, market)
        pay = payoff_mod.payoff_value(payoff, s_now_t.T)
        pay_disc = np.exp(-r * t_k) * pay
        ex = exercise_decision(fitted, pay_disc, pay > 0)
        u = np.where(ex, pay_disc, fitted)
        cash[ex] = pay_disc[ex]
        stop_step[ex] = k
        timings["update"] += time.perf_counter() - tic

        if keep_coefficients:
            steps.append(StepSolution(k, t_k, beta.copy(), diag))
        if k in collect_steps:
            classifications[k] = StepClassification(
                k, _classification_states(s_now_t, pay), pay_disc.copy(),
                fitted.copy(), ex.copy(),
            )
        diag_rows.append(
            {"step": k, "iterations": diag.iterations, "residual": diag.residual,
             "fallback": diag.used_fallback,
             "cond_theory": 1.0 + (index_set.max_order + index_set.dimension - 1) / k}
        )

    timings["total"] = time.perf_counter() - t_start
    return u, cash, stop_step, steps, timings, classifications, diag_rows


def _price_from_sweep(market, payoff, paths, index_set, use_gradient, *,
                      compute_delta, tol, max_iter, ridge, collect_steps,
                      keep_coefficients):
    u, cash, stop_step, steps, timings, classes, diag_rows = _sweep(
        market, payoff, paths, index_set, use_gradient,
        tol=tol, max_iter=max_iter, ridge=ridge,
        collect_steps=frozenset(collect_steps), keep_coefficients=keep_coefficients,
    )
    mc_price = float(np.mean(cash))
    se = float(np.std(cash, ddof=1) / np.sqrt(paths.n_paths))
    intrinsic = payoff_mod.payoff_value(payoff, market.s0.reshape(1, -1))[0]
    price = max(mc_price, intrinsic)
    delta = None
    if compute_delta:
        delta = delta_at_zero(paths, u, index_set, market, tol=tol, max_iter=max_iter)
    return PricingResult(
        price=price, mc_price=mc_price, mc_standard_error=se, delta=delta,
        stopping_steps=stop_step, dt=paths.dt, n_basis=index_set.n_basis,
        steps=steps, timings=timings, classifications=classes,
        diagnostics_rows=diag_rows,
    )


def _prepare(market, payoff, n_paths, n_steps, order, seed, horizon, paths, index_rule):
    if n_steps < 1:
        raise ValueError("need at least one time step")
    index_set = basis_mod.build_index_set(market.dim, order, rule=index_rule)
    if n_paths < index_set.n_basis:
        raise ValueError(
            f"need at least as many paths as basis functions "
            f"({n_paths} < {index_set.n_basis})"
        )
    if paths is None:
        paths = market_mod.simulate_brownian(n_paths, n_steps, horizon, market.dim, seed)
    return index_set, paths


def glsm_price(market, payoff, n_paths, n_steps, order, seed, horizon, *,
               compute_delta=False, collect_steps=(), keep_coefficients=False,
               tol=1e-10, max_iter=500, ridge=0.0, paths=None,
               index_rule="product_plus_one"):
    """Gradient-enhanced least squares Monte Carlo price.

    The regression matrix at step k augments each basis value with its
    gradient dotted against the Brownian increment, so the fit matches
    next-step values rather than projecting them.  Same-seed calls to
    glsm_price and lsm_price run on identical paths.
    """
    index_set, paths = _prepare(
        market, payoff, n_paths, n_steps, order, seed, horizon, paths, index_rule
    )
    return _price_from_sweep(
        market, payoff, paths, index_set, True,
        compute_delta=compute_delta, tol=tol, max_iter=max_iter, ridge=ridge,
        collect_steps=collect_steps, keep_coefficients=keep_coefficients,
    )


def lsm_price(market, payoff, n_paths, n_steps, order, seed, horizon, *,
              compute_delta=False, collect_steps=(), keep_coefficients=False,
              tol=1e-10, max_iter=500, ridge=0.0, paths=None,
              index_rule="product_plus_one"):
    """Classical least squares Monte Carlo baseline: identical pipeline but
    the regression projects next-step values on basis values alone."""
    index_set, paths = _prepare(
        market, payoff, n_paths, n_steps, order, seed, horizon, paths, index_rule
    )
    return _price_from_sweep(
        market, payoff, paths, index_set, False,
        compute_delta=compute_delta, tol=tol, max_iter=max_iter, ridge=ridge,
        collect_steps=collect_steps, keep_coefficients=keep_coefficients,
    )


# --- deltas -----------------------------------------------------------------

def _origin_gradient_matrix(index_set, dt, h0):
    """b[i, n] = d/dw_i of basis column n at the origin, scale dt."""
    b = np.zeros((index_set.dimension, index_set.n_basis))
    cols = basis_mod._deriv_cols(index_set)
    coefs = basis_mod.deriv_coefficients(index_set, dt)
    np.add.at(
        b, (index_set.deriv_axis, cols), coefs * h0[index_set.deriv_neighbor]
    )
    return b


def delta_at_zero(paths, u1, index_set, market, *, tol=1e-10, max_iter=500):
    """Delta of the continuation value at t = 0.

    Fits the time-0 expansion at scale dt by least squares on rows
    basis(0) + grad basis(0) . W_1 against the step-1 value samples, then
    maps the w-gradient to price space through the inverse state Jacobian.
    The row space only spans intercept plus slopes, so when the full
    system would not fit in memory the equivalent d+1-column regression is
    solved instead; both give identical gradients.
    """
    dt = paths.dt
    d = index_set.dimension
    h0 = basis_mod.eval_basis_matrix(np.zeros((1, d)), dt, index_set)[0]
    bmat = _origin_gradient_matrix(index_set, dt, h0)
    w1 = paths.state(1).T

    big, _, _ = _too_big_for_second_matrix(paths.n_paths, index_set.n_basis)
    if big:
        design = np.column_stack([np.ones(paths.n_paths), w1])
        gamma, _ = solve_least_squares(design, u1, tol=tol, max_iter=max_iter)
        grad_w = gamma[1:]
    else:
        a0 = h0[None, :] + w1 @ bmat
        beta, diag = solve_least_squares(a0, u1, tol=tol, max_iter=max_iter)
        if not np.all(np.isfinite(beta)):
            raise PricingError("time-0 delta regression produced non-finite coefficients")
        grad_w = bmat @ beta
    jac = market_mod.inverse_jacobian(market, market.s0)
    return jac.T @ grad_w


def delta_at_step(k, coefficients, index_set, market, states, dt, payoff=None):
    """Deltas of the discounted value surface at step k for query states.

    Continuation-region states get the chain rule through the fitted
    expansion; states the fitted rule would exercise get the gradient of
    the discounted payoff instead and are flagged.  Returns (deltas,
    exercised_flags).
    """
    if k < 1:
        raise ValueError("step must be >= 1 (use delta_at_zero for t = 0)")
    states = np.atleast_2d(np.asarray(states, dtype=float))
    t_k = k * dt
    w = market_mod.brownian_from_prices(states, t_k, market)
    phi = basis_mod.eval_basis_matrix(w, t_k, index_set)
    grad_w = basis_mod.eval_gradients(coefficients, index_set, phi, t_k)
    base = market.q.T / market.sqrt_lam()[:, None]      # (i, j) before 1/s_j
    deltas = (grad_w @ base) / states

    exercised = np.zeros(states.shape[0], dtype=bool)
    if payoff is not None:
        fitted = phi @ coefficients
        pay = payoff_mod.payoff_value(payoff, states)
        pay_disc = np.exp(-market.r * t_k) * pay
        exercised = exercise_decision(fitted, pay_disc, pay > 0)
        if np.any(exercised):
            pg = payoff_mod.payoff_gradient(payoff, states[exercised])
            deltas[exercised] = np.exp(-market.r * t_k) * pg
    return deltas, exercised


# --- stochastic volatility variant -------------------------------------------

def heston_index_set(order_price, order_logvar):
    """Two-axis sparse set over (log-price degree, log-variance degree):
    the usual product rule at max(order) with per-axis caps.  The default
    benchmark orders (20, 20) give 70 tensor basis functions."""
    return basis_mod.build_index_set(
        2, max(order_price, order_logvar), axis_caps=(order_price, order_logvar)
    )


def _logvar_map(x2):
    """Clamp log-variance to its central mass and map it onto [-1, 1].

    The variance floor puts a handful of paths at log(floor), far below the
    bulk; a min/max map would squeeze the bulk into a sliver, make the
    Chebyshev columns collinear, and blow up the log-variance diffusion
    nu * exp(-x2 / 2) on exactly those rows.  The regression therefore
    lives on x2 clamped to the 0.1%/99.9% quantile range: returns the
    clamped states, the mapped coordinate and the map slope.
    """
    lo, hi = np.quantile(x2, (0.001, 0.999))
    if hi - lo < 1e-12:
        return x2, np.zeros_like(x2), 0.0
    x2c = np.clip(x2, lo, hi)
    z = 2.0 * (x2c - lo) / (hi - lo) - 1.0
    return x2c, z, 2.0 / (hi - lo)


def _heston_matrices(index_set, x1, x2, dw_t, t_k, params, need_gradient=True):
    """Basis and regression matrices for the (log-price, log-variance) state.

    Columns are H_a^{(t_k)}(x1) * T_b(z(x2)).  The regression row adds the
    state diffusion applied to the basis gradient, dotted with the Brownian
    increments; the diffusion is evaluated at the same clamped
    log-variance the basis sees.
    """
    herm = basis_mod.hermite_table(x1, t_k, int(index_set.indices[:, 0].max()))
    x2c, z, dz_dx2 = _logvar_map(x2)
    cheb, dcheb = basis_mod.chebyshev_tables(z, int(index_set.indices[:, 1].max()))

    m = x1.shape[0]
    phi_t = np.empty((index_set.n_basis, m))
    a_t = np.empty_like(phi_t) if need_gradient else None
    if need_gradient:
        s11, s12, s21 = params.diffusion_rows(x2c)
        e1 = s11 * dw_t[0] + s12 * dw_t[1]     # multiplies d/dx1
        e2 = s21 * dw_t[0]                     # multiplies d/dx2
    for n, (a, b) in enumerate(index_set.indices):
        col = herm[a] * cheb[b]
        phi_t[n] = col
        if need_gradient:
            row = a_t[n]
            row[:] = col
            if a >= 1:
                row += (np.sqrt(a / t_k) * herm[a - 1] * cheb[b]) * e1
            if b >= 1 and dz_dx2 != 0.0:
                row += (dz_dx2 * herm[a] * dcheb[b]) * e2
    return phi_t.T, (a_t.T if need_gradient else None)


def glsm_price_heston(params, payoff, n_paths, n_steps, seed, horizon, *,
                      order_price=20, order_logvar=20, collect_steps=(),
                      keep_coefficients=False, tol=1e-10, max_iter=500,
                      heston_paths=None):
    """Gradient-enhanced price under the square-root volatility model.

    Same backward loop as glsm_price with the two-dimensional state
    (log-price, log-variance), the state-dependent diffusion multiplying
    the ansatz gradient in the regression rows, and a Hermite x Chebyshev
    tensor basis.  Following the benchmark convention for this model the
    returned price is the time-0 continuation value: no final max against
    immediate exercise (see PricingResult.mc_price == price here).
    """
    if payoff.kind != "put_1d":
        raise ValueError("the stochastic volatility pricer handles put_1d payoffs")
    index_set = heston_index_set(order_price, order_logvar)
    if n_paths < index_set.n_basis:
        raise ValueError(
            f"need at least as many paths as basis functions "
            f"({n_paths} < {index_set.n_basis})"
        )
    hp = heston_paths
    if hp is None:
        hp = market_mod.simulate_heston(n_paths, n_steps, horizon, params, seed)
    dt = hp.dt
    r = params.r

    timings = dict.fromkeys(TIMING_KEYS, 0.0)
    t_start = time.perf_counter()

    s_term = params.s0 * np.exp(hp.states[n_steps, 0])
    u = np.exp(-r * horizon) * payoff_mod.payoff_value(payoff, s_term.reshape(-1, 1))
    cash = u.copy()
    stop_step = np.full(n_paths, n_steps, dtype=np.int64)

    steps, classifications, diag_rows = [], {}, []
    collect = frozenset(collect_steps)
    for k in range(n_steps - 1, 0, -1):
        t_k = k * dt
        tic = time.perf_counter()
        phi, a_mat = _heston_matrices(
            index_set, hp.states[k, 0], hp.states[k, 1],
            hp.increments[k], t_k, params,
        )
        toc = time.perf_counter()
        timings["basis"] += toc - tic
        timings["matrix"] += 0.0

        tic = toc
        try:
            beta, diag = solve_least_squares(a_mat, u, tol=tol, max_iter=max_iter)
        except Exception as exc:
            raise PricingError(f"regression failed at step {k}: {exc}") from exc
        toc = time.perf_counter()
        timings["linear"] += toc - tic

        tic = toc
        fitted = phi @ beta
        s_now = params.s0 * np.exp(hp.states[k, 0])
        pay = payoff_mod.payoff_value(payoff, s_now.reshape(-1, 1))
        pay_disc = np.exp(-r * t_k) * pay
        ex = exercise_decision(fitted, pay_disc, pay > 0)
        u = np.where(ex, pay_disc, fitted)
        cash[ex] = pay_disc[ex]
        stop_step[ex] = k
        timings["update"] += time.perf_counter() - tic

        if keep_coefficients:
            steps.append(StepSolution(k, t_k, beta.copy(), diag))
        if k in collect:
            classifications[k] = StepClassification(
                k, np.column_stack([s_now, np.exp(hp.states[k, 1])]),
                pay_disc.copy(), fitted.copy(), ex.copy(),
            )
        diag_rows.append(
            {"step": k, "iterations": diag.iterations, "residual": diag.residual,
             "fallback": diag.used_fallback, "cond_theory": float("nan")}
        )

    timings["total"] = time.perf_counter() - t_start
    mc_price = float(np.mean(cash))
    se = float(np.std(cash, ddof=1) / np.sqrt(n_paths))
    return PricingResult(
        price=mc_price, mc_price=mc_price, mc_standard_error=se, delta=None,
        stopping_steps=stop_step, dt=dt, n_basis=index_set.n_basis,
        steps=steps, timings=timings, classifications=classifications,
        diagnostics_rows=diag_rows,
    )


def classify_exercise(k, coefficients, index_set, paths, payoff, market):
    """Exercise decision for every path at step k under stored coefficients;
    returns a StepClassification suitable for boundary plots."""
    t_k = k * paths.dt
    phi_t = np.empty((index_set.n_basis, paths.n_paths))
    basis_mod.eval_basis_t(paths.state(k), t_k, index_set, phi_t)
    fitted = phi_t.T @ coefficients
    s_now_t = market_mod.prices_from_brownian_t(paths.state(k), t_k, market)
    pay = payoff_mod.payoff_value(payoff, s_now_t.T)
    pay_disc = np.exp(-market.r * t_k) * pay
    ex = exercise_decision(fitted, pay_disc, pay > 0)
    return StepClassification(k, _classification_states(s_now_t, pay), pay_disc, fitted, ex)
