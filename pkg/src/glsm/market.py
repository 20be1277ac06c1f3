"""Multi-asset Black-Scholes and Heston dynamics on top of independent
Brownian drivers.

The correlated model ds_i = (r - div_i) s_i dt + sigma_i s_i dB_i with
corr(dB_i, dB_j) = rho_ij is diagonalized once: Sigma P Sigma^T = Q L Q^T,
after which asset prices are an explicit function of a standard
d-dimensional Brownian motion W,

    S_t = s0 * exp(Q (mu t + sqrt(L) W_t)),   mu = Q^T (r - div - sigma^2/2).

All simulation therefore reduces to sampling W.  Increments are drawn from
a counter-based stream keyed by (seed, path, step, axis): reproducible,
order-independent, and identical for any worker count.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
import psutil
from scipy.special import ndtri


class DegenerateModelError(ValueError):
    pass


# --- counter-based normals -------------------------------------------------

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U53 = float(1 << 53)


def _mix64(v):
    """splitmix64 finalizer; uint64 in, well-scrambled uint64 out."""
    v = (v ^ (v >> np.uint64(30))) * _MIX1
    v = (v ^ (v >> np.uint64(27))) * _MIX2
    return v ^ (v >> np.uint64(31))


def _normals_for_step(seed, n_paths, step, n_axes, n_steps):
    """(n_axes, n_paths) standard normals for one time step.

    Each element is a pure function of (seed, path m, step k, axis j), so
    any chunking or generation order reproduces the same stream.
    """
    m = np.arange(n_paths, dtype=np.uint64)[None, :]
    j = np.arange(n_axes, dtype=np.uint64)[:, None]
    counter = (m * np.uint64(n_steps) + np.uint64(step)) * np.uint64(n_axes) + j
    with np.errstate(over="ignore"):
        word = _mix64((counter + np.uint64(1)) * _GAMMA + np.uint64(seed))
    u = ((word >> np.uint64(11)).astype(np.float64) + 0.5) / _U53
    return ndtri(u)


@dataclass
class BrownianPaths:
    """Independent Brownian motion samples.

    Stored step-major, values[k, j, m] = W^j_{t_k} for path m, so per-step
    state and increment slices are contiguous per axis as the evaluation
    kernels want them.  The binary dump (write_paths) uses the path-major
    (n_paths, n_steps + 1, dim) layout for interchange.
    """

    values: np.ndarray          # (n_steps + 1, dim, n_paths)
    horizon: float
    seed: int

    @property
    def n_paths(self):
        return self.values.shape[2]

    @property
    def n_steps(self):
        return self.values.shape[0] - 1

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def dt(self):
        return self.horizon / self.n_steps

    def state(self, k):
        """(dim, n_paths) Brownian state at step k."""
        return self.values[k]

    def increment(self, k):
        """(dim, n_paths) increment W_{k+1} - W_k."""
        return self.values[k + 1] - self.values[k]


def _check_memory(n_bytes, what):
    avail = psutil.virtual_memory().available
    if n_bytes > 0.8 * avail:
        raise MemoryError(
            f"{what} needs ~{n_bytes / 1e9:.1f} GB but only "
            f"{avail / 1e9:.1f} GB are available"
        )


def simulate_brownian(n_paths, n_steps, horizon, dim, seed):
    """Simulate W on the uniform grid {0, dt, ..., horizon}.

    Deterministic given the seed and independent of thread count; increment
    (m, k, j) comes from a counter-based stream keyed by (seed, m, k, j).
    """
    if min(n_paths, n_steps, dim) < 1 or horizon <= 0:
        raise ValueError("n_paths, n_steps, dim must be >= 1 and horizon > 0")
    _check_memory(n_paths * (n_steps + 1) * dim * 8, "Brownian path array")
    dt = horizon / n_steps
    sq = np.sqrt(dt)
    values = np.empty((n_steps + 1, dim, n_paths))
    values[0] = 0.0
    for k in range(n_steps):
        z = _normals_for_step(seed, n_paths, k, dim, n_steps)
        values[k + 1] = values[k] + sq * z
    return BrownianPaths(values=values, horizon=float(horizon), seed=int(seed))


def write_paths(paths, fname):
    """Flat binary dump: 4 little-endian int64 (M, N, d, seed), then the
    (M, N+1, d) float64 array in C order, little-endian."""
    with open(fname, "wb") as fh:
        fh.write(struct.pack("<4q", paths.n_paths, paths.n_steps, paths.dim, paths.seed))
        path_major = np.ascontiguousarray(paths.values.transpose(2, 0, 1))
        fh.write(path_major.astype("<f8").tobytes())


def read_paths(fname, horizon):
    with open(fname, "rb") as fh:
        m, n, d, seed = struct.unpack("<4q", fh.read(32))
        path_major = np.frombuffer(fh.read(), dtype="<f8").reshape(m, n + 1, d)
    values = np.ascontiguousarray(path_major.transpose(1, 2, 0))
    return BrownianPaths(values=values, horizon=float(horizon), seed=seed)


# --- Black-Scholes ----------------------------------------------------------

def decompose(sigma, corr, r=0.0, div=None):
    """Spectral decomposition Sigma P Sigma^T = Q L Q^T plus the rotated
    drift mu = Q^T (r - div - sigma^2 / 2).

    Eigenvalues sorted descending.  Tiny negative eigenvalues (curvature of
    eigh on a PSD input) are clamped to zero; anything below the -1e-12
    relative threshold means the correlation input is indefinite.
    """
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    corr = np.atleast_2d(np.asarray(corr, dtype=float))
    d = sigma.shape[0]
    if corr.shape != (d, d):
        raise ValueError("correlation matrix shape does not match sigma")
    if not np.allclose(corr, corr.T, atol=1e-12):
        raise ValueError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
        raise ValueError("correlation matrix must have unit diagonal")
    cov = sigma[:, None] * corr * sigma[None, :]
    lam, q = np.linalg.eigh(cov)
    lam, q = lam[::-1].copy(), q[:, ::-1].copy()
    scale = max(abs(lam[0]), 1.0e-300)
    if lam[-1] < -1e-12 * scale:
        raise DegenerateModelError("correlation matrix is not positive semi-definite")
    lam = np.maximum(lam, 0.0)
    div = np.zeros(d) if div is None else np.broadcast_to(np.asarray(div, float), (d,))
    mu = q.T @ (r - div - 0.5 * sigma**2)
    return q, lam, mu


@dataclass
class BlackScholesMarket:
    """Correlated lognormal market with its derived spectral factors."""

    s0: np.ndarray
    r: float
    div: np.ndarray
    sigma: np.ndarray
    corr: np.ndarray
    q: np.ndarray = field(init=False, repr=False)
    lam: np.ndarray = field(init=False, repr=False)
    mu: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.s0 = np.atleast_1d(np.asarray(self.s0, dtype=float))
        d = self.s0.shape[0]
        self.sigma = np.broadcast_to(np.asarray(self.sigma, float), (d,)).copy()
        self.div = np.broadcast_to(np.asarray(self.div, float), (d,)).copy()
        self.corr = np.atleast_2d(np.asarray(self.corr, dtype=float))
        if np.any(self.s0 <= 0) or np.any(self.sigma <= 0):
            raise ValueError("initial prices and volatilities must be positive")
        self.q, self.lam, self.mu = decompose(self.sigma, self.corr, self.r, self.div)

    @property
    def dim(self):
        return self.s0.shape[0]

    def sqrt_lam(self):
        return np.sqrt(self.lam)


def correlation_matrix(dim, rho):
    """Constant-off-diagonal correlation matrix."""
    corr = np.full((dim, dim), float(rho))
    np.fill_diagonal(corr, 1.0)
    return corr


def prices_from_brownian(w, t, market):
    """S = s0 * exp(Q (mu t + sqrt(L) w)), row-wise over states w."""
    w = np.atleast_2d(w)
    expo = (w * market.sqrt_lam()) @ market.q.T
    if t != 0.0:
        expo = expo + (market.q @ market.mu) * t
    return market.s0 * np.exp(expo)


def prices_from_brownian_t(w_t, t, market):
    """Transposed variant: states and result hold one asset per row,
    (dim, m), matching the step-major path storage."""
    expo = (market.q * market.sqrt_lam()) @ w_t
    if t != 0.0:
        expo += ((market.q @ market.mu) * t)[:, None]
    return market.s0[:, None] * np.exp(expo)


def brownian_from_prices(s, t, market):
    """Inverse transform, w = L^{-1/2} (Q^T log(s / s0) - mu t)."""
    s = np.atleast_2d(s)
    if np.any(s <= 0):
        raise ValueError("prices must be strictly positive")
    lam = market.lam
    if np.any(lam <= 0):
        raise DegenerateModelError("zero eigenvalue: state transform is not invertible")
    x = np.log(s / market.s0) @ market.q
    return (x - market.mu * t) / np.sqrt(lam)


def inverse_jacobian(market, s):
    """dw/ds at the price point s: entry (i, j) = (L^{-1/2} Q^T)_{ij} / s_j."""
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ValueError("prices must be strictly positive")
    if np.any(market.lam <= 0):
        raise DegenerateModelError("zero eigenvalue: Jacobian is singular")
    return (market.q.T / market.sqrt_lam()[:, None]) / s[None, :]


# --- Heston -----------------------------------------------------------------

VARIANCE_FLOOR = 1e-12


@dataclass
class HestonMarket:
    """Square-root stochastic volatility model for a single asset."""

    s0: float
    v0: float
    r: float
    rho: float
    kappa: float
    theta: float
    nu: float

    def __post_init__(self):
        if self.s0 <= 0 or self.v0 <= 0:
            raise ValueError("s0 and v0 must be positive")
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (-1, 1)")
        if min(self.kappa, self.theta, self.nu) < 0:
            raise ValueError("kappa, theta, nu must be non-negative")

    def diffusion_rows(self, x2):
        """State-dependent diffusion of (X1, X2) = (log-price, log-variance)
        against the two Brownian drivers; returns the three nonzero entries
        (s11, s12, s21) evaluated at log-variance x2."""
        half = np.exp(0.5 * x2)
        s11 = self.rho * half
        s12 = np.sqrt(1.0 - self.rho**2) * half
        s21 = self.nu / half
        return s11, s12, s21


@dataclass
class HestonPaths:
    """Joint (log-price, log-variance) paths plus their driving increments,
    stored step-major like BrownianPaths."""

    states: np.ndarray       # (n_steps + 1, 2, n_paths); [:, 0] = log(S/s0), [:, 1] = log v
    increments: np.ndarray   # (n_steps, 2, n_paths) Brownian increments
    horizon: float
    seed: int
    floor_hits: int          # count of (path, step) where variance was floored

    @property
    def n_paths(self):
        return self.states.shape[2]

    @property
    def n_steps(self):
        return self.states.shape[0] - 1

    @property
    def dt(self):
        return self.horizon / self.n_steps


def simulate_heston(n_paths, n_steps, horizon, params, seed):
    """Full-truncation Euler for the Heston pair (log-price, variance).

    The variance update uses the positive part of the running variance in
    both drift and diffusion; the stored log-variance floors the positive
    part at VARIANCE_FLOOR before taking the logarithm.  Driving increments
    are retained for the gradient-enhanced regression.
    """
    if min(n_paths, n_steps) < 1 or horizon <= 0:
        raise ValueError("n_paths, n_steps must be >= 1 and horizon > 0")
    _check_memory(n_paths * (n_steps + 1) * 2 * 8 * 2, "Heston path arrays")
    dt = horizon / n_steps
    sq = np.sqrt(dt)
    rho_c = np.sqrt(1.0 - params.rho**2)

    states = np.empty((n_steps + 1, 2, n_paths))
    increments = np.empty((n_steps, 2, n_paths))
    x1 = np.zeros(n_paths)
    v_raw = np.full(n_paths, params.v0)
    states[0, 0] = 0.0
    states[0, 1] = np.log(params.v0)
    floor_hits = 0
    for k in range(n_steps):
        z = _normals_for_step(seed, n_paths, k, 2, n_steps)
        dw1 = sq * z[0]
        dw2 = sq * z[1]
        increments[k, 0] = dw1
        increments[k, 1] = dw2
        v_pos = np.maximum(v_raw, 0.0)
        vol = np.sqrt(v_pos)
        x1 = x1 + (params.r - 0.5 * v_pos) * dt + vol * (params.rho * dw1 + rho_c * dw2)
        v_raw = v_raw + params.kappa * (params.theta - v_pos) * dt + params.nu * vol * dw1
        v_next = np.maximum(v_raw, 0.0)
        floor_hits += int(np.count_nonzero(v_next < VARIANCE_FLOOR))
        states[k + 1, 0] = x1
        states[k + 1, 1] = np.log(np.maximum(v_next, VARIANCE_FLOOR))
    return HestonPaths(
        states=states, increments=increments,
        horizon=float(horizon), seed=int(seed), floor_hits=floor_hits,
    )
