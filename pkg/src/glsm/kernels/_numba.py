"""Numba-jitted per-step kernels, parallel over row tiles.

Layouts are transposed (basis columns contiguous) and work is split into
blocks of paths so that a tile's column pieces stay cache-resident while
every column and derivative entry touches it.  Each tile is written by
exactly one thread and there are no cross-thread reductions, so output is
bit-identical for any thread count and matches the numpy backend bit for
bit (same elementwise arithmetic, no fastmath).
"""

import numpy as np
from numba import njit, prange

_TILE = 1024


@njit(parallel=True, cache=True)
def _basis_tiled(points_t, t, prod_parent, prod_axis, prod_degree, out_t, max_degree):
    d, m = points_t.shape
    n_basis = prod_parent.shape[0]
    sqrt_t = np.sqrt(t)
    roots = np.empty(max_degree + 2)
    for n in range(max_degree + 2):
        roots[n] = np.sqrt(n)
    n_tiles = (m + _TILE - 1) // _TILE
    for ti in prange(n_tiles):
        lo = ti * _TILE
        hi = min(lo + _TILE, m)
        w = hi - lo
        tab = np.empty((d, max_degree + 1, w))
        for j in range(d):
            for i in range(w):
                tab[j, 0, i] = 1.0
            if max_degree >= 1:
                for i in range(w):
                    tab[j, 1, i] = points_t[j, lo + i] / sqrt_t
            for n in range(1, max_degree):
                rn = roots[n]
                rn1 = roots[n + 1]
                for i in range(w):
                    x = points_t[j, lo + i] / sqrt_t
                    tab[j, n + 1, i] = (x * tab[j, n, i] - rn * tab[j, n - 1, i]) / rn1
        for i in range(lo, hi):
            out_t[0, i] = 1.0
        for n in range(1, n_basis):
            parent = prod_parent[n]
            factor = tab[prod_axis[n], prod_degree[n]]
            for i in range(w):
                out_t[n, lo + i] = out_t[parent, lo + i] * factor[i]


def basis_matrix(points_t, t, prod_parent, prod_axis, prod_degree, out_t):
    n_basis = prod_parent.shape[0]
    max_degree = int(prod_degree.max()) if n_basis > 1 else 0
    _basis_tiled(points_t, t, prod_parent, prod_axis, prod_degree, out_t, max_degree)


@njit(parallel=True, cache=True)
def assemble_matrix(phi_t, dw_t, coefs, deriv_ptr, deriv_axis, deriv_neighbor, out_t):
    n_basis, m = phi_t.shape
    n_tiles = (m + _TILE - 1) // _TILE
    for ti in prange(n_tiles):
        lo = ti * _TILE
        hi = min(lo + _TILE, m)
        for n in range(n_basis):
            for i in range(lo, hi):
                out_t[n, i] = phi_t[n, i]
            for e in range(deriv_ptr[n], deriv_ptr[n + 1]):
                c = coefs[e]
                dw = dw_t[deriv_axis[e]]
                nbr = phi_t[deriv_neighbor[e]]
                for i in range(lo, hi):
                    out_t[n, i] += c * dw[i] * nbr[i]
