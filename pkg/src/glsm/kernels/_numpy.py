"""Pure-numpy implementations of the per-step kernels.

All kernels work on transposed buffers: the basis matrix is held as phi_t
of shape (n_basis, n_paths) so each basis column is a contiguous vector.
Reference semantics for the numba backend: identical elementwise
arithmetic, so both produce bit-identical output.
"""

import numpy as np


def axis_tables(points_t, t, max_degree):
    """Per-axis scaled Hermite values, shape (d, max_degree + 1, m):
    tab[j, n] = H_n(points_t[j] / sqrt(t)) / sqrt(n!), by the normalized
    three-term recurrence."""
    d, m = points_t.shape
    sqrt_t = np.sqrt(t)
    tab = np.empty((d, max_degree + 1, m))
    for j in range(d):
        x = points_t[j] / sqrt_t
        tab[j, 0] = 1.0
        if max_degree >= 1:
            tab[j, 1] = x
        for n in range(1, max_degree):
            tab[j, n + 1] = (x * tab[j, n] - np.sqrt(n) * tab[j, n - 1]) / np.sqrt(n + 1)
    return tab


def basis_matrix(points_t, t, prod_parent, prod_axis, prod_degree, out_t):
    """Fill out_t[n] with the tensor-product basis column n: each column is
    its product parent (the same multi-index with the last nonzero axis
    zeroed) times the one-dimensional factor on that axis; the parent
    always precedes the column in graded ordering."""
    n_basis = prod_parent.shape[0]
    max_degree = int(prod_degree.max()) if n_basis > 1 else 0
    tab = axis_tables(points_t, t, max_degree)
    out_t[0, :] = 1.0
    for n in range(1, n_basis):
        np.multiply(
            out_t[prod_parent[n]], tab[prod_axis[n], prod_degree[n]], out=out_t[n]
        )


def assemble_matrix(phi_t, dw_t, coefs, deriv_ptr, deriv_axis, deriv_neighbor, out_t):
    """Gradient-enhanced regression matrix from the basis matrix:

    out_t[n] = phi_t[n] + sum over axes j with positive degree of
    coefs[e] * dw_t[j] * phi_t[neighbor].  out_t must not alias phi_t.
    """
    n_basis = phi_t.shape[0]
    for n in range(n_basis):
        out_t[n, :] = phi_t[n]
        for e in range(deriv_ptr[n], deriv_ptr[n + 1]):
            out_t[n, :] += coefs[e] * dw_t[deriv_axis[e]] * phi_t[deriv_neighbor[e]]
