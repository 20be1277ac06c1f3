"""Hyperbolic cross multi-index sets and normalized Hermite tensor bases.

A multi-index is a tuple of d non-negative integer degrees.  The default
membership rule for the sparse set of maximum order p is

    prod_j (alpha_j + 1) <= p + 1,

which reproduces the benchmark cardinalities (11, 29, 56, 141, 581, 1446
for d = 1, 2, 3, 5, 10, 15 at p = 10).  The textbook variant
prod_j max(alpha_j, 1) <= p is available as rule="max_product".

One-dimensional basis functions are the scaled probabilists' Hermite
polynomials H_n(y / sqrt(t)) / sqrt(n!), orthonormal under the N(0, t)
density; d-dimensional functions are their tensor products.  The key
identity d/dy_j H_alpha = sqrt(alpha_j / t) H_{alpha - e_j} turns gradient
evaluation into a lookup of lower-degree columns, which is what makes the
gradient-enhanced regression matrix cheap to assemble.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels


class DimensionMismatchError(ValueError):
    pass


def _enumerate_product_rule(dim, order, axis_caps):
    """All alpha with prod(alpha_j + 1) <= order + 1, optionally capped per axis."""
    out = []
    bound = order + 1
    entry = [0] * dim

    def rec(j, prod):
        if j == dim:
            out.append(tuple(entry))
            return
        cap = axis_caps[j] if axis_caps is not None else order
        a = 0
        while prod * (a + 1) <= bound and a <= cap:
            entry[j] = a
            rec(j + 1, prod * (a + 1))
            a += 1
        entry[j] = 0

    rec(0, 1)
    return out


def _enumerate_max_product_rule(dim, order, axis_caps):
    """All alpha with prod(max(alpha_j, 1)) <= order (the textbook form)."""
    out = []
    entry = [0] * dim

    def rec(j, prod):
        if j == dim:
            out.append(tuple(entry))
            return
        cap = axis_caps[j] if axis_caps is not None else order
        a = 0
        while prod * max(a, 1) <= order and a <= cap:
            entry[j] = a
            rec(j + 1, prod * max(a, 1))
            a += 1
        entry[j] = 0

    rec(0, 1)
    return out


@dataclass
class IndexSet:
    """Ordered, downward-closed multi-index set with derivative lookups.

    indices are stored in graded lexicographic order (total degree first,
    then entry-wise), so column numbering is deterministic.  The flat CSR
    arrays hold, per column n, one entry for every axis j with alpha_j >= 1:
    the axis, the degree alpha_j and the column of alpha - e_j.  prod_*
    arrays factor each column as (parent column) x (one 1-d polynomial),
    used by the basis kernels.
    """

    dimension: int
    max_order: int
    indices: np.ndarray            # (n_basis, dimension) int32
    position: dict = field(repr=False)
    deriv_ptr: np.ndarray = field(repr=False)       # (n_basis + 1,) int64
    deriv_axis: np.ndarray = field(repr=False)      # (nnz,) int32
    deriv_degree: np.ndarray = field(repr=False)    # (nnz,) int32
    deriv_neighbor: np.ndarray = field(repr=False)  # (nnz,) int32
    prod_parent: np.ndarray = field(repr=False)     # (n_basis,) int32
    prod_axis: np.ndarray = field(repr=False)
    prod_degree: np.ndarray = field(repr=False)
    grade_ptr: np.ndarray = field(repr=False)       # first column of each total degree
    rule: str = "product_plus_one"

    @property
    def n_basis(self):
        return self.indices.shape[0]

    @property
    def nnz(self):
        """Total count of nonzero entries over all indices (drives assembly cost)."""
        return int(self.deriv_axis.shape[0])

    @property
    def total_degrees(self):
        return self.indices.sum(axis=1)

    def neighbor(self, n, j):
        """Column of indices[n] - e_j; raises for alpha_j = 0."""
        lo, hi = self.deriv_ptr[n], self.deriv_ptr[n + 1]
        for e in range(lo, hi):
            if self.deriv_axis[e] == j:
                return int(self.deriv_neighbor[e])
        raise KeyError(f"index {n} has degree 0 on axis {j}")

    def __len__(self):
        return self.n_basis


def build_index_set(dim, order, rule="product_plus_one", axis_caps=None):
    """Construct the sparse index set for dimension dim and maximum order.

    rule="product_plus_one" (default) keeps alpha iff prod(alpha_j + 1)
    <= order + 1; rule="max_product" uses prod(max(alpha_j, 1)) <= order.
    axis_caps optionally bounds each entry (used by the mixed-basis pricer).
    """
    if dim < 1 or order < 1:
        raise ValueError(f"dimension and order must be >= 1, got d={dim}, p={order}")
    if axis_caps is not None and len(axis_caps) != dim:
        raise ValueError("axis_caps length must equal dimension")

    if rule == "product_plus_one":
        raw = _enumerate_product_rule(dim, order, axis_caps)
    elif rule == "max_product":
        raw = _enumerate_max_product_rule(dim, order, axis_caps)
    else:
        raise ValueError(f"unknown membership rule {rule!r}")

    raw.sort(key=lambda a: (sum(a), a))
    indices = np.asarray(raw, dtype=np.int32)
    n_basis = indices.shape[0]
    position = {alpha: n for n, alpha in enumerate(raw)}

    ptr = np.zeros(n_basis + 1, dtype=np.int64)
    axes, degrees, neighbors = [], [], []
    prod_parent = np.zeros(n_basis, dtype=np.int32)
    prod_axis = np.zeros(n_basis, dtype=np.int32)
    prod_degree = np.zeros(n_basis, dtype=np.int32)

    for n, alpha in enumerate(raw):
        for j, a in enumerate(alpha):
            if a >= 1:
                lowered = alpha[:j] + (a - 1,) + alpha[j + 1:]
                nbr = position.get(lowered)
                if nbr is None:
                    raise RuntimeError(
                        f"index set is not downward closed: {lowered} missing"
                    )
                axes.append(j)
                degrees.append(a)
                neighbors.append(nbr)
        ptr[n + 1] = len(axes)
        last = max((j for j, a in enumerate(alpha) if a >= 1), default=-1)
        if last >= 0:
            parent = alpha[:last] + (0,) + alpha[last + 1:]
            prod_parent[n] = position[parent]
            prod_axis[n] = last
            prod_degree[n] = alpha[last]

    grades = indices.sum(axis=1)
    max_grade = int(grades[-1])
    grade_ptr = np.searchsorted(grades, np.arange(max_grade + 2)).astype(np.int64)

    return IndexSet(
        dimension=dim,
        max_order=order,
        indices=indices,
        position=position,
        deriv_ptr=ptr,
        deriv_axis=np.asarray(axes, dtype=np.int32),
        deriv_degree=np.asarray(degrees, dtype=np.int32),
        deriv_neighbor=np.asarray(neighbors, dtype=np.int32),
        prod_parent=prod_parent,
        prod_axis=prod_axis,
        prod_degree=prod_degree,
        grade_ptr=grade_ptr,
        rule=rule,
    )


def nnz_shortcut(dim, order, rule="product_plus_one"):
    """(N_b(p) - N_b(p-1)) * d, the closed-form candidate for the nonzero count.

    Reported alongside the directly counted IndexSet.nnz; the two disagree
    for most (d, p), so nothing downstream relies on this value.
    """
    nb = len(build_index_set(dim, order, rule=rule))
    nb_prev = 1 if order == 1 else len(build_index_set(dim, order - 1, rule=rule))
    return (nb - nb_prev) * dim


def hermite_value(n, t, y):
    """Scaled Hermite value H_n(y / sqrt(t)) / sqrt(n!) via the normalized
    recurrence h_{k+1} = (x h_k - sqrt(k) h_{k-1}) / sqrt(k+1)."""
    if n < 0:
        raise ValueError("degree must be non-negative")
    if t <= 0:
        raise ValueError("scale t must be positive")
    x = np.asarray(y, dtype=float) / np.sqrt(t)
    h_prev = np.ones_like(x)
    if n == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = x.copy()
    for k in range(1, n):
        h, h_prev = (x * h - np.sqrt(k) * h_prev) / np.sqrt(k + 1), h
    return h if h.ndim else float(h)


def _transposed_out(out, n_rows, n_basis, name="out"):
    """Validate an (m, n_basis) buffer with contiguous columns (row blocks of
    such buffers are accepted too), as the kernels require."""
    if out.shape != (n_rows, n_basis):
        raise DimensionMismatchError(f"{name} must have shape ({n_rows}, {n_basis})")
    transposed = out.T
    if transposed.strides[-1] != transposed.itemsize:
        raise ValueError(f"{name} must be column-major (transpose of a C array)")
    return transposed


def empty_basis_buffer(n_rows, n_basis):
    """Column-major (m, n_basis) buffer as expected by the evaluation kernels."""
    return np.empty((n_basis, n_rows)).T


def eval_basis_t(points_t, t, index_set, out_t):
    """Transposed-native basis evaluation: points_t is (d, m) with
    contiguous axis rows, out_t is (n_basis, m)."""
    if t <= 0:
        raise ValueError("scale t must be positive")
    kernels.basis_matrix(
        np.ascontiguousarray(points_t, dtype=float), t,
        index_set.prod_parent, index_set.prod_axis, index_set.prod_degree,
        out_t,
    )
    return out_t


def eval_basis_matrix(points, t, index_set, out=None):
    """Basis matrix Phi with Phi[m, n] = H_{alpha_n}^{(t)}(points[m]).

    Returned (and accepted, via out=) matrices are column-major so each
    basis column is a contiguous vector.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != index_set.dimension:
        raise DimensionMismatchError(
            f"points must be (m, {index_set.dimension}), got {points.shape}"
        )
    if out is None:
        out = empty_basis_buffer(points.shape[0], index_set.n_basis)
    out_t = _transposed_out(out, points.shape[0], index_set.n_basis)
    eval_basis_t(points.T, t, index_set, out_t)
    return out


def deriv_coefficients(index_set, t):
    """sqrt(alpha_j / t) for every (column, axis) derivative entry."""
    return np.sqrt(index_set.deriv_degree.astype(float) / t)


def assemble_t(phi_t, dw_t, index_set, t, out_t):
    """Transposed-native regression-matrix assembly: phi_t and out_t are
    (n_basis, m), dw_t is (d, m); out_t must not alias phi_t."""
    if t <= 0:
        raise ValueError("scale t must be positive")
    if out_t is phi_t:
        raise ValueError("out must not alias phi")
    kernels.assemble_matrix(
        phi_t, np.ascontiguousarray(dw_t, dtype=float),
        deriv_coefficients(index_set, t),
        index_set.deriv_ptr, index_set.deriv_axis, index_set.deriv_neighbor,
        out_t,
    )
    return out_t


def assemble_regression_matrix(phi, dw, index_set, t, out=None):
    """A = Phi plus the gradient-dot-increment update, column by column:

    A[:, n] = Phi[:, n] + sum_j sqrt(alpha_j / t) dw[:, j] * Phi[:, neighbor].

    Work is linear in the nonzero count of the index set.  phi must be
    column-major (as produced by eval_basis_matrix); out must not alias it.
    """
    m = phi.shape[0]
    if phi.shape[1] != index_set.n_basis:
        raise DimensionMismatchError("phi column count does not match index set")
    if dw.shape != (m, index_set.dimension):
        raise DimensionMismatchError("dw shape does not match phi rows / dimension")
    if out is None:
        out = empty_basis_buffer(m, index_set.n_basis)
    if out is phi or (out.base is not None and out.base is phi.base):
        raise ValueError("out must not alias phi")
    assemble_t(
        _transposed_out(phi, m, index_set.n_basis, "phi"),
        np.asarray(dw, dtype=float).T,
        index_set, t,
        _transposed_out(out, m, index_set.n_basis),
    )
    return out


def eval_gradient(coeffs, index_set, phi_row, t):
    """Gradient of sum_n coeffs[n] H_{alpha_n}^{(t)} at the point where
    phi_row holds the basis values; no new polynomial evaluations."""
    phi_row = np.asarray(phi_row, dtype=float)
    grad = eval_gradients(coeffs, index_set, phi_row.reshape(1, -1), t)
    return grad[0]

def eval_gradients(coeffs, index_set, phi, t):
    """Row-wise expansion gradients, (m, d), from precomputed basis values."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (index_set.n_basis,):
        raise DimensionMismatchError("coefficient length does not match index set")
    if phi.shape[1] != index_set.n_basis:
        raise DimensionMismatchError("phi column count does not match index set")
    coefs = deriv_coefficients(index_set, t)
    grad = np.zeros((phi.shape[0], index_set.dimension))
    weights = coefs * coeffs[_deriv_cols(index_set)]
    for j in range(index_set.dimension):
        sel = index_set.deriv_axis == j
        if np.any(sel):
            grad[:, j] = phi[:, index_set.deriv_neighbor[sel]] @ weights[sel]
    return grad


def _deriv_cols(index_set):
    """Column owning each flat derivative entry (inverse of deriv_ptr)."""
    return np.repeat(
        np.arange(index_set.n_basis), np.diff(index_set.deriv_ptr)
    )


def hermite_table(y, t, max_degree):
    """All scaled Hermite values up to max_degree at scalar states y:
    (max_degree + 1, m) with row n holding H_n(y / sqrt(t)) / sqrt(n!)."""
    if t <= 0:
        raise ValueError("scale t must be positive")
    x = np.asarray(y, dtype=float) / np.sqrt(t)
    tab = np.empty((max_degree + 1, x.shape[0]))
    tab[0] = 1.0
    if max_degree >= 1:
        tab[1] = x
    for n in range(1, max_degree):
        tab[n + 1] = (x * tab[n] - np.sqrt(n) * tab[n - 1]) / np.sqrt(n + 1)
    return tab


def chebyshev_tables(z, max_degree):
    """First-kind Chebyshev values and derivatives on [-1, 1].

    Returns (tab, dtab), each (max_degree + 1, m): tab[b] = T_b(z) and
    dtab[b] = T_b'(z) = b U_{b-1}(z), via the three-term recurrences.
    """
    z = np.asarray(z, dtype=float)
    m = z.shape[0]
    tab = np.empty((max_degree + 1, m))
    dtab = np.zeros((max_degree + 1, m))
    tab[0] = 1.0
    if max_degree >= 1:
        tab[1] = z
        dtab[1] = 1.0
        u_prev = np.ones(m)          # U_0
        u = 2.0 * z                  # U_1
        for b in range(2, max_degree + 1):
            tab[b] = 2.0 * z * tab[b - 1] - tab[b - 2]
            dtab[b] = b * u
            u, u_prev = 2.0 * z * u - u_prev, u
    return tab, dtab


def save_index_set(index_set, path):
    """Plain text: header 'd p N_b', then one space-separated index per line."""
    with open(path, "w") as fh:
        fh.write(f"{index_set.dimension} {index_set.max_order} {index_set.n_basis}\n")
        for alpha in index_set.indices:
            fh.write(" ".join(str(int(a)) for a in alpha) + "\n")


def load_index_set(path):
    with open(path) as fh:
        header = fh.readline().split()
        dim, order, n_basis = (int(v) for v in header)
        rows = [tuple(int(v) for v in fh.readline().split()) for _ in range(n_basis)]
    rebuilt = build_index_set(dim, order)
    if [tuple(a) for a in rebuilt.indices.tolist()] != rows:
        raise ValueError(f"{path} does not match the generated set for d={dim}, p={order}")
    return rebuilt
