"""Numba hot loops for the hierarchy right-hand side and integrator stages.

The stack layout is (n_ados, dim, dim) complex128.  Neighbour relations are
compacted per hierarchy position into CSR-style lists holding only
in-set targets, so boundary positions (the bulk of a truncated set) cost
nothing beyond their local terms.  Each output matrix depends only on
read-only input matrices, so the parallel loops are deterministic for any
thread count: every element is produced by the same sequence of operations
regardless of how the range is split.

Coupling operators are encoded sparsely: kind 0 is a projector on site a,
kind 1 the symmetric flip between sites a and b.  Commutators and
anticommutators with them touch only the affected rows and columns.
"""

import numpy as np

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap

    prange = range


def set_threads(n: int):
    if HAVE_NUMBA:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


@njit(cache=True, parallel=True)
def heom_rhs_kernel(
    stack,          # (M, d, d) complex128
    out,            # (M, d, d) complex128
    h_rows,         # (nnz,) int64     nonzero pattern of the Hamiltonian
    h_cols,         # (nnz,) int64
    h_vals,         # (nnz,) complex128
    damping,        # (M,) complex128  sum_f n_f * rate_f (or zeros)
    up_ptr,         # (M+1,) int64     CSR offsets of raising edges
    up_field,       # (Eu,) int64
    up_tgt,         # (Eu,) int64
    dn_ptr,         # (M+1,) int64     CSR offsets of lowering edges
    dn_field,       # (Ed,) int64
    dn_tgt,         # (Ed,) int64
    dn_n,           # (Ed,) float64    occupation n_f of the lowering direction
    field_bath,     # (F,) int64
    field_a,        # (F,) complex128  commutator-channel coefficients
    field_b,        # (F,) complex128  anticommutator-channel coefficients
    v_kind,         # (B,) int64       0 projector, 1 symmetric flip
    v_a,            # (B,) int64
    v_b,            # (B,) int64
    deltas,         # (B,) float64     white-noise closure strengths
):
    m_count = out.shape[0]
    d = out.shape[1]
    nnz = h_rows.shape[0]
    n_baths = v_kind.shape[0]

    for m in prange(m_count):
        am = stack[m]
        om = out[m]

        # unitary part and diagonal damping: -i[H, A] - g A
        g = damping[m]
        for r in range(d):
            for c in range(d):
                om[r, c] = -g * am[r, c]
        for z in range(nnz):
            p = h_rows[z]
            q = h_cols[z]
            hv = 1j * h_vals[z]
            for c in range(d):
                om[p, c] -= hv * am[q, c]
            for r in range(d):
                om[r, q] += hv * am[r, p]

        # Markovian closure: -delta_k [V_k, [V_k, A]]
        for k in range(n_baths):
            dl = deltas[k]
            if dl == 0.0:
                continue
            a = v_a[k]
            if v_kind[k] == 0:
                for c in range(d):
                    if c != a:
                        om[a, c] -= dl * am[a, c]
                        om[c, a] -= dl * am[c, a]
            else:
                b = v_b[k]
                for c in range(d):
                    om[a, c] -= dl * am[a, c]
                    om[b, c] -= dl * am[b, c]
                    om[c, a] -= dl * am[c, a]
                    om[c, b] -= dl * am[c, b]
                om[a, a] += 2.0 * dl * am[b, b]
                om[a, b] += 2.0 * dl * am[b, a]
                om[b, a] += 2.0 * dl * am[a, b]
                om[b, b] += 2.0 * dl * am[a, a]

        # raising neighbours: -i [V_k, A_up]
        for e in range(up_ptr[m], up_ptr[m + 1]):
            k = field_bath[up_field[e]]
            xu = stack[up_tgt[e]]
            a = v_a[k]
            if v_kind[k] == 0:
                for c in range(d):
                    om[a, c] -= 1j * xu[a, c]
                    om[c, a] += 1j * xu[c, a]
            else:
                b = v_b[k]
                for c in range(d):
                    om[a, c] -= 1j * xu[b, c]
                    om[b, c] -= 1j * xu[a, c]
                    om[c, a] += 1j * xu[c, b]
                    om[c, b] += 1j * xu[c, a]

        # lowering neighbours: -n_f (a_f i[V_k, A_dn] - b_f {V_k, A_dn})
        for e in range(dn_ptr[m], dn_ptr[m + 1]):
            f = dn_field[e]
            k = field_bath[f]
            xd = stack[dn_tgt[e]]
            nv = dn_n[e]
            a = v_a[k]
            wa = 1j * (nv * field_a[f])
            if v_kind[k] == 0:
                for c in range(d):
                    om[a, c] -= wa * xd[a, c]
                    om[c, a] += wa * xd[c, a]
            else:
                b = v_b[k]
                for c in range(d):
                    om[a, c] -= wa * xd[b, c]
                    om[b, c] -= wa * xd[a, c]
                    om[c, a] += wa * xd[c, b]
                    om[c, b] += wa * xd[c, a]
            wb = nv * field_b[f]
            if wb != 0.0:
                if v_kind[k] == 0:
                    for c in range(d):
                        om[a, c] += wb * xd[a, c]
                        om[c, a] += wb * xd[c, a]
                else:
                    b = v_b[k]
                    for c in range(d):
                        om[a, c] += wb * xd[b, c]
                        om[b, c] += wb * xd[a, c]
                        om[c, a] += wb * xd[c, b]
                        om[c, b] += wb * xd[c, a]


# integrator stage arithmetic, fused elementwise over the stack


@njit(cache=True)
def stage_scaled_sum(out, e, u, k, c):
    """out = e * (u + c*k), with per-operator scalars e."""
    m_count = out.shape[0]
    d = out.shape[1]
    for m in range(m_count):
        em = e[m]
        for r in range(d):
            for q in range(d):
                out[m, r, q] = em * (u[m, r, q] + c * k[m, r, q])


@njit(cache=True)
def stage_mixed_sum(out, e, u, k, c):
    """out = e*u + c*k."""
    m_count = out.shape[0]
    d = out.shape[1]
    for m in range(m_count):
        em = e[m]
        for r in range(d):
            for q in range(d):
                out[m, r, q] = em * u[m, r, q] + c * k[m, r, q]


@njit(cache=True)
def stage_two_scale(out, e2, u, e1, k, c):
    """out = e2*u + c*e1*k."""
    m_count = out.shape[0]
    d = out.shape[1]
    for m in range(m_count):
        a2 = e2[m]
        a1 = c * e1[m]
        for r in range(d):
            for q in range(d):
                out[m, r, q] = a2 * u[m, r, q] + a1 * k[m, r, q]


@njit(cache=True)
def lawson_combine(u, e1, e2, k1, k2, k3, k4, h):
    """u = e2*u + h/6*(e2*k1 + 2*e1*(k2 + k3) + k4)."""
    m_count = u.shape[0]
    d = u.shape[1]
    w1 = h / 6.0
    w2 = h / 3.0
    for m in range(m_count):
        a2 = e2[m]
        a1 = e1[m]
        for r in range(d):
            for q in range(d):
                u[m, r, q] = (
                    a2 * u[m, r, q]
                    + w1 * (a2 * k1[m, r, q] + k4[m, r, q])
                    + w2 * a1 * (k2[m, r, q] + k3[m, r, q])
                )
