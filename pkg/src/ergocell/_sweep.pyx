# cython: boundscheck=False, wraparound=False, cdivision=True
"""Gauss-Seidel sweeps with exact nodal solves over min/max policy tables.

Mirrors kernels.jacobi_root_sweeps but updates in place in flat node order,
which roughly halves the iteration count and runs the inner loops in C.
"""

from libc.math cimport INFINITY, fabs

import numpy as np
cimport numpy as cnp


def gs_sweep(double[::1] u,
             long long[:, ::1] nbp, long long[:, ::1] nbm,
             long long[::1] nnz_bounds, long long[::1] nnz_dir, double[::1] nnz_w,
             double[::1] sumW2, unsigned char[:, ::1] pol_avail,
             long long[::1] group_bounds, int inner_op, int outer_op,
             long long[::1] int_idx,
             long long[::1] neu_idx, long long[:, ::1] neu_cols,
             double[:, ::1] neu_wts, double[::1] neu_rhs,
             int n_sweeps):
    cdef Py_ssize_t n_int = int_idx.shape[0]
    cdef Py_ssize_t n_groups = group_bounds.shape[0] - 1
    cdef Py_ssize_t n_neu = neu_idx.shape[0]
    cdef Py_ssize_t i, p, g, k, node, sweep, c
    cdef double num, root, best_in, best_out, newv, change, interp, w
    # residual-op -> root-op swap: min<->max (policy residuals increase in u(x))
    cdef int root_inner = 0 if inner_op == 0 else (2 if inner_op == 1 else 1)
    cdef int root_outer = 0 if outer_op == 0 else (2 if outer_op == 1 else 1)

    change = 0.0
    with nogil:
        for sweep in range(n_sweeps):
            change = 0.0
            for i in range(n_int):
                node = int_idx[i]
                if root_outer == 1:
                    best_out = INFINITY
                elif root_outer == 2:
                    best_out = -INFINITY
                else:
                    best_out = 0.0
                for g in range(n_groups):
                    if root_inner == 1:
                        best_in = INFINITY
                    elif root_inner == 2:
                        best_in = -INFINITY
                    else:
                        best_in = 0.0
                    for p in range(group_bounds[g], group_bounds[g + 1]):
                        if not pol_avail[p, i]:
                            continue
                        num = 0.0
                        for k in range(nnz_bounds[p], nnz_bounds[p + 1]):
                            num += nnz_w[k] * (u[nbp[nnz_dir[k], i]] + u[nbm[nnz_dir[k], i]])
                        root = num / sumW2[p]
                        if root_inner == 1:
                            if root < best_in:
                                best_in = root
                        elif root_inner == 2:
                            if root > best_in:
                                best_in = root
                        else:
                            best_in = root
                    if root_outer == 1:
                        if best_in < best_out:
                            best_out = best_in
                    elif root_outer == 2:
                        if best_in > best_out:
                            best_out = best_in
                    else:
                        best_out = best_in
                newv = best_out
                if fabs(newv - u[node]) > change:
                    change = fabs(newv - u[node])
                u[node] = newv
            for i in range(n_neu):
                interp = 0.0
                for c in range(neu_cols.shape[1]):
                    w = neu_wts[i, c]
                    if w != 0.0:
                        interp += w * u[neu_cols[i, c]]
                u[neu_idx[i]] = interp - neu_rhs[i]
    return change
