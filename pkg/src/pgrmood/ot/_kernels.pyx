# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled FGW kernels: transportation simplex and the Frank-Wolfe loop.

Mirrors ``_kernels_py`` step for step. Adjacency matrices are assumed
symmetric.
"""

import numpy as np

from libc.math cimport fabs

cdef enum:
    DEGENERATE_PATIENCE = 50


cdef int _emd_core(const double[:, ::1] cost, const double[::1] p, const double[::1] q,
                   double[:, ::1] x, unsigned char[:, ::1] basic,
                   double[::1] u, double[::1] v, int[::1] seen,
                   int[::1] stack, int[::1] parent, int[::1] queue,
                   double[::1] rs, double[::1] rd, int max_iter) noexcept nogil:
    cdef Py_ssize_t m = cost.shape[0], n = cost.shape[1]
    cdef Py_ssize_t i, j, k, node, prev, top, head, tail, target, pi = 0, pj = 0
    cdef Py_ssize_t li = 0, lj = 0, ci, cj, npath
    cdef double val, scale, tol, red, best, theta
    cdef int it, degenerate = 0, found, sign

    for i in range(m):
        rs[i] = p[i]
        for j in range(n):
            x[i, j] = 0.0
            basic[i, j] = 0
    for j in range(n):
        rd[j] = q[j]

    # north-west corner
    i = 0
    j = 0
    while True:
        val = rs[i] if rs[i] < rd[j] else rd[j]
        x[i, j] = val
        basic[i, j] = 1
        rs[i] -= val
        rd[j] -= val
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif rs[i] <= rd[j]:
            i += 1
        else:
            j += 1

    scale = 0.0
    for i in range(m):
        for j in range(n):
            if fabs(cost[i, j]) > scale:
                scale = fabs(cost[i, j])
    tol = 1e-12 * (1.0 + scale)

    for it in range(max_iter):
        # dual potentials over the basis tree
        for k in range(m + n):
            seen[k] = 0
        u[0] = 0.0
        seen[0] = 1
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            if node < m:
                for j in range(n):
                    if basic[node, j] and not seen[m + j]:
                        v[j] = cost[node, j] - u[node]
                        seen[m + j] = 1
                        stack[top] = m + j
                        top += 1
            else:
                k = node - m
                for i in range(m):
                    if basic[i, k] and not seen[i]:
                        u[i] = cost[i, k] - v[k]
                        seen[i] = 1
                        stack[top] = i
                        top += 1

        # entering cell
        found = 0
        if degenerate < DEGENERATE_PATIENCE:
            best = 0.0
            for i in range(m):
                for j in range(n):
                    red = 0.0 if basic[i, j] else cost[i, j] - u[i] - v[j]
                    if (i == 0 and j == 0) or red < best:
                        best = red
                        pi = i
                        pj = j
            if best < -tol:
                found = 1
        else:
            for i in range(m):
                for j in range(n):
                    if not basic[i, j] and cost[i, j] - u[i] - v[j] < -tol:
                        pi = i
                        pj = j
                        found = 1
                        break
                if found:
                    break
        if not found:
            return it

        # tree path from row pi to column pj (breadth first)
        for k in range(m + n):
            parent[k] = -2
        parent[pi] = -1
        head = 0
        tail = 0
        queue[tail] = pi
        tail += 1
        target = m + pj
        while head < tail:
            node = queue[head]
            head += 1
            if node == target:
                break
            if node < m:
                for j in range(n):
                    if basic[node, j] and parent[m + j] == -2:
                        parent[m + j] = node
                        queue[tail] = m + j
                        tail += 1
            else:
                k = node - m
                for i in range(m):
                    if basic[i, k] and parent[i] == -2:
                        parent[i] = node
                        queue[tail] = i
                        tail += 1

        # walk back from column pj; cells alternate minus, plus, minus, ...
        theta = -1.0
        node = target
        sign = 0
        while parent[node] != -1:
            prev = parent[node]
            if node < m:
                ci = node
                cj = prev - m
            else:
                ci = prev
                cj = node - m
            if sign == 0:
                if theta < 0.0 or x[ci, cj] < theta or (x[ci, cj] == theta and ci * n + cj < li * n + lj):
                    theta = x[ci, cj]
                    li = ci
                    lj = cj
            sign ^= 1
            node = prev

        node = target
        sign = 0
        while parent[node] != -1:
            prev = parent[node]
            if node < m:
                ci = node
                cj = prev - m
            else:
                ci = prev
                cj = node - m
            if sign == 0:
                x[ci, cj] -= theta
            else:
                x[ci, cj] += theta
            sign ^= 1
            node = prev
        x[pi, pj] = theta
        basic[pi, pj] = 1
        basic[li, lj] = 0
        x[li, lj] = 0.0
        if theta == 0.0:
            degenerate += 1
        else:
            degenerate = 0
    return -1


cdef class _Workspace:
    cdef public object x
    cdef unsigned char[:, ::1] basic
    cdef double[::1] u, v, rs, rd
    cdef int[::1] seen, stack, parent, queue

    def __init__(self, Py_ssize_t m, Py_ssize_t n):
        self.x = np.zeros((m, n))
        self.basic = np.zeros((m, n), dtype=np.uint8)
        self.u = np.zeros(m)
        self.v = np.zeros(n)
        self.seen = np.zeros(m + n, dtype=np.intc)
        self.stack = np.zeros(m + n + 1, dtype=np.intc)
        self.parent = np.zeros(m + n, dtype=np.intc)
        self.queue = np.zeros(m + n + 1, dtype=np.intc)
        self.rs = np.zeros(m)
        self.rd = np.zeros(n)


def emd(cost, p, q, int max_iter=100000):
    """Exact transport plan by the transportation simplex (north-west corner start)."""
    cdef const double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef Py_ssize_t m = c.shape[0], n = c.shape[1], i, j
    cdef _Workspace ws = _Workspace(m, n)
    cdef double[:, ::1] x = ws.x
    with nogil:
        _emd_core(c, pv, qv, x, ws.basic, ws.u, ws.v, ws.seen, ws.stack,
                  ws.parent, ws.queue, ws.rs, ws.rd, max_iter)
        for i in range(m):
            for j in range(n):
                if x[i, j] < 0.0:
                    x[i, j] = 0.0
    return ws.x


cdef void _triple(const double[:, ::1] A1, const double[:, ::1] G, const double[:, ::1] A2,
                  double[:, ::1] tmp, double[:, ::1] out) noexcept nogil:
    # out = A1 @ G @ A2
    cdef Py_ssize_t n = A1.shape[0], m = A2.shape[0], i, j, k, l
    cdef double s
    for i in range(n):
        for k in range(m):
            s = 0.0
            for j in range(n):
                s += A1[i, j] * G[j, k]
            tmp[i, k] = s
    for i in range(n):
        for l in range(m):
            s = 0.0
            for k in range(m):
                s += tmp[i, k] * A2[k, l]
            out[i, l] = s


cdef double _dot(const double[:, ::1] a, const double[:, ::1] b) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double s = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            s += a[i, j] * b[i, j]
    return s


def fgw_objective(A1, A2, M, G, double alpha, double c1, double c2):
    cdef const double[:, ::1] a1 = np.ascontiguousarray(A1, dtype=np.float64)
    cdef const double[:, ::1] a2 = np.ascontiguousarray(A2, dtype=np.float64)
    cdef const double[:, ::1] mm = np.ascontiguousarray(M, dtype=np.float64)
    cdef const double[:, ::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef double[:, ::1] tmp = np.empty((mm.shape[0], mm.shape[1]))
    cdef double[:, ::1] aga = np.empty((mm.shape[0], mm.shape[1]))
    _triple(a1, g, a2, tmp, aga)
    return (1.0 - alpha) * _dot(mm, g) + alpha * (c1 + c2 - 2.0 * _dot(aga, g))


def fgw_cg(A1, A2, M, p, q, double alpha, int max_iter, double tol, G0, lp_solver=None):
    """Frank-Wolfe on the FGW objective with an exact linear subproblem.

    Returns ``(G, history, converged)``; see the pure-Python twin.
    """
    if lp_solver is not None:
        raise ValueError("compiled fgw_cg supports the exact subproblem only")
    cdef const double[:, ::1] a1 = np.ascontiguousarray(A1, dtype=np.float64)
    cdef const double[:, ::1] a2 = np.ascontiguousarray(A2, dtype=np.float64)
    cdef const double[:, ::1] mm = np.ascontiguousarray(M, dtype=np.float64)
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef Py_ssize_t n = mm.shape[0], m = mm.shape[1], i, j, k
    G_arr = np.array(G0, dtype=np.float64, order="C")
    cdef double[:, ::1] G = G_arr
    cdef double[:, ::1] tmp = np.empty((n, m))
    cdef double[:, ::1] aga = np.empty((n, m))
    cdef double[:, ::1] ada = np.empty((n, m))
    cdef double[:, ::1] grad = np.empty((n, m))
    cdef double[:, ::1] D = np.empty((n, m))
    cdef _Workspace ws = _Workspace(n, m)
    cdef double[:, ::1] gc = ws.x
    cdef double c1 = 0.0, c2 = 0.0, f, f_new, a, b, tau, delta
    cdef int it, converged = 0

    for i in range(n):
        for j in range(n):
            c1 += pv[i] * a1[i, j] * a1[i, j] * pv[j]
    for i in range(m):
        for j in range(m):
            c2 += qv[i] * a2[i, j] * a2[i, j] * qv[j]

    _triple(a1, G, a2, tmp, aga)
    f = (1.0 - alpha) * _dot(mm, G) + alpha * (c1 + c2 - 2.0 * _dot(aga, G))
    history = [f]
    for it in range(max_iter):
        with nogil:
            for i in range(n):
                for k in range(m):
                    grad[i, k] = (1.0 - alpha) * mm[i, k] - 4.0 * alpha * aga[i, k]
            _emd_core(grad, pv, qv, gc, ws.basic, ws.u, ws.v, ws.seen, ws.stack,
                      ws.parent, ws.queue, ws.rs, ws.rd, 100000)
            for i in range(n):
                for k in range(m):
                    if gc[i, k] < 0.0:
                        gc[i, k] = 0.0
                    D[i, k] = gc[i, k] - G[i, k]
            _triple(a1, D, a2, tmp, ada)
            a = -2.0 * alpha * _dot(ada, D)
            b = (1.0 - alpha) * _dot(mm, D) - 4.0 * alpha * _dot(aga, D)
            if a > 0:
                tau = -b / (2.0 * a)
                if tau < 0.0:
                    tau = 0.0
                elif tau > 1.0:
                    tau = 1.0
            else:
                tau = 1.0 if a + b < 0 else 0.0
        if tau == 0.0:
            converged = 1
            break
        with nogil:
            for i in range(n):
                for k in range(m):
                    G[i, k] = G[i, k] + tau * D[i, k]
            _triple(a1, G, a2, tmp, aga)
            f_new = (1.0 - alpha) * _dot(mm, G) + alpha * (c1 + c2 - 2.0 * _dot(aga, G))
        delta = f - f_new
        history.append(f_new)
        f = f_new
        if delta <= tol * fabs(f) or fabs(delta) <= 1e-15:
            converged = 1
            break
    return G_arr, history, bool(converged)
