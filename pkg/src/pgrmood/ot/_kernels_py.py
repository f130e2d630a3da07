"""Pure-Python FGW kernels.

Same algorithms as the compiled ``_kernels`` extension, used when it is not
built or when ``PGRMOOD_PURE_PYTHON=1``. Adjacency matrices are assumed
symmetric throughout.
"""

import numpy as np

_DEGENERATE_PATIENCE = 50


def _potentials(cost, basic, m, n):
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    stack = [(0, 0)]  # (kind, index): kind 0 = row, 1 = column
    while stack:
        kind, k = stack.pop()
        if kind == 0:
            for j in range(n):
                if basic[k, j] and np.isnan(v[j]):
                    v[j] = cost[k, j] - u[k]
                    stack.append((1, j))
        else:
            for i in range(m):
                if basic[i, k] and np.isnan(u[i]):
                    u[i] = cost[i, k] - v[k]
                    stack.append((0, i))
    return u, v


def _tree_path(basic, m, n, p, q):
    """Cells on the basis-tree path from row ``p`` to column ``q``."""
    # nodes: rows 0..m-1, columns m..m+n-1
    parent = np.full(m + n, -2, dtype=np.int64)
    parent[p] = -1
    queue = [p]
    head = 0
    target = m + q
    while head < len(queue):
        node = queue[head]
        head += 1
        if node == target:
            break
        if node < m:
            for j in range(n):
                if basic[node, j] and parent[m + j] == -2:
                    parent[m + j] = node
                    queue.append(m + j)
        else:
            j = node - m
            for i in range(m):
                if basic[i, j] and parent[i] == -2:
                    parent[i] = node
                    queue.append(i)
    cells = []
    node = target
    while parent[node] != -1:
        prev = parent[node]
        if node < m:
            cells.append((node, prev - m))
        else:
            cells.append((prev, node - m))
        node = prev
    return cells  # ordered from column q back to row p


def emd(cost, p, q, max_iter=100000):
    """Exact transport plan by the transportation simplex (north-west corner start)."""
    cost = np.asarray(cost, dtype=np.float64)
    m, n = cost.shape
    x = np.zeros((m, n))
    basic = np.zeros((m, n), dtype=bool)
    rs = np.array(p, dtype=np.float64)
    rd = np.array(q, dtype=np.float64)
    i = j = 0
    while True:
        v = min(rs[i], rd[j])
        x[i, j] = v
        basic[i, j] = True
        rs[i] -= v
        rd[j] -= v
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

    scale = 1.0 + np.abs(cost).max() if cost.size else 1.0
    tol = 1e-12 * scale
    degenerate = 0
    for _ in range(max_iter):
        u, v = _potentials(cost, basic, m, n)
        red = cost - u[:, None] - v[None, :]
        red[basic] = 0.0
        if degenerate < _DEGENERATE_PATIENCE:
            flat = int(np.argmin(red))
            if red.flat[flat] >= -tol:
                break
        else:  # Bland's rule once pivots stall
            neg = np.flatnonzero(red < -tol)
            if neg.size == 0:
                break
            flat = int(neg[0])
        pi, pj = divmod(flat, n)
        path = _tree_path(basic, m, n, pi, pj)
        minus = path[0::2]
        plus = path[1::2]
        theta = min(x[c] for c in minus)
        leave = min((c for c in minus if x[c] == theta), key=lambda c: c[0] * n + c[1])
        for c in minus:
            x[c] -= theta
        for c in plus:
            x[c] += theta
        x[pi, pj] = theta
        basic[pi, pj] = True
        basic[leave] = False
        x[leave] = 0.0
        degenerate = degenerate + 1 if theta == 0.0 else 0
    np.maximum(x, 0.0, out=x)
    return x


def fgw_objective(A1, A2, M, G, alpha, c1, c2):
    gw = c1 + c2 - 2.0 * np.sum((A1 @ G @ A2) * G)
    return (1.0 - alpha) * np.sum(M * G) + alpha * gw


def _linesearch(a, b):
    if a > 0:
        return min(1.0, max(0.0, -b / (2.0 * a)))
    return 1.0 if a + b < 0 else 0.0


def fgw_cg(A1, A2, M, p, q, alpha, max_iter, tol, G0, lp_solver=None):
    """Frank-Wolfe on the FGW objective.

    Returns ``(G, history, converged)`` where ``history`` holds the objective
    at the initial coupling followed by one value per outer iteration.
    """
    lp = emd if lp_solver is None else lp_solver
    G = np.array(G0, dtype=np.float64)
    c1 = float(p @ (A1 * A1) @ p)
    c2 = float(q @ (A2 * A2) @ q)
    AGA = A1 @ G @ A2
    f = (1.0 - alpha) * np.sum(M * G) + alpha * (c1 + c2 - 2.0 * np.sum(AGA * G))
    history = [f]
    converged = False
    for _ in range(max_iter):
        grad = (1.0 - alpha) * M - 4.0 * alpha * AGA
        Gc = lp(grad, p, q)
        D = Gc - G
        ADA = A1 @ D @ A2
        a = -2.0 * alpha * np.sum(ADA * D)
        b = (1.0 - alpha) * np.sum(M * D) - 4.0 * alpha * np.sum(AGA * D)
        tau = _linesearch(a, b)
        if tau == 0.0:
            converged = True
            break
        G = G + tau * D
        AGA = A1 @ G @ A2
        f_new = (1.0 - alpha) * np.sum(M * G) + alpha * (c1 + c2 - 2.0 * np.sum(AGA * G))
        delta = f - f_new
        history.append(f_new)
        f = f_new
        if delta <= tol * abs(f) or abs(delta) <= 1e-15:
            converged = True
            break
    return G, history, converged
