"""Fused Gromov-Wasserstein distance between attributed graphs.

For graphs ``G1 = (A1, X1, mu1)`` and ``G2 = (A2, X2, mu2)``::

    FGW_alpha = min_pi  sum_{ijkl} [alpha (A1[i,j] - A2[k,l])^2
                                    + (1 - alpha) |X1[i] - X2[k]|^2] pi[i,k] pi[j,l]

over couplings ``pi`` with marginals ``mu1`` and ``mu2``. The problem is a
non-convex quadratic program; it is solved to a local minimum by conditional
gradient (Frank-Wolfe) with exact line search, starting from the product
coupling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ..graph import Graph
from . import _kernels_py


@dataclass(frozen=True)
class FgwConfig:
    alpha: float = 0.5
    max_outer_iters: int = 200
    tol: float = 1e-7
    solver: str = "exact"  # or "entropic"
    entropic_epsilon: float = 1e-2
    restarts: int = 1
    seed: int = 0
    backend: str | None = None  # None: whichever kernel module is active

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.solver not in ("exact", "entropic"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.solver == "entropic" and self.entropic_epsilon <= 0:
            raise ValueError("entropic_epsilon must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass(frozen=True, eq=False)
class Coupling:
    pi: np.ndarray
    value: float
    iterations: int = 0
    converged: bool = True
    history: tuple = field(default=(), repr=False)

    def marginal_error(self, mu1, mu2) -> float:
        return float(max(np.abs(self.pi.sum(1) - mu1).max(), np.abs(self.pi.sum(0) - mu2).max()))


def _check_marginals(mu1, mu2):
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    for name, mu in (("mu1", mu1), ("mu2", mu2)):
        if mu.ndim != 1 or mu.size == 0:
            raise ValueError(f"{name} must be a nonempty vector")
        if np.any(mu <= 0):
            raise ValueError(f"{name} has zero or negative entries (degenerate marginal)")
    if abs(mu1.sum() - mu2.sum()) > 1e-10 or abs(mu1.sum() - 1.0) > 1e-10:
        raise ValueError("marginals must both lie on the probability simplex")
    return mu1, mu2


def sinkhorn(cost, mu1, mu2, epsilon, max_iter=10000, tol=1e-12):
    """Entropic transport plan, log-domain Sinkhorn iterations."""
    cost = np.asarray(cost, dtype=np.float64)
    log_a, log_b = np.log(mu1), np.log(mu2)
    f = np.zeros(cost.shape[0])
    g = np.zeros(cost.shape[1])
    k = -cost / epsilon
    for _ in range(max_iter):
        f = log_a - logsumexp(k + g[None, :], axis=1)
        g = log_b - logsumexp(k + f[:, None], axis=0)
        pi = np.exp(k + f[:, None] + g[None, :])
        if np.abs(pi.sum(1) - mu1).max() < tol:
            break
    return pi


def linear_ot(cost, mu1, mu2, solver: str = "exact", entropic_epsilon: float = 1e-2,
              backend: str | None = None) -> Coupling:
    """Optimal coupling for a linear transport cost."""
    from . import get_kernels

    cost = np.asarray(cost, dtype=np.float64)
    mu1, mu2 = _check_marginals(mu1, mu2)
    if cost.shape != (mu1.size, mu2.size):
        raise ValueError(f"cost shape {cost.shape} does not match marginals ({mu1.size}, {mu2.size})")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost has non-finite entries")
    if solver == "exact":
        pi = get_kernels(backend).emd(cost, mu1, mu2)
    elif solver == "entropic":
        pi = sinkhorn(cost, mu1, mu2, entropic_epsilon)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return Coupling(pi, float(np.sum(cost * pi)))


def feature_cost(X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    diff = X1[:, None, :] - X2[None, :, :]
    return np.einsum("ikd,ikd->ik", diff, diff)


def _solve(A1, A2, M, p, q, cfg: FgwConfig, G0):
    from . import get_kernels

    if cfg.solver == "exact":
        k = get_kernels(cfg.backend)
        return k.fgw_cg(A1, A2, M, p, q, cfg.alpha, cfg.max_outer_iters, cfg.tol, G0)
    eps = cfg.entropic_epsilon
    return _kernels_py.fgw_cg(A1, A2, M, p, q, cfg.alpha, cfg.max_outer_iters, cfg.tol, G0,
                              lp_solver=lambda c, a, b: sinkhorn(c, a, b, eps))


def fgw_distance(g1: Graph, g2: Graph, cfg: FgwConfig | None = None) -> tuple[float, Coupling]:
    """FGW distance and the coupling attaining it (a local minimum)."""
    from . import get_kernels

    cfg = cfg or FgwConfig()
    if g1.d != g2.d:
        raise ValueError(f"feature dimensions differ: {g1.d} vs {g2.d}")
    p, q = _check_marginals(g1.node_weights, g2.node_weights)
    A1, A2 = g1.adjacency, g2.adjacency
    M = feature_cost(g1.features, g2.features)

    best = None
    inits = [np.outer(p, q)]
    if cfg.restarts > 1:
        rng = np.random.default_rng(cfg.seed)
        emd = get_kernels(cfg.backend).emd
        inits += [emd(rng.random(M.shape), p, q) for _ in range(cfg.restarts - 1)]
    for G0 in inits:
        G, history, converged = _solve(A1, A2, M, p, q, cfg, G0)
        if best is None or history[-1] < best[1][-1]:
            best = (G, history, converged)
    G, history, converged = best
    value = max(float(history[-1]), 0.0)
    coupling = Coupling(G, value, iterations=len(history) - 1, converged=converged,
                        history=tuple(history))
    return value, coupling


def fgw_gradient(g1: Graph, g2: Graph, coupling: Coupling, alpha: float):
    """Gradient of the FGW objective in ``(A1, X1)`` with the coupling held fixed.

    ``dA1[i, j] = 2 alpha sum_kl (A1[i,j] - A2[k,l]) pi[i,k] pi[j,l]`` and
    ``dX1[i] = 2 (1 - alpha) sum_k (X1[i] - X2[k]) pi[i,k]``. Every entry of
    ``A1`` is treated as an independent variable, diagonal included.
    """
    pi = coupling.pi
    if pi.shape != (g1.n, g2.n):
        raise ValueError(f"coupling shape {pi.shape} does not match graphs ({g1.n}, {g2.n})")
    r = pi.sum(axis=1)
    dA = 2.0 * alpha * (g1.adjacency * np.outer(r, r) - pi @ g2.adjacency @ pi.T)
    dX = 2.0 * (1.0 - alpha) * (g1.features * r[:, None] - pi @ g2.features)
    return dA, dX


def similarity(g1: Graph, g2: Graph, cfg: FgwConfig | None = None) -> float:
    """``1 / (1 + FGW)``: equals 1 for identical graphs, decreasing in the distance."""
    return similarity_from_distance(fgw_distance(g1, g2, cfg)[0])


def similarity_from_distance(d: float) -> float:
    return 1.0 / (1.0 + d)
