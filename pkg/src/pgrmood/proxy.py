"""OOD proxies from a multiplicatively perturbed score network.

Each weight matrix ``theta`` (in the ``x @ theta`` orientation) is replaced by
``theta (I + s P)`` with ``P`` i.i.d. standard normal. Sampling from the
perturbed network drifts away from the training distribution, which gives
stand-ins for OOD graphs without touching real OOD data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import ScoreNetParams, SdeConfig, sample
from .graph import Graph, check, quantize_adjacency
from .rng import stream


@dataclass(frozen=True)
class PerturbConfig:
    strength: float = 0.5
    proxy_count: int = 64
    seed: int = 0
    threshold: float = 0.5

    def __post_init__(self):
        if self.strength < 0:
            raise ValueError(f"perturbation strength must be nonnegative, got {self.strength}")
        if self.proxy_count < 1:
            raise ValueError("proxy_count must be >= 1")


def weight_matrix_names(params: ScoreNetParams) -> list[str]:
    return sorted(k for k, v in params.tensors.items() if k.endswith(".weight") and v.ndim == 2)


def perturb_params(params: ScoreNetParams, cfg: PerturbConfig, rng=None) -> ScoreNetParams:
    """Perturbed copy of ``params``; biases are left alone, the input is untouched."""
    if cfg.strength == 0.0:
        return params
    rng = rng if rng is not None else stream(cfg.seed, "perturb")
    tensors = dict(params.tensors)
    for name in weight_matrix_names(params):
        w = params.tensors[name]  # torch layout (out, in): theta = w.T
        theta = w.T
        p = rng.standard_normal((theta.shape[1], theta.shape[1]))
        tensors[name] = (theta + cfg.strength * (theta @ p)).T
    return params.with_tensors(tensors)


def generate_ood_proxies(params: ScoreNetParams, cfg: PerturbConfig, sde: SdeConfig,
                         rng: np.random.Generator | None = None) -> list[Graph]:
    """Perturb once, then draw ``proxy_count`` quantized samples."""
    rng = rng if rng is not None else stream(cfg.seed, "proxies")
    perturbed = perturb_params(params, cfg, stream(cfg.seed, "perturb"))
    d = params.feature_dim
    proxies = []
    for k in range(cfg.proxy_count):
        n = params.draw_size(rng)
        g = sample(perturbed, sde, n, d, rng, graph_id=f"proxy-{k}")
        proxies.append(check(quantize_adjacency(g, cfg.threshold)))
    return proxies
