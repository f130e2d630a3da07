"""Guided generation of prototypical graphs.

A prototype starts as a noised training graph and is denoised with the guided
score ``S_theta - grad L_guide``, where

    L_guide(G) = mean_{B in batch} FGW(G, B) - mean_{P in proxies} FGW(G, P)

pulls it toward the ID batch and pushes it away from the OOD proxies. One
prototype is built per consecutive batch of the training corpus.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .diffusion import (ScoreNetParams, SdeConfig, forward_diffuse, integrate, perturb_steps)
from .graph import Corpus, Graph, check, dumps_corpus, parse_corpus_lines, quantize_adjacency
from .ot import FgwConfig, fgw_distance, fgw_gradient
from .proxy import PerturbConfig, generate_ood_proxies
from .rng import stream

FORMAT_VERSION = 1


def _fgw_cfg(fgw_alpha, fgw_cfg):
    return replace(fgw_cfg, alpha=fgw_alpha) if fgw_cfg is not None else FgwConfig(alpha=fgw_alpha)


def _mean_distance(graphs, gbar, cfg, with_grad=False):
    total = 0.0
    dA = np.zeros_like(gbar.adjacency)
    dX = np.zeros_like(gbar.features)
    for g in graphs:
        value, coupling = fgw_distance(gbar, g, cfg)
        total += value
        if with_grad:
            ga, gx = fgw_gradient(gbar, g, coupling, cfg.alpha)
            dA += ga
            dX += gx
    k = len(graphs)
    return total / k, dA / k, dX / k


def loss_id(batch, gbar: Graph, fgw_alpha: float = 0.5, fgw_cfg: FgwConfig | None = None) -> float:
    """Mean FGW distance from the prototype to the ID batch."""
    if len(batch) == 0:
        raise ValueError("loss_id needs a nonempty batch")
    return _mean_distance(batch, gbar, _fgw_cfg(fgw_alpha, fgw_cfg))[0]


def loss_ood(proxies, gbar: Graph, fgw_alpha: float = 0.5, fgw_cfg: FgwConfig | None = None) -> float:
    """Negated mean FGW distance from the prototype to the proxies."""
    if len(proxies) == 0:
        raise ValueError("loss_ood needs a nonempty proxy list")
    return -_mean_distance(proxies, gbar, _fgw_cfg(fgw_alpha, fgw_cfg))[0]


@dataclass(frozen=True, eq=False)
class GuideLoss:
    total: float
    loss_id: float
    loss_ood: float
    grad_A: np.ndarray
    grad_X: np.ndarray


def guide_loss(batch, proxies, gbar: Graph, fgw_alpha: float = 0.5, fgw_cfg: FgwConfig | None = None,
               use_id: bool = True, use_ood: bool = True) -> GuideLoss:
    """``loss_id + loss_ood`` and its gradient in ``gbar`` (couplings held fixed).

    The ablation flags drop a term from both the total and the gradient; the
    dropped term is still reported (as NaN when its list is absent).
    """
    if use_id and len(batch) == 0:
        raise ValueError("guide_loss needs a nonempty batch")
    if use_ood and len(proxies) == 0:
        raise ValueError("guide_loss needs a nonempty proxy list")
    cfg = _fgw_cfg(fgw_alpha, fgw_cfg)
    grad_A = np.zeros_like(gbar.adjacency)
    grad_X = np.zeros_like(gbar.features)
    l_id = l_ood = math.nan
    total = 0.0
    if len(batch):
        l_id, dA, dX = _mean_distance(batch, gbar, cfg, with_grad=use_id)
        if use_id:
            total += l_id
            grad_A += dA
            grad_X += dX
    if len(proxies):
        d_ood, dA, dX = _mean_distance(proxies, gbar, cfg, with_grad=use_ood)
        l_ood = -d_ood
        if use_ood:
            total += l_ood
            grad_A -= dA
            grad_X -= dX
    return GuideLoss(total, l_id, l_ood, grad_A, grad_X)


@dataclass(frozen=True)
class PrototypeConfig:
    batch_size: int = 128
    fgw_alpha: float = 0.5
    t_perturb: float = 0.3
    guidance_scale: float = 1.0
    refresh_every: int = 1
    use_id: bool = True
    use_ood: bool = True
    threshold: float = 0.5
    shuffle: bool = False
    seed: int = 0
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    fgw: FgwConfig = field(default_factory=FgwConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.t_perturb <= 1.0:
            raise ValueError("t_perturb must lie in (0, 1]")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be >= 1")
        if self.guidance_scale < 0:
            raise ValueError("guidance_scale must be nonnegative")


def generate_prototype(batch, proxies, params: ScoreNetParams, sde: SdeConfig,
                       fgw_alpha: float, rng: np.random.Generator,
                       cfg: PrototypeConfig | None = None, graph_id: str = "prototype"):
    """One guided prototype and its ``(loss_id, loss_ood)`` history.

    History holds one entry per guidance refresh plus a final entry for the
    returned (quantized) prototype.
    """
    cfg = cfg or PrototypeConfig()
    if len(batch) == 0:
        raise ValueError("generate_prototype needs a nonempty batch")
    if cfg.use_ood and len(proxies) == 0:
        raise ValueError("generate_prototype needs a nonempty proxy list")
    fcfg = _fgw_cfg(fgw_alpha, cfg.fgw)
    guided = cfg.use_id or cfg.use_ood
    history = []
    cache = {}

    def guide(g_t, t, step):
        if step % cfg.refresh_every == 0:
            gl = guide_loss(batch, proxies, g_t, fgw_alpha, fcfg, cfg.use_id, cfg.use_ood)
            history.append((gl.loss_id, gl.loss_ood))
            cache["grad"] = (cfg.guidance_scale * gl.grad_A, cfg.guidance_scale * gl.grad_X)
        return cache["grad"] if guided else None

    g0 = batch[int(rng.integers(len(batch)))]
    g_t = forward_diffuse(g0, cfg.t_perturb, sde, rng)
    relaxed = integrate(g_t, cfg.t_perturb, perturb_steps(cfg.t_perturb, sde), params, sde, rng, guide=guide)
    proto = quantize_adjacency(relaxed, cfg.threshold)
    proto = Graph(proto.adjacency, proto.features, id=graph_id)
    final = guide_loss(batch, proxies, proto, fgw_alpha, fcfg, use_id=False, use_ood=False)
    history.append((final.loss_id, final.loss_ood))
    return check(proto), tuple(history)


@dataclass(frozen=True, eq=False)
class PrototypeList:
    prototypes: tuple
    fgw_alpha: float
    batch_size: int
    seeds: dict
    histories: tuple = ()

    @property
    def I(self) -> int:  # noqa: E743
        return len(self.prototypes)

    def __len__(self) -> int:
        return len(self.prototypes)

    def __iter__(self):
        return iter(self.prototypes)

    def header(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "I": self.I,
            "fgw_alpha": self.fgw_alpha,
            "batch_size": self.batch_size,
            "seeds": self.seeds,
            "histories": [[list(step) for step in h] for h in self.histories],
        }

    def dumps(self) -> str:
        return json.dumps(self.header(), sort_keys=True) + "\n" + dumps_corpus(self.prototypes)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "PrototypeList":
        lines = text.splitlines()
        if not lines:
            raise ValueError("empty prototype-list file")
        head = json.loads(lines[0])
        if head.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported prototype-list format_version {head.get('format_version')!r}")
        protos = parse_corpus_lines(lines[1:]).graphs
        if len(protos) != head["I"]:
            raise ValueError(f"header says I={head['I']} but file holds {len(protos)} prototypes")
        histories = tuple(tuple(tuple(step) for step in h) for h in head.get("histories", []))
        return cls(protos, float(head["fgw_alpha"]), int(head["batch_size"]), dict(head["seeds"]), histories)

    @classmethod
    def load(cls, path) -> "PrototypeList":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def effective_batch_size(n_graphs: int, batch_size: int) -> int:
    return max(1, min(batch_size, n_graphs))


def partition(corpus: Corpus, batch_size: int, shuffle_rng=None) -> list[list[Graph]]:
    graphs = list(corpus.graphs)
    if shuffle_rng is not None:
        graphs = [graphs[i] for i in shuffle_rng.permutation(len(graphs))]
    return [graphs[i:i + batch_size] for i in range(0, len(graphs), batch_size)]


def build_prototype_list(corpus: Corpus, params: ScoreNetParams, sde: SdeConfig,
                         cfg: PrototypeConfig | None = None, proxies=None) -> PrototypeList:
    """One prototype per consecutive batch; proxies are generated once per build."""
    cfg = cfg or PrototypeConfig()
    if len(corpus) == 0:
        raise ValueError("cannot build prototypes from an empty corpus")
    if corpus.role != "train_id":
        raise ValueError(f"prototypes are built from a train_id corpus, got role {corpus.role!r}")
    bs = effective_batch_size(len(corpus), cfg.batch_size)
    batches = partition(corpus, bs, stream(cfg.seed, "shuffle") if cfg.shuffle else None)
    if proxies is None:
        proxies = generate_ood_proxies(params, cfg.perturb, sde) if cfg.use_ood else []
    protos, histories = [], []
    for i, batch in enumerate(batches):
        g, hist = generate_prototype(batch, proxies, params, sde, cfg.fgw_alpha,
                                     stream(cfg.seed, "prototype", i), cfg, graph_id=f"prototype-{i}")
        protos.append(g)
        histories.append(hist)
    seeds = {"prototype": cfg.seed, "perturb": cfg.perturb.seed}
    return PrototypeList(tuple(protos), cfg.fgw_alpha, bs, seeds, tuple(histories))
