"""Message-passing graph encoder used by the reconstruction baseline.

Node states start at the raw features and are updated ``L`` times by

    m_v <- sigma((m_v + AGG_{u in N(v)} a_vu m_u) W + b),

then pooled into one graph embedding. Edge weights ``a_vu`` are the
adjacency entries, so relaxed (real-valued) graphs are encoded too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .graph import Corpus, Graph
from .rng import stream
from .weights import load_weights, save_weights

AGGREGATIONS = ("sum", "mean", "max")
POOLINGS = ("sum", "mean")
NONLINEARITIES = ("relu", "none")


@dataclass(frozen=True, eq=False)
class EncoderParams:
    weights: tuple
    biases: tuple
    aggregation: str = "sum"
    pooling: str = "mean"
    nonlinearity: str = "relu"
    edge_bias: float = 0.0
    final_loss: float | None = None
    loss_history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if not self.weights:
            raise ValueError("encoder needs at least one layer")
        if len(self.biases) != len(self.weights):
            raise ValueError("one bias vector per layer is required")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        ws, bs = [], []
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} do not fit")
            if k and w.shape[0] != ws[-1].shape[1]:
                raise ValueError(f"layer {k} expects {w.shape[0]} inputs, previous gives {ws[-1].shape[1]}")
            w.setflags(write=False)
            b.setflags(write=False)
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def save(self, path) -> None:
        tensors = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            tensors[f"layer{k}.weight"] = w
            tensors[f"layer{k}.bias"] = b
        tensors["edge_bias"] = np.array(self.edge_bias)
        arch = {"aggregation": self.aggregation, "pooling": self.pooling,
                "nonlinearity": self.nonlinearity, "num_layers": self.num_layers,
                "final_loss": self.final_loss}
        save_weights(path, "encoder", tensors, arch)

    @classmethod
    def load(cls, path) -> "EncoderParams":
        tensors, arch, _ = load_weights(path, kind="encoder")
        L = int(arch["num_layers"])
        return cls(tuple(tensors[f"layer{k}.weight"] for k in range(L)),
                   tuple(tensors[f"layer{k}.bias"] for k in range(L)),
                   arch["aggregation"], arch["pooling"], arch["nonlinearity"],
                   float(tensors["edge_bias"]), arch.get("final_loss"))


def init_encoder(d_in: int, hidden: int = 32, num_layers: int = 3, seed: int = 0,
                 init_scale: float = 0.35, **kw) -> EncoderParams:
    # Shrunk Glorot range: sum aggregation grows states with degree, and a
    # large first step would otherwise switch most ReLUs off for good.
    rng = stream(seed, "encoder-init")
    dims = [d_in] + [hidden] * num_layers
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = init_scale * math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(tuple(weights), tuple(biases), **kw)


def _aggregate(a: np.ndarray, m: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sum":
        return a @ m
    if kind == "mean":
        deg = (a != 0).sum(axis=1, keepdims=True)
        return (a @ m) / np.maximum(deg, 1)
    out = np.zeros((a.shape[0], m.shape[1]))
    for v in range(a.shape[0]):
        nbrs = np.flatnonzero(a[v])
        if nbrs.size:
            out[v] = (a[v, nbrs, None] * m[nbrs]).max(axis=0)
    return out


def node_states(g: Graph, params: EncoderParams) -> np.ndarray:
    if g.d != params.input_dim:
        raise ValueError(f"graph has d={g.d}, encoder expects {params.input_dim}")
    m = np.asarray(g.features)
    for w, b in zip(params.weights, params.biases):
        m = (m + _aggregate(g.adjacency, m, params.aggregation)) @ w + b
        if params.nonlinearity == "relu":
            m = np.maximum(m, 0.0)
    return m


def encode(g: Graph, params: EncoderParams) -> np.ndarray:
    """Graph embedding ``z_G``: pooled final node states."""
    m = node_states(g, params)
    return m.sum(axis=0) if params.pooling == "sum" else m.mean(axis=0)


@dataclass
class CosineResult:
    value: float
    degenerate: bool = False


def cosine_similarity(z1, z2, with_flag: bool = False):
    """Cosine of the angle between ``z1`` and ``z2``; 0 (flagged) if either is zero."""
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise ValueError(f"length mismatch: {z1.shape} vs {z2.shape}")
    n1, n2 = np.linalg.norm(z1), np.linalg.norm(z2)
    if n1 == 0.0 or n2 == 0.0:
        res = CosineResult(0.0, True)
    else:
        res = CosineResult(float(np.clip(z1 @ z2 / (n1 * n2), -1.0, 1.0)))
    return res if with_flag else res.value


# --- training ------------------------------------------------------------------

@dataclass(frozen=True)
class EncoderTrainConfig:
    hidden: int = 32
    num_layers: int = 3
    aggregation: str = "sum"
    pooling: str = "mean"
    nonlinearity: str = "relu"
    epochs: int = 200
    lr: float = 1e-2
    batch_size: int = 32


def _torch_states(x, a, mask, ws, bs, aggregation, relu):
    m = x
    for w, b in zip(ws, bs):
        if aggregation == "sum":
            agg = a @ m
        elif aggregation == "mean":
            agg = (a @ m) / (a != 0).sum(-1, keepdim=True).clamp(min=1)
        else:
            weighted = a[..., None] * m[:, None, :, :]
            weighted = weighted.masked_fill((a == 0)[..., None], -torch.inf)
            agg = weighted.amax(dim=2)
            agg = torch.where(torch.isinf(agg), torch.zeros_like(agg), agg)
        m = (m + agg) @ w + b
        if relu:
            m = torch.relu(m)
        m = m * mask[..., None]
    return m


def reconstruction_loss(states, a, mask, edge_bias):
    """Mean binary cross-entropy of ``sigmoid(<h_i, h_j> / sqrt(k) + c)`` against ``A[i, j]``.

    ``k`` is the state width; the mean runs over node pairs ``i < j``.
    """
    logits = states @ states.transpose(1, 2) / math.sqrt(states.shape[-1]) + edge_bias
    pair = torch.triu(mask[:, :, None] * mask[:, None, :], diagonal=1)
    bce = torch.nn.functional.binary_cross_entropy_with_logits(logits, a, reduction="none")
    return (bce * pair).sum() / pair.sum().clamp(min=1)


def train_encoder(corpus: Corpus, cfg: EncoderTrainConfig | None = None, seed: int = 0) -> EncoderParams:
    """Self-supervised edge reconstruction with plain minibatch SGD."""
    from .diffusion import pad_graphs

    cfg = cfg or EncoderTrainConfig()
    if len(corpus) == 0:
        raise ValueError("cannot train on an empty corpus")
    init = init_encoder(corpus.feature_dim, cfg.hidden, cfg.num_layers, seed,
                        aggregation=cfg.aggregation, pooling=cfg.pooling, nonlinearity=cfg.nonlinearity)
    ws = [torch.tensor(w, requires_grad=True) for w in init.weights]
    bs = [torch.tensor(b, requires_grad=True) for b in init.biases]
    c = torch.zeros((), dtype=torch.float64, requires_grad=True)
    x_all, a_all, mask_all = (torch.from_numpy(v) for v in pad_graphs(list(corpus.graphs)))
    relu = cfg.nonlinearity == "relu"
    opt = torch.optim.SGD([*ws, *bs, c], lr=cfg.lr)
    rng = stream(seed, "encoder-train")
    history = []

    def full_loss():
        with torch.no_grad():
            states = _torch_states(x_all, a_all, mask_all, ws, bs, cfg.aggregation, relu)
            return reconstruction_loss(states, a_all, mask_all, c).item()

    history.append(full_loss())
    for _ in range(cfg.epochs):
        order = rng.permutation(len(corpus))
        for start in range(0, len(order), cfg.batch_size):
            idx = torch.from_numpy(order[start:start + cfg.batch_size])
            x, a, mask = x_all[idx], a_all[idx], mask_all[idx]
            states = _torch_states(x, a, mask, ws, bs, cfg.aggregation, relu)
            loss = reconstruction_loss(states, a, mask, c)
            opt.zero_grad()
            loss.backward()
            opt.step()
        history.append(full_loss())
    return EncoderParams(tuple(w.detach().numpy().copy() for w in ws),
                         tuple(b.detach().numpy().copy() for b in bs),
                         cfg.aggregation, cfg.pooling, cfg.nonlinearity,
                         float(c.detach()), history[-1], tuple(history))
