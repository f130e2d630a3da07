"""Score-based diffusion on attributed graphs.

Forward noising is the variance-preserving SDE with a linear noise schedule,

    dG = -1/2 beta(t) G dt + sqrt(beta(t)) dw,    beta(t) = beta_min + t (beta_max - beta_min),

applied jointly to node features and to the (symmetric, zero-diagonal)
adjacency. Its marginal is ``G_t = m(t) G_0 + s(t) eps`` with
``m(t) = exp(-1/2 int_0^t beta)`` and ``s(t)^2 = 1 - m(t)^2``.

The score network has a feature head and an adjacency head. It predicts the
injected noise; the score is ``-eps_hat / s(t)``. Sampling integrates the
reverse-time SDE with Euler-Maruyama.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import torch
from torch import nn

from .graph import Corpus, Graph, symmetrize_upper
from .rng import torch_seed
from .weights import load_weights, save_weights

#: Instrumentation: counts reverse-SDE steps executed and score-network loads.
COUNTERS: Counter = Counter()

SCORE_NET_VERSION = "score-net/1"


@dataclass(frozen=True)
class SdeConfig:
    beta_min: float = 0.1
    beta_max: float = 20.0
    num_steps: int = 100

    def __post_init__(self):
        if not 0 < self.beta_min < self.beta_max:
            raise ValueError("need 0 < beta_min < beta_max")
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")

    def beta(self, t: float) -> float:
        return self.beta_min + t * (self.beta_max - self.beta_min)

    def integrated_beta(self, t: float) -> float:
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def mean_coef(self, t: float) -> float:
        return math.exp(-0.5 * self.integrated_beta(t))

    def std(self, t: float) -> float:
        return math.sqrt(-math.expm1(-self.integrated_beta(t)))

    def to_dict(self) -> dict:
        return {"beta_min": self.beta_min, "beta_max": self.beta_max, "num_steps": self.num_steps}

    @classmethod
    def from_dict(cls, d: dict) -> "SdeConfig":
        return cls(float(d["beta_min"]), float(d["beta_max"]), int(d["num_steps"]))


def symmetric_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    return symmetrize_upper(rng.standard_normal((n, n)))


# --- network -------------------------------------------------------------------

def time_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(torch.linspace(0.0, math.log(1000.0), half, dtype=t.dtype))
    angles = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


class ScoreNet(nn.Module):
    """Noise predictor with a feature head and an adjacency head.

    Node states come from residual message passing over the noisy adjacency.
    The adjacency head scores each pair from a symmetric bilinear term
    ``(W h_i) * (W h_j)``, the node states, the current entry ``A_t[i, j]``
    and the time embedding, so it is symmetric by construction.
    """

    def __init__(self, feature_dim: int, hidden: int = 32, num_layers: int = 2, time_dim: int = 16):
        super().__init__()
        self.time_dim = time_dim
        self.time = nn.Linear(time_dim, hidden)
        self.embed = nn.Linear(feature_dim, hidden)
        self.mp_self = nn.ModuleList(nn.Linear(hidden, hidden) for _ in range(num_layers))
        self.mp_nbr = nn.ModuleList(nn.Linear(hidden, hidden, bias=False) for _ in range(num_layers))
        self.x_hidden = nn.Linear(hidden + feature_dim, hidden)
        self.x_out = nn.Linear(hidden, feature_dim)
        self.a_proj = nn.Linear(hidden, hidden, bias=False)
        self.a_pair = nn.Linear(hidden, hidden, bias=False)
        self.a_node = nn.Linear(hidden, hidden)
        self.a_entry = nn.Linear(1, hidden, bias=False)
        self.a_out = nn.Linear(hidden, 1)
        for head in (self.x_out, self.a_out):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def forward(self, x, a, t, node_mask=None):
        temb = self.time(time_embedding(t, self.time_dim))
        h = torch.tanh(self.embed(x) + temb[:, None, :])
        for lin_self, lin_nbr in zip(self.mp_self, self.mp_nbr):
            h = h + torch.tanh(lin_self(h) + lin_nbr(a @ h))
        if node_mask is not None:
            h = h * node_mask[..., None]
        eps_x = self.x_out(torch.tanh(self.x_hidden(torch.cat([h, x], dim=-1)) + temb[:, None, :]))
        q = self.a_proj(h)
        node = self.a_node(h)
        pre = (self.a_pair(q[:, :, None, :] * q[:, None, :, :])
               + node[:, :, None, :] + node[:, None, :, :]
               + self.a_entry(a[..., None]) + temb[:, None, None, :])
        eps_a = self.a_out(torch.tanh(pre)).squeeze(-1)
        n = a.shape[-1]
        eps_a = eps_a * (1.0 - torch.eye(n, dtype=a.dtype))
        if node_mask is not None:
            eps_x = eps_x * node_mask[..., None]
            eps_a = eps_a * node_mask[:, :, None] * node_mask[:, None, :]
        return eps_x, eps_a


@dataclass(frozen=True, eq=False)
class ScoreNetParams:
    """Score-network parameters (read-only arrays) plus the SDE they were trained for."""

    tensors: dict
    arch: dict
    sde: SdeConfig
    version: str = SCORE_NET_VERSION
    loss_history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        frozen = {}
        for name, t in self.tensors.items():
            arr = np.array(t, dtype=np.float64, copy=True)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"tensor {name!r} has non-finite entries")
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "tensors", frozen)

    @property
    def feature_dim(self) -> int:
        return int(self.arch["feature_dim"])

    @cached_property
    def network(self) -> ScoreNet:
        net = ScoreNet(self.feature_dim, self.arch["hidden"], self.arch["num_layers"],
                       self.arch["time_dim"]).double()
        state = {k: torch.from_numpy(np.array(v)) for k, v in self.tensors.items()}
        net.load_state_dict(state)
        net.eval()
        for p in net.parameters():
            p.requires_grad_(False)
        return net

    def size_distribution(self) -> tuple[np.ndarray, np.ndarray]:
        counts = {int(k): int(v) for k, v in self.arch.get("size_counts", {}).items()}
        if not counts:
            raise ValueError("params carry no training size distribution")
        sizes = np.array(sorted(counts))
        freq = np.array([counts[s] for s in sizes], dtype=np.float64)
        return sizes, freq / freq.sum()

    def draw_size(self, rng: np.random.Generator) -> int:
        sizes, probs = self.size_distribution()
        return int(rng.choice(sizes, p=probs))

    def with_tensors(self, tensors: dict) -> "ScoreNetParams":
        return ScoreNetParams(tensors, self.arch, self.sde, self.version)

    def save(self, path) -> None:
        arch = dict(self.arch, version=self.version)
        save_weights(path, "score_net", self.tensors, arch, self.sde.to_dict())

    @classmethod
    def load(cls, path) -> "ScoreNetParams":
        COUNTERS["score_param_loads"] += 1
        tensors, arch, sde = load_weights(path, kind="score_net")
        arch = dict(arch)
        version = arch.pop("version", SCORE_NET_VERSION)
        return cls(tensors, arch, SdeConfig.from_dict(sde), version)


def init_score_params(feature_dim: int, sde: SdeConfig, seed: int = 0, hidden: int = 32,
                      num_layers: int = 2, time_dim: int = 16, size_counts=None,
                      zero: bool = False) -> ScoreNetParams:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(torch_seed(seed, "score-init"))
        net = ScoreNet(feature_dim, hidden, num_layers, time_dim).double()
    tensors = {k: v.detach().numpy().copy() for k, v in net.state_dict().items()}
    if zero:
        tensors = {k: np.zeros_like(v) for k, v in tensors.items()}
    arch = {"feature_dim": feature_dim, "hidden": hidden, "num_layers": num_layers,
            "time_dim": time_dim, "size_counts": dict(size_counts or {})}
    return ScoreNetParams(tensors, arch, sde)


# --- forward process -----------------------------------------------------------

def forward_diffuse(g0: Graph, t: float, sde: SdeConfig, rng: np.random.Generator) -> Graph:
    """Draw ``G_t`` from the closed-form VP marginal given ``G_0``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if t == 0.0:
        return g0
    m, s = sde.mean_coef(t), sde.std(t)
    x = m * g0.features + s * rng.standard_normal(g0.features.shape)
    a = m * g0.adjacency + s * symmetric_noise(rng, g0.n)
    return g0.with_arrays(adjacency=a, features=x)


# --- score and reverse process -------------------------------------------------

def _predict_noise(g_t: Graph, t: float, params: ScoreNetParams):
    if g_t.d != params.feature_dim:
        raise ValueError(f"graph has d={g_t.d}, score network expects {params.feature_dim}")
    with torch.no_grad():
        ex, ea = params.network(
            torch.from_numpy(np.array(g_t.features))[None],
            torch.from_numpy(np.array(g_t.adjacency))[None],
            torch.tensor([t], dtype=torch.float64),
        )
    return ex[0].numpy(), ea[0].numpy()


def score(g_t: Graph, t: float, params: ScoreNetParams):
    """Estimated ``grad log p_t`` at ``G_t``: ``(score_X, score_A)``."""
    ex, ea = _predict_noise(g_t, t, params)
    s = params.sde.std(t)
    return -ex / s, -ea / s


def reverse_step(g_t: Graph, t: float, dt: float, params: ScoreNetParams, sde: SdeConfig,
                 rng: np.random.Generator, guidance=None, noise: bool = True) -> Graph:
    """One Euler-Maruyama step of the reverse-time SDE (``dt < 0``).

    ``guidance`` is an optional ``(dA, dX)`` gradient of a guide loss; the
    score is replaced by ``score - gradient``.
    """
    if not 0.0 < t <= 1.0:
        raise ValueError(f"t must lie in (0, 1], got {t}")
    if not (dt < 0 and -dt <= t + 1e-12):
        raise ValueError(f"need -t <= dt < 0, got dt={dt} at t={t}")
    COUNTERS["reverse_steps"] += 1
    s_x, s_a = score(g_t, t, params)
    if guidance is not None:
        d_a, d_x = guidance
        s_a = s_a - symmetrize_upper(d_a)
        s_x = s_x - d_x
    beta = sde.beta(t)
    x = g_t.features + (-0.5 * beta * g_t.features - beta * s_x) * dt
    a = g_t.adjacency + (-0.5 * beta * g_t.adjacency - beta * s_a) * dt
    if noise:
        scale = math.sqrt(beta * -dt)
        x = x + scale * rng.standard_normal(x.shape)
        a = a + scale * symmetric_noise(rng, g_t.n)
    return g_t.with_arrays(adjacency=symmetrize_upper(a), features=x)


def reverse_times(t_start: float, num_steps: int):
    """Step start times ``t_start, ..., dt`` and the (negative) step size."""
    dt = -t_start / num_steps
    return [t_start - k * t_start / num_steps for k in range(num_steps)], dt


def _finish(g: Graph) -> Graph:
    return g.with_arrays(adjacency=np.clip(g.adjacency, 0.0, 1.0))


def integrate(g_start: Graph, t_start: float, num_steps: int, params: ScoreNetParams,
              sde: SdeConfig, rng: np.random.Generator, guide=None) -> Graph:
    """Reverse-integrate from ``t_start`` to 0; the last step adds no noise.

    ``guide(g_t, t, step)`` may return a guidance gradient for each step.
    """
    times, dt = reverse_times(t_start, num_steps)
    g = g_start
    for k, t in enumerate(times):
        guidance = guide(g, t, k) if guide is not None else None
        g = reverse_step(g, t, dt, params, sde, rng, guidance=guidance, noise=k < num_steps - 1)
    return _finish(g)


def sample(params: ScoreNetParams, sde: SdeConfig, n_nodes: int, d: int,
           rng: np.random.Generator, graph_id: str = "sample") -> Graph:
    """Unconditional generation from Gaussian noise at ``t = 1``."""
    if d != params.feature_dim:
        raise ValueError(f"d={d} does not match the score network ({params.feature_dim})")
    x = rng.standard_normal((n_nodes, d))
    a = symmetric_noise(rng, n_nodes)
    return integrate(Graph(a, x, id=graph_id), 1.0, sde.num_steps, params, sde, rng)


def perturb_steps(t_perturb: float, sde: SdeConfig) -> int:
    return max(1, int(round(t_perturb * sde.num_steps)))


def reconstruct(g: Graph, params: ScoreNetParams, sde: SdeConfig, t_perturb: float,
                rng: np.random.Generator) -> Graph:
    """Noise ``g`` to ``t_perturb`` and denoise it back to ``t = 0``."""
    if not 0.0 < t_perturb <= 1.0:
        raise ValueError(f"t_perturb must lie in (0, 1], got {t_perturb}")
    g_t = forward_diffuse(g, t_perturb, sde, rng)
    return integrate(g_t, t_perturb, perturb_steps(t_perturb, sde), params, sde, rng)


# --- training ------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreTrainConfig:
    steps: int = 1500
    batch_size: int = 64
    lr: float = 2e-3
    hidden: int = 32
    num_layers: int = 2
    time_dim: int = 16
    t_min: float = 1e-3
    grad_clip: float = 1.0
    log_every: int = 50

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.log_every < 1:
            raise ValueError("steps, batch_size and log_every must be >= 1")
        if self.lr <= 0 or not 0.0 < self.t_min < 1.0:
            raise ValueError("lr must be positive and t_min must lie in (0, 1)")


def pad_graphs(graphs):
    """Stack graphs into zero-padded arrays ``(X, A, node_mask)``."""
    n_max = max(g.n for g in graphs)
    d = graphs[0].d
    x = np.zeros((len(graphs), n_max, d))
    a = np.zeros((len(graphs), n_max, n_max))
    mask = np.zeros((len(graphs), n_max))
    for b, g in enumerate(graphs):
        x[b, : g.n] = g.features
        a[b, : g.n, : g.n] = g.adjacency
        mask[b, : g.n] = 1.0
    return x, a, mask


def _noised_batch(x0, a0, mask, sde, rng, t_min):
    b, n, d = x0.shape
    t = t_min + (1.0 - t_min) * rng.random(b)
    m = np.array([sde.mean_coef(v) for v in t])
    s = np.array([sde.std(v) for v in t])
    pair = mask[:, :, None] * mask[:, None, :] * (1.0 - np.eye(n))
    eps_x = rng.standard_normal(x0.shape) * mask[..., None]
    eps_a = np.triu(rng.standard_normal(a0.shape), 1)
    eps_a = (eps_a + eps_a.transpose(0, 2, 1)) * pair
    x_t = m[:, None, None] * x0 + s[:, None, None] * eps_x
    a_t = m[:, None, None] * a0 + s[:, None, None] * eps_a
    return t, x_t, a_t, eps_x, eps_a, pair


def _dsm_loss(net, t, x_t, a_t, eps_x, eps_a, mask, pair):
    mask_t = torch.from_numpy(mask)
    pred_x, pred_a = net(torch.from_numpy(x_t), torch.from_numpy(a_t), torch.from_numpy(t), mask_t)
    upper = torch.from_numpy(np.triu(pair, 1))
    err_x = ((pred_x - torch.from_numpy(eps_x)) ** 2 * mask_t[..., None]).sum()
    err_a = ((pred_a - torch.from_numpy(eps_a)) ** 2 * upper).sum()
    count = mask.sum() * x_t.shape[-1] + upper.sum()
    return (err_x + err_a) / count


def dsm_loss(params: ScoreNetParams, corpus: Corpus, rng: np.random.Generator, draws: int = 4) -> float:
    """Noise-prediction error per noised entry, averaged over ``draws`` noisings.

    The zero predictor scores exactly 1 in expectation (unit-variance noise).
    """
    x0, a0, mask = pad_graphs(list(corpus.graphs))
    total = 0.0
    with torch.no_grad():
        for _ in range(draws):
            batch = _noised_batch(x0, a0, mask, params.sde, rng, 1e-3)
            t, x_t, a_t, eps_x, eps_a, pair = batch
            total += float(_dsm_loss(params.network, t, x_t, a_t, eps_x, eps_a, mask, pair))
    return total / draws


def train_score_net(corpus: Corpus, sde: SdeConfig, cfg: ScoreTrainConfig | None = None,
                    seed: int = 0) -> ScoreNetParams:
    """Denoising score matching (noise prediction) with Adam."""
    from .rng import stream

    cfg = cfg or ScoreTrainConfig()
    if len(corpus) == 0:
        raise ValueError("cannot train on an empty corpus")
    graphs = list(corpus.graphs)
    sizes = Counter(g.n for g in graphs)
    params0 = init_score_params(corpus.feature_dim, sde, seed, cfg.hidden, cfg.num_layers,
                                cfg.time_dim, size_counts={str(k): v for k, v in sorted(sizes.items())})
    net = ScoreNet(corpus.feature_dim, cfg.hidden, cfg.num_layers, cfg.time_dim).double()
    net.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in params0.tensors.items()})
    x_all, a_all, mask_all = pad_graphs(graphs)
    rng = stream(seed, "score-train")
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(cfg.steps, 1), eta_min=cfg.lr * 0.05)
    history = []
    running = 0.0
    for step in range(cfg.steps):
        idx = rng.integers(0, len(graphs), size=min(cfg.batch_size, len(graphs)))
        mask = mask_all[idx]
        n_used = int(mask.sum(axis=1).max())
        mask = mask[:, :n_used]
        x0 = x_all[idx, :n_used]
        a0 = a_all[idx, :n_used, :n_used]
        t, x_t, a_t, eps_x, eps_a, pair = _noised_batch(x0, a0, mask, sde, rng, cfg.t_min)
        loss = _dsm_loss(net, t, x_t, a_t, eps_x, eps_a, mask, pair)
        opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
        opt.step()
        sched.step()
        running += loss.item()
        if (step + 1) % cfg.log_every == 0 or step + 1 == cfg.steps:
            history.append(running / ((step % cfg.log_every) + 1))
            running = 0.0
    tensors = {k: v.detach().numpy().copy() for k, v in net.state_dict().items()}
    return ScoreNetParams(tensors, params0.arch, sde, loss_history=tuple(history))
