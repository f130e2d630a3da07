"""Synthetic ID/OOD graph families.

Two structure models are built in: Erdos-Renyi ``er`` (each pair joined with
probability ``p``) and the ring lattice ``ring`` (each node joined to its
``degree // 2`` nearest neighbours on either side). Node features are drawn
i.i.d. from ``N(mean, var I)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Corpus, Graph, check
from .rng import stream

MODELS = ("er", "ring")


@dataclass(frozen=True)
class Family:
    model: str = "er"
    n_min: int = 6
    n_max: int = 10
    p: float = 0.25
    degree: int = 2
    feature_mean: float | tuple = 1.0
    feature_var: float = 0.25

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown graph model {self.model!r}; expected one of {MODELS}")
        if not 1 <= self.n_min <= self.n_max:
            raise ValueError(f"need 1 <= n_min <= n_max, got {self.n_min}, {self.n_max}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"edge probability must lie in [0, 1], got {self.p}")
        if self.model == "ring" and (self.degree < 0 or self.degree % 2 or self.degree >= self.n_min):
            raise ValueError(f"ring degree must be even and below n_min, got {self.degree}")
        if self.feature_var < 0:
            raise ValueError("feature_var must be nonnegative")
        if isinstance(self.feature_mean, list):
            object.__setattr__(self, "feature_mean", tuple(self.feature_mean))

    def mean_vector(self, d: int) -> np.ndarray:
        m = np.asarray(self.feature_mean, dtype=np.float64)
        if m.ndim == 0:
            return np.full(d, float(m))
        if m.shape != (d,):
            raise ValueError(f"feature_mean has length {m.size}, expected {d}")
        return m

    def adjacency(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.model == "er":
            return er_adjacency(n, self.p, rng)
        return ring_adjacency(n, self.degree)

    def draw(self, d: int, rng: np.random.Generator, graph_id: str = "", label=None) -> Graph:
        n = int(rng.integers(self.n_min, self.n_max + 1))
        a = self.adjacency(n, rng)
        x = self.mean_vector(d) + np.sqrt(self.feature_var) * rng.standard_normal((n, d))
        return Graph(a, x, id=graph_id, label=label)


def er_adjacency(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    upper = np.triu(rng.random((n, n)) < p, 1).astype(np.float64)
    return upper + upper.T


def ring_adjacency(n: int, degree: int) -> np.ndarray:
    a = np.zeros((n, n))
    idx = np.arange(n)
    for k in range(1, degree // 2 + 1):
        a[idx, (idx + k) % n] = 1.0
        a[(idx + k) % n, idx] = 1.0
    return a


@dataclass(frozen=True)
class SynthConfig:
    id_family: Family = field(default_factory=Family)
    ood_family: Family = field(default_factory=lambda: Family(model="ring", degree=2, feature_mean=-1.0))
    n_train: int = 256
    n_test_id: int = 100
    n_test_ood: int = 100
    feature_dim: int = 4
    seed: int = 0

    def __post_init__(self):
        if min(self.n_train, self.n_test_id, self.n_test_ood) < 1:
            raise ValueError("split counts must be >= 1")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        counts = doc.get("counts", {})
        return cls(
            id_family=Family(**doc.get("id", {})),
            ood_family=Family(**doc.get("ood", {"model": "ring", "feature_mean": -1.0})),
            n_train=int(counts.get("train", 256)),
            n_test_id=int(counts.get("test_id", 100)),
            n_test_ood=int(counts.get("test_ood", 100)),
            feature_dim=int(doc.get("feature_dim", 4)),
            seed=int(doc.get("seed", 0)),
        )


def sample_family(family: Family, count: int, d: int, rng, prefix: str, label=None) -> list[Graph]:
    return [check(family.draw(d, rng, f"{prefix}-{i}", label)) for i in range(count)]


def synth_dataset(cfg: SynthConfig) -> tuple[Corpus, Corpus, Corpus]:
    """``(train_id, test_id, test_ood)`` corpora; ids are unique across splits."""
    d = cfg.feature_dim
    train = sample_family(cfg.id_family, cfg.n_train, d, stream(cfg.seed, "synth", "train"), "train", 1)
    test_id = sample_family(cfg.id_family, cfg.n_test_id, d, stream(cfg.seed, "synth", "test_id"), "test_id", 1)
    test_ood = sample_family(cfg.ood_family, cfg.n_test_ood, d, stream(cfg.seed, "synth", "test_ood"),
                             "test_ood", 0)
    return (Corpus(train, "train_id", d), Corpus(test_id, "test_id", d), Corpus(test_ood, "test_ood", d))
