"""Attributed graphs in optimal-transport form, and the line-delimited corpus format.

A graph is the triple (adjacency, features, node weights). Node weights are
always uniform. Adjacency is either discrete ({0, 1}) or relaxed (real valued,
as produced by the diffusion sampler); both forms share :class:`Graph`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ROLES = ("train_id", "test_id", "test_ood")


class GraphError(ValueError):
    """Base class for graph and corpus errors."""


class InvalidSizeError(GraphError):
    pass


class ValidationError(GraphError):
    def __init__(self, problems: Sequence[str], where: str = ""):
        self.problems = list(problems)
        prefix = f"{where}: " if where else ""
        super().__init__(prefix + "; ".join(self.problems))


class CorpusParseError(GraphError):
    def __init__(self, lineno: int, message: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


class SchemaError(GraphError):
    pass


def uniform_weights(n: int) -> np.ndarray:
    """Uniform node weights ``1_n / n``."""
    if n < 1:
        raise InvalidSizeError(f"node count must be positive, got {n}")
    return np.full(n, 1.0 / n)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable attributed graph ``(A, X, mu)``.

    The constructor only coerces dtypes and fills uniform node weights; it
    does not reject invalid input, so that :func:`validate` can report on it.
    """

    adjacency: np.ndarray
    features: np.ndarray
    node_weights: np.ndarray | None = None
    id: str = ""
    label: int | None = None

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=np.float64, copy=True)
        x = np.array(self.features, dtype=np.float64, copy=True)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise GraphError(f"adjacency must be square, got shape {adj.shape}")
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if self.node_weights is None:
            w = uniform_weights(adj.shape[0]) if adj.shape[0] else np.zeros(0)
        else:
            w = np.array(self.node_weights, dtype=np.float64, copy=True)
        object.__setattr__(self, "adjacency", _frozen(adj))
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "node_weights", _frozen(w))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def is_discrete(self) -> bool:
        a = self.adjacency
        return bool(np.all((a == 0.0) | (a == 1.0)))

    @property
    def form(self) -> str:
        return "discrete" if self.is_discrete else "relaxed"

    def with_arrays(self, adjacency=None, features=None) -> "Graph":
        return Graph(
            self.adjacency if adjacency is None else adjacency,
            self.features if features is None else features,
            id=self.id,
            label=self.label,
        )

    def permuted(self, perm: Sequence[int]) -> "Graph":
        """Relabel nodes: node ``k`` of the result is node ``perm[k]`` here."""
        p = np.asarray(perm)
        return Graph(self.adjacency[np.ix_(p, p)], self.features[p],
                     self.node_weights[p], id=self.id, label=self.label)

    def edge_density(self) -> float:
        n = self.n
        if n < 2:
            return 0.0
        return float(np.triu(self.adjacency, 1).sum() / (n * (n - 1) / 2))

    def __repr__(self) -> str:
        return f"Graph(id={self.id!r}, n={self.n}, d={self.d}, form={self.form})"


def validate(g: Graph) -> list[str]:
    """Return every violated graph invariant; an empty list means valid."""
    problems = []
    a, x, w = g.adjacency, g.features, g.node_weights
    n = a.shape[0]
    if n < 1:
        problems.append("graph has no nodes")
    if not np.all(np.isfinite(a)):
        problems.append("adjacency has non-finite entries")
    if not np.array_equal(a, a.T):
        problems.append("adjacency is not symmetric")
    if n and np.any(np.diag(a) != 0.0):
        problems.append("adjacency has nonzero diagonal")
    if w.shape != (n,):
        problems.append(f"node_weights has shape {w.shape}, expected ({n},)")
    else:
        if n and abs(w.sum() - 1.0) > 1e-12:
            problems.append(f"node_weights sum to {w.sum():.15g}, not 1 (simplex violation)")
        if np.any(w <= 0):
            problems.append("node_weights has non-positive entries (simplex violation)")
    if x.shape[0] != n:
        problems.append(f"features has {x.shape[0]} rows, expected {n}")
    if not np.all(np.isfinite(x)):
        problems.append("features has non-finite entries")
    return problems


def check(g: Graph, where: str = "") -> Graph:
    problems = validate(g)
    if problems:
        raise ValidationError(problems, where or g.id)
    return g


def quantize_adjacency(g: Graph, threshold: float = 0.5) -> Graph:
    """Threshold a relaxed adjacency to {0, 1}, reading the upper triangle."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    upper = np.triu(g.adjacency >= threshold, 1).astype(np.float64)
    return g.with_arrays(adjacency=upper + upper.T)


def symmetrize_upper(a: np.ndarray) -> np.ndarray:
    """Mirror the strict upper triangle; the diagonal becomes zero."""
    u = np.triu(a, 1)
    return u + u.T


@dataclass(frozen=True, eq=False)
class Corpus:
    graphs: tuple[Graph, ...]
    role: str = "train_id"
    feature_dim: int | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise SchemaError(f"unknown corpus role {self.role!r}; expected one of {ROLES}")
        graphs = tuple(self.graphs)
        dims = {g.d for g in graphs}
        if len(dims) > 1:
            raise SchemaError(f"inconsistent feature dimensions in corpus: {sorted(dims)}")
        d = dims.pop() if dims else self.feature_dim
        if self.feature_dim is not None and d != self.feature_dim:
            raise SchemaError(f"corpus feature_dim {self.feature_dim} does not match graphs (d={d})")
        object.__setattr__(self, "graphs", graphs)
        object.__setattr__(self, "feature_dim", d)

    def __len__(self) -> int:
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    def sizes(self) -> np.ndarray:
        return np.array([g.n for g in self.graphs], dtype=np.int64)


# --- corpus line format --------------------------------------------------------

def graph_from_record(rec: dict) -> Graph:
    n = rec["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise GraphError(f"'n' must be a positive integer, got {n!r}")
    adj = np.zeros((n, n))
    for e in rec.get("edges", []):
        if len(e) != 2:
            raise GraphError(f"edge {e!r} is not a pair")
        i, j = int(e[0]), int(e[1])
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"edge {e!r} out of range for n={n}")
        if i == j:
            adj[i, j] = 1.0  # rejected by validation as a self-loop
            continue
        if i > j:
            raise ValidationError([f"edge {e!r} is not an upper-triangle pair (i < j); edge list is asymmetric"])
        adj[i, j] = adj[j, i] = 1.0
    x = np.asarray(rec["x"], dtype=np.float64)
    if x.ndim != 2:
        raise GraphError("'x' must be a list of feature rows")
    label = rec.get("label")
    if label not in (None, 0, 1):
        raise GraphError(f"label must be 0 or 1, got {label!r}")
    return Graph(adj, x, id=str(rec["id"]), label=label)


def graph_to_record(g: Graph) -> dict:
    if not g.is_discrete:
        raise GraphError(f"graph {g.id!r} has relaxed adjacency; quantize before serializing")
    ii, jj = np.nonzero(np.triu(g.adjacency, 1))
    rec = {
        "id": g.id,
        "n": g.n,
        "edges": [[int(i), int(j)] for i, j in zip(ii, jj)],
        "x": g.features.tolist(),
    }
    if g.label is not None:
        rec["label"] = int(g.label)
    return rec


def parse_corpus_lines(lines: Iterable[str], role: str = "train_id") -> Corpus:
    graphs = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            g = graph_from_record(rec)
        except ValidationError as exc:
            raise ValidationError(exc.problems, f"line {lineno}") from exc
        except (json.JSONDecodeError, KeyError, TypeError, GraphError) as exc:
            raise CorpusParseError(lineno, str(exc)) from exc
        problems = validate(g)
        if problems:
            raise ValidationError(problems, f"line {lineno} (graph {g.id!r})")
        graphs.append(g)
    return Corpus(tuple(graphs), role=role)


def load_corpus(path: str | Path, role: str = "train_id") -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus_lines(fh, role=role)


def dumps_corpus(graphs: Iterable[Graph]) -> str:
    return "".join(json.dumps(graph_to_record(g)) + "\n" for g in graphs)


def save_corpus(graphs: Iterable[Graph], path: str | Path) -> None:
    Path(path).write_text(dumps_corpus(graphs), encoding="utf-8")


@dataclass(frozen=True)
class FeatureScaler:
    """Per-dimension standardization fitted on a reference corpus."""

    mean: np.ndarray
    std: np.ndarray = field(repr=False)

    @classmethod
    def fit(cls, corpus: Corpus) -> "FeatureScaler":
        x = np.concatenate([g.features for g in corpus.graphs])
        std = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(std > 0, std, 1.0))

    def apply(self, corpus: Corpus) -> Corpus:
        gs = tuple(g.with_arrays(features=(g.features - self.mean) / self.std) for g in corpus.graphs)
        return Corpus(gs, role=corpus.role, feature_dim=corpus.feature_dim)
