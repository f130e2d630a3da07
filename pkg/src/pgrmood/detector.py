"""Judge scores and the threshold rule.

Two scorers share one output type:

* ``pgr``: maximum FGW similarity to the prototype list. No diffusion model
  is loaded and no reverse step is run at test time.
* ``gr_baseline``: reconstruct the graph with the diffusion model and compare
  encoder embeddings of input and reconstruction by cosine similarity.

A graph is declared ID iff its score is strictly above the threshold.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffusion import COUNTERS, ScoreNetParams, SdeConfig, perturb_steps, reconstruct
from .encoder import EncoderParams, cosine_similarity, encode
from .graph import Graph
from .ot import FgwConfig, fgw_distance
from .ot.fgw import similarity_from_distance

METHODS = ("pgr", "gr_baseline", "pgr_cosine")
ID, OOD = "ID", "OOD"
CSV_FIELDS = ("graph_id", "score", "method", "elapsed_ms", "reverse_steps")


@dataclass(frozen=True)
class JudgeScore:
    graph_id: str
    score: float
    method: str
    elapsed_ms: float = 0.0
    reverse_steps: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.method.startswith("pgr") and self.reverse_steps != 0:
            raise ValueError("prototype scoring never runs reverse steps")


def _check_pl(prototypes):
    if len(prototypes) == 0:
        raise ValueError("prototype list is empty")


def judge_score_pgr(g_test: Graph, prototypes, fgw_alpha: float = 0.5,
                    fgw_cfg: FgwConfig | None = None, transform=similarity_from_distance,
                    early_exit: float | None = None) -> JudgeScore:
    """``J = max_P transform(FGW(P, g_test))`` over the whole prototype list.

    ``early_exit`` stops at the first score reaching that bound (off by default).
    """
    _check_pl(prototypes)
    cfg = FgwConfig(alpha=fgw_alpha) if fgw_cfg is None else fgw_cfg
    steps0, loads0 = COUNTERS["reverse_steps"], COUNTERS["score_param_loads"]
    start = time.perf_counter()
    best = -np.inf
    for proto in prototypes:
        best = max(best, transform(fgw_distance(proto, g_test, cfg)[0]))
        if early_exit is not None and best >= early_exit:
            break
    elapsed = (time.perf_counter() - start) * 1e3
    assert COUNTERS["reverse_steps"] == steps0 and COUNTERS["score_param_loads"] == loads0
    return JudgeScore(g_test.id, float(best), "pgr", elapsed, 0)


def judge_score_pgr_cosine(g_test: Graph, prototypes, encoder: EncoderParams) -> JudgeScore:
    """Prototype scoring with encoder cosine similarity in place of FGW."""
    _check_pl(prototypes)
    start = time.perf_counter()
    z = encode(g_test, encoder)
    best = max(cosine_similarity(encode(p, encoder), z) for p in prototypes)
    return JudgeScore(g_test.id, float(best), "pgr_cosine", (time.perf_counter() - start) * 1e3, 0)


def judge_score_gr(g_test: Graph, params: ScoreNetParams, encoder: EncoderParams, sde: SdeConfig,
                   t_perturb: float, rng: np.random.Generator) -> JudgeScore:
    """Cosine similarity between embeddings of ``g_test`` and its reconstruction."""
    start = time.perf_counter()
    steps0 = COUNTERS["reverse_steps"]
    recon = reconstruct(g_test, params, sde, t_perturb, rng)
    j = cosine_similarity(encode(g_test, encoder), encode(recon, encoder))
    steps = COUNTERS["reverse_steps"] - steps0
    assert steps == perturb_steps(t_perturb, sde)
    return JudgeScore(g_test.id, float(j), "gr_baseline", (time.perf_counter() - start) * 1e3, steps)


def detect(j: JudgeScore | float, tau: float) -> str:
    """``ID`` iff the score is strictly above ``tau``; a tie goes to ``OOD``."""
    score = j.score if isinstance(j, JudgeScore) else float(j)
    return ID if score > tau else OOD


def score_gap(id_scores, ood_scores) -> float:
    """``mean(ID scores) - mean(OOD scores)``."""
    if len(id_scores) == 0 or len(ood_scores) == 0:
        raise ValueError("score_gap needs nonempty ID and OOD score lists")
    return float(np.mean(id_scores) - np.mean(ood_scores))


# --- scores file ---------------------------------------------------------------

def dumps_scores(scores) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for s in scores:
        w.writerow([s.graph_id, repr(s.score), s.method, f"{s.elapsed_ms:.3f}", s.reverse_steps])
    return buf.getvalue()


def save_scores(scores, path) -> None:
    Path(path).write_text(dumps_scores(scores), encoding="utf-8")


def load_scores(path) -> list[JudgeScore]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"scores file header must be {','.join(CSV_FIELDS)}")
        return [JudgeScore(r["graph_id"], float(r["score"]), r["method"], float(r["elapsed_ms"]),
                           int(r["reverse_steps"])) for r in reader]
