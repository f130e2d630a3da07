import csv
import math

import numpy as np
import pytest

from conftest import random_graph
from pgrmood.detector import (ID, OOD, JudgeScore, detect, judge_score_gr, judge_score_pgr, judge_score_pgr_cosine,
                              load_scores, save_scores, score_gap)
from pgrmood.diffusion import COUNTERS, SdeConfig
from pgrmood.encoder import init_encoder
from pgrmood.graph import Graph
from pgrmood.metrics import DetectionResult, compute_metrics
from pgrmood.ot import FgwConfig, fgw_distance, similarity
from pgrmood.prototypes import PrototypeList
from pgrmood.rng import stream

SDE = SdeConfig()


def point(*x):
    return Graph([[0.0]], [list(map(float, x))])


class TestJudgeScorePgr:
    def test_self_in_list(self, rng):
        g = random_graph(rng, 6)
        pl = [random_graph(rng, 5), g, random_graph(rng, 7)]
        assert judge_score_pgr(g, pl).score == pytest.approx(1.0, abs=1e-9)

    def test_singleton(self, rng):
        g, p = random_graph(rng, 5), random_graph(rng, 4)
        assert judge_score_pgr(g, [p]).score == similarity(p, g)

    def test_max_of_two(self):
        # alpha = 0 on one-node graphs: distance is the squared feature gap (4.5 and 1.0)
        g = point(0, 0)
        j = judge_score_pgr(g, [point(1.5, 1.5), point(1, 0)], fgw_alpha=0.0)
        assert j.score == 0.5

    def test_empty_list(self, rng):
        with pytest.raises(ValueError):
            judge_score_pgr(random_graph(rng, 3), [])

    def test_early_exit_only_when_asked(self, rng):
        g = random_graph(rng, 5)
        pl = [g] + [random_graph(rng, 5) for _ in range(3)]
        assert judge_score_pgr(g, pl, early_exit=0.99).score == judge_score_pgr(g, pl).score

    def test_no_reverse_steps_no_loads(self, rng, tmp_path):
        graphs = [random_graph(rng, 5, gid=f"p{k}") for k in range(3)]
        PrototypeList(tuple(graphs), 0.5, 1, {"prototype": 0}).save(tmp_path / "pl")
        before = dict(COUNTERS)
        pl = PrototypeList.load(tmp_path / "pl")
        scores = [judge_score_pgr(random_graph(rng, 6), pl) for _ in range(5)]
        assert dict(COUNTERS) == before
        assert all(s.reverse_steps == 0 and s.method == "pgr" for s in scores)

    def test_pgr_score_rejects_steps(self):
        with pytest.raises(ValueError):
            JudgeScore("g", 0.5, "pgr", reverse_steps=3)
        with pytest.raises(ValueError):
            JudgeScore("g", 0.5, "oracle")

    def test_monotone_transform_invariance(self):
        rng = stream(0, "transform")
        pl = [random_graph(rng, 6, d=2, p=0.3) for _ in range(3)]
        tests = [random_graph(rng, 6, d=2, p=0.3) for _ in range(15)]
        tests += [Graph(random_graph(rng, 6, d=2, p=0.7).adjacency, rng.normal(1.0, 1.0, (6, 2))) for _ in range(15)]
        labels = [1] * 15 + [0] * 15
        base = [judge_score_pgr(g, pl).score for g in tests]
        expd = [judge_score_pgr(g, pl, transform=lambda d: math.exp(-d)).score for g in tests]
        m1 = compute_metrics(DetectionResult(base, labels)).as_dict()
        m2 = compute_metrics(DetectionResult(expd, labels)).as_dict()
        assert all(abs(m1[k] - m2[k]) <= 1e-12 for k in m1)
        for tau in (0.2, 0.4, 0.6):
            # the same decisions come out once tau is carried through the map d -> 1/(1+d) -> exp(-d)
            tau2 = math.exp(-(1 / tau - 1))
            assert [detect(s, tau) for s in base] == [detect(s, tau2) for s in expd]


class TestJudgeScoreCosine:
    def test_self_in_list(self, rng):
        enc = init_encoder(2, 8, 2, seed=0, init_scale=1.0)
        g = random_graph(rng, 5)
        j = judge_score_pgr_cosine(g, [random_graph(rng, 4), g], enc)
        assert j.score == pytest.approx(1.0, abs=1e-12) and j.reverse_steps == 0


class TestJudgeScoreGr:
    def test_small_t_reconstructs(self, toy_score_net, toy_family):
        enc = init_encoder(4, 16, 2, seed=0, init_scale=1.0)
        g = toy_family.draw(4, stream(0, "gr-small"))
        j = judge_score_gr(g, toy_score_net, enc, SDE, 1e-4, stream(1, "gr"))
        assert j.score == pytest.approx(1.0, abs=1e-3)
        assert j.reverse_steps == 1 and j.method == "gr_baseline"

    def test_deterministic_and_counts_steps(self, toy_score_net, toy_family):
        enc = init_encoder(4, 16, 2, seed=0)
        g = toy_family.draw(4, stream(1, "gr-small"))
        before = COUNTERS["reverse_steps"]
        a = judge_score_gr(g, toy_score_net, enc, SDE, 0.3, stream(2, "gr"))
        b = judge_score_gr(g, toy_score_net, enc, SDE, 0.3, stream(2, "gr"))
        assert a.score == b.score
        assert a.reverse_steps == 30 and COUNTERS["reverse_steps"] - before == 60

    def test_separates_reference_families(self, reference_run):
        root, _ = reference_run
        for path in sorted(root.glob("seed-*/scores_gr_baseline.csv")):
            scores = [s.score for s in load_scores(path)]
            assert len(scores) == 200
            assert np.mean(scores[:100]) > np.mean(scores[100:])


class TestDetect:
    @pytest.mark.parametrize("j, expected", [(0.9, ID), (0.5, OOD), (0.1, OOD)])
    def test_threshold(self, j, expected):
        assert detect(j, 0.5) == expected
        assert detect(JudgeScore("g", j, "pgr"), 0.5) == expected

    def test_monotone_in_tau(self):
        scores = np.random.default_rng(0).random(50)
        taus = np.linspace(-0.1, 1.1, 25)
        counts = [sum(detect(s, t) == ID for s in scores) for t in taus]
        assert counts == sorted(counts, reverse=True)
        assert counts[0] == 50 and counts[-1] == 0


class TestScoreGap:
    @pytest.mark.parametrize("ids, oods, expected", [([1, 1], [0, 0], 1.0), ([0.3, 0.6], [0.3, 0.6], 0.0),
                                                     ([0.9, 0.7], [0.4, 0.2], 0.5)])
    def test_cases(self, ids, oods, expected):
        assert score_gap(ids, oods) == pytest.approx(expected, abs=1e-15)

    def test_empty(self):
        with pytest.raises(ValueError):
            score_gap([], [1.0])


class TestScoresFile:
    def test_round_trip(self, tmp_path):
        scores = [JudgeScore("a", 0.1 + 0.2, "pgr", 1.5), JudgeScore("b,c", 1 / 3, "gr_baseline", 20.25, 30)]
        save_scores(scores, tmp_path / "s.csv")
        assert load_scores(tmp_path / "s.csv") == scores
        with open(tmp_path / "s.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["graph_id", "score", "method", "elapsed_ms", "reverse_steps"]
        assert rows[2][0] == "b,c"

    def test_bad_header(self, tmp_path):
        (tmp_path / "s.csv").write_text("id,score\n")
        with pytest.raises(ValueError):
            load_scores(tmp_path / "s.csv")


def test_fgw_distance_drives_similarity():
    a, b = point(0, 0), point(1, 1)
    assert similarity(a, b, FgwConfig(alpha=0.0)) == 1 / (1 + fgw_distance(a, b, FgwConfig(alpha=0.0))[0])
