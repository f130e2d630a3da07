import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgrmood.metrics import DetectionResult, aupr, auroc, compute_metrics, fpr_at_tpr


def brute_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


class TestHandCases:
    def test_perfect(self):
        m = compute_metrics(DetectionResult([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]))
        assert (m.auroc, m.aupr, m.fpr95) == (1.0, 1.0, 0.0)

    def test_constant_scorer(self):
        m = compute_metrics(DetectionResult([0.6] * 4, [1, 1, 0, 0]))
        assert m.auroc == 0.5
        assert m.aupr == 0.5 and m.fpr95 == 1.0

    def test_one_inversion(self):
        r = DetectionResult([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0])
        assert auroc(r) == 0.75
        # thresholds 0.9, 0.6, 0.4: precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1
        assert aupr(r) == 0.5 * 1 + 0.5 * (2 / 3)
        assert fpr_at_tpr(r) == 0.5

    def test_reversed(self):
        m = compute_metrics(DetectionResult([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]))
        assert m.auroc == 0.0 and m.fpr95 == 1.0

    def test_single_class(self):
        with pytest.raises(ValueError):
            compute_metrics(DetectionResult([0.1, 0.2], [1, 1]))

    @pytest.mark.parametrize("scores, labels", [([0.1, 0.2], [1]), ([0.1], [2]), ([np.nan, 0.1], [1, 0])])
    def test_bad_input(self, scores, labels):
        with pytest.raises(ValueError):
            DetectionResult(scores, labels)


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(2024)
    for k in range(100):
        n = int(rng.integers(2, 501))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        # coarse grid so ties are common
        scores = rng.integers(0, 20, n) / 19.0 if k % 2 else rng.random(n)
        assert auroc(DetectionResult(scores, labels)) == brute_auroc(scores.tolist(), labels.tolist())


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10), st.integers(0, 1)), min_size=2, max_size=60))
def test_ranges_and_invariance(pairs):
    scores = np.array([p[0] for p in pairs], dtype=float)
    labels = np.array([p[1] for p in pairs])
    if labels.min() == labels.max():
        return
    m = compute_metrics(DetectionResult(scores, labels))
    assert 0 <= m.auroc <= 1 and 0 < m.aupr <= 1 and 0 <= m.fpr95 <= 1
    shifted = compute_metrics(DetectionResult(np.exp(3 * scores) - 7, labels))
    assert shifted.as_dict() == m.as_dict()
    assert m.auroc == brute_auroc(scores.tolist(), labels.tolist())
