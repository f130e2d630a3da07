import math

import numpy as np
import pytest

from conftest import random_graph
from pgrmood.diffusion import (COUNTERS, ScoreNetParams, ScoreTrainConfig, SdeConfig, dsm_loss, forward_diffuse,
                               init_score_params, reconstruct, reverse_step, sample, score, train_score_net)
from pgrmood.graph import Corpus, Graph, quantize_adjacency, validate
from pgrmood.ot import similarity
from pgrmood.rng import stream
from pgrmood.synth import sample_family
from pgrmood.weights import WeightsFormatError

SDE = SdeConfig()


class TestSdeConfig:
    def test_defaults(self):
        assert (SDE.beta_min, SDE.beta_max, SDE.num_steps) == (0.1, 20.0, 100)

    def test_closed_forms(self):
        # int_0^1 beta = beta_min + (beta_max - beta_min) / 2 = 10.05
        assert SDE.integrated_beta(1.0) == pytest.approx(10.05, abs=1e-12)
        assert SDE.mean_coef(1.0) == pytest.approx(math.exp(-5.025), rel=1e-14)
        assert SDE.std(1.0) ** 2 == pytest.approx(1 - math.exp(-10.05), rel=1e-14)
        assert SDE.mean_coef(0.0) == 1.0 and SDE.std(0.0) == 0.0
        for t in np.linspace(0, 1, 11):
            assert SDE.mean_coef(t) ** 2 + SDE.std(t) ** 2 == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize("kw", [{"beta_min": 0.0}, {"beta_min": 5.0, "beta_max": 1.0}, {"num_steps": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SdeConfig(**kw)


class TestForward:
    def test_t_zero_identity(self, rng):
        g = random_graph(rng, 5)
        assert forward_diffuse(g, 0.0, SDE, rng) is g

    def test_out_of_range(self, rng):
        with pytest.raises(ValueError):
            forward_diffuse(random_graph(rng, 3), 1.5, SDE, rng)

    def test_symmetry_every_draw(self, rng):
        g = random_graph(rng, 6)
        for t in (0.01, 0.3, 1.0):
            for _ in range(20):
                gt = forward_diffuse(g, t, SDE, rng)
                assert validate(gt) == []

    @pytest.mark.parametrize("t", [0.25, 0.5, 1.0])
    def test_marginal_moments(self, t):
        g0 = Graph([[0, 1, 0], [1, 0, 1], [0, 1, 0]], [[2.0, -1.0], [0.5, 0.0], [-3.0, 1.0]])
        rng = stream(0, "moments", t)
        draws = 10_000
        xs = np.empty((draws, 3, 2))
        aus = np.empty((draws, 3))
        iu = np.triu_indices(3, 1)
        for k in range(draws):
            gt = forward_diffuse(g0, t, SDE, rng)
            xs[k] = gt.features
            aus[k] = gt.adjacency[iu]
        m, s2 = SDE.mean_coef(t), SDE.std(t) ** 2
        for samples, base in ((xs.reshape(draws, -1), g0.features.ravel()), (aus, g0.adjacency[iu])):
            mean = samples.mean(0)
            se = np.sqrt(s2 / draws)
            assert np.all(np.abs(mean - m * base) <= 3 * se)
            assert np.all(np.abs(samples.var(0, ddof=1) / s2 - 1) <= 0.10)


class TestScore:
    def test_zero_params_zero_scores(self, rng):
        params = init_score_params(2, SDE, zero=True)
        sx, sa = score(random_graph(rng, 5), 0.5, params)
        assert not sx.any() and not sa.any()

    def test_untrained_heads_start_at_zero(self, rng):
        sx, sa = score(random_graph(rng, 5), 0.5, init_score_params(2, SDE, seed=1))
        assert not sx.any() and not sa.any()

    def test_symmetric_zero_diagonal(self, toy_score_net, rng):
        g = random_graph(rng, 7, d=4, relaxed=True)
        sx, sa = score(g, 0.4, toy_score_net)
        assert np.array_equal(sa, sa.T)
        assert not np.diag(sa).any()
        assert np.all(np.isfinite(sx)) and np.all(np.isfinite(sa))

    def test_equivariance(self, toy_score_net, rng):
        g = random_graph(rng, 8, d=4, relaxed=True)
        perm = rng.permutation(8)
        sx, sa = score(g, 0.3, toy_score_net)
        px, pa = score(g.permuted(perm), 0.3, toy_score_net)
        assert np.allclose(px, sx[perm], atol=1e-6, rtol=0)
        assert np.allclose(pa, sa[np.ix_(perm, perm)], atol=1e-6, rtol=0)

    def test_dim_mismatch(self, toy_score_net, rng):
        with pytest.raises(ValueError):
            score(random_graph(rng, 4, d=2), 0.5, toy_score_net)

    def test_trained_beats_zero_predictor(self, toy_score_net, toy_family):
        held = Corpus(tuple(sample_family(toy_family, 100, 4, stream(1, "held-out"), "h")))
        zero = init_score_params(4, SDE, zero=True)
        zero_loss = dsm_loss(zero, held, stream(0, "dsm"), draws=8)
        assert zero_loss == pytest.approx(1.0, abs=0.02)  # E[eps^2] = 1 per entry
        assert dsm_loss(toy_score_net, held, stream(0, "dsm"), draws=8) < 0.5 * zero_loss


class TestTraining:
    def test_history_and_heldout_descent(self, toy_score_net, toy_family):
        hist = toy_score_net.loss_history
        assert len(hist) == 30 and hist[-1] < hist[0]
        held = Corpus(tuple(sample_family(toy_family, 50, 4, stream(2, "held-out"), "h")))
        init = init_score_params(4, SDE, seed=0)
        assert dsm_loss(toy_score_net, held, stream(0, "x")) < dsm_loss(init, held, stream(0, "x"))

    def test_deterministic(self, toy_corpus):
        cfg = ScoreTrainConfig(steps=20, log_every=5)
        a = train_score_net(toy_corpus, SDE, cfg, seed=7)
        b = train_score_net(toy_corpus, SDE, cfg, seed=7)
        assert a.tensors.keys() == b.tensors.keys()
        assert all(np.array_equal(a.tensors[k], b.tensors[k]) for k in a.tensors)
        assert a.loss_history == b.loss_history

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            train_score_net(Corpus((), feature_dim=2), SDE)

    def test_memorizes_single_graph(self):
        rng = np.random.default_rng(4)
        g = random_graph(rng, 6, d=2, p=0.4)
        corpus = Corpus(tuple(Graph(g.adjacency, g.features, id=f"c{k}") for k in range(64)))
        params = train_score_net(corpus, SDE, ScoreTrainConfig(), seed=0)
        for k in range(10):
            recon = reconstruct(g, params, SDE, 0.05, stream(k, "memo"))
            assert np.array_equal(quantize_adjacency(recon).adjacency, g.adjacency)


class TestReverseStep:
    def test_drift_only(self, rng):
        g = random_graph(rng, 5, d=2, relaxed=True)
        zero = init_score_params(2, SDE, zero=True)
        t, dt = 0.6, -0.01
        out = reverse_step(g, t, dt, zero, SDE, rng, noise=False)
        beta = SDE.beta(t)
        assert np.allclose(out.features, g.features * (1 - 0.5 * beta * dt), atol=1e-15)
        assert np.allclose(out.adjacency, g.adjacency * (1 - 0.5 * beta * dt), atol=1e-15)

    def test_zero_guidance_is_neutral(self, toy_score_net, rng):
        g = random_graph(rng, 6, d=4, relaxed=True)
        a = reverse_step(g, 0.5, -0.01, toy_score_net, SDE, stream(0, "n"))
        b = reverse_step(g, 0.5, -0.01, toy_score_net, SDE, stream(0, "n"),
                         guidance=(np.zeros((6, 6)), np.zeros((6, 4))))
        assert np.array_equal(a.features, b.features) and np.array_equal(a.adjacency, b.adjacency)

    def test_drift_linear_in_dt(self, toy_score_net, rng):
        g = random_graph(rng, 6, d=4, relaxed=True)
        full = reverse_step(g, 0.5, -0.02, toy_score_net, SDE, rng, noise=False)
        half = reverse_step(g, 0.5, -0.01, toy_score_net, SDE, rng, noise=False)
        assert np.allclose(half.features - g.features, 0.5 * (full.features - g.features), atol=1e-9, rtol=0)
        assert np.allclose(half.adjacency - g.adjacency, 0.5 * (full.adjacency - g.adjacency), atol=1e-9, rtol=0)

    def test_guidance_enters_as_negative_gradient(self, rng):
        g = random_graph(rng, 4, d=2, relaxed=True)
        zero = init_score_params(2, SDE, zero=True)
        dx = rng.standard_normal((4, 2))
        base = reverse_step(g, 0.5, -0.01, zero, SDE, rng, noise=False)
        guided = reverse_step(g, 0.5, -0.01, zero, SDE, rng, guidance=(np.zeros((4, 4)), dx), noise=False)
        # x + (-beta * (0 - dx)) * dt = x + beta * dx * dt: moves against the gradient for dt < 0
        assert np.allclose(guided.features - base.features, SDE.beta(0.5) * dx * -0.01, atol=1e-15)

    def test_output_valid_and_counted(self, toy_score_net, rng):
        before = COUNTERS["reverse_steps"]
        out = reverse_step(random_graph(rng, 5, d=4), 0.2, -0.1, toy_score_net, SDE, rng)
        assert validate(out) == []
        assert COUNTERS["reverse_steps"] == before + 1

    @pytest.mark.parametrize("t, dt", [(0.0, -0.1), (0.5, 0.1), (0.1, -0.2)])
    def test_invalid_steps(self, t, dt, rng):
        with pytest.raises(ValueError):
            reverse_step(random_graph(rng, 3), t, dt, init_score_params(2, SDE), SDE, rng)


class TestSample:
    def test_single_step(self, toy_score_net):
        g = sample(toy_score_net, SdeConfig(num_steps=1), 5, 4, stream(0, "s"))
        assert g.n == 5 and g.d == 4
        assert validate(g) == [] and np.all(np.isfinite(g.features))

    def test_deterministic(self, toy_score_net):
        a = sample(toy_score_net, SDE, 6, 4, stream(3, "s"))
        b = sample(toy_score_net, SDE, 6, 4, stream(3, "s"))
        assert np.array_equal(a.features, b.features) and np.array_equal(a.adjacency, b.adjacency)

    def test_size_distribution_from_training(self, toy_score_net):
        sizes, probs = toy_score_net.size_distribution()
        assert sizes.tolist() == [8] and probs.tolist() == [1.0]


class TestReconstruct:
    def test_small_t_returns_input(self, toy_score_net, rng):
        g = random_graph(rng, 6, d=4)
        recon = reconstruct(g, toy_score_net, SDE, 1e-6, rng)
        assert np.allclose(recon.features, g.features, atol=1e-2)
        assert np.allclose(recon.adjacency, g.adjacency, atol=1e-2)

    def test_valid_for_all_inputs(self, toy_score_net, rng):
        for n in (1, 2, 5, 9):
            recon = reconstruct(random_graph(rng, n, d=4, relaxed=True), toy_score_net, SDE, 0.5, rng)
            assert validate(recon) == []

    def test_in_family_reconstructs_better(self, toy_score_net, toy_family, toy_ood_family):
        rng = stream(0, "recon")
        sims = {}
        for name, fam in (("id", toy_family), ("ood", toy_ood_family)):
            graphs = sample_family(fam, 50, 4, stream(5, name), name)
            sims[name] = np.mean([similarity(g, reconstruct(g, toy_score_net, SDE, 0.3, rng)) for g in graphs])
        assert sims["id"] > sims["ood"]

    def test_invalid_t(self, toy_score_net, rng):
        with pytest.raises(ValueError):
            reconstruct(random_graph(rng, 3, d=4), toy_score_net, SDE, 0.0, rng)


class TestWeightsFile:
    def test_round_trip_and_counter(self, toy_score_net, tmp_path):
        toy_score_net.save(tmp_path / "w.json")
        before = COUNTERS["score_param_loads"]
        loaded = ScoreNetParams.load(tmp_path / "w.json")
        assert COUNTERS["score_param_loads"] == before + 1
        assert all(np.array_equal(loaded.tensors[k], v) for k, v in toy_score_net.tensors.items())
        assert loaded.sde == toy_score_net.sde
        loaded.save(tmp_path / "w2.json")
        assert (tmp_path / "w.json").read_bytes() == (tmp_path / "w2.json").read_bytes()

    def test_wrong_kind(self, tmp_path):
        from pgrmood.encoder import init_encoder

        init_encoder(2).save(tmp_path / "e.json")
        with pytest.raises(WeightsFormatError):
            ScoreNetParams.load(tmp_path / "e.json")

    def test_nonfinite_rejected(self):
        p = init_score_params(2, SDE)
        bad = dict(p.tensors)
        bad["x_out.bias"] = np.full_like(bad["x_out.bias"], np.nan)
        with pytest.raises(ValueError):
            p.with_tensors(bad)
