import dataclasses
import os
import time

import numpy as np
import pytest

from pgrmood.graph import Corpus, Graph, symmetrize_upper
from pgrmood.rng import stream


def random_graph(rng, n, d=2, p=0.4, relaxed=False, gid="g"):
    if relaxed:
        a = symmetrize_upper(rng.random((n, n)))
    else:
        a = symmetrize_upper((rng.random((n, n)) < p).astype(float))
    return Graph(a, rng.standard_normal((n, d)), id=gid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def toy_family():
    from pgrmood.synth import Family

    return Family(model="er", n_min=8, n_max=8, p=0.3, feature_mean=1.0, feature_var=0.25)


@pytest.fixture(scope="session")
def toy_ood_family():
    from pgrmood.synth import Family

    return Family(model="ring", n_min=8, n_max=8, degree=2, feature_mean=-1.0, feature_var=0.25)


@pytest.fixture(scope="session")
def toy_corpus(toy_family):
    from pgrmood.synth import sample_family

    return Corpus(tuple(sample_family(toy_family, 200, 4, stream(0, "toy-train"), "toy")), "train_id")


@pytest.fixture(scope="session")
def toy_score_net(toy_corpus):
    """Score network trained on 200 ER(8, 0.3) graphs (shared by several tests)."""
    from pgrmood.diffusion import ScoreTrainConfig, SdeConfig, train_score_net

    return train_score_net(toy_corpus, SdeConfig(), ScoreTrainConfig(), seed=0)


@pytest.fixture(scope="session")
def reference_config():
    from pgrmood.experiment import ExperimentConfig, default_config_path

    return ExperimentConfig.load(default_config_path())


@pytest.fixture(scope="session")
def reference_run(reference_config, tmp_path_factory):
    """All seeds of the reference benchmark, run once per session."""
    from pgrmood.experiment import run_experiment

    out = tmp_path_factory.mktemp("reference")
    start = time.perf_counter()
    report = run_experiment(reference_config, out)
    report["wall_clock_s"] = time.perf_counter() - start
    return out, report


def small_config(cfg, **kw):
    return dataclasses.replace(cfg, **kw)


# Acceptance criterion number -> (passed, detail); printed after the run.
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_report_header(config):
    from pgrmood.ot import BACKEND

    return f"pgrmood kernel backend: {BACKEND} (PGRMOOD_PURE_PYTHON={os.environ.get('PGRMOOD_PURE_PYTHON', '')})"


def artifacts(root):
    """Serialized outputs under ``root`` keyed by relative path, with wall-clock fields removed."""
    out = {}
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        if path.name == "timings.json":
            continue
        data = path.read_bytes()
        if path.name.startswith("scores_"):
            # elapsed_ms is the fourth column
            rows = [line.split(b",") for line in data.splitlines()]
            data = b"\n".join(b",".join(r[:3] + r[4:]) for r in rows)
        out[str(path.relative_to(root))] = data
    return out
