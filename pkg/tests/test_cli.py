import json

import pytest

from pgrmood.cli import main
from pgrmood.detector import load_scores
from pgrmood.graph import load_corpus
from pgrmood.prototypes import PrototypeList

TINY = """
[experiment]
seeds = [0]
ablations = false

[synth]
feature_dim = 2
seed = 1

[synth.id]
n_min = 4
n_max = 5

[synth.ood]
model = "ring"
n_min = 4
n_max = 5
feature_mean = -1.0

[synth.counts]
train = 12
test_id = 4
test_ood = 4

[score_train]
steps = 20

[encoder]
epochs = 2

[prototypes]
batch_size = 8
t_perturb = 0.05

[perturb]
strength = 0.1
proxy_count = 2

[detect]
t_perturb = 0.05
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.toml").write_text(TINY)
    assert main(["synth", "--config", str(d / "tiny.toml"), "--out-dir", str(d / "data")]) == 0
    assert main(["pretrain", "--corpus", str(d / "data/train_id.jsonl"), "--out", str(d / "net.json"),
                 "--encoder-out", str(d / "enc.json"), "--steps", "20", "--encoder-epochs", "2"]) == 0
    return d


def test_synth_writes_three_corpora(work):
    sizes = [len(load_corpus(work / "data" / f"{n}.jsonl")) for n in ("train_id", "test_id", "test_ood")]
    assert sizes == [12, 4, 4]


def test_prototypes_detect_eval(work, capsys):
    d = work
    assert main(["prototypes", "--config", str(d / "tiny.toml"), "--weights", str(d / "net.json"),
                 "--corpus", str(d / "data/train_id.jsonl"), "--out", str(d / "pl"),
                 "--dump-proxies", str(d / "proxies.jsonl")]) == 0
    pl = PrototypeList.load(d / "pl")
    assert pl.I == 2 and pl.batch_size == 8  # batch size from [prototypes], proxy count from [perturb]
    assert len(load_corpus(d / "proxies.jsonl")) == 2

    tests = ["--corpus", str(d / "data/test_id.jsonl"), "--corpus", str(d / "data/test_ood.jsonl")]
    assert main(["detect", "--prototypes", str(d / "pl"), *tests, "--out", str(d / "pgr.csv"), "--tau", "0.5"]) == 0
    assert "ID" in capsys.readouterr().out
    scores = load_scores(d / "pgr.csv")
    assert len(scores) == 8 and all(s.reverse_steps == 0 for s in scores)

    assert main(["detect-gr", "--weights", str(d / "net.json"), "--encoder", str(d / "enc.json"), *tests,
                 "--t-perturb", "0.05", "--out", str(d / "gr.csv")]) == 0
    assert all(s.reverse_steps == 5 for s in load_scores(d / "gr.csv"))

    capsys.readouterr()
    assert main(["eval", "--scores", str(d / "pgr.csv"), *tests, "--out", str(d / "eval.json")]) == 0
    report = json.loads((d / "eval.json").read_text())
    assert report["n_id"] == report["n_ood"] == 4
    assert {"auroc", "aupr", "fpr95"} <= report.keys()
    assert json.loads(capsys.readouterr().out) == report


def test_fgw_command(work, capsys):
    d = work
    (d / "a.jsonl").write_text('{"id": "a", "n": 1, "edges": [], "x": [[0.0]]}\n')
    (d / "b.jsonl").write_text('{"id": "b", "n": 1, "edges": [], "x": [[2.0]]}\n')
    assert main(["fgw", str(d / "a.jsonl"), str(d / "b.jsonl"), "--alpha", "0", "--coupling"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["value"] == 4.0 and out["coupling"] == [[1.0]]


def test_run_command(work, capsys):
    assert main(["run", "--config", str(work / "tiny.toml"), "--out-dir", str(work / "run")]) == 0
    out = capsys.readouterr().out
    assert "pgr" in out and "gr_baseline" in out
    assert (work / "run/seed-0/scores_pgr.csv").exists()


def test_failures_are_phase_tagged(work, capsys):
    assert main(["detect", "--prototypes", str(work / "missing.pl"), "--corpus", str(work / "data/test_id.jsonl"),
                 "--out", str(work / "x.csv")]) == 1
    assert capsys.readouterr().err.startswith("error: [detect]")
    assert main(["eval", "--scores", str(work / "missing.csv"), "--corpus", str(work / "data/test_id.jsonl")]) == 1
    bad = work / "bad.toml"
    bad.write_text(TINY.replace("steps = 20", "steps = 0"))
    assert main(["run", "--config", str(bad), "--out-dir", str(work / "bad")]) == 1
    assert "error: [config]" in capsys.readouterr().err
    bad.write_text(TINY + '\n[data]\ntrain = "nowhere.jsonl"\n')
    assert main(["run", "--config", str(bad), "--out-dir", str(work / "bad")]) == 1
    assert "error: [data]" in capsys.readouterr().err
