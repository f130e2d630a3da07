"""Command-line interface: ``pgrmood <subcommand> ...``.

Every subcommand accepts ``--config FILE``; keys of the TOML table named after
the subcommand (dashes become underscores) fill in flags that were not given
on the command line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .experiment import PhaseError, default_config_path, run_experiment, tomllib

log = logging.getLogger("pgrmood")


class CliError(RuntimeError):
    def __init__(self, phase: str, message: str):
        self.phase = phase
        super().__init__(f"[{phase}] {message}")


def _read_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _merge_config(args, defaults: dict) -> argparse.Namespace:
    section = {}
    if getattr(args, "config", None) and args.command != "synth" and args.command != "run":
        section = _read_toml(args.config).get(args.command, {})
    for key, default in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, section.get(key, default))
    return args


# --- subcommands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    from .graph import save_corpus
    from .synth import SynthConfig, synth_dataset

    doc = _read_toml(args.config) if args.config else {}
    synth = dict(doc.get("synth", doc))
    if args.seed is not None:
        synth["seed"] = args.seed
    train, test_id, test_ood = synth_dataset(SynthConfig.from_dict(synth))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, corpus in (("train_id", train), ("test_id", test_id), ("test_ood", test_ood)):
        save_corpus(corpus.graphs, out / f"{name}.jsonl")
    print(f"wrote {len(train)} train, {len(test_id)} test ID and {len(test_ood)} test OOD graphs to {out}")
    return 0


def cmd_pretrain(args) -> int:
    from dataclasses import replace

    from .diffusion import ScoreTrainConfig, SdeConfig, train_score_net
    from .encoder import EncoderTrainConfig, train_encoder
    from .graph import load_corpus

    _merge_config(args, {"steps": 1500, "seed": 0, "beta_min": 0.1, "beta_max": 20.0, "num_steps": 100,
                         "encoder_epochs": 200})
    corpus = load_corpus(args.corpus, "train_id")
    sde = SdeConfig(args.beta_min, args.beta_max, args.num_steps)
    params = train_score_net(corpus, sde, replace(ScoreTrainConfig(), steps=args.steps), seed=args.seed)
    params.save(args.out)
    print(f"score network: final DSM loss {params.loss_history[-1]:.4f}, saved to {args.out}")
    if args.encoder_out:
        enc = train_encoder(corpus, EncoderTrainConfig(epochs=args.encoder_epochs), seed=args.seed)
        enc.save(args.encoder_out)
        print(f"encoder: final reconstruction loss {enc.final_loss:.4f}, saved to {args.encoder_out}")
    return 0


def cmd_prototypes(args) -> int:
    from .diffusion import ScoreNetParams
    from .graph import load_corpus, save_corpus
    from .prototypes import PrototypeConfig, build_prototype_list
    from .proxy import PerturbConfig, generate_ood_proxies

    perturb = _read_toml(args.config).get("perturb", {}) if args.config else {}
    _merge_config(args, {"batch_size": 128, "fgw_alpha": 0.5, "perturb_strength": perturb.get("strength", 0.5),
                         "proxy_count": perturb.get("proxy_count", 64), "t_perturb": 0.3, "guidance_scale": 1.0,
                         "refresh_every": 1, "seed": 0})
    params = ScoreNetParams.load(args.weights)
    corpus = load_corpus(args.corpus, "train_id")
    cfg = PrototypeConfig(batch_size=args.batch_size, fgw_alpha=args.fgw_alpha, t_perturb=args.t_perturb,
                          guidance_scale=args.guidance_scale, refresh_every=args.refresh_every, seed=args.seed,
                          perturb=PerturbConfig(args.perturb_strength, args.proxy_count, args.seed))
    proxies = generate_ood_proxies(params, cfg.perturb, params.sde)
    if args.dump_proxies:
        save_corpus(proxies, args.dump_proxies)
    pl = build_prototype_list(corpus, params, params.sde, cfg, proxies=proxies)
    pl.save(args.out)
    print(f"wrote I={pl.I} prototypes (batch size {pl.batch_size}) to {args.out}")
    return 0


def _load_test_graphs(paths):
    from .graph import load_corpus

    graphs = []
    for p in paths:
        graphs.extend(load_corpus(p, "test_id").graphs)
    return graphs


def cmd_detect(args) -> int:
    from .detector import detect, judge_score_pgr, save_scores
    from .prototypes import PrototypeList

    _merge_config(args, {"fgw_alpha": 0.5})
    pl = PrototypeList.load(args.prototypes)
    scores = [judge_score_pgr(g, pl.prototypes, args.fgw_alpha) for g in _load_test_graphs(args.corpus)]
    save_scores(scores, args.out)
    if args.tau is not None:
        n_id = sum(detect(s, args.tau) == "ID" for s in scores)
        print(f"tau={args.tau}: {n_id} ID, {len(scores) - n_id} OOD")
    print(f"scored {len(scores)} graphs, wrote {args.out}")
    return 0


def cmd_detect_gr(args) -> int:
    from .detector import judge_score_gr, save_scores
    from .diffusion import ScoreNetParams
    from .encoder import EncoderParams
    from .rng import stream

    _merge_config(args, {"t_perturb": 0.3, "seed": 0})
    params = ScoreNetParams.load(args.weights)
    encoder = EncoderParams.load(args.encoder)
    rng = stream(args.seed, "gr-score")
    scores = [judge_score_gr(g, params, encoder, params.sde, args.t_perturb, rng)
              for g in _load_test_graphs(args.corpus)]
    save_scores(scores, args.out)
    print(f"scored {len(scores)} graphs, wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .detector import load_scores
    from .metrics import DetectionResult, compute_metrics

    scores = load_scores(args.scores)
    labels = {}
    for g in _load_test_graphs(args.corpus):
        if g.label is None:
            raise CliError("eval", f"graph {g.id!r} carries no label")
        labels[g.id] = g.label
    missing = [s.graph_id for s in scores if s.graph_id not in labels]
    if missing:
        raise CliError("eval", f"no label for {len(missing)} scored graphs, e.g. {missing[0]!r}")
    result = DetectionResult(np.array([s.score for s in scores]), np.array([labels[s.graph_id] for s in scores]),
                             scores[0].method if scores else "")
    report = {"method": result.method, "n_id": int(result.labels.sum()),
              "n_ood": int((1 - result.labels).sum()), **compute_metrics(result).as_dict()}
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_fgw(args) -> int:
    from .graph import load_corpus
    from .ot import FgwConfig, fgw_distance

    g1, g2 = (load_corpus(p).graphs[0] for p in (args.g1, args.g2))
    if args.entropic is not None:
        cfg = FgwConfig(alpha=args.alpha, solver="entropic", entropic_epsilon=args.entropic)
    else:
        cfg = FgwConfig(alpha=args.alpha)
    value, coupling = fgw_distance(g1, g2, cfg)
    out = {"value": value, "iterations": coupling.iterations, "converged": coupling.converged}
    if args.coupling:
        out["coupling"] = coupling.pi.tolist()
    print(json.dumps(out))
    return 0


def cmd_run(args) -> int:
    from dataclasses import replace

    from .experiment import ExperimentConfig

    cfg = ExperimentConfig.load(args.config or default_config_path())
    if args.seeds:
        cfg = replace(cfg, seeds=tuple(args.seeds))
    if args.plot:
        cfg = replace(cfg, plot=True)
    report = run_experiment(cfg, args.out_dir)
    for method, ms in report["summary"].items():
        cells = "  ".join(f"{k} {v['mean']:.4f} +- {v['std']:.4f}" for k, v in ms.items())
        print(f"{method:12s} {cells}")
    print("(mean +- sample standard deviation over seeds)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pgrmood", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate the synthetic ID/OOD corpora")
    s.add_argument("--config")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("pretrain", help="train the score network (and optionally the encoder)")
    s.add_argument("--config")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--encoder-out")
    s.add_argument("--steps", type=int)
    s.add_argument("--encoder-epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--beta-min", type=float)
    s.add_argument("--beta-max", type=float)
    s.add_argument("--num-steps", type=int)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("prototypes", help="build the prototype list")
    s.add_argument("--config")
    s.add_argument("--weights", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--fgw-alpha", type=float)
    s.add_argument("--perturb-strength", type=float)
    s.add_argument("--proxy-count", type=int)
    s.add_argument("--t-perturb", type=float)
    s.add_argument("--guidance-scale", type=float)
    s.add_argument("--refresh-every", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--dump-proxies", metavar="PATH")
    s.set_defaults(func=cmd_prototypes)

    s = sub.add_parser("detect", help="score graphs against a prototype list")
    s.add_argument("--config")
    s.add_argument("--prototypes", required=True)
    s.add_argument("--corpus", required=True, action="append")
    s.add_argument("--fgw-alpha", type=float)
    s.add_argument("--tau", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("detect-gr", help="score graphs with the reconstruction baseline")
    s.add_argument("--config")
    s.add_argument("--weights", required=True)
    s.add_argument("--encoder", required=True)
    s.add_argument("--corpus", required=True, action="append")
    s.add_argument("--t-perturb", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_detect_gr)

    s = sub.add_parser("eval", help="AUROC, AUPR and FPR95 of a scores file")
    s.add_argument("--scores", required=True)
    s.add_argument("--corpus", required=True, action="append", help="labelled corpus file(s)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("fgw", help="FGW distance between two single-graph files")
    s.add_argument("g1")
    s.add_argument("g2")
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("--entropic", type=float, metavar="EPS")
    s.add_argument("--coupling", action="store_true", help="also print the coupling")
    s.set_defaults(func=cmd_fgw)

    s = sub.add_parser("run", help="full pipeline from a config file")
    s.add_argument("--config")
    s.add_argument("--out-dir")
    s.add_argument("--seeds", type=int, nargs="+")
    s.add_argument("--plot", action="store_true")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, PhaseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"error: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
