"""Command-line entry point: ``lginet <subcommand> [options]``.

Exit codes: 0 success, 1 malformed input or configuration, 2 contract
violation, 3 gradient check above tolerance.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import numcore as nc
from .evaluation import VARIANTS, ablation_table, evaluate_model, layer_sweep, rows_to_csv, rows_to_text
from .graphs import FormatError, ParseSample, RelationVocab, build_lgig, parse_conllu, read_jsonl, write_jsonl
from .model import ABLATIONS, CGMP_VARIANTS, ConfigError, DigNet, ModelConfig, TokenVocab
from .numcore import ContractError, DimensionError, OracleError
from .synth import generate
from .training import (
    DataError,
    NonFiniteGradient,
    TrainConfig,
    load_checkpoint,
    load_config,
    preset,
    save_checkpoint,
    train,
)

log = logging.getLogger("lginet")

GRADCHECK_TOL = 1e-4
EXIT_INPUT, EXIT_CONTRACT, EXIT_GRADCHECK = 1, 2, 3


def _seed(args) -> int:
    env = os.environ.get("LGINET_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"LGINET_SEED must be an integer, got {env!r}") from None
    return args.seed


def _configs(args) -> tuple[ModelConfig, TrainConfig]:
    model, train_cfg = preset(args.preset)
    if args.config:
        model, train_cfg = load_config(args.config, (model, train_cfg))
    overrides = {}
    if args.variant:
        overrides["cgmp_variant"] = args.variant
    if args.ablation:
        overrides["ablation"] = args.ablation
    model = replace(model, **overrides)
    t_over = {"seed": _seed(args)}
    if args.precision:
        t_over["precision"] = args.precision
    if getattr(args, "epochs", None):
        t_over["epochs"] = args.epochs
    return model, replace(train_cfg, **t_over)


def _load_samples(path, aspect: str | None = None) -> list[ParseSample]:
    path = Path(path)
    if path.suffix == ".conllu":
        samples = parse_conllu(path.read_text(encoding="utf-8"), str(path))
        if aspect:
            a0, a1 = (int(x) for x in aspect.split(":"))
            samples = [replace(s, aspect_span=(a0, a1)) for s in samples]
        return samples
    return read_jsonl(path)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# subcommands ----------------------------------------------------------


def cmd_build_graph(args) -> int:
    samples = _load_samples(args.data, args.aspect)
    vocab = RelationVocab.from_samples(samples, args.max_bucket)
    records = []
    for s in samples:
        g = build_lgig(s, vocab, args.mode)
        rec = g.to_json()
        rec["tokens"] = s.tokens
        records.append((s, g, rec))
    if args.out is None:
        for _, _, rec in records:
            print(json.dumps(rec))
        return 0
    out = _out_dir(args)
    with open(out / "lgig.jsonl", "w", encoding="utf-8") as fh:
        for _, _, rec in records:
            fh.write(json.dumps(rec) + "\n")
    if args.dot:
        for k, (s, g, _) in enumerate(records):
            (out / f"lgig_{k}.dot").write_text(g.to_dot(s.tokens), encoding="utf-8")
    log.info("wrote %d graphs to %s", len(records), out)
    return 0


def cmd_train(args) -> int:
    model_cfg, train_cfg = _configs(args)
    samples = _load_samples(args.data)
    result = train(model_cfg, train_cfg, samples, log_every=args.log_every)
    out = _out_dir(args)
    save_checkpoint(result.model, out, result.history)
    last = result.history[-1]
    print(json.dumps({"epochs": last.epoch, "loss": last.loss, "acc": last.acc, "checkpoint": str(out / "model.ckpt")}))
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    samples = _load_samples(args.data)
    acc, f1 = evaluate_model(model, samples)
    metrics = {"acc": acc, "f1": f1, "n": len(samples)}
    text = json.dumps(metrics)
    if args.out:
        (_out_dir(args) / "metrics.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def gradcheck_model(model_cfg: ModelConfig, sample: ParseSample, seed: int = 0, max_coords: int | None = None) -> float:
    cfg = replace(model_cfg, dropout_enc=0.0, dropout_other=0.0)
    model = DigNet(cfg, TokenVocab.from_samples([sample]), RelationVocab.from_samples([sample], cfg.max_bucket), seed=seed)
    g = model.prepare(sample)

    def loss():
        return -nc.log(model.forward(g)[sample.label])

    return nc.grad_check(loss, model.params, max_coords=max_coords, seed=seed)


def gradcheck_sample(seed: int, n_nodes: int = 6) -> ParseSample:
    """A synthetic sample whose merged graph has exactly ``n_nodes`` nodes."""
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        s = generate(1, seed=int(rng.integers(1 << 31)), distance=2, min_tokens=n_nodes, max_tokens=n_nodes, multiword_prob=0.5)[0]
        if s.n_tokens - (s.aspect_span[1] - s.aspect_span[0]) + 1 == n_nodes:
            return s
    raise RuntimeError("could not draw a sample of the requested size")


def cmd_gradcheck(args) -> int:
    model_cfg, train_cfg = _configs(args)
    if not args.config and args.preset == "desk":
        model_cfg = replace(model_cfg, d_hidden=8, d_rel=4, d_embed=4, n_heads_rel=2, n_heads_mha=2, L_lgi=1)
    seed = train_cfg.seed
    sample = _load_samples(args.data)[0] if args.data else gradcheck_sample(seed)
    err = gradcheck_model(model_cfg, sample, seed=seed, max_coords=args.max_coords)
    print(f"max relative error {err:.3e} (variant={model_cfg.cgmp_variant}, ablation={model_cfg.ablation})")
    return 0 if err < GRADCHECK_TOL else EXIT_GRADCHECK


def cmd_ablate(args) -> int:
    model_cfg, train_cfg = _configs(args)
    if args.data:
        samples = _load_samples(args.data)
    else:
        samples = generate(args.n, seed=train_cfg.seed, distance=3, distractor=True)
    cut = max(1, int(len(samples) * args.split))
    if cut >= len(samples):
        raise DataError("ablation needs a non-empty held-out split")
    tr, te = samples[:cut], samples[cut:]
    rows = []
    if args.sweep in ("variants", "all"):
        rows += ablation_table(model_cfg, train_cfg, tr, te, VARIANTS)
    if args.sweep in ("lgi", "all"):
        rows += layer_sweep(model_cfg, train_cfg, "L_lgi", range(1, 7), tr, te)
    if args.sweep in ("gcn", "all"):
        rows += layer_sweep(model_cfg, train_cfg, "L_gcn", range(1, 6), tr, te)
    text = rows_to_text(rows)
    if args.out:
        out = _out_dir(args)
        (out / "results.csv").write_text(rows_to_csv(rows), encoding="utf-8")
        (out / "results.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_synth_data(args) -> int:
    samples = generate(
        args.n,
        seed=_seed(args),
        distance=args.distance,
        min_tokens=args.min_tokens,
        max_tokens=args.max_tokens,
        distractor=args.distractor,
    )
    if args.out and args.out.endswith(".jsonl"):
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
    else:
        path = _out_dir(args) / "synth.jsonl"
    write_jsonl(path, samples)
    print(str(path))
    return 0


# argument parsing -----------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat 'key = value' config file")
    common.add_argument("--data", metavar="PATH", help="dataset (.jsonl or .conllu)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, default=0, help="random seed (LGINET_SEED overrides)")
    common.add_argument("--preset", choices=("paper", "desk"), default="desk")
    common.add_argument("--variant", choices=CGMP_VARIANTS, help="cross-graph message passing variant")
    common.add_argument("--ablation", choices=ABLATIONS)
    common.add_argument("--precision", type=int, choices=(32, 64))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lginet", description="Local-global interactive graph sentiment models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", parents=[common], help="dump interactive graphs as JSON")
    p.add_argument("--aspect", metavar="START:END", help="aspect span for CoNLL-U input")
    p.add_argument("--mode", choices=("one-to-one", "one-to-all"), default="one-to-one")
    p.add_argument("--max-bucket", type=int, default=4)
    p.add_argument("--dot", action="store_true", help="also write Graphviz files")
    p.set_defaults(func=cmd_build_graph, needs_data=True)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--epochs", type=int)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train, needs_data=True)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", metavar="DIR", required=True)
    p.set_defaults(func=cmd_eval, needs_data=True)

    p = sub.add_parser("gradcheck", parents=[common], help="compare analytic and numeric gradients")
    p.add_argument("--max-coords", type=int)
    p.set_defaults(func=cmd_gradcheck, needs_data=False)

    p = sub.add_parser("ablate", parents=[common], help="ablation variants and layer sweeps")
    p.add_argument("--sweep", choices=("variants", "lgi", "gcn", "all"), default="all")
    p.add_argument("--epochs", type=int)
    p.add_argument("--n", type=int, default=96, help="synthetic corpus size when --data is absent")
    p.add_argument("--split", type=float, default=0.75, help="training fraction")
    p.set_defaults(func=cmd_ablate, needs_data=False)

    p = sub.add_parser("synth-data", parents=[common], help="write a synthetic corpus")
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--distance", type=int, default=3)
    p.add_argument("--min-tokens", type=int, default=6)
    p.add_argument("--max-tokens", type=int, default=12)
    p.add_argument("--distractor", action="store_true")
    p.set_defaults(func=cmd_synth_data, needs_data=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.needs_data and not args.data:
        print(f"lginet {args.command}: --data is required", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (FormatError, DataError, ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"lginet {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ContractError, DimensionError, OracleError, NonFiniteGradient) as exc:
        print(f"lginet {args.command}: contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
