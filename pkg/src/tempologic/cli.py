"""Command-line front end for reproducible generate/train/evaluate/predict runs.

Exit codes are stable across subcommands: 0 success, 1 I/O failure, 2 config
or validation error, 3 numerical failure.  All randomness flows from --seed;
with --deterministic (which requires a seed) reruns and different --workers
counts produce byte-identical outputs, because every stochastic component
draws from its own seed-keyed stream and reductions are order-stable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .events import CorpusError, load_corpus, save_corpus
from .evaluation import CSV_HEADER, csv_row, evaluate_model
from .features import one_hot_tables, similarity_matrix
from .induction import (
    TrainConfig,
    load_model,
    model_predict_next,
    ruleset_components,
    save_model,
    sequential_cover,
)
from .likelihood import DivergenceError
from .rules import RuleSyntaxError, format_rule
from .synth import (
    PRESETS,
    GenerationError,
    generate_dataset,
    load_spec,
    replace_weight,
)

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _config_data(args: argparse.Namespace) -> dict:
    path = getattr(args, "config", None)
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data


def _opt(args: argparse.Namespace, cfg: dict, key: str, default):
    """Flag if given, else config-file entry, else the default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in cfg:
        return cfg[key]
    return default


def _workers(args: argparse.Namespace, cfg: dict) -> int:
    env = os.environ.get("TEMPOLOGIC_WORKERS")
    fallback = int(env) if env else 1
    return int(_opt(args, cfg, "workers", fallback))


def _seed(args: argparse.Namespace, cfg: dict) -> int:
    seed = _opt(args, cfg, "seed", None)
    if getattr(args, "deterministic", False) and seed is None:
        raise ValueError("--deterministic requires --seed")
    return int(seed) if seed is not None else 0


def _resolve_spec(args: argparse.Namespace):
    if getattr(args, "preset", None):
        if args.preset not in PRESETS:
            raise ValueError(f"unknown preset {args.preset!r}; "
                             f"valid presets: {', '.join(sorted(PRESETS))}")
        return PRESETS[args.preset]
    if getattr(args, "spec", None):
        return load_spec(args.spec)
    raise ValueError("need --preset or --spec")


def _train_config(args: argparse.Namespace, cfg: dict) -> TrainConfig:
    return TrainConfig(
        rule_length=int(_opt(args, cfg, "rule_length", 3)),
        max_epochs=int(_opt(args, cfg, "max_epochs", TrainConfig.max_epochs)),
        batch_size=int(_opt(args, cfg, "batch_size", TrainConfig.batch_size)),
        restarts=int(_opt(args, cfg, "restarts", TrainConfig.restarts)),
        weight_threshold=float(_opt(args, cfg, "weight_threshold",
                                    TrainConfig.weight_threshold)),
        max_rules=int(_opt(args, cfg, "max_rules", TrainConfig.max_rules)),
        seed=_seed(args, cfg),
        workers=_workers(args, cfg),
    )


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _config_data(args)
    spec = _resolve_spec(args)
    noise = _opt(args, cfg, "noise_rate", None)
    if noise is not None:
        spec = replace(spec, noise_rate=float(noise))
    raw_n = _opt(args, cfg, "n", None)
    if raw_n is None:
        raise ValueError("need --n (number of sequences)")
    n = int(raw_n)
    if n < 0:
        raise ValueError("--n must be nonnegative")
    seed = _seed(args, cfg)
    data, assignments = generate_dataset(spec, n, seed)
    save_corpus(data, args.out)
    root, _ = os.path.splitext(args.out)
    sidecar = root + ".assign.json"
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump({"assignments": assignments,
                   "rules": [format_rule(replace_weight(r.formula, r.weight))
                             for r in spec.rules]}, fh)
        fh.write("\n")
    total = sum(len(s.target_times) for s in data)
    mean = total / n if n else 0.0
    print(f"wrote {n} sequences to {args.out} (mean target count {mean:.3f}); "
          f"hidden assignments in {sidecar}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config_data(args)
    config = _train_config(args, cfg)
    data = load_corpus(args.data)
    model = sequential_cover(data, config, progress=print)
    save_model(model, args.out)
    root, _ = os.path.splitext(args.out)
    listing = root + ".rules.txt"
    with open(listing, "w", encoding="utf-8") as fh:
        fh.write(f"base rate: {model.base_rate!r}\n")
        for f in model.rules:
            fh.write(format_rule(f) + "\n")
    print(f"learned {len(model.rules)} rule(s); model in {args.out}, "
          f"listing in {listing}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    data = load_corpus(args.data)
    truth = None
    if getattr(args, "preset", None) or getattr(args, "truth", None):
        if getattr(args, "truth", None):
            args.spec = args.truth
        spec = _resolve_spec(args)
        truth = [replace_weight(r.formula, r.weight) for r in spec.rules]
    report = evaluate_model(model, truth, data if len(data) else None)
    print(json.dumps(report.to_json(), indent=2))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(CSV_HEADER + "\n" + csv_row(0, report) + "\n")
        print(f"csv table in {args.csv}")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    data = load_corpus(args.data)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for i, seq in enumerate(data):
            t_last = seq.target_times[-1] if seq.target_times else 0.0
            pred = model_predict_next(model, seq, t_last)
            out.write(json.dumps({"sequence": i, "t_last": t_last,
                                  "predicted": pred}) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    tables = one_hot_tables(model.num_predicates)
    if model.embeddings:
        embs = list(model.embeddings)
    else:
        params, _ = ruleset_components(model, tables)
        embs = params.rules
    if args.json:
        dump = {"base_rate": model.base_rate, "rules": []}
        for f, emb in zip(model.rules, embs):
            W = similarity_matrix(emb.slots, tables.predicates, model.hyper.tau)
            Wr = similarity_matrix(emb.pair_slots, tables.relations, model.hyper.tau)
            dump["rules"].append({
                "rule": format_rule(f),
                "weight": f.weight,
                "static_argmax": [int(j) for j in np.argmax(W, axis=1)],
                "relation_argmax": [int(j) for j in np.argmax(Wr, axis=1)],
                "similarity": np.round(W, 6).tolist(),
                "relation_similarity": np.round(Wr, 6).tolist(),
            })
        print(json.dumps(dump, indent=2))
        return EXIT_OK
    print(f"base rate: {model.base_rate!r}")
    if not model.rules:
        print("no rules")
        return EXIT_OK
    for f, emb in zip(model.rules, embs):
        W = similarity_matrix(emb.slots, tables.predicates, model.hyper.tau)
        Wr = similarity_matrix(emb.pair_slots, tables.relations, model.hyper.tau)
        print()
        for l, row in enumerate(W):
            j = int(np.argmax(row))
            name = "dummy" if j == 0 else f"X{j}"
            print(f"  slot {l}: argmax {name} (score {row[j]:.4f})")
        for p, row in enumerate(Wr):
            j = int(np.argmax(row))
            rel = ("before", "equal", "after", "none")[j]
            print(f"  pair {p}: argmax {rel} (score {row[j]:.4f})")
        print(f"  {format_rule(f)}")
    return EXIT_OK


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=None, help="master random seed")
    sub.add_argument("--config", default=None,
                     help="JSON file of defaults; explicit flags win")
    sub.add_argument("--deterministic", action="store_true",
                     help="require a seed and guarantee byte-identical reruns")
    sub.add_argument("--workers", type=int, default=None,
                     help="worker processes (default: env TEMPOLOGIC_WORKERS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tempologic",
        description="Learn weighted temporal-logic rules that explain a "
                    "target event type in event sequences.")
    subs = parser.add_subparsers(dest="command")

    g = subs.add_parser("generate", help="sample a synthetic corpus")
    g.add_argument("--preset", default=None,
                   help=f"built-in ground truth ({', '.join(sorted(PRESETS))})")
    g.add_argument("--spec", default=None, help="ground-truth spec JSON file")
    g.add_argument("--n", type=int, default=None, required=False,
                   help="number of sequences")
    g.add_argument("--noise-rate", dest="noise_rate", type=float, default=None,
                   help="background rate for unassigned predicates")
    g.add_argument("--out", required=True, help="corpus output path (.jsonl)")
    _add_common(g)
    g.set_defaults(func=cmd_generate)

    t = subs.add_parser("train", help="learn a rule set from a corpus")
    t.add_argument("--data", required=True, help="corpus path")
    t.add_argument("--out", required=True, help="model output path (.json)")
    t.add_argument("--restarts", type=int, default=None)
    t.add_argument("--max-rules", dest="max_rules", type=int, default=None)
    t.add_argument("--rule-length", dest="rule_length", type=int, default=None)
    t.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    t.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    t.add_argument("--weight-threshold", dest="weight_threshold", type=float,
                   default=None)
    _add_common(t)
    t.set_defaults(func=cmd_train)

    e = subs.add_parser("evaluate", help="score a model against data and truth")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True, help="held-out corpus path")
    e.add_argument("--truth", default=None, help="ground-truth spec JSON file")
    e.add_argument("--preset", default=None, help="built-in ground truth name")
    e.add_argument("--csv", default=None, help="write a plotting table here")
    _add_common(e)
    e.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("predict", help="expected next target time per sequence")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="JSONL output (default stdout)")
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    i = subs.add_parser("inspect", help="show a model's selection tables")
    i.add_argument("--model", required=True)
    i.add_argument("--json", action="store_true", help="machine-readable dump")
    _add_common(i)
    i.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (DivergenceError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusError, RuleSyntaxError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
