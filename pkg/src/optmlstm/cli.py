"""Command-line entry point: ``optmlstm {generate,benchmark,train,evaluate,gradcheck}``.

Exit codes: 0 success, 1 run failure, 2 configuration error.
"""
import argparse
import json
import os
import sys
from collections import defaultdict

import numpy as np

from . import lob
from .errors import NumericError, OptmError, StateError
from .learning import gradcheck_suite
from .models import KINDS, ModelSpec, build_model, load_checkpoint, save_checkpoint
from .protocol import (
    EvalReport,
    ProtocolConfig,
    benchmark_matrix,
    progressive_test,
    ranked_table,
    train,
    write_results,
)

EXIT_OK, EXIT_RUN_FAILURE, EXIT_CONFIG = 0, 1, 2

MODEL_ALIASES = {"optm": "optm_lstm", "optm-lstm": "optm_lstm"}


class ConfigurationError(Exception):
    pass


def _model_kinds(text):
    kinds = []
    for name in text.split(","):
        name = name.strip().lower()
        kind = MODEL_ALIASES.get(name, name)
        if kind not in KINDS:
            raise ConfigurationError(f"unknown model {name!r}; choose from optm, lstm, gru, persistence, naive")
        kinds.append(kind)
    return kinds


def _sizes(text):
    try:
        return [int(s) for s in str(text).split(",")]
    except ValueError:
        raise ConfigurationError(f"--sizes must be comma-separated integers, got {text!r}") from None


def _add_data_args(p):
    p.add_argument("--data", help="LOB CSV file")
    p.add_argument("--synthetic", choices=lob.REGIMES, help="generate a synthetic stream instead of reading --data")
    p.add_argument("--events", type=int, default=10_000, help="synthetic stream length")
    p.add_argument("--drift", type=float, default=1.0)
    p.add_argument("--noise-std", type=float, default=2.0)


def _add_protocol_args(p):
    p.add_argument("--regime", choices=("short", "long"), default="short")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--normalization", choices=lob.NORMALIZATIONS, default="zscore")
    p.add_argument("--test-len", type=int, default=1000)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--min-delta", type=float, default=0.0)
    p.add_argument("--units", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--look-back", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)


def _load_stream(args):
    if bool(args.data) == bool(args.synthetic):
        raise ConfigurationError("give exactly one data source: --data FILE or --synthetic REGIME")
    if args.data:
        if not os.path.isfile(args.data):
            raise ConfigurationError(f"I/O error: data file not found: {args.data}")
        return lob.load_csv(args.data)
    return lob.generate_synthetic(args.events, args.synthetic, args.seed,
                                  drift=args.drift, noise_std=args.noise_std)


def _protocol(args, sizes):
    return ProtocolConfig(train_sizes=sizes, test_len=args.test_len, regime=args.regime,
                          epochs=args.epochs, patience=args.patience, min_delta=args.min_delta,
                          normalization=args.normalization, seed=args.seed)


def _spec(args, kind):
    return ModelSpec(kind=kind, units=args.units, lr=args.lr, optimizer=args.optimizer,
                     look_back=1 if kind == "optm_lstm" else args.look_back, seed=args.seed)


# -- commands ----------------------------------------------------------------


def cmd_generate(args):
    if args.events < 2:
        raise ConfigurationError("--events must be at least 2")
    stream = lob.generate_synthetic(args.events, args.regime, args.seed,
                                    drift=args.drift, noise_std=args.noise_std, start_mid=args.start_mid)
    parent = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(parent, exist_ok=True)
    lob.write_csv(stream, args.out)
    mids = stream.mids()
    print(f"wrote {len(stream)} events to {args.out}")
    print(f"mid-price: first={mids[0]:.1f} last={mids[-1]:.1f} min={mids.min():.1f} "
          f"max={mids.max():.1f} mean={mids.mean():.3f} std={mids.std():.3f}")
    return EXIT_OK


def cmd_benchmark(args):
    kinds = _model_kinds(args.models)
    cfg = _protocol(args, _sizes(args.sizes))
    specs = [_spec(args, k) for k in kinds]
    stream = _load_stream(args)
    reports, table = benchmark_matrix(cfg, specs, stream, jobs=args.jobs)
    write_results(reports, args.out, table)
    with open(os.path.join(args.out, "run_config.json"), "w", encoding="utf-8") as fh:
        json.dump({"protocol": cfg.to_dict(), "models": [s.to_dict() for s in specs],
                   "data": stream.source}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(table, end="")
    return EXIT_OK if all(r.ok for r in reports) else EXIT_RUN_FAILURE


def cmd_train(args):
    kind = _model_kinds(args.model)[0]
    cfg = _protocol(args, [args.size])
    stream = _load_stream(args)
    if len(stream) < args.size:
        raise ConfigurationError(f"stream has {len(stream)} events, fewer than --size {args.size}")
    model = build_model(_spec(args, kind))
    history = train(model, cfg, stream, args.size)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(model, os.path.join(args.out, "model.npz"))
    with open(os.path.join(args.out, "train_history.json"), "w", encoding="utf-8") as fh:
        json.dump({"model": kind, "train_size": args.size, "regime": args.regime,
                   "normalization": args.normalization, "history": history}, fh, indent=2)
        fh.write("\n")
    last = f"{history[-1]:.4E}" if history else "n/a"
    print(f"trained {kind} on {args.size} events for {len(history)} epochs; final train MSE {last}")
    return EXIT_OK


def cmd_evaluate(args):
    if not os.path.isfile(args.checkpoint):
        raise ConfigurationError(f"I/O error: checkpoint not found: {args.checkpoint}")
    model = load_checkpoint(args.checkpoint)
    stream = _load_stream(args)
    start = args.start if args.start is not None else model.train_size
    if not start:
        raise ConfigurationError("checkpoint does not record its training size; pass --start")
    cfg = ProtocolConfig(train_sizes=[start], test_len=args.test_len, normalization=model.normalizer.mode)
    report = EvalReport(model.kind, start, args.test_len, "n/a", cfg.normalization, model.spec.seed,
                        train_mse=None)
    try:
        errors = progressive_test(model, cfg, stream, start)
        report.test_mse = float(np.mean(errors))
    except (NumericError, StateError) as exc:
        report.status, report.error = "failed", f"{type(exc).__name__}: {exc}"
    write_results([report], args.out)
    print(ranked_table([report]), end="")
    return EXIT_OK if report.ok else EXIT_RUN_FAILURE


def cmd_gradcheck(args):
    results = gradcheck_suite(seed=args.seed, perturb=args.perturb)
    worst = defaultdict(float)
    for r in results:
        key = (r.case, r.tensor)
        worst[key] = max(worst[key], r.rel_error)
    failed = [(k, v) for k, v in worst.items() if not v < args.tol]
    print(f"{'case':<18} {'tensor':<9} {'max rel err':>12}")
    for (case, tensor), err in worst.items():
        flag = "" if err < args.tol else "  FAIL"
        print(f"{case:<18} {tensor:<9} {err:>12.3e}{flag}")
    if failed:
        names = ", ".join(f"{c}/{t}" for (c, t), _ in failed[:8])
        if len(failed) > 8:
            names += f" (+{len(failed) - 8} more)"
        print(f"gradcheck FAILED (tol {args.tol:g}): {names}")
        return EXIT_RUN_FAILURE
    print(f"gradcheck passed: {len(worst)} tensors below {args.tol:g}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="optmlstm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic LOB CSV")
    g.add_argument("--regime", choices=lob.REGIMES, default="random_walk")
    g.add_argument("--events", type=int, default=10_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--drift", type=float, default=1.0)
    g.add_argument("--noise-std", type=float, default=2.0)
    g.add_argument("--start-mid", type=int, default=1_000_000)
    g.add_argument("--out", required=True, help="output CSV path")
    g.set_defaults(func=cmd_generate)

    b = sub.add_parser("benchmark", help="run the progressive benchmark matrix")
    b.add_argument("--config", help="JSON file with default values for any flag (flags win)")
    b.add_argument("--models", default="optm,lstm,gru,persistence,naive")
    b.add_argument("--sizes", default="1000,2000,5000")
    b.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    b.add_argument("--out", default="benchmark_out", help="output directory")
    _add_data_args(b)
    _add_protocol_args(b)
    b.set_defaults(func=cmd_benchmark)

    t = sub.add_parser("train", help="train one model and save a checkpoint")
    t.add_argument("--config")
    t.add_argument("--model", default="optm")
    t.add_argument("--size", type=int, default=5000)
    t.add_argument("--out", default="train_out")
    _add_data_args(t)
    _add_protocol_args(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="progressively test a checkpoint")
    e.add_argument("--config")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--start", type=int, default=None,
                   help="index of the first forecast target (default: training size of the checkpoint)")
    e.add_argument("--test-len", type=int, default=1000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default="evaluate_out")
    _add_data_args(e)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--perturb", type=float, default=0.0, help="scale analytic gradients by 1+PERTURB (self-test)")
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(func=cmd_gradcheck)
    return parser


def _parse(parser, argv):
    args = parser.parse_args(argv)
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                defaults = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {path}: {exc}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in defaults.items()})
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    parser = build_parser()
    args = _parse(parser, argv)
    try:
        return args.func(args)
    except (ConfigurationError, OptmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
