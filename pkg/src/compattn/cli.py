"""``compattn`` command line: flops, verify, gradcheck, bench, generate.

Any subcommand accepts ``--config PATH``, a file of ``key = value`` lines
using the flag names (``hidden = 64``); explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import itertools
import sys

from ._validation import ContractError, check_count

SWEEP_KEYS = {"t": "T_len", "v": "V_len", "hidden": "h", "layers": "d"}


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _sweep(text):
    key, sep, values = text.partition("=")
    key = key.strip().lower()
    if not sep or key not in SWEEP_KEYS:
        raise argparse.ArgumentTypeError(f"sweep must look like v=1,2,3 with key in {sorted(SWEEP_KEYS)}")
    values = _int_list(values)
    if not values:
        raise argparse.ArgumentTypeError(f"sweep {key} has no values")
    return key, values


def build_parser():
    parser = argparse.ArgumentParser(prog="compattn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flops", help="analytic and counted FLOPs")
    p.add_argument("--t", type=int, required=True, help="text tokens")
    p.add_argument("--v", type=int, required=True, help="visual tokens")
    p.add_argument("--hidden", type=int, required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--csv", metavar="PATH", help="write sweep CSV here ('-' for stdout)")
    p.add_argument("--sweep", type=_sweep, action="append", default=[], metavar="KEY=a,b,c")
    p.add_argument("--instrument", action="store_true", help="also count matmuls on a model of this size")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("verify", help="run the oracle property suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seeds", type=int, default=20, help="number of consecutive seeds")

    p = sub.add_parser("bench", help="prefill + decode wall-clock, baseline vs composite")
    p.add_argument("--v", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--hidden", type=int, required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--gen", type=_int_list, default=[2, 8, 32, 128])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--vocab", type=int, default=64)
    p.add_argument("--feat-dim", type=int, default=32)
    p.add_argument("--csv", metavar="PATH")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("generate", help="greedy decoding from a weight file or a seeded demo model")
    p.add_argument("--weights", metavar="PATH")
    p.add_argument("--features", metavar="PATH")
    p.add_argument("--prompt-ids", type=_int_list, required=True)
    p.add_argument("--max-new", type=int, required=True)
    p.add_argument("--mode", choices=["baseline", "composite"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=32, help="demo model only")
    p.add_argument("--layers", type=int, default=2, help="demo model only")
    p.add_argument("--heads", type=int, default=2, help="demo model only")
    p.add_argument("--vocab", type=int, default=64, help="demo model only")
    p.add_argument("--feat-dim", type=int, default=16, help="demo model only")
    p.add_argument("--visual-tokens", type=int, default=8, help="demo features only")

    for p in sub.choices.values():
        p.add_argument("--config", metavar="PATH", help="key = value defaults file")
    parser.subcommands = sub.choices
    return parser


def read_config_file(path):
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ContractError(f"{path}:{lineno}: expected 'key = value'")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _config_path(argv):
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if arg.startswith("--config="):
            return arg.split("=", 1)[1]
    return None


def parse_args(argv):
    parser = build_parser()
    path = _config_path(argv)
    command = next((a for a in argv if not a.startswith("-")), None)
    file_defaults = {}
    if path and command in parser.subcommands:
        file_defaults = _apply_config_file(parser.subcommands[command], path)
    args = parser.parse_args(argv)
    # argparse appends repeatable flags onto their default; a flag replaces the file value
    for key, value in file_defaults.items():
        current = getattr(args, key)
        if isinstance(value, list) and len(current) > len(value):
            setattr(args, key, current[len(value) :])
    return parser, args


def _apply_config_file(sub, path):
    """Install file values as subcommand defaults; explicit flags still win."""
    try:
        file_values = read_config_file(path)
    except (OSError, ContractError) as exc:
        sub.error(str(exc))
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in file_values.items():
        if key not in known or key in ("help", "config"):
            sub.error(f"unknown config key {key!r} in {path}")
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            continue
        try:
            value = action.type(raw) if action.type else raw
        except (ValueError, argparse.ArgumentTypeError) as exc:
            sub.error(f"config key {key}: {exc}")
        defaults[key] = [value] if isinstance(action, argparse._AppendAction) else value
        action.required = False
    sub.set_defaults(**defaults)
    return defaults


def cmd_flops(args, out):
    from .costmodel import CostConfig, flops_report, sweep_to_csv

    base = {"T_len": args.t, "V_len": args.v, "h": args.hidden, "d": args.layers}
    config = CostConfig(**base)
    report = flops_report(config, instrument=args.instrument, seed=args.seed)
    out.write(f"# compattn flops seed={args.seed}\n")
    out.write("\n".join(report.lines()) + "\n")
    if args.sweep or args.csv:
        axes = [(SWEEP_KEYS[k], vals) for k, vals in args.sweep]
        grid = []
        for combo in itertools.product(*(vals for _, vals in axes)):
            entry = dict(base)
            entry.update({name: v for (name, _), v in zip(axes, combo)})
            grid.append(CostConfig(**entry))
        text = sweep_to_csv(grid or [config])
        if args.csv and args.csv != "-":
            with open(args.csv, "w", newline="") as fh:
                fh.write(text)
            out.write(f"wrote {len(grid) or 1} rows to {args.csv}\n")
        else:
            out.write(text)
    return 0


def cmd_verify(args, out):
    from .verify import run_all

    check_count(args.trials, "trials", minimum=1)
    out.write(f"# compattn verify seed={args.seed} trials={args.trials}\n")
    cases = run_all(seed=args.seed, trials=args.trials)
    for case in cases:
        out.write(f"{case}\n")
    failures = sum(not c.ok for c in cases)
    out.write(f"{len(cases)} cases, {failures} failures\n")
    return 1 if failures else 0


def cmd_gradcheck(args, out):
    from .gradcheck import run_gradchecks

    if not args.eps > 0:
        raise ContractError("eps must be > 0")
    check_count(args.seeds, "seeds", minimum=1)
    out.write(f"# compattn gradcheck seed={args.seed} seeds={args.seeds} eps={args.eps:g}\n")
    results = run_gradchecks(seed=args.seed, n_seeds=args.seeds, eps=args.eps)
    for r in results:
        out.write(f"{r}\n")
    failures = sum(not r.ok for r in results)
    worst = max(r.rel_error for r in results)
    out.write(f"{len(results)} checks, {failures} failures, worst rel_err={worst:.3e}\n")
    return 1 if failures else 0


def cmd_bench(args, out):
    from .inference import bench_prefill_decode, bench_to_csv
    from .layers import ModelConfig, build_model

    config = ModelConfig(args.layers, args.hidden, args.heads, args.vocab, args.feat_dim, "baseline")
    model = build_model(config, seed=args.seed)
    out.write(
        f"# compattn bench seed={args.seed} V={args.v} T={args.t} h={args.hidden} d={args.layers} "
        f"a={args.heads} repeats={args.repeats}\n"
    )
    reports, table = bench_prefill_decode(
        (model, model.with_mode("composite")), args.v, args.t, args.gen, args.repeats, args.seed
    )
    out.write("gen,baseline_tok_s,composite_tok_s,speed_ratio\n")
    for gen, tb, tc, ratio in table:
        out.write(f"{gen},{tb:.3f},{tc:.3f},{ratio:.3f}\n")
    text = bench_to_csv(reports)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fh.write(text)
        out.write(f"wrote {args.csv}\n")
    else:
        out.write(text)
    return 0


def cmd_generate(args, out):
    import numpy as np

    from .inference import generate_greedy
    from .io import load_features, load_model
    from .layers import ModelConfig, build_model
    from .tensor import make_rng

    if args.weights:
        model = load_model(args.weights)
    else:
        cfg = ModelConfig(args.layers, args.hidden, args.heads, args.vocab, args.feat_dim, args.mode or "composite")
        model = build_model(cfg, seed=args.seed)
    if args.mode and args.mode != model.config.mode:
        model = model.with_mode(args.mode)
    if args.features:
        features = load_features(args.features)
    else:
        check_count(args.visual_tokens, "visual-tokens")
        features = make_rng(args.seed + 1).normal(size=(args.visual_tokens, model.config.feat_dim))
    ids = generate_greedy(model, np.asarray(features), args.prompt_ids, args.max_new)
    source = args.weights or "demo"
    out.write(f"# compattn generate seed={args.seed} mode={model.config.mode} weights={source} k={len(features)}\n")
    out.write(",".join(str(i) for i in ids) + "\n")
    return 0


COMMANDS = {
    "flops": cmd_flops,
    "verify": cmd_verify,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
    "generate": cmd_generate,
}


def main(argv=None, out=None):
    out = out or sys.stdout
    parser, args = parse_args(sys.argv[1:] if argv is None else argv)
    try:
        return COMMANDS[args.command](args, out)
    except ContractError as exc:
        parser.subcommands[args.command].error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
