"""Command line front-end.

Exit codes: 0 when every trial succeeded, 2 when some failed, 1 on a
configuration or I/O error.
"""
import argparse
import sys
from dataclasses import replace

import numpy as np

from . import harness
from .harness import ALGORITHMS, ConfigError
from .tasks import TaskKind, dump, sample_batch

EXIT_OK, EXIT_ERROR, EXIT_FAILURES = 0, 1, 2

# flag -> ExperimentConfig field
_FLAGS = [
    ("--task", "task", str, "task name: " + ", ".join(k.value for k in TaskKind)),
    ("--alg", "alg", str, "algorithm: " + ", ".join(ALGORITHMS)),
    ("--seq-len", "seq_len", str, "sequence length T, or LO-HI for per-batch random lengths"),
    ("--hidden", "hidden", int, "hidden units n_x"),
    ("--trials", "trials", int, "independent trials"),
    ("--seed", "seed", int, "master seed"),
    ("--max-iters", "max_iters", int, "iteration cap per trial"),
    ("--batch-size", "batch_size", int, "mini-batch size"),
    ("--step-size", "step_size", float, "normalized step size (SGD learning rate for sgd-clip)"),
    ("--precond-step", "precond_step", float, "preconditioner factor step size"),
    ("--clip", "clip", float, "gradient-norm clipping threshold for sgd-clip"),
    ("--eval-interval", "eval_interval", int, "iterations between success checks"),
    ("--eval-size", "eval_size", int, "sequences per success check"),
    ("--activation", "activation", str, "hidden nonlinearity: tanh or logistic"),
    ("--out", "out", str, "output directory"),
    ("--jobs", "jobs", int, "worker processes for independent trials"),
]


def _add_experiment_flags(p):
    p.add_argument("--config", help="flat 'key = value' file; flags override it")
    for flag, dest, typ, help_ in _FLAGS:
        p.add_argument(flag, dest=dest, type=typ, default=None, help=help_)
    p.add_argument("--timing", action="store_true", default=None,
                   help="record wall-clock seconds in the CSVs (breaks byte-identical reruns)")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are configuration errors, not "some trials failed"
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser():
    ap = _Parser(prog="psgd-rnn", description="PSGD training of RNNs on long-lag benchmarks.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="multi-trial run of one (task, algorithm, length) cell")
    _add_experiment_flags(p)

    p = sub.add_parser("compare", help="learning curves of several algorithms from one init")
    _add_experiment_flags(p)
    p.add_argument("--algs", default=",".join(ALGORITHMS),
                   help="comma-separated algorithms (default: all three)")

    p = sub.add_parser("sweep", help="largest length without a failed trial")
    _add_experiment_flags(p)
    p.add_argument("--lengths", required=True, help="ascending comma-separated lengths")
    p.add_argument("--algs", default=None, help="comma-separated algorithms (default: --alg)")

    p = sub.add_parser("dump", help="write sample sequences in the text dump format")
    p.add_argument("--task", required=True)
    p.add_argument("--seq-len", dest="seq_len", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--out", default="-", help="file path, or '-' for stdout")
    return ap


def config_from_args(args):
    values = harness.read_config_file(args.config) if args.config else {}
    for _, dest, _, _ in _FLAGS:
        v = getattr(args, dest)
        if v is not None:
            values[dest] = v
    if args.timing:
        values["timing"] = True
    return harness.make_config(values)


def _split(text):
    return [s.strip() for s in text.split(",") if s.strip()]


def _cmd_run(args):
    cfg = config_from_args(args)
    records, summary = harness.run(cfg)
    print(harness.format_table(
        ["trial", "seed", "success", "iters", "final metric"],
        [[r.trial, r.seed, int(r.success), r.iterations, harness.fmt(r.final_metric)]
         for r in records]), end="")
    print(f"\nfailures: {summary.failure_rate}   median iters to success: "
          f"{harness.fmt(summary.median_iters)}   output: {cfg.out}")
    return EXIT_OK if summary.failures == 0 else EXIT_FAILURES


def _cmd_compare(args):
    base = config_from_args(args)
    configs = [replace(base, alg=a) for a in _split(args.algs)]
    ranked, _ = harness.compare(configs)
    print(harness.format_table(
        ["rank", "alg", "success", "iters to success", "final loss"],
        [[i, r.alg, int(r.success), r.iterations if r.success else "-", harness.fmt(r.final_loss)]
         for i, r in enumerate(ranked, 1)]), end="")
    return EXIT_OK if all(r.success for r in ranked) else EXIT_FAILURES


def _cmd_sweep(args):
    cfg = config_from_args(args)
    try:
        lengths = [int(x) for x in _split(args.lengths)]
    except ValueError:
        raise ConfigError(f"bad --lengths {args.lengths!r}") from None
    algs = [replace(cfg, alg=a).alg for a in _split(args.algs)] if args.algs else None
    result, summaries = harness.max_length_sweep(cfg, lengths, algs)
    print(harness.format_table(
        ["task", "alg", "T", "failed"],
        [[s.task, s.alg, s.seq_len, s.failure_rate] for s in summaries]), end="")
    print()
    print(harness.format_table(["alg", "max length without failure"],
                               [[a, label] for a, (_, label) in result.items()]), end="")
    return EXIT_OK if all(s.failures == 0 for s in summaries) else EXIT_FAILURES


def _cmd_dump(args):
    cfg = harness.make_config({"task": args.task, "seq_len": args.seq_len})
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    batch = sample_batch(cfg.spec, np.random.default_rng(args.seed), args.count)
    if args.out == "-":
        dump(cfg.spec, batch, args.seed, sys.stdout)
    else:
        with open(args.out, "w") as fh:
            dump(cfg.spec, batch, args.seed, fh)
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "compare": _cmd_compare, "sweep": _cmd_sweep, "dump": _cmd_dump}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"psgd-rnn: configuration error: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"psgd-rnn: I/O error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
