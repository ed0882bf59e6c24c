"""Largest sequence length without a failed trial, per algorithm.

    python scripts/max_length_sweep.py --task multiplication --lengths 20,30
"""
import argparse
import sys

from psgd_rnn import harness


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task", default="multiplication")
    ap.add_argument("--lengths", default="20,30")
    ap.add_argument("--algs", default="psgd-kron")
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--max-iters", type=int, default=20_000)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="runs/sweep")
    args = ap.parse_args(argv)
    cfg = harness.make_config({"task": args.task, "trials": args.trials,
                               "max_iters": args.max_iters, "jobs": args.jobs, "out": args.out})
    lengths = [int(x) for x in args.lengths.split(",")]
    result, summaries = harness.max_length_sweep(cfg, lengths, args.algs.split(","))
    for alg, (_, label) in result.items():
        print(f"{alg}: max length without failure {label}")
    return 0 if all(s.failures == 0 for s in summaries) else 2


if __name__ == "__main__":
    try:
        sys.exit(main())
    except (harness.ConfigError, OSError) as exc:
        sys.exit(f"error: {exc}")
