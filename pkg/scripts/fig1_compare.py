"""Learning curves of dense PSGD, Kronecker PSGD and clipped SGD from one shared init.

Desk-scale default: addition with lengths drawn from U[20, 40] per batch,
10^4 iterations.  Writes compare_*.csv (loss curves) and ranking_*.csv.

    python scripts/fig1_compare.py --out runs/fig1
    python scripts/fig1_compare.py --seq-len 50-100 --max-iters 100000   # full-length variant
"""
import argparse
import sys
from dataclasses import replace

from psgd_rnn import harness


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seq-len", default="20-40")
    ap.add_argument("--max-iters", type=int, default=10_000)
    ap.add_argument("--hidden", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="runs/fig1")
    args = ap.parse_args(argv)
    base = harness.make_config({"task": "addition", "seq_len": args.seq_len, "trials": 1,
                                "max_iters": args.max_iters, "hidden": args.hidden,
                                "seed": args.seed, "jobs": args.jobs, "out": args.out})
    configs = [replace(base, alg=a) for a in harness.ALGORITHMS]
    ranked, _ = harness.compare(configs)
    print(harness.format_table(
        ["rank", "alg", "iters to success", "final loss"],
        [[i, r.alg, r.iterations if r.success else "-", harness.fmt(r.final_loss)]
         for i, r in enumerate(ranked, 1)]), end="")
    return 0 if all(r.success for r in ranked) else 2


if __name__ == "__main__":
    try:
        sys.exit(main())
    except (harness.ConfigError, OSError) as exc:
        sys.exit(f"error: {exc}")
