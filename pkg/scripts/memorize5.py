"""5-bit memorization: full 32-sequence batch, zero-sum output columns, several seeds.

    python scripts/memorize5.py --seq-len 30 --trials 5 --max-iters 20000
"""
import argparse
import sys

from psgd_rnn import harness


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seq-len", default="30")
    ap.add_argument("--alg", default="psgd-kron")
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--max-iters", type=int, default=20_000)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="runs/memorize5")
    args = ap.parse_args(argv)
    cfg = harness.make_config({"task": "memorize5", "seq_len": args.seq_len, "alg": args.alg,
                               "trials": args.trials, "max_iters": args.max_iters,
                               "eval_size": 32, "jobs": args.jobs, "out": args.out})
    records, summary = harness.run(cfg)
    for r in records:
        print(f"trial {r.trial}: {'solved' if r.success else 'not solved'} "
              f"after {r.iterations} iterations (wrong sequences {r.final_metric:.3f})")
    print(f"failures {summary.failure_rate}")
    return 0 if summary.failures == 0 else 2


if __name__ == "__main__":
    try:
        sys.exit(main())
    except (harness.ConfigError, OSError) as exc:
        sys.exit(f"error: {exc}")
