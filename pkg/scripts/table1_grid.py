"""Failure-rate table over tasks and algorithms at one sequence length.

Each cell is a multi-trial run; the combined table goes to <out>/summary.txt.

    python scripts/table1_grid.py --seq-len 30 --trials 5 --max-iters 20000
    python scripts/table1_grid.py --tasks addition,xor --algs psgd-kron --seq-len 30
"""
import argparse
import sys
from dataclasses import replace

from psgd_rnn import harness
from psgd_rnn.tasks import TaskKind


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tasks", default=",".join(k.value for k in TaskKind))
    ap.add_argument("--algs", default="psgd-kron")
    ap.add_argument("--seq-len", default="30")
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--max-iters", type=int, default=20_000)
    ap.add_argument("--hidden", type=int, default=50)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="runs/table1")
    args = ap.parse_args(argv)
    base = harness.make_config({"seq_len": args.seq_len, "trials": args.trials,
                                "max_iters": args.max_iters, "hidden": args.hidden,
                                "jobs": args.jobs, "out": args.out})
    summaries = []
    for task in args.tasks.split(","):
        for alg in args.algs.split(","):
            _, s = harness.run(replace(base, task=task.strip(), alg=alg.strip()))
            summaries.append(s)
            print(f"{s.task:15s} {s.alg:11s} T={s.seq_len:6s} failed {s.failure_rate}", flush=True)
    print()
    print(harness.write_summary(args.out, summaries), end="")
    return 0 if all(s.failures == 0 for s in summaries) else 2


if __name__ == "__main__":
    try:
        sys.exit(main())
    except (harness.ConfigError, OSError) as exc:
        sys.exit(f"error: {exc}")
