"""Multi-trial experiment runner: configs, CSV logging and failure-rate tables."""
import csv
import io
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import List, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .optimizer import PsgdConfig, StopRule, train
from .rnn import LOGISTIC, TANH
from .tasks import TaskKind, TaskSpec

ALGORITHMS = ("psgd-dense", "psgd-kron", "sgd-clip")
CSV_HEADER = ("iter", "train_loss", "eval_metric", "wall_s")
SUMMARY_HEADER = ("task", "alg", "seq_len", "failures", "trials", "median_iters")


class ConfigError(ValueError):
    pass


class InvalidComparison(ConfigError):
    pass


@dataclass
class ExperimentConfig:
    task: str = "addition"
    seq_len: object = 30          # int, or (low, high) for per-batch random lengths
    alg: str = "psgd-kron"
    hidden: int = 50
    trials: int = 5
    seed: int = 0
    max_iters: int = 100_000
    batch_size: int = 100
    step_size: float = 0.01
    precond_step: float = 0.01
    clip: float = 1.0
    eval_interval: int = 100
    eval_size: int = 1000
    out: str = "runs"
    jobs: int = 1
    timing: bool = False
    activation: str = TANH

    def __post_init__(self):
        try:
            TaskKind(self.task)
        except ValueError:
            raise ConfigError(f"unknown task {self.task!r}; choose from "
                              f"{', '.join(k.value for k in TaskKind)}") from None
        if self.alg not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.alg!r}; choose from {', '.join(ALGORITHMS)}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.activation not in (TANH, LOGISTIC):
            raise ConfigError(f"unknown activation {self.activation!r}; choose tanh or logistic")

    @property
    def spec(self):
        return TaskSpec(TaskKind(self.task), self.seq_len)

    @property
    def seq_label(self):
        return self.spec.label()

    def psgd_config(self):
        kind = {"psgd-dense": "dense", "psgd-kron": "kron"}.get(self.alg, "none")
        return PsgdConfig(mu=self.step_size, precond_step=self.precond_step,
                          batch_size=self.batch_size, precond_kind=kind)

    def stop_rule(self):
        return StopRule(self.max_iters, self.eval_interval, self.eval_size)

    def trial_csv(self, k):
        return Path(self.out) / f"{self.task}_{self.alg}_T{self.seq_label}_trial{k}.csv"


def parse_seq_len(text):
    text = str(text).strip()
    for sep in ("-", ":", ","):
        if sep in text:
            lo, hi = text.split(sep)
            return (int(lo), int(hi))
    return int(text)


_CONVERT = {int: int, float: float, bool: lambda v: str(v).lower() in ("1", "true", "yes", "on")}


def read_config_file(path):
    """Flat ``key = value`` file; ``#`` starts a comment, dashes in keys are allowed."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = val.strip("\"'")
    return values


def make_config(values):
    """Build an :class:`ExperimentConfig` from string (or typed) values."""
    known = {f.name: f for f in fields(ExperimentConfig)}
    kwargs = {}
    for key, val in values.items():
        if val is None:
            continue
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        default = known[key].default
        try:
            if key == "seq_len":
                kwargs[key] = parse_seq_len(val) if isinstance(val, str) else val
            elif isinstance(val, str) and type(default) in _CONVERT:
                kwargs[key] = _CONVERT[type(default)](val)
            else:
                kwargs[key] = val
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {val!r}") from exc
    try:
        cfg = ExperimentConfig(**kwargs)
        cfg.spec
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def trial_seed(master_seed, k):
    return int(np.random.SeedSequence([int(master_seed), int(k)]).generate_state(1)[0])


def run_trial(config, k, seed=None):
    """Train trial ``k``; single-threaded BLAS keeps numbers independent of ``--jobs``."""
    seed = trial_seed(config.seed, k) if seed is None else seed
    algorithm = "sgd" if config.alg == "sgd-clip" else "psgd"
    with threadpool_limits(limits=1):
        rec = train(config.spec, config.hidden, config.psgd_config(), config.stop_rule(), seed,
                    algorithm=algorithm, clip_threshold=config.clip, trial=k,
                    activation=config.activation)
    rec.params = None
    return rec


def _run_trial_args(args):
    return run_trial(*args)


def _execute(jobs, tasks):
    """Run ``(config, k, seed)`` tuples, returning records in input order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [run_trial(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_trial_args, tasks))


def fmt(x):
    return f"{x:.9g}"


def trial_csv_text(record, timing=False):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for it, loss, metric, wall in record.series:
        w.writerow([it, fmt(loss), fmt(metric), fmt(wall) if timing else "nan"])
    return buf.getvalue()


def _check_writable(out):
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out!r} is not writable: {exc}") from exc


def failure_string(records):
    return f"{sum(not r.success for r in records)}/{len(records)}"


def median_iters(records):
    done = [r.iterations for r in records if r.success]
    return statistics.median(done) if done else float("nan")


@dataclass
class Summary:
    task: str
    alg: str
    seq_len: str
    failures: int
    trials: int
    median_iters: float

    @property
    def failure_rate(self):
        return f"{self.failures}/{self.trials}"

    def row(self):
        return [self.task, self.alg, self.seq_len, self.failures, self.trials,
                fmt(self.median_iters)]


def summarize(config, records):
    return Summary(config.task, config.alg, config.seq_label,
                   sum(not r.success for r in records), len(records), median_iters(records))


def write_summary(out, summaries):
    path = Path(out)
    with open(path / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for s in summaries:
            w.writerow(s.row())
    text = format_table(
        ["task", "alg", "T", "failed", "median iters"],
        [[s.task, s.alg, s.seq_len, s.failure_rate, fmt(s.median_iters)] for s in summaries])
    (path / "summary.txt").write_text(text)
    return text


def format_table(header, rows):
    cols = [header] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cols) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cols]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def run(config, write=True):
    """Run ``config.trials`` independent trials.  Returns ``(records, summary)``."""
    if write:
        _check_writable(config.out)
    records = _execute(config.jobs, [(config, k, None) for k in range(config.trials)])
    summary = summarize(config, records)
    if write:
        for k, rec in enumerate(records):
            config.trial_csv(k).write_text(trial_csv_text(rec, config.timing))
        write_summary(config.out, [summary])
    return records, summary


_SHARED = ("task", "seq_len", "hidden", "seed", "step_size", "batch_size", "activation")


@dataclass
class ComparisonRow:
    alg: str
    success: bool
    iterations: int
    final_loss: float


def compare(configs: List[ExperimentConfig], write=True):
    """Run each algorithm once from the same initial weights and data stream.

    Returns ``(rows ranked fastest first, records in input order)``.
    """
    if not configs:
        raise InvalidComparison("nothing to compare")
    base = configs[0]
    for c in configs[1:]:
        bad = [f for f in _SHARED if getattr(c, f) != getattr(base, f)]
        if bad:
            raise InvalidComparison(f"configs differ in shared fields: {', '.join(bad)}")
    if write:
        _check_writable(base.out)
    seed = trial_seed(base.seed, 0)
    records = _execute(base.jobs, [(c, 0, seed) for c in configs])
    rows = [ComparisonRow(c.alg, r.success, r.iterations,
                          r.series[-1][1] if r.series else float("nan"))
            for c, r in zip(configs, records)]
    order = sorted(range(len(rows)), key=lambda i: (
        0 if rows[i].success else 1,
        rows[i].iterations if rows[i].success else 0,
        rows[i].final_loss if np.isfinite(rows[i].final_loss) else np.inf, i))
    ranked = [rows[i] for i in order]
    if write:
        out = Path(base.out)
        names = [f"{c.alg}#{i}" if [d.alg for d in configs].count(c.alg) > 1 else c.alg
                 for i, c in enumerate(configs)]
        (out / f"compare_{base.task}_T{base.seq_label}.csv").write_text(
            curves_csv_text(names, records))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "alg", "success", "iters_to_success", "final_loss"])
        for i, r in enumerate(ranked, 1):
            w.writerow([i, r.alg, int(r.success), r.iterations if r.success else "", fmt(r.final_loss)])
        (out / f"ranking_{base.task}_T{base.seq_label}.csv").write_text(buf.getvalue())
    return ranked, records


def curves_csv_text(names, records):
    """Train loss of each run at every evaluation point, one column per run."""
    table = {}
    for j, rec in enumerate(records):
        for it, loss, _, _ in rec.series:
            table.setdefault(it, [""] * len(records))[j] = fmt(loss)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter"] + list(names))
    for it in sorted(table):
        w.writerow([it] + table[it])
    return buf.getvalue()


def max_length(lengths, failures):
    """Largest length with no failed trial, as ``(value, label)``.

    ``label`` carries a ``>=`` qualifier when the largest tested length
    passed and reads ``<L`` when every length failed.
    """
    ok = [L for L, f in zip(lengths, failures) if f == 0]
    if not ok:
        return None, f"<{lengths[0]}"
    best = max(ok)
    return best, (f">={best}" if best == max(lengths) else str(best))


def max_length_sweep(config, lengths, algs=None, write=True):
    """Run every (algorithm, length) cell; return ``{alg: (value, label)}`` and the summaries."""
    lengths = [int(L) for L in lengths]
    if lengths != sorted(lengths):
        raise ConfigError("lengths must be ascending")
    algs = list(algs or [config.alg])
    if write:
        _check_writable(config.out)
    summaries, result = [], {}
    for alg in algs:
        fails = []
        for L in lengths:
            cfg = replace(config, alg=alg, seq_len=L)
            _, s = run(cfg, write=write)
            summaries.append(s)
            fails.append(s.failures)
        result[alg] = max_length(lengths, fails)
    if write:
        write_summary(config.out, summaries)
        rows = [[alg, label] for alg, (_, label) in result.items()]
        (Path(config.out) / "max_length.txt").write_text(
            format_table(["alg", "max length without failure"], rows))
    return result, summaries


def config_dict(config):
    d = asdict(config)
    if isinstance(d["seq_len"], (tuple, list)):
        d["seq_len"] = "{}-{}".format(*d["seq_len"])
    return d


def cpu_count():
    return os.cpu_count() or 1
