"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test reports a one-line verdict (printed at the end of the session).
Criteria 5-7 train real networks and take several minutes each on one CPU.
"""
import os
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from psgd_rnn import harness
from psgd_rnn.cli import main
from psgd_rnn.harness import ExperimentConfig, trial_seed
from psgd_rnn.linalg import random_orthogonal
from psgd_rnn.optimizer import PsgdConfig, StopRule, train
from psgd_rnn.precond import DensePreconditioner, GradPair, KronPreconditioner, vec
from psgd_rnn.rnn import (CROSS_ENTROPY, MSE, RnnDims, RnnParams, SequenceBatch, bptt_grad,
                          forward, loss)
from psgd_rnn.tasks import TaskKind, TaskSpec


def spd(n, lo, hi, rng):
    O = random_orthogonal(n, rng)
    return O @ np.diag(np.logspace(lo, hi, n)) @ O.T


def fd_grad(params, batch, h=1e-5):
    out = []
    for name in ("W1", "W2"):
        M = getattr(params, name)
        G = np.zeros_like(M)
        for idx in np.ndindex(M.shape):
            plus, minus = params.copy(), params.copy()
            getattr(plus, name)[idx] += h
            getattr(minus, name)[idx] -= h
            G[idx] = (loss(forward(plus, batch), batch)
                      - loss(forward(minus, batch), batch)) / (2 * h)
        out.append(G)
    return out


def test_gradient_exactness(verdict):
    dims = RnnDims(3, 5, 2)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng(1000 + i)
        kind = MSE if i % 2 == 0 else CROSS_ENTROPY
        p = RnnParams(0.5 * rng.standard_normal(dims.shapes[0]),
                      0.5 * rng.standard_normal(dims.shapes[1]))
        u = rng.standard_normal((4, 7, 3))
        mask = rng.random((4, 7)) < 0.5
        mask[:, -1] = True
        tgt = rng.standard_normal((4, 7, 2)) if kind == MSE else rng.integers(0, 2, (4, 7))
        b = SequenceBatch(u, tgt, mask, kind)
        g, fd = bptt_grad(p, b).matrices(), fd_grad(p, b)
        err = max(np.max(np.abs(x - y)) for x, y in zip(g, fd)) / \
            max(np.max(np.abs(y)) for y in fd)
        worst = max(worst, err)
    dt = time.perf_counter() - t0
    verdict(1, "BPTT matches central differences",
            f"max rel err {worst:.2e} <= 1e-6, {dt:.1f}s < 10s")
    assert worst <= 1e-6 and dt < 10


def test_newton_consistency(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    H = spd(10, 0, 4, rng)
    Hinv = np.linalg.inv(H)
    p = DensePreconditioner([(10, 1)])
    for _ in range(50_000):
        d = rng.standard_normal((10, 1))
        p.update(GradPair([d], [H @ d]))
    err_spd = np.linalg.norm(p.matrix() - Hinv) / np.linalg.norm(Hinv)

    # constant step leaves stationary jitter; compare the average of the last 10^4 iterates
    H2 = np.diag([-2.0, 1.0])
    target = np.diag([0.5, 1.0])
    q = DensePreconditioner([(2, 1)])
    avg = np.zeros((2, 2))
    for i in range(50_000):
        d = rng.standard_normal((2, 1))
        q.update(GradPair([d], [H2 @ d]))
        if i >= 40_000:
            avg += q.matrix()
    avg /= 10_000
    err_ind = np.linalg.norm(avg - target) / np.linalg.norm(target)
    dt = time.perf_counter() - t0
    verdict(2, "dense P -> H^-1 (SPD, cond 1e4) and |H|^-1 (indefinite)",
            f"SPD rel err {err_spd:.1e} <= 0.1, indefinite rel err {err_ind:.3f} <= 0.05, "
            f"{dt:.1f}s < 30s")
    assert err_spd <= 0.1 and err_ind <= 0.05 and dt < 30


def test_kron_apply_equivalence(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)

    def factor(n):
        Q = np.triu(rng.uniform(-0.5, 0.5, (n, n)))
        np.fill_diagonal(Q, rng.uniform(0.5, 2.0, n))
        return Q

    Ql, Qr = factor(3), factor(4)
    p = KronPreconditioner([(3, 4)], [(Ql, Qr)])
    K = np.kron(Qr.T @ Qr, Ql.T @ Ql)
    worst = 0.0
    for _ in range(100):
        G = rng.standard_normal((3, 4))
        worst = max(worst, np.max(np.abs(vec(p.apply([G])) - K @ vec([G]))))
    dt = time.perf_counter() - t0
    verdict(3, "Kronecker apply == (P_right kron P_left) vec(G)",
            f"max abs dev {worst:.1e} <= 1e-12, {dt:.2f}s < 1s")
    assert worst <= 1e-12 and dt < 1


def test_criterion_descent(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    H = spd(10, 0, 4, rng)
    p = DensePreconditioner([(10, 1)])
    values = []
    for _ in range(10_000):
        d = rng.standard_normal((10, 1))
        pair = GradPair([d], [H @ d])
        values.append(p.criterion_terms(pair))   # scored before the update sees the pair
        p.update(pair, step=0.001)
    windows = np.mean(np.reshape(values, (10, 1000)), axis=1)
    violations = int(np.sum(np.diff(windows) > 0))
    dt = time.perf_counter() - t0
    verdict(4, "windowed criterion non-increasing",
            f"{violations} violating windows <= 1 (factor step 0.001), "
            f"first/last window {windows[0]:.3g}/{windows[-1]:.3g}, {dt:.1f}s < 30s")
    assert violations <= 1 and dt < 30


def test_table_cell_addition_T30(verdict):
    cfg = ExperimentConfig(task="addition", seq_len=30, alg="psgd-kron", hidden=50, trials=5,
                           max_iters=20_000, batch_size=100, step_size=0.01)
    t0 = time.perf_counter()
    recs = [harness.run_trial(cfg, k) for k in range(cfg.trials)]
    dt = time.perf_counter() - t0
    wins = sum(r.success for r in recs)
    metrics = ", ".join(f"{r.final_metric:.3f}" for r in recs)
    verdict(5, "addition T=30 psgd-kron: >= 4/5 succeed within 2e4 iterations",
            f"{wins}/5 succeeded; final failure fractions {metrics}; skipped precond updates "
            f"{sum(r.skipped_precond_updates for r in recs)}; {dt / 60:.1f} min")
    assert wins >= 4


def test_fig1_ordering(verdict):
    base = ExperimentConfig(task="addition", seq_len=(20, 40), hidden=50, trials=1,
                            max_iters=10_000, batch_size=100, step_size=0.01, out="unused")
    configs = [ExperimentConfig(**{**harness.config_dict(base), "alg": a, "seq_len": (20, 40)})
               for a in ("psgd-dense", "psgd-kron", "sgd-clip")]
    t0 = time.perf_counter()
    _, recs = harness.compare(configs, write=False)
    dt = time.perf_counter() - t0
    its = {c.alg: (r.iterations if r.success else np.inf) for c, r in zip(configs, recs)}
    dense, kron, sgd = its["psgd-dense"], its["psgd-kron"], its["sgd-clip"]
    # an ordering of runs that never reached the threshold is not an ordering
    ok = np.isfinite(dense) and dense <= kron and (np.isinf(sgd) or sgd > max(dense, kron))
    finals = ", ".join(f"{c.alg} {r.final_metric:.3f}" for c, r in zip(configs, recs))
    verdict(6, "dense <= kron < sgd-clip in iterations to success (U[20,40], cap 1e4)",
            f"dense {dense}, kron {kron}, sgd {sgd} (inf = not reached); "
            f"final failure fractions {finals}; {dt / 60:.1f} min <= 30")
    assert ok and dt <= 30 * 60


def test_memorize5(verdict):
    spec = TaskSpec(TaskKind.MEMORIZE5, 30)
    worst_colsum = [0.0]

    def check(it, stats, params):
        worst_colsum[0] = max(worst_colsum[0], float(np.max(np.abs(params.W2.sum(axis=0)))))

    t0 = time.perf_counter()
    recs = []
    with threadpool_limits(limits=1):
        for k in range(5):
            recs.append(train(spec, 50, PsgdConfig(precond_kind="kron"),
                              StopRule(20_000, 100, 32), trial_seed(0, k), trial=k, sink=check))
    dt = time.perf_counter() - t0
    wins = sum(r.success for r in recs)
    its = ", ".join(str(r.iterations) if r.success else "-" for r in recs)
    verdict(7, "5-bit memorization T=30: >= 4/5 perfect within 2e4, W2 columns sum to 0",
            f"{wins}/5 succeeded (iters {its}); max |column sum| {worst_colsum[0]:.1e} <= 1e-10; "
            f"{dt / 60:.1f} min <= 20")
    assert wins >= 4 and worst_colsum[0] <= 1e-10 and dt <= 20 * 60


def _adversarial_pair(rng, shapes):
    s_theta, s_g = 10.0 ** rng.uniform(-8, 8, size=2)
    dtheta = [s_theta * rng.standard_normal(s) for s in shapes]
    mode = rng.integers(3)
    if mode == 0:      # unrelated to dtheta
        dg = [s_g * rng.standard_normal(s) for s in shapes]
    elif mode == 1:    # sign-flipped and rescaled copy (negative curvature)
        dg = [-s_g * t / s_theta for t in dtheta]
    else:              # sparse spikes
        dg = [np.where(rng.random(s) < 0.1, s_g * rng.standard_normal(s), 0.0) for s in shapes]
    return GradPair(dtheta, dg)


def test_spd_robustness_fuzz(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    results = []
    for p, shapes in ((DensePreconditioner([(3, 2), (2, 1)]), [(3, 2), (2, 1)]),
                      (KronPreconditioner([(3, 4), (2, 5)]), [(3, 4), (2, 5)])):
        for _ in range(100_000):
            p.update(_adversarial_pair(rng, shapes))
        factors = [p.Q] if p.kind == "dense" else [F for pair in p.factors for F in pair]
        finite = all(np.all(np.isfinite(F)) for F in factors)
        positive = all(np.all(np.diag(F) > 0) for F in factors)
        results.append((p.kind, finite, positive, p.skipped))
    dt = time.perf_counter() - t0
    ok = all(f and pos and skipped < 1000 for _, f, pos, skipped in results) and dt < 60
    verdict(8, "1e5 adversarial updates keep factors finite and SPD",
            "; ".join(f"{k}: finite={f} diag>0={pos} skipped={s}/100000"
                      for k, f, pos, s in results) + f"; {dt:.1f}s < 60s")
    assert ok


def test_determinism(verdict, tmp_path):
    outcomes = []
    for alg, task, seq in (("psgd-kron", "xor", "10-14"), ("psgd-dense", "memorize5", "12"),
                           ("sgd-clip", "addition", "12")):
        cfg = tmp_path / f"{alg}.cfg"
        cfg.write_text(f"task = {task}\nseq_len = {seq}\nalg = {alg}\nhidden = 5\ntrials = 3\n"
                       "max_iters = 40\nbatch_size = 10\neval_interval = 10\neval_size = 50\n")
        dirs = []
        for tag, extra in (("a", []), ("b", []), ("c", ["--jobs", "2"])):
            out = tmp_path / f"{alg}-{tag}"
            assert main(["run", "--config", str(cfg), "--out", str(out), *extra]) in (0, 2)
            dirs.append(out)
        names = sorted(os.listdir(dirs[0]))
        same = all((dirs[0] / n).read_bytes() == (d / n).read_bytes()
                   for d in dirs[1:] for n in names)
        outcomes.append((alg, len(names), same))
    verdict(9, "byte-identical CSVs on rerun and under --jobs 2",
            "; ".join(f"{a}: {n} files identical={s}" for a, n, s in outcomes))
    assert all(s for _, _, s in outcomes)
