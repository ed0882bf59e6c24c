"""PSGD and clipped-SGD training steps and the per-trial training loop."""
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .linalg import EPS, trial_rng
from .precond import GradPair, init_identity
from .rnn import TANH, RnnParams, bptt_grad, init_params, project_zero_column_sum
from .tasks import TaskKind, eval_batch, success, training_batch


class DivergedError(ArithmeticError):
    def __init__(self, iteration, what="loss or gradient"):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


@dataclass
class PsgdConfig:
    mu: float = 0.01
    precond_step: float = 0.01
    perturbation_std: float = float(np.sqrt(EPS))
    batch_size: int = 100
    precond_kind: str = "kron"   # "dense", "kron" or "none"

    def __post_init__(self):
        if not 0 < self.mu < 1:
            raise ValueError(f"mu must lie in (0, 1), got {self.mu}")
        if self.perturbation_std <= 0:
            raise ValueError("perturbation_std must be positive")
        if self.precond_kind not in ("dense", "kron", "none"):
            raise ValueError(f"unknown precond_kind {self.precond_kind!r}")


@dataclass
class StepStats:
    loss: float
    grad_norm: float
    precond_grad_norm: float
    skipped_precond_update: bool = False


def _finite(g, it):
    if not g.is_finite():
        raise DivergedError(it)


def _constrain(g):
    """Zero-column-sum projection of the output-layer block."""
    return g.with_matrices(g.W1, project_zero_column_sum(g.W2))


def psgd_step(params, precond, batch, config, rng, iteration=0, grad_fn=bptt_grad,
              zero_sum_output=False):
    """One PSGD iteration; returns ``(params, precond, stats)``.

    Both gradients are taken on ``batch``.  The preconditioner is updated
    with the fresh pair before it preconditions ``g``.  ``precond`` is
    updated in place.
    """
    g, loss = grad_fn(params, batch, return_loss=True)
    if not np.isfinite(loss):
        raise DivergedError(iteration, "loss")
    _finite(g, iteration)
    if zero_sum_output:
        g = _constrain(g)
    skipped = False
    if precond is None or config.precond_kind == "none":
        step = g
    else:
        dtheta = params.with_matrices(*(config.perturbation_std * rng.standard_normal(m.shape)
                                        for m in params.matrices()))
        if zero_sum_output:
            dtheta = _constrain(dtheta)
        g_pert = grad_fn(params + dtheta, batch)
        _finite(g_pert, iteration)
        if zero_sum_output:
            g_pert = _constrain(g_pert)
        dg = g_pert - g
        skipped = not precond.update(GradPair(dtheta.matrices(), dg.matrices()),
                                     config.precond_step)
        step = params.with_matrices(*precond.apply(g.matrices()))
        if zero_sum_output:
            step = _constrain(step)
    new = params - config.mu * step
    if zero_sum_output:
        new = _constrain(new)
    _finite(new, iteration)
    return new, precond, StepStats(loss, g.norm(), step.norm(), skipped)


def sgd_clipped_step(params, batch, step_size, clip_threshold=1.0, iteration=0,
                     grad_fn=bptt_grad, zero_sum_output=False):
    """Plain SGD with the global gradient norm clipped to ``clip_threshold``."""
    if clip_threshold <= 0:
        raise ValueError("clip_threshold must be positive")
    g, loss = grad_fn(params, batch, return_loss=True)
    if not np.isfinite(loss):
        raise DivergedError(iteration, "loss")
    _finite(g, iteration)
    if zero_sum_output:
        g = _constrain(g)
    norm = g.norm()
    if norm > clip_threshold:
        g = g * (clip_threshold / norm)
    new = params - step_size * g
    if zero_sum_output:
        new = _constrain(new)
    return new, StepStats(loss, norm, g.norm())


@dataclass
class StopRule:
    max_iters: int = 100_000
    eval_interval: int = 100
    eval_size: int = 1000


@dataclass
class RunRecord:
    trial: int
    seed: int
    success: bool
    iterations: int
    final_metric: float
    series: List[tuple] = field(default_factory=list)  # (iter, train_loss, eval_metric, wall_s)
    wall_s: float = 0.0
    skipped_precond_updates: int = 0
    diverged_at: Optional[int] = None
    params: Optional[RnnParams] = field(default=None, repr=False)


def streams(seed):
    """Independent streams for init, training data, perturbations and evaluation.

    Algorithms sharing a seed therefore share their initial weights and
    their training batches.
    """
    return {name: trial_rng(seed, i) for i, name in enumerate(("init", "data", "perturb", "eval"))}


def train(spec, n_x, config, stop, seed, algorithm="psgd", clip_threshold=1.0,
          trial=0, sink: Optional[Callable] = None, clock=time.perf_counter,
          activation=TANH, init_std=0.1, stop_on_success=True):
    """Train one RNN on ``spec`` until success, divergence or ``stop.max_iters``.

    ``algorithm`` is ``"psgd"`` (preconditioner from ``config.precond_kind``)
    or ``"sgd"`` (clipped SGD with step ``config.mu``).  ``sink``, when
    given, receives ``(iteration, StepStats, params)`` after every step.  With
    ``stop_on_success=False`` training runs to the cap and
    ``RunRecord.iterations`` still reports the first successful evaluation.
    """
    rngs = streams(seed)
    zero_sum = spec.kind is TaskKind.MEMORIZE5
    params = init_params(spec.rnn_dims(n_x), rngs["init"], init_std, activation)
    if zero_sum:
        params = _constrain(params)
    shapes = [m.shape for m in params.matrices()]
    precond = None
    if algorithm == "psgd" and config.precond_kind != "none":
        precond = init_identity(config.precond_kind, shapes)
    fixed_eval = eval_batch(spec, rngs["eval"], stop.eval_size) if spec.fixed_batch else None

    start = clock()
    rec = RunRecord(trial, seed, False, 0, float("nan"))
    first_success = None
    losses = []
    it = 0
    try:
        while it < stop.max_iters:
            batch = training_batch(spec, rngs["data"], config.batch_size)
            if algorithm == "psgd":
                params, precond, stats = psgd_step(params, precond, batch, config,
                                                   rngs["perturb"], it, zero_sum_output=zero_sum)
            else:
                params, stats = sgd_clipped_step(params, batch, config.mu, clip_threshold, it,
                                                 zero_sum_output=zero_sum)
            it += 1
            losses.append(stats.loss)
            if sink is not None:
                sink(it, stats, params)
            if it % stop.eval_interval == 0 or it == stop.max_iters:
                ev = fixed_eval if fixed_eval is not None else eval_batch(
                    spec, rngs["eval"], stop.eval_size)
                ok, metric = success(spec, params, ev)
                rec.series.append((it, float(np.mean(losses)), metric, clock() - start))
                losses = []
                rec.final_metric = metric
                if ok and not rec.success:
                    rec.success = True
                    first_success = it
                if rec.success and stop_on_success:
                    break
    except DivergedError as exc:
        rec.diverged_at = exc.iteration
        rec.final_metric = 1.0
    rec.iterations = it if first_success is None else first_success
    rec.wall_s = clock() - start
    if precond is not None:
        rec.skipped_precond_updates = precond.skipped
    rec.params = params
    return rec
