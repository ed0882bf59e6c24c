"""Preconditioned SGD (dense and Kronecker-factored) for training plain RNNs
on long-lag synthetic benchmarks."""
from .optimizer import PsgdConfig, StopRule, psgd_step, sgd_clipped_step, train
from .precond import DensePreconditioner, GradPair, KronPreconditioner, init_identity
from .rnn import RnnDims, RnnParams, SequenceBatch, bptt_grad, forward, init_params
from .tasks import TaskKind, TaskSpec

__version__ = "0.1.0"

__all__ = [
    "DensePreconditioner", "GradPair", "KronPreconditioner", "PsgdConfig", "RnnDims",
    "RnnParams", "SequenceBatch", "StopRule", "TaskKind", "TaskSpec", "bptt_grad",
    "forward", "init_identity", "init_params", "psgd_step", "sgd_clipped_step", "train",
]
