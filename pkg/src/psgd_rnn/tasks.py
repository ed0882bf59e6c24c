"""Generators and success metrics for the pathological long-memory problems.

Positions below are 1-based in prose and 0-based in code.  ``T`` counts input
steps.  Formats:

addition / multiplication
    2 channels (value ~ U[0, 1], marker in {0, 1}).  First marker in
    ``[1, T//10]``, second in ``[T//10 + 1, T//2]``.  Target ``(a + b)/2``
    (resp. ``a * b``) at the last step only; MSE, one output.
xor
    Same layout with binary values; target ``a XOR b`` as 2 classes.
order2 / order3
    One-hot over 6 symbols: A, B and four distractors.  Two signal symbols at
    distinct positions in ``[T//10, T//2]`` (three: one in each third of that
    range).  The ordered signal tuple is the class (4 or 8) at the last step.
permutation
    One-hot over 100 symbols.  Step 1 is symbol 0 or 1, steps 2..T-1 are
    uniform over symbols 2..99 and step T repeats step 1.  Every step
    1..T-1 predicts the next symbol; only the last prediction is learnable
    and only it is scored.
memorize5 / memorize20
    5 bits (resp. 10 symbols from a 4-letter alphabet) in the first steps,
    distractor afterwards, a cue at ``T - k`` and the ``k`` stored symbols
    to be reproduced in the last ``k`` steps.  Every step is trained and
    scored; outside the recall window the target is the distractor class.
"""
import enum
import itertools
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .rnn import CROSS_ENTROPY, MSE, RnnDims, SequenceBatch, forward

MIN_LEN = 10
ERROR_TOLERANCE = 0.04
MAX_FAILURE_FRACTION = 0.01


class TaskKind(enum.Enum):
    ADDITION = "addition"
    MULTIPLICATION = "multiplication"
    XOR = "xor"
    ORDER2 = "order2"
    ORDER3 = "order3"
    PERMUTATION = "permutation"
    MEMORIZE5 = "memorize5"
    MEMORIZE20 = "memorize20"


CONTINUOUS = {TaskKind.ADDITION, TaskKind.MULTIPLICATION}

# kind -> (n_u, n_y, loss kind)
_DIMS = {
    TaskKind.ADDITION: (2, 1, MSE),
    TaskKind.MULTIPLICATION: (2, 1, MSE),
    TaskKind.XOR: (2, 2, CROSS_ENTROPY),
    TaskKind.ORDER2: (6, 4, CROSS_ENTROPY),
    TaskKind.ORDER3: (6, 8, CROSS_ENTROPY),
    TaskKind.PERMUTATION: (100, 100, CROSS_ENTROPY),
    TaskKind.MEMORIZE5: (4, 3, CROSS_ENTROPY),
    TaskKind.MEMORIZE20: (6, 5, CROSS_ENTROPY),
}

# stored symbols, alphabet size
_MEMORY = {TaskKind.MEMORIZE5: (5, 2), TaskKind.MEMORIZE20: (10, 4)}


class InvalidTaskSpec(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    """A task and its sequence length.

    ``seq_len`` is either an int or an inclusive ``(low, high)`` range; with a
    range each batch draws one length uniformly (all sequences in a batch
    share it).
    """
    kind: TaskKind
    seq_len: object

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", TaskKind(self.kind))
        lo, hi = self.length_range
        if lo > hi:
            raise InvalidTaskSpec(f"empty length range {self.seq_len}")
        if lo < self.min_len:
            raise InvalidTaskSpec(f"{self.kind.value} needs T >= {self.min_len}, got {lo}")

    @property
    def length_range(self) -> Tuple[int, int]:
        if isinstance(self.seq_len, (tuple, list)):
            return int(self.seq_len[0]), int(self.seq_len[1])
        return int(self.seq_len), int(self.seq_len)

    @property
    def min_len(self):
        if self.kind in _MEMORY:
            k = _MEMORY[self.kind][0]
            return max(MIN_LEN, 2 * k + 1)
        return MIN_LEN

    @property
    def dims_io(self):
        return _DIMS[self.kind]

    def rnn_dims(self, n_x):
        n_u, n_y, _ = _DIMS[self.kind]
        return RnnDims(n_u, n_x, n_y)

    @property
    def loss_kind(self):
        return _DIMS[self.kind][2]

    @property
    def fixed_batch(self):
        """The 5-bit task has only 32 distinct inputs; it trains and evaluates on all of them."""
        return self.kind is TaskKind.MEMORIZE5

    def label(self):
        lo, hi = self.length_range
        return f"{lo}" if lo == hi else f"{lo}-{hi}"


def _draw_len(spec, rng):
    lo, hi = spec.length_range
    return lo if lo == hi else int(rng.integers(lo, hi + 1))


def _marked_pair(n, T, values, op, rng):
    inputs = np.zeros((n, T, 2))
    inputs[:, :, 0] = values
    first = rng.integers(0, T // 10, size=n)
    second = rng.integers(T // 10, T // 2, size=n)
    rows = np.arange(n)
    inputs[rows, first, 1] = 1.0
    inputs[rows, second, 1] = 1.0
    return inputs, op(values[rows, first], values[rows, second])


def _one_hot(symbols, size):
    return np.eye(size)[symbols]


def _last_step_mask(n, T):
    mask = np.zeros((n, T), dtype=bool)
    mask[:, -1] = True
    return mask


def _memorize(kind, n, T, rng=None, symbols=None):
    k, alpha = _MEMORY[kind]
    distractor, cue = alpha, alpha + 1
    if symbols is None:
        symbols = rng.integers(0, alpha, size=(n, k))
    seq = np.full((n, T), distractor)
    seq[:, :k] = symbols
    seq[:, T - k - 1] = cue
    targets = np.full((n, T), distractor)
    targets[:, T - k:] = symbols
    mask = np.ones((n, T), dtype=bool)
    return SequenceBatch(_one_hot(seq, alpha + 2), targets, mask, CROSS_ENTROPY)


def memorize5_inputs():
    """All 32 bit patterns of the 5-bit task, in lexicographic order."""
    return np.array(list(itertools.product((0, 1), repeat=5)))


def sample_batch(spec, rng, n, seq_len: Optional[int] = None):
    """``n`` fresh sequences of ``spec``; one length is drawn for the whole batch."""
    T = _draw_len(spec, rng) if seq_len is None else int(seq_len)
    kind = spec.kind
    if kind in (TaskKind.ADDITION, TaskKind.MULTIPLICATION):
        op = (lambda a, b: (a + b) / 2) if kind is TaskKind.ADDITION else np.multiply
        inputs, y = _marked_pair(n, T, rng.random((n, T)), op, rng)
        targets = np.zeros((n, T, 1))
        targets[:, -1, 0] = y
        return SequenceBatch(inputs, targets, _last_step_mask(n, T), MSE)
    if kind is TaskKind.XOR:
        bits = rng.integers(0, 2, size=(n, T)).astype(float)
        inputs, y = _marked_pair(n, T, bits, np.not_equal, rng)
        targets = np.zeros((n, T), dtype=int)
        targets[:, -1] = y.astype(int)
        return SequenceBatch(inputs, targets, _last_step_mask(n, T), CROSS_ENTROPY)
    if kind in (TaskKind.ORDER2, TaskKind.ORDER3):
        n_sig = 2 if kind is TaskKind.ORDER2 else 3
        lo, hi = T // 10, T // 2
        seq = rng.integers(2, 6, size=(n, T))
        sig = rng.integers(0, 2, size=(n, n_sig))
        if n_sig == 2:
            # two distinct ordered positions in [lo, hi]
            pos = np.sort(np.array([rng.choice(np.arange(lo - 1, hi), 2, replace=False)
                                    for _ in range(n)]), axis=1)
        else:
            edges = np.linspace(lo - 1, hi, 4).astype(int)
            pos = np.stack([rng.integers(edges[i], edges[i + 1], size=n) for i in range(3)],
                           axis=1)
        rows = np.arange(n)[:, None]
        seq[rows, pos] = sig
        label = sig @ (2 ** np.arange(n_sig)[::-1])
        targets = np.zeros((n, T), dtype=int)
        targets[:, -1] = label
        return SequenceBatch(_one_hot(seq, 6), targets, _last_step_mask(n, T), CROSS_ENTROPY)
    if kind is TaskKind.PERMUTATION:
        seq = rng.integers(2, 100, size=(n, T))
        seq[:, 0] = rng.integers(0, 2, size=n)
        seq[:, -1] = seq[:, 0]
        targets = np.zeros((n, T), dtype=int)
        targets[:, :-1] = seq[:, 1:]
        loss_mask = np.ones((n, T), dtype=bool)
        loss_mask[:, -1] = False
        score_mask = np.zeros((n, T), dtype=bool)
        score_mask[:, -2] = True
        batch = SequenceBatch(_one_hot(seq, 100), targets, loss_mask, CROSS_ENTROPY, score_mask)
        return batch
    if kind is TaskKind.MEMORIZE5:
        return _memorize(kind, n, T, rng=rng)
    if kind is TaskKind.MEMORIZE20:
        return _memorize(kind, n, T, rng=rng)
    raise InvalidTaskSpec(f"unknown task {kind}")


def generate(spec, rng):
    """A single sample as a batch of one."""
    return sample_batch(spec, rng, 1)


def memorize5_batch(seq_len):
    """The complete 32-sequence 5-bit memorization dataset."""
    return _memorize(TaskKind.MEMORIZE5, 32, int(seq_len), symbols=memorize5_inputs())


def training_batch(spec, rng, batch_size):
    if spec.fixed_batch:
        return memorize5_batch(_draw_len(spec, rng))
    return sample_batch(spec, rng, batch_size)


def eval_batch(spec, rng, size=1000):
    """Evaluation set.  Ranged specs are scored at their longest length."""
    if spec.fixed_batch:
        return memorize5_batch(spec.length_range[1])
    return sample_batch(spec, rng, size, seq_len=spec.length_range[1])


def sequence_failures(kind, outputs, batch):
    """Per-sequence failure flags for outputs ``(T, B, n_y)``."""
    mask = batch.score_mask
    if kind in CONTINUOUS:
        err = np.abs(outputs[..., 0].T - batch.targets[..., 0])
        bad = (err > ERROR_TOLERANCE) & mask
    else:
        bad = (np.argmax(outputs, axis=2).T != batch.targets) & mask
    return bad.any(axis=1)


def success(spec, params, batch):
    """``(is_success, metric)`` where metric is the fraction of failed sequences."""
    fails = sequence_failures(spec.kind, forward(params, batch).outputs, batch)
    metric = float(fails.mean())
    if spec.fixed_batch:
        return metric == 0.0, metric
    return metric < MAX_FAILURE_FRACTION, metric


def dump(spec, batch, seed, fh):
    """Write a batch as text: a header line, then one record per sequence.

    Each record is ``# sequence <i>`` followed by one line per step with the
    input channels, the loss-mask flag, the score-mask flag and the target,
    all tab-separated.
    """
    B, T, n_u = batch.inputs.shape
    fh.write(f"# task={spec.kind.value} seed={seed} seq_len={T} n_u={n_u} "
             f"loss={batch.loss_kind} sequences={B}\n")
    for i in range(B):
        fh.write(f"# sequence {i}\n")
        for t in range(T):
            tgt = batch.targets[i, t]
            tgt_s = "\t".join(f"{v:.9g}" for v in np.atleast_1d(tgt))
            row = "\t".join(f"{v:.9g}" for v in batch.inputs[i, t])
            fh.write(f"{row}\t{int(batch.loss_mask[i, t])}\t"
                     f"{int(batch.score_mask[i, t])}\t{tgt_s}\n")


def load_dump(fh, loss_kind=None):
    """Read a dump written by :func:`dump` back into a :class:`SequenceBatch`."""
    header = fh.readline().split()
    meta = dict(item.split("=", 1) for item in header[1:])
    n_u, T, B = int(meta["n_u"]), int(meta["seq_len"]), int(meta["sequences"])
    kind = meta["loss"]
    rows = [line.rstrip("\n").split("\t") for line in fh if not line.startswith("#")]
    data = np.array(rows, dtype=float).reshape(B, T, -1)
    inputs = data[..., :n_u]
    loss_mask = data[..., n_u].astype(bool)
    score_mask = data[..., n_u + 1].astype(bool)
    tgt = data[..., n_u + 2:]
    targets = tgt if kind == MSE else tgt[..., 0].astype(int)
    return meta, SequenceBatch(inputs, targets, loss_mask, kind, score_mask)
