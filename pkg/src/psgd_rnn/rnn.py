"""Standard one-dimensional RNN with exact gradients by backpropagation through time.

    x(t) = phi(W1 @ [u(t); x(t-1); 1]),    y(t) = W2 @ [x(t); 1],    x(0) = 0

``phi`` is ``tanh`` (default) or the logistic function.  With the logistic
function an orthogonal recurrent matrix still shrinks back-propagated
signals by about 4x per step (its slope at 0 is 1/4), so training on the
long-lag tasks defaults to ``tanh``.

The last column of each weight matrix is the bias.  Batches are stored
batch-major (``inputs.shape == (B, T, n_u)``); all computations run
time-major internally.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import log_softmax, softmax

from .linalg import DimensionError, gaussian_matrix, random_orthogonal

MSE = "mse"
CROSS_ENTROPY = "xent"
TANH = "tanh"
LOGISTIC = "logistic"


@dataclass(frozen=True)
class RnnDims:
    n_u: int
    n_x: int
    n_y: int

    def __post_init__(self):
        if min(self.n_u, self.n_x, self.n_y) < 1:
            raise DimensionError(f"all RNN dimensions must be >= 1, got {self}")

    @property
    def shapes(self):
        return [(self.n_x, self.n_u + self.n_x + 1), (self.n_y, self.n_x + 1)]


@dataclass
class RnnParams:
    """Weights ``W1`` (n_x, n_u+n_x+1) and ``W2`` (n_y, n_x+1).

    The same container holds gradients and perturbations; arithmetic keeps
    the left operand's activation.
    """
    W1: np.ndarray
    W2: np.ndarray
    activation: str = TANH

    def __post_init__(self):
        if self.activation not in (TANH, LOGISTIC):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def dims(self):
        n_x = self.W1.shape[0]
        return RnnDims(self.W1.shape[1] - n_x - 1, n_x, self.W2.shape[0])

    def matrices(self):
        return [self.W1, self.W2]

    @classmethod
    def from_matrices(cls, mats, activation=TANH):
        W1, W2 = mats
        return cls(np.asarray(W1, dtype=float), np.asarray(W2, dtype=float), activation)

    def with_matrices(self, W1, W2):
        return RnnParams(W1, W2, self.activation)

    def copy(self):
        return self.with_matrices(self.W1.copy(), self.W2.copy())

    def __add__(self, other):
        return self.with_matrices(self.W1 + other.W1, self.W2 + other.W2)

    def __sub__(self, other):
        return self.with_matrices(self.W1 - other.W1, self.W2 - other.W2)

    def __mul__(self, scale):
        return self.with_matrices(scale * self.W1, scale * self.W2)

    __rmul__ = __mul__

    def norm(self):
        return float(np.sqrt(np.sum(self.W1 ** 2) + np.sum(self.W2 ** 2)))

    def is_finite(self):
        return bool(np.all(np.isfinite(self.W1)) and np.all(np.isfinite(self.W2)))


@dataclass
class SequenceBatch:
    """A batch of equal-length sequences.

    ``targets`` is ``(B, T, n_y)`` float for MSE and ``(B, T)`` int class
    indices for cross-entropy; entries outside ``loss_mask`` are ignored.
    ``score_mask`` selects the positions the success metric looks at and
    defaults to ``loss_mask``.
    """
    inputs: np.ndarray
    targets: np.ndarray
    loss_mask: np.ndarray
    loss_kind: str
    score_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.score_mask is None:
            self.score_mask = self.loss_mask
        if self.inputs.ndim != 3:
            raise DimensionError("inputs must have shape (batch, T, n_u)")
        if self.loss_mask.shape != self.inputs.shape[:2]:
            raise DimensionError("loss_mask must have shape (batch, T)")
        if self.loss_kind not in (MSE, CROSS_ENTROPY):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")

    @property
    def size(self):
        return self.inputs.shape[0]

    @property
    def seq_len(self):
        return self.inputs.shape[1]


@dataclass
class ForwardTrace:
    states: np.ndarray   # (T+1, B, n_x), states[0] == 0
    outputs: np.ndarray  # (T, B, n_y)


def _sigmoid_(z):
    """In-place logistic sigmoid; exp overflow correctly yields 0."""
    with np.errstate(over="ignore"):
        np.negative(z, out=z)
        np.exp(z, out=z)
    z += 1.0
    np.reciprocal(z, out=z)
    return z


def _tanh_(z):
    return np.tanh(z, out=z)


_ACTIVATE = {TANH: _tanh_, LOGISTIC: _sigmoid_}


def init_params(dims, rng, std=0.1, activation=TANH):
    """Orthogonal recurrent block, N(0, std^2) elsewhere, zero biases."""
    n_u, n_x, n_y = dims.n_u, dims.n_x, dims.n_y
    W1 = np.zeros((n_x, n_u + n_x + 1))
    W1[:, :n_u] = gaussian_matrix(n_x, n_u, std, rng)
    W1[:, n_u:n_u + n_x] = random_orthogonal(n_x, rng)
    W2 = np.zeros((n_y, n_x + 1))
    W2[:, :n_x] = gaussian_matrix(n_y, n_x, std, rng)
    return RnnParams(W1, W2, activation)


def _check(params, batch):
    if batch.inputs.shape[2] != params.dims.n_u:
        raise DimensionError(
            f"batch input dimension {batch.inputs.shape[2]} != n_u = {params.dims.n_u}")


def forward(params, batch):
    _check(params, batch)
    n_u, n_x = params.dims.n_u, params.dims.n_x
    W1, W2 = params.W1, params.W2
    U = np.ascontiguousarray(batch.inputs.transpose(1, 0, 2))
    T, B, _ = U.shape
    # input and bias contributions for every step at once
    Z_in = U @ W1[:, :n_u].T + W1[:, -1]
    W_rec_t = W1[:, n_u:n_u + n_x].T
    act = _ACTIVATE[params.activation]
    X = np.zeros((T + 1, B, n_x))
    for t in range(T):
        z = X[t] @ W_rec_t
        z += Z_in[t]
        X[t + 1] = act(z)
    Y = X[1:] @ W2[:, :n_x].T + W2[:, -1]
    return ForwardTrace(X, Y)


def _mask_tm(batch):
    mask = batch.loss_mask.T
    count = int(mask.sum())
    if count == 0:
        raise ValueError("loss mask selects no outputs")
    return mask, count


def loss(trace, batch):
    mask, count = _mask_tm(batch)
    Y = trace.outputs
    if batch.loss_kind == MSE:
        err = Y - batch.targets.transpose(1, 0, 2)
        per_step = 0.5 * np.sum(err ** 2, axis=2)
    else:
        tgt = batch.targets.T
        logp = log_softmax(Y, axis=2)
        per_step = -np.take_along_axis(logp, tgt[..., None], axis=2)[..., 0]
    return float(np.sum(per_step[mask]) / count)


def output_grad(trace, batch):
    """d loss / d y(t), shape (T, B, n_y)."""
    mask, count = _mask_tm(batch)
    Y = trace.outputs
    if batch.loss_kind == MSE:
        dY = Y - batch.targets.transpose(1, 0, 2)
    else:
        dY = softmax(Y, axis=2)
        tgt = batch.targets.T
        np.put_along_axis(dY, tgt[..., None],
                          np.take_along_axis(dY, tgt[..., None], axis=2) - 1.0, axis=2)
    dY *= mask[..., None] / count
    return dY


def bptt_grad(params, batch, return_loss=False):
    """Exact gradient of :func:`loss` w.r.t. ``W1`` and ``W2``."""
    trace = forward(params, batch)
    n_u, n_x = params.dims.n_u, params.dims.n_x
    W1, W2 = params.W1, params.W2
    X = trace.states
    T, B, _ = trace.outputs.shape
    dY = output_grad(trace, batch)

    gW2 = np.empty_like(W2)
    gW2[:, :n_x] = dY.reshape(-1, dY.shape[2]).T @ X[1:].reshape(-1, n_x)
    gW2[:, -1] = dY.sum(axis=(0, 1))

    dX_out = dY @ W2[:, :n_x]
    W_rec = W1[:, n_u:n_u + n_x]
    # activation derivative, overwritten with dL/dz below
    dZ = 1.0 - X[1:] ** 2 if params.activation == TANH else X[1:] * (1.0 - X[1:])
    carry = np.zeros((B, n_x))
    for t in range(T - 1, -1, -1):
        carry += dX_out[t]
        dZ[t] *= carry
        carry = dZ[t] @ W_rec

    dZ2 = dZ.reshape(-1, n_x)
    U = batch.inputs.transpose(1, 0, 2).reshape(-1, n_u)
    gW1 = np.empty_like(W1)
    gW1[:, :n_u] = dZ2.T @ U
    gW1[:, n_u:n_u + n_x] = dZ2.T @ X[:-1].reshape(-1, n_x)
    gW1[:, -1] = dZ2.sum(axis=0)
    grad = params.with_matrices(gW1, gW2)
    if return_loss:
        return grad, loss(trace, batch)
    return grad


def project_zero_column_sum(M):
    """Remove each column's mean so every column sums to zero."""
    M = np.asarray(M, dtype=float)
    return M - M.mean(axis=0, keepdims=True)
