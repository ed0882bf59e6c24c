"""Positive-definite preconditioners fitted from (perturbation, gradient change) pairs.

Both forms store P through upper-triangular factors with positive diagonals,
``P = Q^T Q``, and fit Q by stochastic relative gradient descent on

    E[dg^T P dg + dtheta^T P^{-1} dtheta].

Perturbing ``Q -> (I + E) Q`` and expanding to first order gives the
relative gradient ``a a^T - b b^T`` with ``a = Q dg`` and ``b = Q^{-T} dtheta``
(up to a factor 2 that the step normalisation absorbs).  Only its upper
triangle is used so Q stays triangular.  See ``docs/preconditioner.md``.

Parameters are handled as lists of matrices.  The dense form works on the
concatenation of the column-major vectorisations of the matrices; the
Kronecker form keeps one ``(Q_left, Q_right)`` pair per matrix and applies
``P_left @ G @ P_right``, i.e. ``(P_right kron P_left) @ vec(G)``.
"""
from dataclasses import dataclass

import numpy as np

from scipy.spatial import ConvexHull, QhullError

from .linalg import EPS, DimensionError, tri_mul_upper, tri_solve_upper

MAGIC = "PSGD-PC-1"
MAX_HALVINGS = 10


@dataclass
class GradPair:
    delta_theta: list
    delta_g: list


def vec(mats):
    return np.concatenate([np.asarray(m, dtype=float).ravel(order="F") for m in mats])


def unvec(v, shapes):
    out, k = [], 0
    for r, c in shapes:
        out.append(v[k:k + r * c].reshape((r, c), order="F"))
        k += r * c
    if k != v.size:
        raise DimensionError(f"vector of length {v.size} does not match shapes {shapes}")
    return out


def _check_shapes(mats, shapes):
    got = [tuple(np.shape(m)) for m in mats]
    if got != [tuple(s) for s in shapes]:
        raise DimensionError(f"expected matrices of shapes {shapes}, got {got}")


def _relative_step(Q, D, step, scale):
    """Return ``Q - s D`` with ``s = step/scale`` halved until diag(Q) stays positive.

    ``None`` means the update was abandoned.
    """
    s = step / max(scale, EPS)
    diag_Q, diag_D = Q.diagonal(), D.diagonal()
    for _ in range(MAX_HALVINGS + 1):
        if (diag_Q - s * diag_D > 0).all():
            Q_new = Q - s * D
            return Q_new if np.isfinite(Q_new).all() else None
        s *= 0.5
    return None


def _suffix_rows(v, Q):
    # row i: sum_{j >= i} v_j Q[j, :]
    return np.cumsum((v[:, None] * Q)[::-1], axis=0)[::-1]


_BLOCK = 32
_SMALL = 128   # below this a plain O(n^3) product is cheaper
_HULL_MIN = 1024


def _outer_diff_max(a, b):
    """Exact ``max_ij |a_i a_j - b_i b_j|``.

    For fixed ``i`` this is the support function of the points
    ``{+-(a_j, b_j)}`` in direction ``(a_i, -b_i)``, so for large ``n`` only
    the convex hull vertices of that symmetric set need to be scanned.
    """
    n = a.size
    if n >= _HULL_MIN:
        pts = np.stack([a, b], axis=1)
        try:
            hull = ConvexHull(np.vstack([pts, -pts]))
            idx = np.unique(hull.vertices % n)
            return float(np.max(np.abs(np.outer(a, a[idx]) - np.outer(b, b[idx]))))
        except QhullError:
            pass  # collinear points; fall through
    m = 0.0
    for i0 in range(0, n, 256):
        i1 = min(i0 + 256, n)
        G = np.outer(a[i0:i1], a[i0:])
        G -= np.outer(b[i0:i1], b[i0:])
        m = max(m, float(np.max(np.abs(G))))
    return m


def _dense_step(Q, a, b, s, out):
    """Write ``Q - s triu(a a^T - b b^T) Q`` into ``out`` (both upper triangular).

    Row blocks are processed bottom-up.  Inside a block the triangular
    suffix sums reduce to a small matrix product; the rows below enter
    through the running sums ``C = [a^T; b^T] Q[below]``.  Entries of
    ``out`` below the diagonal are never written.  Returns False if any
    entry comes out non-finite.
    """
    n = Q.shape[0]
    C = np.zeros((2, n))
    for i0 in reversed(range(0, n, _BLOCK)):
        i1 = min(i0 + _BLOCK, n)
        Qb = Q[i0:i1, i0:]
        ab, bb = a[i0:i1], b[i0:i1]
        M = np.triu(np.outer(ab, ab) - np.outer(bb, bb))
        M *= -s
        M[np.diag_indices_from(M)] += 1.0
        Db = M @ Qb
        Db += np.stack([-s * ab, s * bb], axis=1) @ C[:, i0:]
        if not np.all(np.isfinite(Db)):
            return False
        out[i0:i1, i0:] = Db
        C[:, i0:] += np.stack([ab, bb]) @ Qb
    return True


class DensePreconditioner:
    """Full ``n x n`` preconditioner over all parameters."""

    kind = "dense"

    def __init__(self, shapes, Q=None):
        self.shapes = [tuple(s) for s in shapes]
        n = sum(r * c for r, c in self.shapes)
        self.Q = np.eye(n) if Q is None else np.array(Q, dtype=float)
        if self.Q.shape != (n, n):
            raise DimensionError(f"dense factor must be {n}x{n}, got {self.Q.shape}")
        if np.any(np.tril(self.Q, -1)):
            raise ValueError("dense factor must be upper triangular")
        self.skipped = 0
        self._spare = None

    @property
    def size(self):
        return self.Q.shape[0]

    def matrix(self):
        return self.Q.T @ self.Q

    def apply(self, grads):
        _check_shapes(grads, self.shapes)
        g = vec(grads)
        return unvec(tri_mul_upper(self.Q, tri_mul_upper(self.Q, g), trans=True), self.shapes)

    def update(self, pair, step=0.01):
        """One relative-gradient step from a single pair.  Returns False if skipped."""
        _check_shapes(pair.delta_theta, self.shapes)
        _check_shapes(pair.delta_g, self.shapes)
        Q = self.Q
        with np.errstate(invalid="ignore", over="ignore"):
            a = tri_mul_upper(Q, vec(pair.delta_g))
            b = tri_solve_upper(Q, vec(pair.delta_theta), trans=True)
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            self.skipped += 1
            return False
        if a.size <= _SMALL:
            G = np.outer(a, a) - np.outer(b, b)
            Q_new = _relative_step(Q, np.triu(G) @ Q, step, float(np.abs(G).max()))
            if Q_new is None:
                self.skipped += 1
                return False
            self.Q = Q_new
            return True
        s = step / max(_outer_diff_max(a, b), EPS)
        # Q is triangular, so diag(triu(G) Q) = (a^2 - b^2) * diag(Q)
        r = a * a - b * b
        for _ in range(MAX_HALVINGS + 1):
            if (1.0 - s * r > 0).all():
                break
            s *= 0.5
        else:
            self.skipped += 1
            return False
        if self._spare is None or self._spare.shape != Q.shape:
            self._spare = np.zeros_like(Q)
        if not _dense_step(Q, a, b, s, self._spare):
            self.skipped += 1
            return False
        # double buffering: the old factor becomes the next output buffer
        self.Q, self._spare = self._spare, Q
        return True

    def criterion_terms(self, pair):
        a = tri_mul_upper(self.Q, vec(pair.delta_g))
        b = tri_solve_upper(self.Q, vec(pair.delta_theta), trans=True)
        return float(a @ a + b @ b)


class KronPreconditioner:
    """Direct sum over matrices of ``P_right kron P_left``."""

    kind = "kron"

    def __init__(self, shapes, factors=None):
        self.shapes = [tuple(s) for s in shapes]
        if factors is None:
            factors = [(np.eye(r), np.eye(c)) for r, c in self.shapes]
        self.factors = [(np.array(Ql, dtype=float), np.array(Qr, dtype=float))
                        for Ql, Qr in factors]
        for (r, c), (Ql, Qr) in zip(self.shapes, self.factors):
            if Ql.shape != (r, r) or Qr.shape != (c, c):
                raise DimensionError(f"factors {Ql.shape}, {Qr.shape} do not fit a {r}x{c} matrix")
        self.skipped = 0

    @property
    def size(self):
        return sum(r * c for r, c in self.shapes)

    def matrix(self):
        """Assembled block-diagonal P; only for small problems and tests."""
        blocks = [np.kron(Qr.T @ Qr, Ql.T @ Ql) for Ql, Qr in self.factors]
        n = self.size
        P = np.zeros((n, n))
        k = 0
        for blk in blocks:
            m = blk.shape[0]
            P[k:k + m, k:k + m] = blk
            k += m
        return P

    def apply(self, grads):
        _check_shapes(grads, self.shapes)
        return [Ql.T @ (Ql @ G @ Qr.T) @ Qr for G, (Ql, Qr) in zip(grads, self.factors)]

    def update_layer(self, i, dG, dTheta, step=0.01):
        Ql, Qr = self.factors[i]
        # only the product of the two factor scales is identified; keep them balanced
        rho = np.sqrt(Ql.diagonal().max() / Qr.diagonal().max())
        Ql, Qr = Ql / rho, Qr * rho
        with np.errstate(invalid="ignore", over="ignore"):
            A = Ql @ dG @ Qr.T
            # B = Ql^{-T} dTheta Qr^{-1}
            B = tri_solve_upper(Ql, tri_solve_upper(Qr, dTheta.T, trans=True).T, trans=True)
        if not (np.isfinite(A).all() and np.isfinite(B).all()):
            self.skipped += 1
            return False
        G1 = A @ A.T - B @ B.T
        G2 = A.T @ A - B.T @ B
        Ql_new = _relative_step(Ql, np.triu(G1) @ Ql, step, float(np.abs(G1).max()))
        Qr_new = _relative_step(Qr, np.triu(G2) @ Qr, step, float(np.abs(G2).max()))
        if Ql_new is None or Qr_new is None:
            self.skipped += 1
            return False
        self.factors[i] = (Ql_new, Qr_new)
        return True

    def update(self, pair, step=0.01):
        _check_shapes(pair.delta_theta, self.shapes)
        _check_shapes(pair.delta_g, self.shapes)
        ok = True
        for i, (dT, dG) in enumerate(zip(pair.delta_theta, pair.delta_g)):
            ok &= self.update_layer(i, np.asarray(dG, dtype=float),
                                    np.asarray(dT, dtype=float), step)
        return ok

    def criterion_terms(self, pair):
        total = 0.0
        for dT, dG, (Ql, Qr) in zip(pair.delta_theta, pair.delta_g, self.factors):
            A = Ql @ dG @ Qr.T
            B = tri_solve_upper(Ql, tri_solve_upper(Qr, np.asarray(dT).T, trans=True).T,
                                trans=True)
            total += float(np.sum(A * A) + np.sum(B * B))
        return total


def init_identity(kind, shapes):
    if kind == "dense":
        return DensePreconditioner(shapes)
    if kind == "kron":
        return KronPreconditioner(shapes)
    raise ValueError(f"unknown preconditioner kind {kind!r}")


def criterion_value(precond, pairs):
    """Sample mean of ``dg^T P dg + dtheta^T P^{-1} dtheta`` over ``pairs``."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one pair")
    return float(np.mean([precond.criterion_terms(p) for p in pairs]))


def _factor_list(precond):
    if precond.kind == "dense":
        return [precond.Q]
    return [F for pair in precond.factors for F in pair]


def save(precond, path):
    """Write factors as text: magic line, kind, parameter shapes, then each factor row-major."""
    lines = [MAGIC, f"kind {precond.kind}",
             "shapes " + " ".join(f"{r}x{c}" for r, c in precond.shapes)]
    for F in _factor_list(precond):
        lines.append(f"factor {F.shape[0]} {F.shape[1]}")
        lines.extend(" ".join(f"{x:.17g}" for x in row) for row in F)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MAGIC:
        raise ValueError(f"{path}: not a {MAGIC} checkpoint")
    kind = lines[1].split()[1]
    shapes = [tuple(int(v) for v in s.split("x")) for s in lines[2].split()[1:]]
    mats, k = [], 3
    while k < len(lines):
        _, r, c = lines[k].split()
        r, c = int(r), int(c)
        rows = [np.array(lines[k + 1 + i].split(), dtype=float) for i in range(r)]
        mats.append(np.vstack(rows).reshape(r, c))
        k += 1 + r
    if kind == "dense":
        return DensePreconditioner(shapes, mats[0])
    return KronPreconditioner(shapes, list(zip(mats[0::2], mats[1::2])))
