"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Every op runs eagerly on numpy float64 arrays. When a :class:`Tape` is active
and at least one operand requires a gradient, the op appends a node holding its
operands and a backward rule. ``Tape.backward`` then walks the nodes in reverse
creation order, which is a valid reverse topological order by construction.

Only 2-D values are supported. Binary elementwise ops broadcast a row vector
``(1, n)``, a column vector ``(m, 1)`` or a scalar ``(1, 1)`` against a matrix
and nothing more general.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import ContractError, DegenerateRowError, NonFiniteError, ShapeError

COSINE_EPS = 1e-12

_TAPES: list["Tape"] = []


class Tensor:
    """A dense float64 matrix that may take part in a recorded computation."""

    __slots__ = ("value", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.value = arr
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def param(cls, value, name: str | None = None) -> "Tensor":
        return cls(np.array(value, dtype=np.float64, copy=True), requires_grad=True, name=name)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.value).all())

    def numpy(self) -> np.ndarray:
        return self.value.copy()

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


class Tape:
    """Ordered record of the ops evaluated while the tape is active.

    A tape supports exactly one call to :meth:`backward`; higher-order
    gradients are not available.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward, op: str) -> None:
        self.nodes.append(_Node(out, inputs, backward, op))

    def backward(self, loss: Tensor, params: Iterable[Tensor]) -> dict[Tensor, np.ndarray]:
        """Gradient of the scalar ``loss`` with respect to each of ``params``.

        Parameters the loss does not depend on get an all-zero gradient.
        """
        if self._consumed:
            raise ContractError("double backward is not supported; record a new tape")
        if loss.shape != (1, 1):
            raise ContractError(f"backward needs a 1x1 loss, got {loss.shape}")
        if not loss.is_finite():
            raise NonFiniteError("loss is not finite")
        self._consumed = True
        params = list(params)
        grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        wanted = {id(p) for p in params}
        for node in reversed(self.nodes):
            g = grads.get(id(node.out))
            if g is None:
                continue
            if id(node.out) not in wanted:
                del grads[id(node.out)]
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return {p: grads.get(id(p), np.zeros_like(p.value)) for p in params}


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply_op(value: np.ndarray, inputs: Sequence[Tensor], backward, op: str) -> Tensor:
    """Wrap ``value`` as the output of an op and record it on the active tape.

    ``backward`` maps the upstream gradient to one gradient (or ``None``) per
    input. This is the single entry point all ops go through, and it is public
    so that custom ops can be declared.
    """
    if not np.isfinite(value).all():
        raise NonFiniteError(f"non-finite values produced by {op}")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(out, tuple(inputs), backward, op)
    return out


def _check_broadcast(a: tuple[int, int], b: tuple[int, int]) -> tuple[int, int]:
    shape = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            shape.append(da)
        elif da == 1:
            shape.append(db)
        else:
            raise ShapeError(f"cannot broadcast {a} with {b}")
    return tuple(shape)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return apply_op(
        a.value + b.value, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add",
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return apply_op(
        a.value - b.value, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    av, bv = a.value, b.value
    ga, gb = a.requires_grad, b.requires_grad

    def back(g):
        return (_unbroadcast(g * bv, av.shape) if ga else None,
                _unbroadcast(g * av, bv.shape) if gb else None)

    return apply_op(av * bv, (a, b), back, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return apply_op(a.value * c, (a,), lambda g: (g * c,), "scale")


def square(a: Tensor) -> Tensor:
    av = a.value
    return apply_op(av * av, (a,), lambda g: (2.0 * av * g,), "square")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.value)
    return apply_op(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    av = a.value
    if (av <= 0).any():
        raise NonFiniteError("log of a non-positive entry")
    return apply_op(np.log(av), (a,), lambda g: (g / av,), "log")


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.value)
    return apply_op(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def softplus(a: Tensor) -> Tensor:
    """``log(1 + exp(x))`` without overflow for large ``|x|``."""
    av = a.value
    y = np.logaddexp(0.0, av)
    return apply_op(y, (a,), lambda g: (g * _sigmoid(av),), "softplus")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    return apply_op(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# reductions

def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = a.shape
    if axis is None:
        return apply_op(
            np.array([[a.value.sum()]]), (a,),
            lambda g: (np.broadcast_to(g, shape).copy(),), "sum",
        )
    if axis not in (0, 1):
        raise ShapeError(f"axis must be 0, 1 or None, got {axis}")
    return apply_op(
        a.value.sum(axis=axis, keepdims=True), (a,),
        lambda g: (np.broadcast_to(g, shape).copy(),), "sum",
    )


def mean(a: Tensor) -> Tensor:
    return scale(sum(a), 1.0 / a.value.size)


def logsumexp_rows(a: Tensor) -> Tensor:
    """Row-wise ``log(sum(exp(x)))`` with max subtraction; returns ``(rows, 1)``."""
    av = a.value
    m = av.max(axis=1, keepdims=True)
    e = np.exp(av - m)
    s = e.sum(axis=1, keepdims=True)
    soft = e / s
    return apply_op(np.log(s) + m, (a,), lambda g: (g * soft,), "logsumexp_rows")


# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul shape mismatch {a.shape} x {b.shape}")
    av, bv = a.value, b.value
    ga, gb = a.requires_grad, b.requires_grad
    return apply_op(av @ bv, (a, b),
                    lambda g: (g @ bv.T if ga else None, av.T @ g if gb else None), "matmul")


def transpose(a: Tensor) -> Tensor:
    return apply_op(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


class SparseMatrix:
    """Constant sparse matrix in CSR form; no gradient flows into its weights."""

    def __init__(self, rows: int, cols: int, row_idx, col_idx, weights):
        row_idx = np.asarray(row_idx, dtype=np.int64)
        col_idx = np.asarray(col_idx, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        if not (len(row_idx) == len(col_idx) == len(weights)):
            raise ShapeError("row, col and weight arrays differ in length")
        if len(row_idx) and (
            row_idx.min() < 0 or row_idx.max() >= rows or col_idx.min() < 0 or col_idx.max() >= cols
        ):
            raise ShapeError("sparse entry index out of bounds")
        if not np.isfinite(weights).all():
            raise NonFiniteError("sparse weights must be finite")
        keys = row_idx * cols + col_idx
        if len(np.unique(keys)) != len(keys):
            raise ContractError("duplicate (row, col) entries in sparse matrix")
        coo = sp.coo_matrix((weights, (row_idx, col_idx)), shape=(rows, cols))
        self.csr = coo.tocsr()
        self.csr.sort_indices()

    @classmethod
    def from_scipy(cls, mat) -> "SparseMatrix":
        coo = sp.coo_matrix(mat)
        return cls(coo.shape[0], coo.shape[1], coo.row, coo.col, coo.data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.csr.shape

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def entries(self) -> list[tuple[int, int, float]]:
        coo = self.csr.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    def todense(self) -> np.ndarray:
        return self.csr.toarray()


def spmm(s: SparseMatrix, d: Tensor) -> Tensor:
    if s.shape[1] != d.rows:
        raise ShapeError(f"spmm shape mismatch {s.shape} x {d.shape}")
    csr = s.csr
    csr_t = csr.T.tocsr()
    return apply_op(np.asarray(csr @ d.value), (d,), lambda g: (np.asarray(csr_t @ g),), "spmm")


# structural ops

def segment_sum(values: np.ndarray, idx: np.ndarray, n_rows: int) -> np.ndarray:
    """Sum rows of ``values`` into ``n_rows`` buckets given by ``idx``.

    Goes through a CSR product, which sums each bucket in index order and is
    much faster than ``np.add.at``.
    """
    ind = sp.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(n_rows, len(idx)))
    return np.asarray(ind @ values)


def segment_max(values: np.ndarray, idx: np.ndarray, n_rows: int) -> np.ndarray:
    out = np.full((n_rows, values.shape[1]), -np.inf)
    if len(idx) == 0:
        return out
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    starts = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]])
    out[sidx[starts]] = np.maximum.reduceat(values[order], starts, axis=0)
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    rows = {p.rows for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols needs equal row counts, got {sorted(rows)}")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return apply_op(np.concatenate([p.value for p in parts], axis=1), tuple(parts), back, "concat_cols")


def reshape(a: Tensor, rows: int, cols: int) -> Tensor:
    """Row-major reshape between 2-D shapes."""
    if rows * cols != a.value.size:
        raise ShapeError(f"cannot reshape {a.shape} to {(rows, cols)}")
    shape = a.shape
    return apply_op(a.value.reshape(rows, cols).copy(), (a,), lambda g: (g.reshape(shape),), "reshape")


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return apply_op(a.value[start:stop].copy(), (a,), back, "slice_rows")


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return apply_op(a.value[:, start:stop].copy(), (a,), back, "slice_cols")


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    n = a.rows
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError("gather index out of bounds")

    return apply_op(a.value[idx], (a,), lambda g: (segment_sum(g, idx, n),), "gather_rows")


def scatter_add_rows(a: Tensor, idx, n_rows: int) -> Tensor:
    """Sum row ``r`` of ``a`` into output row ``idx[r]``; output has ``n_rows`` rows."""
    idx = np.asarray(idx, dtype=np.int64)
    if len(idx) != a.rows:
        raise ShapeError("scatter index length must equal row count")
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise ShapeError("scatter index out of bounds")
    return apply_op(segment_sum(a.value, idx, n_rows), (a,), lambda g: (g[idx],), "scatter_add_rows")


# normalizations

def row_softmax(t: Tensor, mask=None) -> Tensor:
    """Softmax along each row, optionally restricted to allowed positions.

    ``mask`` is either a boolean array shaped like ``t`` (True = allowed) or a
    sequence with one iterable of allowed column indices per row. Disallowed
    entries come out as exactly 0.
    """
    tv = t.value
    allowed = _mask_array(mask, t.shape)
    if not allowed.any(axis=1).all():
        raise DegenerateRowError("row_softmax: a row has no unmasked position")
    logits = np.where(allowed, tv, -np.inf)
    m = logits.max(axis=1, keepdims=True)
    e = np.where(allowed, np.exp(logits - m), 0.0)
    y = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return apply_op(y, (t,), back, "row_softmax")


def _mask_array(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    arr = np.asarray(mask, dtype=object) if not isinstance(mask, np.ndarray) else mask
    if isinstance(arr, np.ndarray) and arr.dtype == bool:
        if arr.shape != shape:
            raise ShapeError(f"mask shape {arr.shape} != tensor shape {shape}")
        return arr
    if len(mask) != shape[0]:
        raise ShapeError("index-set mask needs one entry per row")
    out = np.zeros(shape, dtype=bool)
    for r, cols in enumerate(mask):
        out[r, list(cols)] = True
    return out


def segment_softmax(a: Tensor, segments, n_segments: int) -> Tensor:
    """Column-wise softmax over groups of rows that share a segment id.

    This is the sparse counterpart of a masked :func:`row_softmax`: row ``r``
    of ``a`` holds the logits of one (row, column) position of a conceptual
    dense matrix whose row is ``segments[r]``.
    """
    seg = np.asarray(segments, dtype=np.int64)
    av = a.value
    m = segment_max(av, seg, n_segments)
    e = np.exp(av - m[seg])
    y = e / segment_sum(e, seg, n_segments)[seg]

    def back(g):
        gy = g * y
        return (gy - y * segment_sum(gy, seg, n_segments)[seg],)

    return apply_op(y, (a,), back, "segment_softmax")


def cosine_rows(u: Tensor, v: Tensor) -> Tensor:
    """Per-row cosine similarity ``(rows, 1)`` with an epsilon-guarded denominator."""
    if u.shape != v.shape:
        raise ShapeError(f"cosine_rows shape mismatch {u.shape} vs {v.shape}")
    uv, vv = u.value, v.value
    nu = np.sqrt((uv * uv).sum(axis=1, keepdims=True))
    nv = np.sqrt((vv * vv).sum(axis=1, keepdims=True))
    dot = (uv * vv).sum(axis=1, keepdims=True)
    den = nu * nv + COSINE_EPS
    c = dot / den

    def back(g):
        # d den / d u = nv * u / nu (0 where nu == 0)
        su = np.divide(nv, nu, out=np.zeros_like(nu), where=nu > 0)
        sv = np.divide(nu, nv, out=np.zeros_like(nv), where=nv > 0)
        gu = g * (vv / den - c / den * su * uv)
        gv = g * (uv / den - c / den * sv * vv)
        return gu, gv

    return apply_op(c, (u, v), back, "cosine_rows")


# initialization

def glorot_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    s = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-s, s, size=(rows, cols))


# gradient checking

@dataclass
class GradCheckReport:
    errors: list[float]
    tol: float
    names: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.errors)

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    def __str__(self) -> str:
        parts = [f"{n}: {e:.2e}" for n, e in zip(self.names, self.errors)]
        return f"grad_check({'pass' if self.passed else 'FAIL'}, tol={self.tol:g}) " + ", ".join(parts)


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5,
               tol: float = 1e-4) -> GradCheckReport:
    """Compare tape gradients of ``f()`` against central finite differences.

    ``f`` rebuilds the computation from the current parameter values each call.
    The error for each parameter tensor is
    ``max|g_analytic - g_fd| / max(max|g_fd|, 1e-8)``.
    """
    with Tape() as tape:
        loss = f()
    analytic = tape.backward(loss, params)
    errors = []
    for p in params:
        fd = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f().item()
            flat[i] = orig - step
            down = f().item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError("non-finite value during finite differencing")
            fd.reshape(-1)[i] = (up - down) / (2.0 * step)
        diff = np.abs(analytic[p] - fd).max() if fd.size else 0.0
        denom = max(np.abs(fd).max() if fd.size else 0.0, 1e-8)
        errors.append(float(diff / denom))
    names = [p.name or f"param{i}" for i, p in enumerate(params)]
    return GradCheckReport(errors, tol, names)
