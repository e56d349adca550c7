"""Small dense-tensor engine with a reverse-mode tape.

Operations record themselves on the innermost active :class:`Tape`.  Outside
a tape (evaluation, inference) nothing is recorded and ops are plain numpy.

Shapes never broadcast implicitly except against a Python scalar; use
:func:`scale_rows`, :func:`gather` and :func:`concat` to line things up.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_ACTIVE_TAPES: list["Tape"] = []
_BRANCH_LOGS: list[list[int]] = []


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # operator sugar over the functional ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; records are appended in execution order, which
    is already a topological order, so backward is one reverse sweep.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self.records.append((out, inputs, backward))

    def backward(self, loss: Tensor, params: Mapping[str, Tensor] | Sequence[Tensor] | None = None):
        """Propagate d(loss) back through the tape.

        Returns a gradient map keyed like ``params`` (name -> array for a
        mapping, a list for a sequence).  Leaves that did not take part get
        zeros.  ``.grad`` is also set on every requested leaf.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, fn in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = fn(g)
            for t, gi in zip(inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        if params is None:
            return None
        if isinstance(params, Mapping):
            result = {}
            for name, p in params.items():
                g = grads.get(id(p))
                p.grad = np.zeros_like(p.data) if g is None else g.astype(p.dtype, copy=False)
                result[name] = p.grad
            return result
        result = []
        for p in params:
            g = grads.get(id(p))
            p.grad = np.zeros_like(p.data) if g is None else g.astype(p.dtype, copy=False)
            result.append(p.grad)
        return result


def backward(loss: Tensor, params=None, tape: Tape | None = None):
    """Backward on ``tape`` (default: the innermost active tape)."""
    if tape is None:
        if not _ACTIVE_TAPES:
            raise RuntimeError("no active tape; run the forward pass inside `with Tape():`")
        tape = _ACTIVE_TAPES[-1]
    return tape.backward(loss, params)


class record_branches:
    """Collect a fingerprint of every discrete choice made while active
    (activation sides, clamps, top-k picks).  Two runs with equal
    fingerprints evaluate the same smooth piece of a piecewise function."""

    def __enter__(self) -> list[int]:
        self.log: list[int] = []
        _BRANCH_LOGS.append(self.log)
        return self.log

    def __exit__(self, *exc) -> None:
        _BRANCH_LOGS.remove(self.log)


def note_branch(choice: np.ndarray) -> None:
    if _BRANCH_LOGS:
        key = hash(np.ascontiguousarray(choice).tobytes())
        for log in _BRANCH_LOGS:
            log.append(key)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], fn: Callable) -> Tensor:
    req = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=req)
    if req and _ACTIVE_TAPES:
        _ACTIVE_TAPES[-1].record(out, inputs, fn)
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def constant(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype or DEFAULT_DTYPE))


def zeros(shape, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or DEFAULT_DTYPE))


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def fn(g):
        return (g @ B.T if a.requires_grad else None, A.T @ g if b.requires_grad else None)

    return _make(A @ B, (a, b), fn)


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _make(a.data + a.data.dtype.type(c), (a,), lambda g: (g,))
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    A, B = a.data, b.data
    return _make(A * B, (a, b), lambda g: (g * B, g * A))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    A, B = a.data, b.data
    out = A / B
    return _make(out, (a, b), lambda g: (g / B, -g * out / B))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    A = a.data
    pos = A > 0
    note_branch(pos)
    s = A.dtype.type(slope)
    out = np.where(pos, A, A * s)
    return _make(out, (a,), lambda g: (np.where(pos, g, g * s),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    A = a.data
    return _make(np.log(A), (a,), lambda g: (g / A,))


def neg_log_clamped(a: Tensor, eps: float) -> Tensor:
    """-log(max(a, eps)); the clamped branch has zero gradient."""
    A = a.data
    live = A > eps
    note_branch(live)
    safe = np.where(live, A, A.dtype.type(eps))
    out = -np.log(safe)
    return _make(out, (a,), lambda g: (np.where(live, -g / safe, 0.0).astype(A.dtype),))


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of ``x`` by scalar ``s[i]``."""
    if s.data.ndim != 1 or s.shape[0] != x.shape[0]:
        raise ShapeError(f"scale_rows: {x.shape} rows vs scale {s.shape}")
    X, S = x.data, s.data
    if X.ndim == 1:
        return mul(x, s)
    col = S[:, None]

    def fn(g):
        return (g * col if x.requires_grad else None,
                (g * X).sum(axis=1) if s.requires_grad else None)

    return _make(X * col, (x, s), fn)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add vector ``b`` to every row of matrix ``x``."""
    if x.data.ndim != 2 or b.data.ndim != 1 or b.shape[0] != x.shape[1]:
        raise ShapeError(f"add_bias: {x.shape} + {b.shape}")
    return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


# ---------------------------------------------------------------- reductions / shape

def sum_all(a: Tensor) -> Tensor:
    A = a.data
    return _make(np.asarray(A.sum(), dtype=A.dtype), (a,), lambda g: (np.full_like(A, g),))


def row_sum(a: Tensor) -> Tensor:
    A = a.data
    if A.ndim != 2:
        raise ShapeError(f"row_sum expects a matrix, got {a.shape}")
    return _make(A.sum(axis=1), (a,), lambda g: (np.repeat(g[:, None], A.shape[1], axis=1),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not parts:
        raise ShapeError("concat of nothing")
    datas = [p.data for p in parts]
    ref = list(datas[0].shape)
    for d in datas[1:]:
        other = list(d.shape)
        if len(other) != len(ref) or any(x != y for i, (x, y) in enumerate(zip(ref, other)) if i != axis):
            raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]} on axis {axis}")
    sizes = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def fn(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(np.concatenate(datas, axis=axis), tuple(parts), fn)


def gather(a: Tensor, index) -> Tensor:
    """Rows ``a[index]``; a negative index yields a zero row."""
    idx = np.asarray(index, dtype=np.int64)
    A = a.data
    if idx.size and idx.max(initial=-1) >= A.shape[0]:
        raise IndexError(f"gather: index {idx.max()} out of range for {A.shape[0]} rows")
    missing = idx < 0
    if missing.any():
        out = np.zeros((idx.shape[0],) + A.shape[1:], dtype=A.dtype)
        live = ~missing
        out[live] = A[idx[live]]

        def fn(g):
            full = np.zeros_like(A)
            np.add.at(full, idx[live], g[live])
            return (full,)
    else:
        out = A[idx]

        def fn(g):
            full = np.zeros_like(A)
            np.add.at(full, idx, g)
            return (full,)

    return _make(out, (a,), fn)


# ---------------------------------------------------------------- segment ops

def _check_segments(ids: np.ndarray, n: int, n_rows: int, op: str) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape[0] != n_rows:
        raise ShapeError(f"{op}: {ids.shape[0]} segment ids for {n_rows} rows")
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"{op}: segment id out of range [0, {n})")
    return ids


def segment_sum(values: Tensor, segment_ids, n_segments: int) -> Tensor:
    """Row i of the result is the sum of the rows whose id is i."""
    V = values.data
    ids = _check_segments(segment_ids, n_segments, V.shape[0], "segment_sum")
    out = np.zeros((n_segments,) + V.shape[1:], dtype=V.dtype)
    np.add.at(out, ids, V)
    return _make(out, (values,), lambda g: (g[ids],))


def segment_softmax(scores: Tensor, segment_ids, n_segments: int) -> Tensor:
    S = scores.data
    if S.ndim != 1:
        raise ShapeError(f"segment_softmax expects a vector, got {scores.shape}")
    ids = _check_segments(segment_ids, n_segments, S.shape[0], "segment_softmax")
    seg_max = np.full(n_segments, -np.inf, dtype=S.dtype)
    np.maximum.at(seg_max, ids, S)
    e = np.exp(S - seg_max[ids])
    denom = np.zeros(n_segments, dtype=S.dtype)
    np.add.at(denom, ids, e)
    out = e / denom[ids]

    def fn(g):
        dot = np.zeros(n_segments, dtype=S.dtype)
        np.add.at(dot, ids, g * out)
        return (out * (g - dot[ids]),)

    return _make(out, (scores,), fn)


def segment_count(segment_ids, n_segments: int) -> np.ndarray:
    return np.bincount(np.asarray(segment_ids, dtype=np.int64), minlength=n_segments)
