"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Dynamic graph: every op records its parents and a backward closure on the
produced tensor, and backward() walks the graph in reverse topological
order.  Shapes must match exactly except for the documented bias-add
broadcast (matrix + row vector); everything else raises a ShapeError
naming the op.  Training runs in float32, gradient checking in float64.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible for the named op."""


class ContractError(RuntimeError):
    """An op precondition was violated."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (evaluation / decoding fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # convenience operators
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _result(data, parents, backward_fn):
    """Create an op output; records the closure only while grad is enabled."""
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def backward(root):
    """Backpropagate from a scalar root; gradients accumulate on leaves."""
    if root.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.data.shape}")
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def gradients(root, params):
    """backward() then collect leaf gradients as a name -> array map."""
    for p in params.values():
        p.zero_grad()
    backward(root)
    return {name: p.grad for name, p in params.items() if p.grad is not None}


# ---------------------------------------------------------------------------
# primitives

def constant(data, name=None):
    return Tensor(np.asarray(data), requires_grad=False, name=name)


def add(a, b):
    """Elementwise add; also supports (n, d) + (d,) bias broadcast."""
    if a.data.shape != b.data.shape:
        if not (a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]):
            raise ShapeError(f"add: {a.data.shape} vs {b.data.shape}")
        out_data = a.data + b.data

        def bwd(g):
            _accum(a, g)
            _accum(b, g.sum(axis=0))

        return _result(out_data, (a, b), bwd)

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _result(a.data + b.data, (a, b), bwd)


def sub(a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return _result(a.data - b.data, (a, b), bwd)


def mul(a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(a.data * b.data, (a, b), bwd)


def scale(a, s):
    """Multiply by a python scalar (KL annealing weight, sign flips)."""
    s = float(s)

    def bwd(g):
        _accum(a, g * s)

    return _result(a.data * s, (a,), bwd)


def add_const(a, c):
    c = float(c)

    def bwd(g):
        _accum(a, g)

    return _result(a.data + c, (a,), bwd)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.data.shape} @ {b.data.shape}")

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), bwd)


def sigmoid(a):
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _result(out_data, (a,), bwd)


def tanh(a):
    out_data = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _result(out_data, (a,), bwd)


def exp(a):
    out_data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out_data)

    return _result(out_data, (a,), bwd)


def log(a):
    def bwd(g):
        _accum(a, g / a.data)

    return _result(np.log(a.data), (a,), bwd)


def softmax(a):
    """Softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        _accum(a, out_data * (g - dot))

    return _result(out_data, (a,), bwd)


def log_softmax(a):
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out_data = shifted - lse

    def bwd(g):
        sm = np.exp(out_data)
        _accum(a, g - sm * g.sum(axis=-1, keepdims=True))

    return _result(out_data, (a,), bwd)


def concat(tensors, axis=-1):
    datas = [t.data for t in tensors]
    ndim = datas[0].ndim
    ax = axis % ndim
    for d in datas[1:]:
        if d.ndim != ndim:
            raise ShapeError("concat: rank mismatch")
        if d.shape[:ax] + d.shape[ax + 1:] != datas[0].shape[:ax] + datas[0].shape[ax + 1:]:
            raise ShapeError(f"concat: {d.shape} vs {datas[0].shape} along axis {ax}")
    out_data = np.concatenate(datas, axis=ax)
    sizes = [d.shape[ax] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * ndim
            idx[ax] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _result(out_data, tuple(tensors), bwd)


def slice_cols(a, start, stop):
    """Columns [start, stop) of a 2-D tensor (or entries of a 1-D one)."""
    ax = a.data.ndim - 1
    idx = [slice(None)] * a.data.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _result(a.data[idx], (a,), bwd)


def reshape(a, shape):
    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _result(a.data.reshape(shape), (a,), bwd)


def tile_cols(a, n):
    """(m, 1) -> (m, n); backward sums across the tiled columns."""
    if a.data.ndim != 2 or a.data.shape[1] != 1:
        raise ShapeError(f"tile_cols expects (m, 1), got {a.data.shape}")

    def bwd(g):
        _accum(a, g.sum(axis=1, keepdims=True))

    return _result(np.repeat(a.data, n, axis=1), (a,), bwd)


def reduce_sum(a, axis=None):
    def bwd(g):
        if axis is None:
            _accum(a, np.full_like(a.data, g))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _result(a.data.sum(axis=axis), (a,), bwd)


def reduce_mean(a, axis=None):
    n = a.data.size if axis is None else a.data.shape[axis]

    def bwd(g):
        if axis is None:
            _accum(a, np.full_like(a.data, g / n))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g / n, axis), a.data.shape).copy())

    return _result(a.data.mean(axis=axis), (a,), bwd)


def pick(a, indices):
    """out[i] = a[i, indices[i]] for a 2-D tensor; used for cross-entropy."""
    idx = np.asarray(indices)
    if a.data.ndim != 2 or idx.shape != (a.data.shape[0],):
        raise ShapeError(f"pick: {a.data.shape} with indices {idx.shape}")
    rows = np.arange(a.data.shape[0])

    def bwd(g):
        full = np.zeros_like(a.data)
        full[rows, idx] = g
        _accum(a, full)

    return _result(a.data[rows, idx], (a,), bwd)


def embedding(table, indices):
    """Row lookup: (batch,) indices into a (rows, dim) table."""
    idx = np.asarray(indices)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.data.shape}")
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= table.data.shape[0]:
        raise ContractError(f"embedding index out of range for table with {table.data.shape[0]} rows")

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        _accum(table, full)

    return _result(table.data[idx], (table,), bwd)


def hinge_floor(a, floor):
    """max(floor, a) elementwise; subgradient 0 at and below the kink."""
    floor = float(floor)
    mask = a.data > floor

    def bwd(g):
        _accum(a, g * mask)

    return _result(np.maximum(a.data, floor), (a,), bwd)


# ---------------------------------------------------------------------------
# gradient checking

@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: list = field(default_factory=list)
    tol: float = 1e-4

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    def failures(self):
        return [e.name for e in self.entries if not e.passed]

    def summary(self):
        lines = []
        for e in self.entries:
            status = "ok" if e.passed else "FAIL"
            lines.append(f"{status:4s} {e.name}: max_rel_err={e.max_rel_error:.3e}")
        return "\n".join(lines)


def grad_check(loss_fn, params, h=1e-4, tol=1e-4, max_coords=None, rng=None):
    """Compare backward() gradients against central finite differences.

    loss_fn: () -> scalar Tensor, closed over `params` (name -> Tensor).
    Checks every parameter; with max_coords set, a random subset of
    coordinates per parameter.  Run in float64.
    """
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = float(loss_fn().data)
            flat[c] = orig - h
            down = float(loss_fn().data)
            flat[c] = orig
            numeric = (up - down) / (2.0 * h)
            a = analytic[name].reshape(-1)[c]
            denom = max(abs(a) + abs(numeric), 1e-8)
            rel = abs(a - numeric) / denom
            worst = max(worst, rel)
        report.entries.append(GradCheckEntry(name=name, max_rel_error=worst, passed=worst < tol))
    return report
