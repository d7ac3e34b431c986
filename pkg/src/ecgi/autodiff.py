"""Reverse-mode tape over dense numpy values, with a nestable forward mode.

The tape records eagerly-evaluated nodes (scalars or 2-D matrices).
``backward`` walks the tape in reverse and accumulates adjoints into the
leaf parameters.  Forward-mode directional derivatives are built out of
ordinary tape operations (see :class:`Dual`), so the result of
differentiating along an input direction is itself a tape value whose
parameter gradients remain available through ``backward``.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tape", "Var", "Dual", "backward", "Gradients",
    "add", "sub", "mul", "div", "neg", "scale", "affc", "cmul",
    "matmul", "matmul_const", "rmatmul_const", "affine",
    "tanh", "sigmoid", "square", "vsum", "vmean",
    "gather_cols", "take_rows", "take_entries", "reshape",
    "input_directional_derivative", "second_directional_derivative",
]

_SCALAR = ()


class Tape:
    """Append-only record of a computation."""

    def __init__(self):
        self.ops = []         # op name per node
        self.parents = []     # tuple of parent node indices
        self.values = []      # np.ndarray per node
        self.aux = []         # op-specific constants
        self.grad_flags = []  # does this node depend on a parameter leaf?

    def _push(self, op, parents, value, aux=None, requires_grad=None):
        if requires_grad is None:
            requires_grad = any(self.grad_flags[p] for p in parents)
        idx = len(self.ops)
        self.ops.append(op)
        self.parents.append(parents)
        self.values.append(np.asarray(value, dtype=float))
        self.aux.append(aux)
        self.grad_flags.append(requires_grad)
        return Var(self, idx)

    def constant(self, value):
        """A value gradients never flow into."""
        return self._push("const", (), value, requires_grad=False)

    def param(self, value):
        """A leaf the backward pass reports a gradient for."""
        return self._push("leaf", (), value, requires_grad=True)

    def __len__(self):
        return len(self.ops)


class Var:
    """Handle to one tape node."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape, idx):
        self.tape = tape
        self.idx = idx

    @property
    def value(self):
        return self.tape.values[self.idx]

    @property
    def shape(self):
        return self.tape.values[self.idx].shape

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={self.shape})"


class Dual:
    """A (primal, tangent) pair; either side may itself be a Dual.

    Running a tape-expressed function over a Dual input propagates a
    forward-mode directional derivative whose intermediates are ordinary
    tape nodes, so the tangent stays differentiable with respect to the
    parameters.  Nesting Duals yields second directional derivatives.
    """

    __slots__ = ("p", "t")

    def __init__(self, primal, tangent):
        self.p = primal
        self.t = tangent


def _depth(x):
    d = 0
    while isinstance(x, Dual):
        x = x.p
        d += 1
    return d


def _base(x):
    while isinstance(x, Dual):
        x = x.p
    return x


def _zero_tree(x):
    if isinstance(x, Dual):
        return Dual(_zero_tree(x.p), _zero_tree(x.t))
    return x.tape.constant(np.zeros_like(x.value))


def _lift(x, depth):
    while _depth(x) < depth:
        x = Dual(x, _zero_tree(x))
    return x


def _const_like(like, arr):
    """Embed a constant array at the jet level of `like` (zero tangents)."""
    if isinstance(like, Dual):
        return Dual(_const_like(like.p, arr),
                    _const_like(like.t, np.zeros_like(arr)))
    return like.tape.constant(arr)


def _pair(a, b):
    d = max(_depth(a), _depth(b))
    return _lift(a, d), _lift(b, d), d > 0


def _shape_err(op, a, b=None):
    sa = "dual" if isinstance(a, Dual) else a.shape
    msg = f"{op}: incompatible shapes {sa}"
    if b is not None:
        sb = "dual" if isinstance(b, Dual) else b.shape
        msg += f" and {sb}"
    return ValueError(msg)


def _broadcastable(sa, sb):
    return sa == sb or sa == _SCALAR or sb == _SCALAR


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b, dual = _pair(a, b)
    if dual:
        return Dual(add(a.p, b.p), add(a.t, b.t))
    if not _broadcastable(a.shape, b.shape):
        raise _shape_err("add", a, b)
    return a.tape._push("add", (a.idx, b.idx), a.value + b.value)


def sub(a, b):
    a, b, dual = _pair(a, b)
    if dual:
        return Dual(sub(a.p, b.p), sub(a.t, b.t))
    if not _broadcastable(a.shape, b.shape):
        raise _shape_err("sub", a, b)
    return a.tape._push("sub", (a.idx, b.idx), a.value - b.value)


def mul(a, b):
    a, b, dual = _pair(a, b)
    if dual:
        return Dual(mul(a.p, b.p), add(mul(a.t, b.p), mul(a.p, b.t)))
    if not _broadcastable(a.shape, b.shape):
        raise _shape_err("mul", a, b)
    return a.tape._push("mul", (a.idx, b.idx), a.value * b.value)


def div(a, b):
    a, b, dual = _pair(a, b)
    if dual:
        q = div(a.p, b.p)
        return Dual(q, div(sub(a.t, mul(q, b.t)), b.p))
    if not _broadcastable(a.shape, b.shape):
        raise _shape_err("div", a, b)
    return a.tape._push("div", (a.idx, b.idx), a.value / b.value)


def neg(a):
    return scale(a, -1.0)


def scale(a, c):
    """Multiply by a python-float constant."""
    c = float(c)
    if isinstance(a, Dual):
        return Dual(scale(a.p, c), scale(a.t, c))
    return a.tape._push("affc", (a.idx,), c * a.value, aux=c)


def affc(a, c, d):
    """Elementwise constant affine map c*a + d."""
    c, d = float(c), float(d)
    if isinstance(a, Dual):
        return Dual(affc(a.p, c, d), scale(a.t, c))
    return a.tape._push("affc", (a.idx,), c * a.value + d, aux=c)


def cmul(a, weights):
    """Elementwise multiply by a constant array."""
    w = np.asarray(weights, dtype=float)
    if isinstance(a, Dual):
        return Dual(cmul(a.p, w), cmul(a.t, w))
    if w.shape != a.shape and w.shape != _SCALAR:
        raise _shape_err("cmul", a)
    return a.tape._push("cmul", (a.idx,), w * a.value, aux=w)


# ------------------------------------------------------------------- matmuls

def matmul(a, b):
    a, b, dual = _pair(a, b)
    if dual:
        return Dual(matmul(a.p, b.p),
                    add(matmul(a.t, b.p), matmul(a.p, b.t)))
    if a.shape[1] != b.shape[0]:
        raise _shape_err("matmul", a, b)
    return a.tape._push("matmul", (a.idx, b.idx), a.value @ b.value)


def matmul_const(A, x):
    """A @ x where A is a constant numpy or scipy-sparse matrix."""
    if isinstance(x, Dual):
        return Dual(matmul_const(A, x.p), matmul_const(A, x.t))
    if A.shape[1] != x.shape[0]:
        raise _shape_err("matmul_const", x)
    return x.tape._push("matmul_const", (x.idx,), A @ x.value, aux=A)


def rmatmul_const(x, B):
    """x @ B where B is a constant numpy or scipy-sparse matrix."""
    if isinstance(x, Dual):
        return Dual(rmatmul_const(x.p, B), rmatmul_const(x.t, B))
    if x.shape[1] != B.shape[0]:
        raise _shape_err("rmatmul_const", x)
    val = (B.T @ x.value.T).T if sp.issparse(B) else x.value @ B
    return x.tape._push("rmatmul_const", (x.idx,), val, aux=B)


def affine(W, b, x):
    """W @ x + b with the bias column broadcast across x's columns."""
    if isinstance(W, Dual) or isinstance(b, Dual) or isinstance(x, Dual):
        d = max(_depth(W), _depth(b), _depth(x))
        if _depth(W) == 0 and _depth(b) == 0:
            # common case: parameters carry no tangent, d(Wx+b) = W dx
            x = _lift(x, d)
            return Dual(affine(W, b, x.p), matmul(W, x.t))
        W, b, x = _lift(W, d), _lift(b, d), _lift(x, d)
        return Dual(affine(W.p, b.p, x.p),
                    add(affine(W.t, b.t, x.p), matmul(W.p, x.t)))
    if W.shape[1] != x.shape[0] or b.shape != (W.shape[0], 1):
        raise _shape_err("affine", W, x)
    return W.tape._push("affine", (W.idx, b.idx, x.idx),
                        W.value @ x.value + b.value)


# ----------------------------------------------------------------- nonlinear

def tanh(a):
    if isinstance(a, Dual):
        y = tanh(a.p)
        return Dual(y, mul(affc(square(y), -1.0, 1.0), a.t))
    return a.tape._push("tanh", (a.idx,), np.tanh(a.value))


def _sigmoid_np(v):
    lo = np.clip(v, None, 0.0)
    hi = np.clip(v, 0.0, None)
    return np.where(v >= 0, 1.0 / (1.0 + np.exp(-hi)),
                    np.exp(lo) / (1.0 + np.exp(lo)))


def sigmoid(a):
    if isinstance(a, Dual):
        s = sigmoid(a.p)
        return Dual(s, mul(mul(s, affc(s, -1.0, 1.0)), a.t))
    return a.tape._push("sigmoid", (a.idx,), _sigmoid_np(a.value))


def square(a):
    if isinstance(a, Dual):
        return Dual(square(a.p), mul(scale(a.p, 2.0), a.t))
    return a.tape._push("square", (a.idx,), a.value ** 2)


# ---------------------------------------------------------------- reductions

def vsum(a):
    if isinstance(a, Dual):
        return Dual(vsum(a.p), vsum(a.t))
    return a.tape._push("sum", (a.idx,), a.value.sum())


def vmean(a):
    if isinstance(a, Dual):
        return Dual(vmean(a.p), vmean(a.t))
    return a.tape._push("mean", (a.idx,), a.value.mean(), aux=a.value.size)


# ------------------------------------------------------------- restructuring

def gather_cols(a, idx):
    idx = np.asarray(idx, dtype=int)
    if isinstance(a, Dual):
        return Dual(gather_cols(a.p, idx), gather_cols(a.t, idx))
    return a.tape._push("gather_cols", (a.idx,), a.value[:, idx], aux=idx)


def take_rows(a, rows):
    rows = np.asarray(rows, dtype=int)
    if isinstance(a, Dual):
        return Dual(take_rows(a.p, rows), take_rows(a.t, rows))
    return a.tape._push("take_rows", (a.idx,), a.value[rows, :], aux=rows)


def take_entries(a, rows, cols):
    """Pick entries (rows[k], cols[k]) into a 1 x K row vector."""
    rows = np.asarray(rows, dtype=int)
    cols = np.asarray(cols, dtype=int)
    if isinstance(a, Dual):
        return Dual(take_entries(a.p, rows, cols),
                    take_entries(a.t, rows, cols))
    return a.tape._push("take_entries", (a.idx,),
                        a.value[rows, cols][None, :], aux=(rows, cols))


def reshape(a, shape):
    if isinstance(a, Dual):
        return Dual(reshape(a.p, shape), reshape(a.t, shape))
    return a.tape._push("reshape", (a.idx,), a.value.reshape(shape),
                        aux=a.shape)


# ------------------------------------------------------------------ backward

def _unbroadcast(g, shape):
    if shape == _SCALAR and g.shape != _SCALAR:
        return np.asarray(g.sum())
    return g


class Gradients:
    """Gradient map returned by :func:`backward`; index with a Var."""

    def __init__(self, grads):
        self._grads = grads

    def __getitem__(self, var):
        g = self._grads[var.idx]
        if g is None:
            return np.zeros_like(var.value)
        return g


def backward(loss):
    """Reverse pass from a scalar Var; returns a :class:`Gradients` map."""
    if loss.shape != _SCALAR:
        raise ValueError(
            f"backward requires a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    grads = [None] * len(tape)
    grads[loss.idx] = np.asarray(1.0)
    vals = tape.values
    flags = tape.grad_flags

    def acc(idx, g):
        grads[idx] = g if grads[idx] is None else grads[idx] + g

    for i in range(loss.idx, -1, -1):
        g = grads[i]
        if g is None or not flags[i]:
            continue
        op = tape.ops[i]
        ps = tape.parents[i]
        aux = tape.aux[i]
        if op in ("leaf", "const"):
            continue
        if op == "add":
            a, b = ps
            if flags[a]:
                acc(a, _unbroadcast(g, vals[a].shape))
            if flags[b]:
                acc(b, _unbroadcast(g, vals[b].shape))
        elif op == "sub":
            a, b = ps
            if flags[a]:
                acc(a, _unbroadcast(g, vals[a].shape))
            if flags[b]:
                acc(b, _unbroadcast(-g, vals[b].shape))
        elif op == "mul":
            a, b = ps
            if flags[a]:
                acc(a, _unbroadcast(g * vals[b], vals[a].shape))
            if flags[b]:
                acc(b, _unbroadcast(g * vals[a], vals[b].shape))
        elif op == "div":
            a, b = ps
            if flags[a]:
                acc(a, _unbroadcast(g / vals[b], vals[a].shape))
            if flags[b]:
                acc(b, _unbroadcast(-g * vals[i] / vals[b], vals[b].shape))
        elif op == "affc":
            acc(ps[0], aux * g)
        elif op == "cmul":
            acc(ps[0], aux * g)
        elif op == "matmul":
            a, b = ps
            if flags[a]:
                acc(a, g @ vals[b].T)
            if flags[b]:
                acc(b, vals[a].T @ g)
        elif op == "matmul_const":
            acc(ps[0], np.asarray(aux.T @ g))
        elif op == "rmatmul_const":
            gb = np.asarray((aux @ g.T).T) if sp.issparse(aux) else g @ aux.T
            acc(ps[0], gb)
        elif op == "affine":
            w, b, x = ps
            if flags[w]:
                acc(w, g @ vals[x].T)
            if flags[b]:
                acc(b, g.sum(axis=1, keepdims=True))
            if flags[x]:
                acc(x, vals[w].T @ g)
        elif op == "tanh":
            acc(ps[0], g * (1.0 - vals[i] ** 2))
        elif op == "sigmoid":
            acc(ps[0], g * vals[i] * (1.0 - vals[i]))
        elif op == "square":
            acc(ps[0], 2.0 * g * vals[ps[0]])
        elif op == "sum":
            acc(ps[0], np.broadcast_to(g, vals[ps[0]].shape))
        elif op == "mean":
            acc(ps[0], np.broadcast_to(g / aux, vals[ps[0]].shape))
        elif op == "gather_cols":
            gp = np.zeros_like(vals[ps[0]])
            np.add.at(gp, (slice(None), aux), g)
            acc(ps[0], gp)
        elif op == "take_rows":
            gp = np.zeros_like(vals[ps[0]])
            np.add.at(gp, (aux, slice(None)), g)
            acc(ps[0], gp)
        elif op == "take_entries":
            rows, cols = aux
            gp = np.zeros_like(vals[ps[0]])
            np.add.at(gp, (rows, cols), g[0])
            acc(ps[0], gp)
        elif op == "reshape":
            acc(ps[0], g.reshape(aux))
        else:  # pragma: no cover
            raise NotImplementedError(op)
    return Gradients(grads)


# -------------------------------------------------------------- forward mode

def _jvp(fn, x, direction):
    """Tangent of fn along `direction`; x may be a Var or a nested Dual."""
    base = _base(x)
    d = np.asarray(direction, dtype=float).reshape(-1, 1)
    if d.shape[0] != base.shape[0]:
        raise ValueError(f"direction has {d.shape[0]} rows, input has "
                         f"{base.shape[0]}")
    tang = _const_like(x, np.ascontiguousarray(
        np.broadcast_to(d, base.shape)))
    return fn(Dual(x, tang)).t


def input_directional_derivative(net_forward, x, direction):
    """Derivative of net_forward's output along a fixed input direction.

    ``direction`` has one entry per input row and is broadcast across the
    input's columns.  The result is an ordinary tape value on the same
    tape, so ``backward`` can still differentiate it with respect to any
    parameters used inside ``net_forward``.
    """
    return _jvp(net_forward, x, direction)


def second_directional_derivative(net_forward, x, direction):
    """Second derivative of the output along one input direction."""
    return _jvp(lambda z: _jvp(net_forward, z, direction), x, direction)
