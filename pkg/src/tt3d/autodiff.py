"""Reverse-mode differentiation over a closed set of array primitives.

A Tape records primitive applications in topological (append) order; each
node caches its forward value as a numpy array. backward() walks the tape in
reverse, accumulating vector-Jacobian products into per-node gradient slots.
Primitives are vectorized, so a whole image render is a few dozen nodes.

The op set is fixed: add, sub, mul, scale, matmul, concat, slice,
gather_weighted_sum (trilinear), silu, sigmoid, softplus, exp, recip, sum,
cumsum_ex, norm2. There is no graph compiler and no higher-order support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ContractError, StructuralError

__all__ = ["Tape", "Node", "GradCheckReport", "grad_check", "sigmoid", "softplus", "silu"]


def sigmoid(x):
    return expit(np.asarray(x))


def softplus(x):
    # log(1 + e^x), stable on both tails
    x = np.asarray(x)
    return np.logaddexp(np.zeros_like(x), x)


def silu(x):
    return x * sigmoid(x)


def _silu_grad(x):
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    shape = tuple(shape)
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


@dataclass
class _Record:
    op: str
    parents: tuple
    value: np.ndarray
    vjp: object  # callable grad -> tuple of parent grads, or None for inputs


class Node:
    """Reference to one recorded value on a tape."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape, index, value):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Node(#{self.index}, shape={self.value.shape})"


class Tape:
    """Append-only record of primitive applications.

    Single-threaded by contract; independent tapes may run concurrently.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._grads: list | None = None
        self._leaves: list[int] = []

    def __len__(self):
        return len(self._records)

    # -- inputs --------------------------------------------------------------

    def leaf(self, value) -> Node:
        """A differentiable input; backward() reports gradients for leaves."""
        value = value if isinstance(value, np.ndarray) else np.asarray(value, dtype=np.float64)
        node = self._append("leaf", (), value, None)
        self._leaves.append(node.index)
        return node

    def constant(self, value) -> Node:
        """A non-differentiable input (data, rng draws, detached values)."""
        value = value if isinstance(value, np.ndarray) else np.asarray(value, dtype=np.float64)
        return self._append("const", (), value, None)

    def _append(self, op, parents, value, vjp) -> Node:
        index = len(self._records)
        self._records.append(_Record(op, parents, value, vjp))
        self._grads = None
        return Node(self, index, value)

    def _check(self, *nodes):
        for n in nodes:
            if not isinstance(n, Node) or n.tape is not self:
                raise StructuralError("input is not a node of this tape")

    # -- primitives ------------------------------------------------------------

    def add(self, a: Node, b: Node) -> Node:
        self._check(a, b)
        try:
            value = a.value + b.value
        except ValueError as e:
            raise StructuralError(f"add: incompatible shapes {a.shape} vs {b.shape}") from e
        ash, bsh = a.shape, b.shape
        return self._append("add", (a.index, b.index), value,
                            lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh)))

    def sub(self, a: Node, b: Node) -> Node:
        self._check(a, b)
        try:
            value = a.value - b.value
        except ValueError as e:
            raise StructuralError(f"sub: incompatible shapes {a.shape} vs {b.shape}") from e
        ash, bsh = a.shape, b.shape
        return self._append("sub", (a.index, b.index), value,
                            lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh)))

    def mul(self, a: Node, b: Node) -> Node:
        self._check(a, b)
        try:
            value = a.value * b.value
        except ValueError as e:
            raise StructuralError(f"mul: incompatible shapes {a.shape} vs {b.shape}") from e
        av, bv = a.value, b.value
        return self._append("mul", (a.index, b.index), value,
                            lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))

    def scale(self, a: Node, k: float) -> Node:
        self._check(a)
        k = float(k)
        return self._append("scale", (a.index,), a.value * k, lambda g: (g * k,))

    def matmul(self, a: Node, b: Node) -> Node:
        self._check(a, b)
        av, bv = a.value, b.value
        if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
            raise StructuralError("matmul supports 1-D and 2-D operands only")
        try:
            value = av @ bv
        except ValueError as e:
            raise StructuralError(f"matmul: incompatible shapes {av.shape} @ {bv.shape}") from e

        def vjp(g):
            if av.ndim == 2 and bv.ndim == 2:
                return g @ bv.T, av.T @ g
            if av.ndim == 1 and bv.ndim == 2:
                return bv @ g, np.outer(av, g)
            if av.ndim == 2 and bv.ndim == 1:
                return np.outer(g, bv), av.T @ g
            return g * bv, g * av  # 1-D dot

        return self._append("matmul", (a.index, b.index), value, vjp)

    def concat(self, nodes, axis: int = -1) -> Node:
        nodes = list(nodes)
        self._check(*nodes)
        try:
            value = np.concatenate([n.value for n in nodes], axis=axis)
        except ValueError as e:
            raise StructuralError("concat: incompatible shapes") from e
        sizes = [n.value.shape[axis] for n in nodes]
        splits = list(np.cumsum(sizes)[:-1])
        return self._append("concat", tuple(n.index for n in nodes), value,
                            lambda g: tuple(np.split(g, splits, axis=axis)))

    def slice(self, a: Node, start: int, stop: int, axis: int = -1) -> Node:
        self._check(a)
        sel = [np.s_[:]] * a.value.ndim
        sel[axis] = np.s_[start:stop]
        sel = tuple(sel)
        value = a.value[sel]
        ash, adt = a.value.shape, a.value.dtype

        def vjp(g):
            out = np.zeros(ash, dtype=adt)
            out[sel] = g
            return (out,)

        return self._append("slice", (a.index,), value, vjp)

    def gather_weighted_sum(self, table: Node, x: Node, res: int, lo: float, hi: float) -> Node:
        """Trilinear interpolation into a dense voxel table.

        table: (res**3, F) corner features, flat index (ix*res + iy)*res + iz.
        x:     (..., 3) query points; clamped to the [lo, hi] cube.
        Backward is analytic to both the corner features and the query point
        (the x-gradient is what shading normals are built from).
        """
        self._check(table, x)
        tv, xv = table.value, x.value
        if tv.ndim != 2 or tv.shape[0] != res ** 3:
            raise StructuralError(f"gather_weighted_sum: table shape {tv.shape} does not match res {res}")
        if xv.shape[-1] != 3:
            raise StructuralError("gather_weighted_sum: query points must be (..., 3)")
        if not np.all(np.isfinite(xv)):
            raise StructuralError("gather_weighted_sum: non-finite query point")

        from ._kernels import trilerp_forward, trilerp_vjp

        nfeat = tv.shape[1]
        pts = xv.reshape(-1, 3)
        if pts.dtype != tv.dtype:
            pts = pts.astype(tv.dtype)
        value = trilerp_forward(tv, pts, res, lo, hi).reshape(xv.shape[:-1] + (nfeat,))

        def vjp(g):
            gf = g.reshape(-1, nfeat)
            if gf.dtype != tv.dtype:
                gf = gf.astype(tv.dtype)
            gtable, gx = trilerp_vjp(tv, pts, gf, res, lo, hi)
            return gtable, gx.reshape(xv.shape).astype(xv.dtype, copy=False)

        return self._append("gather_weighted_sum", (table.index, x.index), value, vjp)

    def silu(self, a: Node) -> Node:
        self._check(a)
        av = a.value
        s = sigmoid(av)
        return self._append("silu", (a.index,), av * s,
                            lambda g: (g * (s * (1.0 + av * (1.0 - s))),))

    def sigmoid(self, a: Node) -> Node:
        self._check(a)
        value = sigmoid(a.value)
        return self._append("sigmoid", (a.index,), value, lambda g: (g * value * (1.0 - value),))

    def softplus(self, a: Node) -> Node:
        self._check(a)
        av = a.value
        return self._append("softplus", (a.index,), softplus(av), lambda g: (g * sigmoid(av),))

    def exp(self, a: Node) -> Node:
        self._check(a)
        value = np.exp(a.value)
        return self._append("exp", (a.index,), value, lambda g: (g * value,))

    def recip(self, a: Node) -> Node:
        self._check(a)
        av = a.value
        return self._append("recip", (a.index,), 1.0 / av, lambda g: (-g / (av * av),))

    def sum(self, a: Node, axis: int | None = None) -> Node:
        self._check(a)
        av = a.value
        value = av.sum(axis=axis)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, av.shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), av.shape).copy(),)

        return self._append("sum", (a.index,), value, vjp)

    def cumsum_ex(self, a: Node, axis: int = -1) -> Node:
        """Exclusive cumulative sum along `axis` (element i gets the sum over j < i)."""
        self._check(a)
        av = a.value
        value = np.cumsum(av, axis=axis) - av

        def vjp(g):
            suffix = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
            return (suffix - g,)

        return self._append("cumsum_ex", (a.index,), value, vjp)

    def norm2(self, a: Node) -> Node:
        self._check(a)
        av = a.value
        value = np.asarray(np.sqrt((av * av).sum()))

        def vjp(g):
            n = float(value) if float(value) > 0.0 else 1.0
            return (g * av / n,)

        return self._append("norm2", (a.index,), value, vjp)

    def reshape(self, a: Node, shape: tuple) -> Node:
        self._check(a)
        ash = a.value.shape
        return self._append("reshape", (a.index,), a.value.reshape(shape),
                            lambda g: (g.reshape(ash),))

    # -- generic surface ----------------------------------------------------------

    _PRIMITIVES = frozenset({
        "add", "sub", "mul", "scale", "matmul", "concat", "slice",
        "gather_weighted_sum", "silu", "sigmoid", "softplus", "exp",
        "recip", "sum", "cumsum_ex", "norm2", "reshape",
    })

    def record(self, op: str, *inputs, **kwargs) -> Node:
        """Apply a primitive by name. The op set is closed."""
        if op not in self._PRIMITIVES:
            raise ContractError(f"unknown primitive {op!r}")
        return getattr(self, op)(*inputs, **kwargs)

    # -- reverse pass ----------------------------------------------------------------

    def backward(self, root: Node) -> dict[int, np.ndarray]:
        """Populate gradient slots for ancestors of a scalar `root`.

        Returns {leaf index -> gradient}. Non-ancestors keep zero gradient.
        Deterministic: the walk order is the fixed tape order.
        """
        self._check(root)
        if root.value.size != 1:
            raise ContractError(f"backward root must be scalar, got shape {root.value.shape}")
        grads: list = [None] * len(self._records)
        grads[root.index] = np.ones_like(root.value)
        for i in range(root.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            rec = self._records[i]
            if rec.vjp is None:
                continue
            for p, pg in zip(rec.parents, rec.vjp(g)):
                if pg is None:
                    continue
                grads[p] = pg if grads[p] is None else grads[p] + pg
        self._grads = grads
        return {i: self._grad_at(i) for i in self._leaves}

    def _grad_at(self, index: int) -> np.ndarray:
        g = self._grads[index]
        if g is None:
            return np.zeros_like(self._records[index].value)
        return g

    def grad(self, node: Node) -> np.ndarray:
        """Gradient slot of `node` after backward(); zeros for non-ancestors."""
        self._check(node)
        if self._grads is None:
            raise ContractError("backward() has not been run on this tape")
        return self._grad_at(node.index)


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_arg: int
    worst_index: tuple
    finite: bool

    def ok(self, tol: float) -> bool:
        return self.finite and self.max_rel_error < tol


def grad_check(fn, args, step: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients of a scalar function against central differences.

    `fn(tape, *leaf_nodes) -> scalar Node`; `args` are the input arrays. The
    finite-difference side re-evaluates the forward pass only, so it is an
    independent oracle for the analytic backward. Reported error is
    |analytic - fd| / max(1, |analytic|), maximized over all coordinates.
    Non-finite values produce a report with finite=False rather than raising.
    """
    args = [np.array(a, dtype=np.float64) for a in args]

    def run(values):
        tape = Tape()
        leaves = [tape.leaf(v) for v in values]
        root = fn(tape, *leaves)
        return tape, leaves, root

    tape, leaves, root = run(args)
    tape.backward(root)
    analytic = [np.asarray(tape.grad(leaf), dtype=np.float64) for leaf in leaves]

    worst = 0.0
    worst_arg, worst_index = -1, ()
    finite = bool(np.all(np.isfinite(root.value))) and all(np.all(np.isfinite(a)) for a in analytic)
    for k, a in enumerate(args):
        flat = a.reshape(-1)
        ga = analytic[k].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            fp = float(run(args)[2].value)
            flat[j] = orig - step
            fm = float(run(args)[2].value)
            flat[j] = orig
            fd = (fp - fm) / (2.0 * step)
            if not (math.isfinite(fd) and math.isfinite(ga[j])):
                finite = False
                continue
            err = abs(ga[j] - fd) / max(1.0, abs(ga[j]))
            if err > worst:
                worst, worst_arg = err, k
                worst_index = np.unravel_index(j, a.shape) if a.shape else ()
    return GradCheckReport(max_rel_error=worst if finite else float("inf"),
                           worst_arg=worst_arg,
                           worst_index=tuple(int(i) for i in worst_index),
                           finite=finite)
