"""A small define-by-run reverse-mode autodiff over float64 numpy arrays.

Nodes hold a value array, their parents and a closure computing the
vector-Jacobian product for each parent. ``backward(root)`` walks the graph
in reverse topological order. Intermediate gradients live only for the
duration of one backward call; leaf gradients accumulate across calls until
``zero_grad`` is called.

Broadcasting is limited to scalar operands and adding a row vector to every
row of a matrix.
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from subgroup_forge import kernels
from subgroup_forge.groups import DimensionError


class Node:
    __slots__ = ("value", "grad", "requires_grad", "parents", "op", "name")

    def __init__(self, value, requires_grad=False, parents=(), op="leaf", name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents  # tuple of (Node, vjp closure)
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_node(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)


def param(value, name=None) -> Node:
    return Node(value, requires_grad=True, name=name)


def constant(value) -> Node:
    return Node(value)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _make(value, parents, op):
    live = tuple((p, f) for p, f in parents if p.requires_grad)
    return Node(value, requires_grad=bool(live), parents=live, op=op)


def _shape_error(op, *shapes):
    return DimensionError(f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}")


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    av, bv = a.value, b.value
    return _make(av @ bv, ((a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)), "matmul")


def _broadcast_kind(a: Node, b: Node, op: str) -> str:
    if a.shape == b.shape:
        return "same"
    if b.value.ndim == 0 or b.value.size == 1 and b.value.ndim <= 1:
        return "scalar_b"
    if a.value.ndim == 0 or a.value.size == 1 and a.value.ndim <= 1:
        return "scalar_a"
    if a.value.ndim == 2 and b.value.ndim == 1 and b.shape[0] == a.shape[1]:
        return "row_b"
    if b.value.ndim == 2 and a.value.ndim == 1 and a.shape[0] == b.shape[1]:
        return "row_a"
    raise _shape_error(op, a.shape, b.shape)


def _reduce_to(g, kind, side, shape):
    if kind == "same":
        return g
    if kind == f"scalar_{side}":
        return np.asarray(g.sum()).reshape(shape)
    if kind == f"row_{side}":
        return g.sum(axis=0)
    return g


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    kind = _broadcast_kind(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value,
                 ((a, lambda g: _reduce_to(g, kind, "a", sa)), (b, lambda g: _reduce_to(g, kind, "b", sb))),
                 "add")


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    kind = _broadcast_kind(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value,
                 ((a, lambda g: _reduce_to(g, kind, "a", sa)), (b, lambda g: -_reduce_to(g, kind, "b", sb))),
                 "sub")


def mul(a, b) -> Node:
    """Elementwise product (same shape, or one scalar operand)."""
    a, b = as_node(a), as_node(b)
    kind = _broadcast_kind(a, b, "mul")
    if kind.startswith("row"):
        raise _shape_error("mul", a.shape, b.shape)
    av, bv = a.value, b.value
    sa, sb = a.shape, b.shape
    return _make(av * bv,
                 ((a, lambda g: _reduce_to(g * bv, kind, "a", sa)), (b, lambda g: _reduce_to(g * av, kind, "b", sb))),
                 "mul")


def tanh(a) -> Node:
    a = as_node(a)
    out = np.tanh(a.value)
    return _make(out, ((a, lambda g: g * (1.0 - out * out)),), "tanh")


def relu(a) -> Node:
    a = as_node(a)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), ((a, lambda g: g * mask),), "relu")


def abs_(a) -> Node:
    a = as_node(a)
    sign = np.sign(a.value)
    return _make(np.abs(a.value), ((a, lambda g: g * sign),), "abs")


def power(a, exponent: int) -> Node:
    a = as_node(a)
    if not isinstance(exponent, (int, np.integer)) or isinstance(exponent, bool):
        raise TypeError("power supports integer exponents only")
    e = int(exponent)
    v = a.value
    if e == 0:
        return _make(np.ones_like(v), ((a, lambda g: np.zeros_like(g)),), "power")
    return _make(v**e, ((a, lambda g: g * (e * v ** (e - 1))),), "power")


def sum_(a, axis=None) -> Node:
    a = as_node(a)
    shape = a.shape
    if axis is None:
        return _make(np.asarray(a.value.sum()), ((a, lambda g: np.full(shape, float(g))),), "sum")
    out = a.value.sum(axis=axis)
    return _make(out, ((a, lambda g: np.broadcast_to(np.expand_dims(g, axis), shape).copy()),), "sum")


def mean(a, axis=None) -> Node:
    a = as_node(a)
    count = a.value.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis), 1.0 / count)


def concat(nodes, axis: int = 1) -> Node:
    nodes = [as_node(n) for n in nodes]
    sizes = [n.shape[axis] for n in nodes]
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        raise _shape_error("concat", *[n.shape for n in nodes]) from exc
    bounds = np.cumsum([0] + sizes)
    parents = []
    for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(int(lo), int(hi))
        parents.append((n, lambda g, sl=tuple(sl): g[sl]))
    return _make(out, tuple(parents), "concat")


def slice_cols(a, start: int, stop: int) -> Node:
    a = as_node(a)
    if a.value.ndim != 2 or not 0 <= start <= stop <= a.shape[1]:
        raise _shape_error("slice", a.shape, (start, stop))
    width = a.shape[1]

    def vjp(g):
        full = np.zeros((g.shape[0], width))
        full[:, start:stop] = g
        return full

    return _make(a.value[:, start:stop], ((a, vjp),), "slice")


def take_cols(a, idx) -> Node:
    """Gather columns ``idx`` (repeats allowed); the general slice."""
    a = as_node(a)
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if a.value.ndim != 2 or (idx.size and (idx.min() < 0 or idx.max() >= a.shape[1])):
        raise _shape_error("take", a.shape, idx.shape)
    width = a.shape[1]
    return _make(a.value[:, idx], ((a, lambda g: kernels.scatter_add_cols(g, idx, width)),), "take")


def transpose(a) -> Node:
    a = as_node(a)
    if a.value.ndim != 2:
        raise _shape_error("transpose", a.shape)
    return _make(a.value.T, ((a, lambda g: g.T),), "transpose")


def reshape(a, shape) -> Node:
    a = as_node(a)
    old = a.shape
    return _make(a.value.reshape(shape), ((a, lambda g: g.reshape(old)),), "reshape")


def sorted_group_sum(a, groups: int, scale: float = 1.0) -> Node:
    """Sum a ``(B, groups * c)`` array over its ``groups`` blocks of ``c`` columns.

    Each channel is summed over the blocks in sorted order, so the result
    depends only on the multiset of block values: permuting the blocks leaves
    it bitwise unchanged.
    """
    a = as_node(a)
    B, width = a.shape
    if width % groups:
        raise _shape_error("group_sum", a.shape, (groups,))
    c = width // groups
    blocks = np.sort(a.value.reshape(B, groups, c), axis=1)
    acc = blocks[:, 0, :].copy()
    for s in range(1, groups):
        acc += blocks[:, s, :]
    return _make(acc * scale, ((a, lambda g: np.tile(g * scale, (1, groups))),), "group_sum")


def backward(root: Node) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every trainable leaf."""
    if root.value.size != 1:
        raise DimensionError(f"backward needs a scalar root, got shape {root.shape}")
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, vjp in node.parents:
            pg = vjp(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    for leaf in order:
        if leaf.requires_grad and not leaf.parents and leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.value)


def zero_grad(params) -> None:
    for p in params:
        p.grad = None


class Adam:
    """Standard Adam with bias correction, updating parameter values in place."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            if p.grad.shape != p.value.shape:
                raise DimensionError(f"gradient shape {p.grad.shape} != parameter shape {p.value.shape}")
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad * p.grad
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        zero_grad(self.params)


def adam_step(params, state=None, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """Functional wrapper: one Adam update using each param's ``grad``."""
    if state is None:
        state = Adam(params, lr, betas, eps)
    state.lr = lr
    state.step()
    return state


# -- serialization --------------------------------------------------------

_MAGIC = b"SGFT"


def tensor_to_bytes(arr) -> bytes:
    """Shape header plus little-endian float64 payload."""
    arr = np.asarray(arr, dtype="<f8")
    head = _MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr).tobytes()


def tensor_from_bytes(blob: bytes) -> np.ndarray:
    if blob[:4] != _MAGIC:
        raise ValueError("not a tensor payload")
    (ndim,) = struct.unpack_from("<I", blob, 4)
    shape = struct.unpack_from(f"<{ndim}Q", blob, 8)
    offset = 8 + 8 * ndim
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
    return data.reshape(shape).astype(np.float64)


def save_tensor(path, arr) -> None:
    Path(path).write_bytes(tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def matrix_to_csv(arr) -> str:
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    for row in arr:
        writer.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def matrix_from_csv(text: str) -> np.ndarray:
    rows = [list(map(float, r)) for r in csv.reader(io.StringIO(text)) if r]
    return np.asarray(rows, dtype=np.float64)
