"""A small tensor-valued reverse-mode differentiation engine.

Values are numpy float64 arrays computed eagerly when a primitive is
recorded on a :class:`Tape`.  Leaves bound to a :class:`ParamStore` receive
gradients from :func:`backward`; everything else on the tape is transient.

Example
-------
>>> store = ParamStore({"x": 2.0, "y": 3.0})
>>> tape = Tape()
>>> f = tape.param(store, "x") * tape.param(store, "y")
>>> backward(f, store)
>>> float(store.grad["x"]), float(store.grad["y"])
(3.0, 2.0)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from .errors import DimensionError

ACOSH_FLOOR = 1.0 + 1e-12


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# primitive table: forward(values, attrs) -> (out, kink), vjp(g, out, values, attrs) -> grads


def _f_add(vals, attrs):
    _check_broadcast(vals[0], vals[1], "add")
    return vals[0] + vals[1], None


def _b_add(g, out, vals, attrs):
    return _unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)


def _f_sub(vals, attrs):
    _check_broadcast(vals[0], vals[1], "sub")
    return vals[0] - vals[1], None


def _b_sub(g, out, vals, attrs):
    return _unbroadcast(g, vals[0].shape), -_unbroadcast(g, vals[1].shape)


def _f_mul(vals, attrs):
    _check_broadcast(vals[0], vals[1], "mul")
    return vals[0] * vals[1], None


def _b_mul(g, out, vals, attrs):
    a, b = vals
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _f_neg(vals, attrs):
    return -vals[0], None


def _b_neg(g, out, vals, attrs):
    return (-g,)


def _f_matmul(vals, attrs):
    a, b = vals
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    return a @ b, None


def _b_matmul(g, out, vals, attrs):
    a, b = vals
    a2 = a[None, :] if a.ndim == 1 else a
    b2 = b[:, None] if b.ndim == 1 else b
    g2 = g.reshape(a2.shape[0], b2.shape[1])
    ga = (g2 @ b2.T).reshape(a.shape)
    gb = (a2.T @ g2).reshape(b.shape)
    return ga, gb


def _f_dot(vals, attrs):
    a, b = vals
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"dot: last axes differ ({a.shape[-1]} vs {b.shape[-1]})")
    return np.sum(a * b, axis=-1), None


def _b_dot(g, out, vals, attrs):
    a, b = vals
    g = g[..., None]
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _f_sum(vals, attrs):
    return np.sum(vals[0], axis=attrs["axis"], keepdims=attrs["keepdims"]), None


def _b_sum(g, out, vals, attrs):
    x = vals[0]
    axis = attrs["axis"]
    if axis is not None and not attrs["keepdims"]:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def _f_max(vals, attrs):
    x = vals[0]
    axis = attrs["axis"]
    out = np.max(x, axis=axis, keepdims=attrs["keepdims"])
    arg = np.argmax(x, axis=axis) if axis is not None else np.argmax(x)
    return out, np.asarray(arg)


def _b_max(g, out, vals, attrs):
    x = vals[0]
    axis = attrs["axis"]
    grad = np.zeros_like(x)
    if axis is None:
        grad.flat[np.argmax(x)] = g
        return (grad,)
    arg = np.expand_dims(np.argmax(x, axis=axis), axis)
    if not attrs["keepdims"]:
        g = np.expand_dims(g, axis)
    np.put_along_axis(grad, arg, g, axis=axis)
    return (grad,)


def _f_concat(vals, attrs):
    try:
        return np.concatenate(vals, axis=attrs["axis"]), None
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None


def _b_concat(g, out, vals, attrs):
    axis = attrs["axis"]
    cuts = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return tuple(np.split(g, cuts, axis=axis))


def _f_index(vals, attrs):
    return vals[0][attrs["index"]], None


def _b_index(g, out, vals, attrs):
    grad = np.zeros_like(vals[0])
    np.add.at(grad, attrs["index"], g)
    return (grad,)


def _f_reshape(vals, attrs):
    return vals[0].reshape(attrs["shape"]), None


def _b_reshape(g, out, vals, attrs):
    return (g.reshape(vals[0].shape),)


def _f_transpose(vals, attrs):
    return vals[0].T.copy(), None


def _b_transpose(g, out, vals, attrs):
    return (g.T,)


def _f_segment_sum(vals, attrs):
    x = vals[0]
    ids = attrs["ids"]
    if len(ids) != x.shape[0]:
        raise DimensionError("segment_sum: one segment id per row is required")
    out = np.zeros((attrs["num"],) + x.shape[1:])
    np.add.at(out, ids, x)
    return out, None


def _b_segment_sum(g, out, vals, attrs):
    return (g[attrs["ids"]],)


def _f_sigmoid(vals, attrs):
    x = vals[0]
    # split by sign so exp never overflows
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, None


def _b_sigmoid(g, out, vals, attrs):
    return (g * out * (1.0 - out),)


def _f_relu(vals, attrs):
    x = vals[0]
    return np.maximum(x, 0.0), x > 0


def _b_relu(g, out, vals, attrs):
    return (g * (vals[0] > 0),)


def _f_clamp_min(vals, attrs):
    x = vals[0]
    return np.maximum(x, attrs["lo"]), x > attrs["lo"]


def _b_clamp_min(g, out, vals, attrs):
    return (g * (vals[0] > attrs["lo"]),)


def _f_cosh(vals, attrs):
    return np.cosh(vals[0]), None


def _b_cosh(g, out, vals, attrs):
    return (g * np.sinh(vals[0]),)


def _f_sinh(vals, attrs):
    return np.sinh(vals[0]), None


def _b_sinh(g, out, vals, attrs):
    return (g * np.cosh(vals[0]),)


def _f_acosh(vals, attrs):
    x = vals[0]
    return np.arccosh(np.maximum(x, ACOSH_FLOOR)), x > ACOSH_FLOOR


def _b_acosh(g, out, vals, attrs):
    x = vals[0]
    live = x > ACOSH_FLOOR
    xs = np.where(live, x, 2.0)
    return (np.where(live, g / np.sqrt((xs - 1.0) * (xs + 1.0)), 0.0),)


def _f_sqrt(vals, attrs):
    return np.sqrt(vals[0]), None


def _b_sqrt(g, out, vals, attrs):
    return (g * 0.5 / out,)


def _f_reciprocal(vals, attrs):
    return 1.0 / vals[0], None


def _b_reciprocal(g, out, vals, attrs):
    return (-g * out * out,)


def _f_log(vals, attrs):
    return np.log(vals[0]), None


def _b_log(g, out, vals, attrs):
    return (g / vals[0],)


def _f_exp(vals, attrs):
    return np.exp(vals[0]), None


def _b_exp(g, out, vals, attrs):
    return (g * out,)


PRIMITIVES: Dict[str, Tuple[Callable, Callable]] = {
    "add": (_f_add, _b_add),
    "sub": (_f_sub, _b_sub),
    "mul": (_f_mul, _b_mul),
    "neg": (_f_neg, _b_neg),
    "matmul": (_f_matmul, _b_matmul),
    "dot": (_f_dot, _b_dot),
    "sum": (_f_sum, _b_sum),
    "max": (_f_max, _b_max),
    "concat": (_f_concat, _b_concat),
    "index": (_f_index, _b_index),
    "reshape": (_f_reshape, _b_reshape),
    "transpose": (_f_transpose, _b_transpose),
    "segment_sum": (_f_segment_sum, _b_segment_sum),
    "sigmoid": (_f_sigmoid, _b_sigmoid),
    "relu": (_f_relu, _b_relu),
    "clamp_min": (_f_clamp_min, _b_clamp_min),
    "cosh": (_f_cosh, _b_cosh),
    "sinh": (_f_sinh, _b_sinh),
    "acosh": (_f_acosh, _b_acosh),
    "sqrt": (_f_sqrt, _b_sqrt),
    "reciprocal": (_f_reciprocal, _b_reciprocal),
    "log": (_f_log, _b_log),
    "exp": (_f_exp, _b_exp),
}


@dataclass
class Node:
    op: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    attrs: dict = field(default_factory=dict)
    kink: Optional[np.ndarray] = None
    param: Optional[str] = None


class Var:
    """Handle to a node on a tape; supports the usual arithmetic operators."""

    __slots__ = ("tape", "id")
    __array_priority__ = 100.0

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        node = self.tape.nodes[self.id]
        return f"Var(id={self.id}, op={node.op}, shape={self.shape})"

    def _lift(self, other) -> "Var":
        return other if isinstance(other, Var) else self.tape.const(other)

    def __add__(self, other):
        return self.tape.record("add", [self, self._lift(other)])

    def __radd__(self, other):
        return self.tape.record("add", [self._lift(other), self])

    def __sub__(self, other):
        return self.tape.record("sub", [self, self._lift(other)])

    def __rsub__(self, other):
        return self.tape.record("sub", [self._lift(other), self])

    def __mul__(self, other):
        return self.tape.record("mul", [self, self._lift(other)])

    def __rmul__(self, other):
        return self.tape.record("mul", [self._lift(other), self])

    def __truediv__(self, other):
        return self * reciprocal(self._lift(other))

    def __rtruediv__(self, other):
        return self._lift(other) * reciprocal(self)

    def __neg__(self):
        return self.tape.record("neg", [self])

    def __matmul__(self, other):
        return self.tape.record("matmul", [self, self._lift(other)])

    def __rmatmul__(self, other):
        return self.tape.record("matmul", [self._lift(other), self])

    def __getitem__(self, index):
        return self.tape.record("index", [self], index=index)

    @property
    def T(self):
        return self.tape.record("transpose", [self])


class Tape:
    """Append-only record of primitive applications.

    Node ids increase monotonically and every node's inputs precede it, so
    reverse iteration is a valid topological order for :func:`backward`.
    """

    def __init__(self):
        self.nodes: List[Node] = []

    def __len__(self):
        return len(self.nodes)

    def _push(self, node: Node) -> Var:
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    def const(self, value) -> Var:
        return self._push(Node("const", (), np.asarray(value, dtype=np.float64)))

    def param(self, store: "ParamStore", name: str) -> Var:
        return self._push(Node("param", (), store.value[name], param=name))

    def record(self, op: str, inputs: Iterable[Var], **attrs) -> Var:
        """Evaluate primitive ``op`` on ``inputs`` and append it to the tape."""
        inputs = list(inputs)
        for v in inputs:
            if v.tape is not self:
                raise ValueError("inputs must already be on this tape")
        try:
            forward = PRIMITIVES[op][0]
        except KeyError:
            raise ValueError(f"unknown primitive {op!r}") from None
        vals = [self.nodes[v.id].value for v in inputs]
        out, kink = forward(vals, attrs)
        return self._push(Node(op, tuple(v.id for v in inputs), np.asarray(out, dtype=np.float64), attrs, kink))

    def kink_signature(self) -> Tuple[bytes, ...]:
        """Branch choices taken by piecewise primitives (relu, max, clamps)."""
        return tuple(n.kink.tobytes() for n in self.nodes if n.kink is not None)


# ---------------------------------------------------------------------------
# functional helpers


def add(a: Var, b) -> Var:
    return a + b


def mul(a: Var, b) -> Var:
    return a * b


def matmul(a: Var, b) -> Var:
    return a @ b


def dot(a: Var, b: Var) -> Var:
    return a.tape.record("dot", [a, a._lift(b)])


def sum(x: Var, axis=None, keepdims: bool = False) -> Var:  # noqa: A001 - mirrors numpy
    return x.tape.record("sum", [x], axis=axis, keepdims=keepdims)


def max(x: Var, axis=None, keepdims: bool = False) -> Var:  # noqa: A001
    return x.tape.record("max", [x], axis=axis, keepdims=keepdims)


def concat(xs: List[Var], axis: int = -1) -> Var:
    return xs[0].tape.record("concat", xs, axis=axis)


def reshape(x: Var, shape) -> Var:
    return x.tape.record("reshape", [x], shape=tuple(shape))


def segment_sum(x: Var, ids, num: int) -> Var:
    """Row-wise scatter-add: ``out[ids[i]] += x[i]``."""
    return x.tape.record("segment_sum", [x], ids=np.asarray(ids, dtype=np.int64), num=int(num))


def sigmoid(x: Var) -> Var:
    return x.tape.record("sigmoid", [x])


def relu(x: Var) -> Var:
    return x.tape.record("relu", [x])


def clamp_min(x: Var, lo: float) -> Var:
    return x.tape.record("clamp_min", [x], lo=float(lo))


def cosh(x: Var) -> Var:
    return x.tape.record("cosh", [x])


def sinh(x: Var) -> Var:
    return x.tape.record("sinh", [x])


def acosh(x: Var) -> Var:
    return x.tape.record("acosh", [x])


def sqrt(x: Var) -> Var:
    return x.tape.record("sqrt", [x])


def reciprocal(x: Var) -> Var:
    return x.tape.record("reciprocal", [x])


def log(x: Var) -> Var:
    return x.tape.record("log", [x])


def exp(x: Var) -> Var:
    return x.tape.record("exp", [x])


def logsumexp(x: Var, axis: int = -1) -> Var:
    """Stabilised ``log(sum(exp(x)))`` along ``axis``."""
    m = max(x, axis=axis, keepdims=True)
    shifted = exp(x - m)
    return log(sum(shifted, axis=axis)) + reshape(m, np.squeeze(m.value, axis=axis).shape)


# ---------------------------------------------------------------------------
# parameters, backward, optimiser


class ParamStore:
    """Named float64 tensors with matching gradient accumulators."""

    def __init__(self, values: Optional[Dict[str, np.ndarray]] = None):
        self.value: Dict[str, np.ndarray] = {}
        self.grad: Dict[str, np.ndarray] = {}
        for name, arr in (values or {}).items():
            self.add(name, arr)

    def add(self, name: str, array) -> None:
        arr = np.array(array, dtype=np.float64)
        self.value[name] = arr
        self.grad[name] = np.zeros_like(arr)

    def __contains__(self, name):
        return name in self.value

    def __getitem__(self, name):
        return self.value[name]

    def names(self) -> List[str]:
        return list(self.value)

    def zero_grad(self) -> None:
        for g in self.grad.values():
            g.fill(0.0)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.value.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, arr in state.items():
            if name in self.value and self.value[name].shape != np.shape(arr):
                raise DimensionError(f"{name}: shape {np.shape(arr)} != {self.value[name].shape}")
            self.add(name, arr)

    def size(self) -> int:
        return int(np.sum([v.size for v in self.value.values()]))


def backward(output: Var, store: ParamStore) -> None:
    """Accumulate ``d output / d param`` into ``store.grad`` for every param leaf."""
    tape = output.tape
    out_val = tape.nodes[output.id].value
    if out_val.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {out_val.shape}")
    grads: Dict[int, np.ndarray] = {output.id: np.ones_like(out_val)}
    for nid in range(output.id, -1, -1):
        g = grads.pop(nid, None)
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.op == "param":
            store.grad[node.param] += g
            continue
        if node.op == "const":
            continue
        vals = [tape.nodes[i].value for i in node.inputs]
        in_grads = PRIMITIVES[node.op][1](g, node.value, vals, node.attrs)
        for i, gi in zip(node.inputs, in_grads):
            if i in grads:
                grads[i] = grads[i] + gi
            else:
                grads[i] = gi


@dataclass
class Adam:
    """Adam with decoupled weight decay.

    Weight decay shrinks parameters by ``lr * weight_decay`` before the
    moment update, independent of the gradient scale.
    """

    learning_rate: float = 0.01
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    def step(self, store: ParamStore, names: Optional[Iterable[str]] = None) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name in names if names is not None else store.names():
            p = store.value[name]
            g = store.grad[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            if self.weight_decay:
                p -= self.learning_rate * self.weight_decay * p
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)
        store.zero_grad()


def finite_diff_check(
    loss: Callable[[Tape, ParamStore], Var],
    store: ParamStore,
    eps: float = 1e-5,
    names: Optional[Iterable[str]] = None,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss(tape, store)`` must build a scalar on ``tape`` from ``store``
    parameters deterministically.  For each entry ``i`` the error is
    ``|g_a - g_n| / max(1e-8, |g_a| + |g_n|)``.  Entries whose +/- eps probes
    take a different branch through a relu, max or clamp than the unperturbed
    evaluation are skipped.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    store.zero_grad()
    tape = Tape()
    out = loss(tape, store)
    base_sig = tape.kink_signature()
    backward(out, store)
    analytic = {k: g.copy() for k, g in store.grad.items()}
    store.zero_grad()

    def probe():
        t = Tape()
        val = float(loss(t, store).value)
        return val, t.kink_signature()

    worst = 0.0
    for name in names if names is not None else store.names():
        p = store.value[name]
        flat = p.reshape(-1)
        ga_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp, sp = probe()
            flat[i] = orig - eps
            lm, sm = probe()
            flat[i] = orig
            if sp != base_sig or sm != base_sig:
                continue
            gn = (lp - lm) / (2.0 * eps)
            ga = ga_flat[i]
            err = abs(ga - gn) / np.maximum(1e-8, abs(ga) + abs(gn))
            worst = np.maximum(worst, err)
    return float(worst)
