"""Minimal define-by-run reverse-mode autodiff over dense float64 arrays.

A :class:`Tape` records every operation applied to its tensors.  Calling
:meth:`Tape.backward` on a scalar output walks the tape once in reverse and
returns the gradient of that output with respect to every recorded node.
Tensors without a tape are constants.

Supported kinds (2-D broadcasting only for the elementwise binaries)::

    matmul add sub mul div neg relu sigmoid exp log abs
    sum mean l2_norm dot transpose concat
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

EPS_NUM = 1e-8


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _as_array(x) -> np.ndarray:
    if type(x) is np.ndarray and x.dtype == np.float64:
        return x
    return np.asarray(x, dtype=np.float64)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value in {what}")


class Tensor:
    """Dense array plus an optional position on a tape."""

    __slots__ = ("data", "node_id", "tape")
    __array_priority__ = 100

    def __init__(self, data, node_id: Optional[int] = None, tape: Optional["Tape"] = None):
        self.data = _as_array(data)
        self.node_id = node_id
        self.tape = tape

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node_id})"

    # operator sugar; every path goes through forward_op
    def __add__(self, other):
        return forward_op("add", self, other)

    def __radd__(self, other):
        return forward_op("add", other, self)

    def __sub__(self, other):
        return forward_op("sub", self, other)

    def __rsub__(self, other):
        return forward_op("sub", other, self)

    def __mul__(self, other):
        return forward_op("mul", self, other)

    def __rmul__(self, other):
        return forward_op("mul", other, self)

    def __truediv__(self, other):
        return forward_op("div", self, other)

    def __rtruediv__(self, other):
        return forward_op("div", other, self)

    def __matmul__(self, other):
        return forward_op("matmul", self, other)

    def __neg__(self):
        return forward_op("neg", self)

    @property
    def T(self):
        return forward_op("transpose", self)


@dataclass
class _Node:
    kind: str
    inputs: Tuple[Optional[int], ...]
    vjp: Optional[Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]]
    shape: Tuple[int, ...]


class Tape:
    """Append-only record of operations; rebuilt for every forward pass."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, kind, inputs, vjp, shape) -> int:
        self.nodes.append(_Node(kind, tuple(inputs), vjp, tuple(shape)))
        return len(self.nodes) - 1

    def variable(self, data) -> Tensor:
        arr = _as_array(data).copy()
        _check_finite(arr, "variable")
        node_id = self._append("leaf", (), None, arr.shape)
        return Tensor(arr, node_id, self)

    def backward(self, output: Tensor) -> Dict[int, np.ndarray]:
        return backward(self, output)

    def grads(self, output: Tensor, wrt: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
        """Gradients of ``output`` keyed by name; untouched tensors get zeros."""
        g = backward(self, output)
        out = {}
        for name, t in wrt.items():
            if t.node_id is not None and t.node_id in g:
                out[name] = g[t.node_id]
            else:
                out[name] = np.zeros_like(t.data)
        return out


def constant(data) -> Tensor:
    arr = _as_array(data)
    _check_finite(arr, "constant")
    return Tensor(arr)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def _bshape(kind: str, a: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    if a.ndim > 2 or b.ndim > 2:
        raise ShapeError(f"{kind}: only up to 2-D operands supported, got {a.shape} and {b.shape}")
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    n = max(len(sa), len(sb))
    sa, sb = (1,) * (n - len(sa)) + sa, (1,) * (n - len(sb)) + sb
    out = []
    for x, y in zip(sa, sb):
        if x != y and x != 1 and y != 1:
            raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast")
        out.append(y if x == 1 else x)
    return tuple(out)


# Each rule returns (value, vjp) where vjp maps the output cotangent to a
# tuple of input cotangents (None where an input needs no gradient).


def _op_add(a, b, **_):
    _bshape("add", a, b)
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


def _op_sub(a, b, **_):
    _bshape("sub", a, b)
    return a - b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


def _op_mul(a, b, **_):
    _bshape("mul", a, b)
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def _op_div(a, b, **_):
    _bshape("div", a, b)
    if np.any(b == 0.0):
        raise NonFiniteError("div: zero denominator")
    out = a / b
    return out, lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape))


def _op_neg(a, **_):
    return -a, lambda g: (-g,)


def _op_matmul(a, b, **_):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    return a @ b, lambda g: (g @ b.T, a.T @ g)


def _op_transpose(a, **_):
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {a.shape}")
    return a.T.copy(), lambda g: (g.T,)


def _op_relu(a, **_):
    mask = a > 0
    return a * mask, lambda g: (g * mask,)


def _op_sigmoid(a, **_):
    # split on sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out, lambda g: (g * out * (1.0 - out),)


def _op_exp(a, **_):
    out = np.exp(a)
    return out, lambda g: (g * out,)


def _op_log(a, **_):
    safe = np.maximum(a, EPS_NUM)
    live = a > EPS_NUM
    return np.log(safe), lambda g: (g * live / safe,)


def _op_abs(a, **_):
    return np.abs(a), lambda g: (g * np.sign(a),)


def _op_sum(a, axis=None, **_):
    if axis is None:
        return np.array(a.sum()), lambda g: (np.broadcast_to(g, a.shape).copy(),)
    out = a.sum(axis=axis, keepdims=True)
    return out, lambda g: (np.broadcast_to(g, a.shape).copy(),)


def _op_mean(a, axis=None, **_):
    n = a.size if axis is None else a.shape[axis]
    if n == 0:
        raise ShapeError(f"mean: empty operand of shape {a.shape}")
    if axis is None:
        return np.array(a.mean()), lambda g: (np.broadcast_to(g / n, a.shape).copy(),)
    out = a.sum(axis=axis, keepdims=True) / n
    return out, lambda g: (np.broadcast_to(g / n, a.shape).copy(),)


def _op_l2_norm(a, axis=None, **_):
    if axis is None:
        raw = np.sqrt(np.sum(a * a))
        norm = np.array(max(raw, EPS_NUM))
        live = raw > EPS_NUM
        return norm, lambda g: (g * a / norm * live,)
    raw = np.sqrt(np.sum(a * a, axis=axis, keepdims=True))
    norm = np.maximum(raw, EPS_NUM)
    live = raw > EPS_NUM
    return norm, lambda g: (g * a / norm * live,)


def _op_dot(a, b, **_):
    if a.size != b.size:
        raise ShapeError(f"dot: shapes {a.shape} and {b.shape} differ in length")
    fa, fb = a.reshape(-1), b.reshape(-1)
    return np.array(fa @ fb), lambda g: (g * b, g * a)


def _op_concat(*arrays, axis=1, **_):
    if len({arr.ndim for arr in arrays}) != 1:
        raise ShapeError(f"concat: mixed ranks {[arr.shape for arr in arrays]}")
    others = {tuple(s for i, s in enumerate(arr.shape) if i != axis) for arr in arrays}
    if len(others) != 1:
        raise ShapeError(f"concat: shapes {[arr.shape for arr in arrays]} disagree off axis {axis}")
    out = np.concatenate(arrays, axis=axis)
    cuts = np.cumsum([arr.shape[axis] for arr in arrays])[:-1]
    return out, lambda g: tuple(np.split(g, cuts, axis=axis))


_RULES = {
    "add": _op_add,
    "sub": _op_sub,
    "mul": _op_mul,
    "div": _op_div,
    "neg": _op_neg,
    "matmul": _op_matmul,
    "transpose": _op_transpose,
    "relu": _op_relu,
    "sigmoid": _op_sigmoid,
    "exp": _op_exp,
    "log": _op_log,
    "abs": _op_abs,
    "sum": _op_sum,
    "mean": _op_mean,
    "l2_norm": _op_l2_norm,
    "dot": _op_dot,
    "concat": _op_concat,
}

KINDS = tuple(_RULES)


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Evaluate ``kind`` on ``inputs`` and record it on the inputs' tape.

    Non-tensor inputs are lifted to constants.  All taped inputs must share
    one tape.  Raises :class:`ShapeError` on non-conforming shapes and
    :class:`NonFiniteError` if the result is not finite.
    """
    try:
        rule = _RULES[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    tensors = [_lift(x) for x in inputs]
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError(f"{kind}: inputs live on different tapes")
            tape = t.tape
    value, vjp = rule(*(t.data for t in tensors), **kwargs)
    _check_finite(value, kind)
    if tape is None:
        return Tensor(value)
    node_id = tape._append(kind, [t.node_id for t in tensors], vjp, value.shape)
    return Tensor(value, node_id, tape)


def backward(tape: Tape, output: Tensor) -> Dict[int, np.ndarray]:
    """Reverse sweep from a scalar ``output``; returns node_id -> gradient."""
    if output.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    if output.tape is not tape or output.node_id is None:
        return {}
    grads: Dict[int, np.ndarray] = {output.node_id: np.ones(output.shape)}
    for nid in range(output.node_id, -1, -1):
        g = grads.get(nid)
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.vjp is None:
            continue
        for src, gin in zip(node.inputs, node.vjp(g)):
            if src is None or gin is None:
                continue
            if src in grads:
                grads[src] = grads[src] + gin
            else:
                grads[src] = gin
    return grads


# convenience wrappers used throughout the package
def matmul(a, b):
    return forward_op("matmul", a, b)


def relu(a):
    return forward_op("relu", a)


def sigmoid(a):
    return forward_op("sigmoid", a)


def exp(a):
    return forward_op("exp", a)


def log(a):
    return forward_op("log", a)


def absolute(a):
    return forward_op("abs", a)


def tsum(a, axis=None):
    return forward_op("sum", a, axis=axis)


def mean(a, axis=None):
    return forward_op("mean", a, axis=axis)


def l2_norm(a, axis=None):
    return forward_op("l2_norm", a, axis=axis)


def dot(a, b):
    return forward_op("dot", a, b)


def concat(tensors: Sequence, axis: int = 1):
    return forward_op("concat", *tensors, axis=axis)


def cosine_similarity(a, b, eps: float = EPS_NUM) -> float:
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64).reshape(-1)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64).reshape(-1)
    if a.size == 0 or a.size != b.size:
        raise ShapeError(f"cosine_similarity: lengths {a.size} and {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < eps or nb < eps:
        return 0.0
    return float(np.clip((a @ b) / (na * nb + eps), -1.0, 1.0))


@dataclass
class GradReport:
    max_abs_err: float
    max_rel_err: float
    per_parameter: Dict[str, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def passed(self, rtol: float = 1e-5, atol: float = 1e-7) -> bool:
        """Elementwise: every entry is within ``atol`` or within ``rtol`` relative."""
        for analytic, numeric in self.per_parameter.values():
            err = np.abs(analytic - numeric)
            scale = np.maximum(np.abs(analytic), np.abs(numeric))
            bad = (err > atol) & (err > rtol * scale)
            if np.any(bad):
                return False
        return True


def grad_check(
    f: Callable[[Tape, Dict[str, Tensor]], Tensor],
    point: Mapping[str, np.ndarray],
    h: float = 1e-5,
    near_zero: float = 1e-7,
) -> GradReport:
    """Compare backward() against central differences at ``point``.

    ``f(tape, params)`` must build a scalar from the tensors in ``params``.
    Relative errors are only taken over entries whose magnitude exceeds
    ``near_zero``; smaller entries are judged by absolute error.
    """
    return grad_check_many(lambda tape, p: [f(tape, p)], point, h, near_zero)[0]


def grad_check_many(
    f: Callable[[Tape, Dict[str, Tensor]], Sequence[Tensor]],
    point: Mapping[str, np.ndarray],
    h: float = 1e-5,
    near_zero: float = 1e-7,
) -> List[GradReport]:
    """:func:`grad_check` for several scalars built in one pass; the
    perturbation sweep is shared, one report per output."""
    point = {k: _as_array(v).copy() for k, v in point.items()}

    def values(p) -> np.ndarray:
        tape = Tape()
        outs = f(tape, {k: tape.variable(v) for k, v in p.items()})
        vals = np.array([float(np.asarray(o.data).reshape(-1)[0]) for o in outs])
        if not np.all(np.isfinite(vals)):
            raise NonFiniteError("grad_check: non-finite evaluation")
        return vals

    tape = Tape()
    bound = {k: tape.variable(v) for k, v in point.items()}
    outs = f(tape, bound)
    analytic = [tape.grads(o, bound) for o in outs]

    numeric = {name: np.zeros((len(outs),) + base.shape) for name, base in point.items()}
    for name, base in point.items():
        flat = numeric[name].reshape(len(outs), -1)
        for idx in range(base.size):
            bumped = dict(point)
            plus = base.copy()
            plus.reshape(-1)[idx] += h
            minus = base.copy()
            minus.reshape(-1)[idx] -= h
            bumped[name] = plus
            fp = values(bumped)
            bumped[name] = minus
            fm = values(bumped)
            flat[:, idx] = (fp - fm) / (2.0 * h)

    reports = []
    for j in range(len(outs)):
        report = GradReport(0.0, 0.0)
        for name in point:
            a, n = analytic[j][name], numeric[name][j]
            err = np.abs(a - n)
            scale = np.maximum(np.abs(a), np.abs(n))
            report.per_parameter[name] = (a, n)
            if err.size:
                report.max_abs_err = max(report.max_abs_err, float(err.max()))
                big = scale > near_zero
                if np.any(big):
                    report.max_rel_err = max(report.max_rel_err, float((err[big] / scale[big]).max()))
        reports.append(report)
    return reports
