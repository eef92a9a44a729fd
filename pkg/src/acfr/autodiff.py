"""Reverse-mode automatic differentiation on dense float64 arrays.

A small eager tape: every op computes its forward value immediately and
records an adjoint closure on the output node. Calling ``backward()`` on a
scalar node walks the recorded graph in reverse topological order and
accumulates ``grad`` on every node that requires it. Broadcasting is
restricted to a leading batch dimension (bias adds, batched matmul); anything
more exotic is rejected up front so gradients stay trivially correct.

All storage is float64, row-major. Graphs are single-owner and
single-threaded; independent graphs on independent data may run concurrently.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeMismatchError(ValueError):
    """An op received operands with incompatible shapes."""


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode AD.

    ``requires_grad=True`` marks a leaf parameter; gradients accumulate into
    ``grad`` during ``backward()``. Interior nodes are created by the ops
    below and carry their adjoint rule in a closure.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _op: str = "leaf"):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward_fn: Callable[[], None] | None = None
        self.op = _op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A constant copy of this node's value, cut off from the graph."""
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from this node; it must hold a single scalar."""
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss node, got shape {self.data.shape}"
            )
        order = _topological_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None:
                node._backward_fn()

    # convenience operators; every one routes through the primitives below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r})"


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _topological_order(root: Tensor) -> list:
    """Nodes reachable from ``root`` through grad-requiring edges, parents first.

    Iterative DFS; visit order depends only on graph structure, so repeated
    backward passes over identical graphs are bitwise deterministic.
    """
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _check_leading_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    """Allow equal shapes, scalars, or a shape that is a suffix of the other."""
    sa, sb = a.shape, b.shape
    if sa == sb or a.size == 1 or b.size == 1:
        return
    short, long = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if len(short) < len(long) and long[len(long) - len(short):] == short:
        return
    raise ShapeMismatchError(f"{op}: incompatible shapes {sa} and {sb}")


def _sum_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_leading_broadcast("add", a.data, b.data)
    out = Tensor(a.data + b.data, _parents=(a, b), _op="add")

    def _bw():
        if a.requires_grad:
            a._accumulate(_sum_to_shape(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_sum_to_shape(out.grad, b.data.shape))

    out._backward_fn = _bw
    return out


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_leading_broadcast("sub", a.data, b.data)
    out = Tensor(a.data - b.data, _parents=(a, b), _op="sub")

    def _bw():
        if a.requires_grad:
            a._accumulate(_sum_to_shape(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_sum_to_shape(-out.grad, b.data.shape))

    out._backward_fn = _bw
    return out


def mul(a, b) -> Tensor:
    """Elementwise product; covers scalar multiply when either side is scalar."""
    a, b = _lift(a), _lift(b)
    _check_leading_broadcast("mul", a.data, b.data)
    out = Tensor(a.data * b.data, _parents=(a, b), _op="mul")

    def _bw():
        if a.requires_grad:
            a._accumulate(_sum_to_shape(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_sum_to_shape(out.grad * a.data, b.data.shape))

    out._backward_fn = _bw
    return out


def matmul(a, b) -> Tensor:
    """Matrix product; either operand may carry one leading batch dimension."""
    a, b = _lift(a), _lift(b)
    da, db = a.data, b.data
    if da.ndim < 2 or db.ndim < 2 or da.ndim > 3 or db.ndim > 3:
        raise ShapeMismatchError(
            f"matmul: operands must be 2-D or batched 3-D, got {da.shape} and {db.shape}"
        )
    if da.shape[-1] != db.shape[-2]:
        raise ShapeMismatchError(f"matmul: incompatible shapes {da.shape} and {db.shape}")
    if da.ndim == 3 and db.ndim == 3 and da.shape[0] != db.shape[0]:
        raise ShapeMismatchError(f"matmul: batch sizes differ, {da.shape} vs {db.shape}")
    out = Tensor(da @ db, _parents=(a, b), _op="matmul")

    def _bw():
        g = out.grad
        if a.requires_grad:
            a._accumulate(_sum_to_shape(g @ np.swapaxes(db, -1, -2), da.shape))
        if b.requires_grad:
            b._accumulate(_sum_to_shape(np.swapaxes(da, -1, -2) @ g, db.shape))

    out._backward_fn = _bw
    return out


def relu(x) -> Tensor:
    x = _lift(x)
    out = Tensor(np.maximum(x.data, 0.0), _parents=(x,), _op="relu")

    def _bw():
        if x.requires_grad:
            x._accumulate(out.grad * (x.data > 0.0))

    out._backward_fn = _bw
    return out


def tanh(x) -> Tensor:
    x = _lift(x)
    out = Tensor(np.tanh(x.data), _parents=(x,), _op="tanh")

    def _bw():
        if x.requires_grad:
            x._accumulate(out.grad * (1.0 - out.data ** 2))

    out._backward_fn = _bw
    return out


def sigmoid(x) -> Tensor:
    x = _lift(x)
    # tanh form is stable for large |x| in either direction
    out = Tensor(0.5 * (np.tanh(0.5 * x.data) + 1.0), _parents=(x,), _op="sigmoid")

    def _bw():
        if x.requires_grad:
            x._accumulate(out.grad * out.data * (1.0 - out.data))

    out._backward_fn = _bw
    return out


def row_softmax(x) -> Tensor:
    """Softmax over the last axis, one distribution per row."""
    x = _lift(x)
    if x.data.ndim == 0 or x.data.shape[-1] == 0:
        raise ShapeMismatchError(f"row_softmax: empty row, shape {x.data.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s, _parents=(x,), _op="row_softmax")

    def _bw():
        if x.requires_grad:
            g = out.grad
            # Jacobian-vector form s * (g - <g, s>), no materialized Jacobian
            x._accumulate(s * (g - (g * s).sum(axis=-1, keepdims=True)))

    out._backward_fn = _bw
    return out


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    """Concatenate along the last dimension."""
    if axis not in (-1,):
        raise ValueError("concat supports the last dimension only")
    ts = [_lift(t) for t in tensors]
    if not ts:
        raise ValueError("concat: empty input list")
    lead = ts[0].data.shape[:-1]
    for t in ts[1:]:
        if t.data.shape[:-1] != lead:
            raise ShapeMismatchError(
                f"concat: leading shapes differ, {ts[0].data.shape} vs {t.data.shape}"
            )
    out = Tensor(np.concatenate([t.data for t in ts], axis=-1),
                 _parents=tuple(ts), _op="concat")
    widths = [t.data.shape[-1] for t in ts]

    def _bw():
        offset = 0
        for t, w in zip(ts, widths):
            if t.requires_grad:
                t._accumulate(out.grad[..., offset:offset + w])
            offset += w

    out._backward_fn = _bw
    return out


def reshape(x, shape: Iterable[int]) -> Tensor:
    x = _lift(x)
    shape = tuple(shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeMismatchError(f"reshape: cannot view {x.data.shape} as {shape}")
    out = Tensor(x.data.reshape(shape), _parents=(x,), _op="reshape")

    def _bw():
        if x.requires_grad:
            x._accumulate(out.grad.reshape(x.data.shape))

    out._backward_fn = _bw
    return out


def transpose(x) -> Tensor:
    """Swap the last two axes (plain transpose for 2-D input)."""
    x = _lift(x)
    if x.data.ndim < 2:
        raise ShapeMismatchError(f"transpose: need at least 2 dims, got {x.data.shape}")
    out = Tensor(np.swapaxes(x.data, -1, -2), _parents=(x,), _op="transpose")

    def _bw():
        if x.requires_grad:
            x._accumulate(np.swapaxes(out.grad, -1, -2))

    out._backward_fn = _bw
    return out


def mean(x) -> Tensor:
    x = _lift(x)
    if x.data.size == 0:
        raise ValueError("mean: empty tensor")
    out = Tensor(np.asarray(x.data.mean()), _parents=(x,), _op="mean")

    def _bw():
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, out.grad / x.data.size))

    out._backward_fn = _bw
    return out


def mse(pred, target) -> Tensor:
    """Mean squared error reduced to a scalar."""
    pred, target = _lift(pred), _lift(target)
    if pred.data.shape != target.data.shape:
        raise ShapeMismatchError(
            f"mse: shapes differ, {pred.data.shape} vs {target.data.shape}"
        )
    if pred.data.size == 0:
        raise ValueError("mse: empty batch")
    diff = pred.data - target.data
    out = Tensor(np.asarray(np.mean(diff ** 2)), _parents=(pred, target), _op="mse")

    def _bw():
        scale = out.grad * 2.0 / diff.size
        if pred.requires_grad:
            pred._accumulate(scale * diff)
        if target.requires_grad:
            target._accumulate(-scale * diff)

    out._backward_fn = _bw
    return out


# ---------------------------------------------------------------------------
# gradient utilities
# ---------------------------------------------------------------------------

def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def gradient_map(loss: Tensor, params: Sequence[Tensor]) -> dict:
    """Run backward from ``loss`` and return {param: gradient array}.

    Parameters not reached by the graph get zero gradients of their own shape.
    """
    zero_grads(params)
    loss.backward()
    return {
        p: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for p in params
    }


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-5) -> float:
    """Max relative error between backward() and central finite differences.

    ``f`` must map one Tensor to a scalar Tensor. The error per coordinate is
    |analytic - numeric| / max(1, |analytic|); the maximum over coordinates is
    returned. Non-finite values at any probe raise.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = _as_array(x).copy()
    xt = Tensor(base.copy(), requires_grad=True)
    out = f(xt)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    if not np.isfinite(out.data).all():
        raise FloatingPointError("grad_check: non-finite value at base point")
    out.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(Tensor(base.copy())).item()
        flat[i] = orig - step
        lo = f(Tensor(base.copy())).item()
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(f"grad_check: non-finite probe at coordinate {i}")
        num_flat[i] = (hi - lo) / (2.0 * step)

    denom = np.maximum(1.0, np.abs(analytic))
    if base.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check_params(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                      step: float = 1e-5) -> float:
    """Worst grad_check error over the parameters of a zero-argument closure.

    ``loss_fn`` rebuilds its graph from the current parameter values on every
    call; each parameter is perturbed in place for the finite-difference
    probes and restored afterwards.
    """
    worst = 0.0
    for p in params:
        base = p.data.copy()
        loss = loss_fn()
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise ValueError("grad_check_params needs a scalar-valued closure")
        zero_grads(params)
        loss.backward()
        analytic = p.grad.copy() if p.grad is not None else np.zeros_like(base)
        zero_grads(params)

        numeric = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            p.data[idx] = base[idx] + step
            hi = loss_fn().item()
            p.data[idx] = base[idx] - step
            lo = loss_fn().item()
            p.data[idx] = base[idx]
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise FloatingPointError(
                    f"grad_check_params: non-finite probe at {idx}"
                )
            numeric[idx] = (hi - lo) / (2.0 * step)
        denom = np.maximum(1.0, np.abs(analytic))
        err = float(np.max(np.abs(analytic - numeric) / denom)) if base.size else 0.0
        worst = max(worst, err)
    return worst
