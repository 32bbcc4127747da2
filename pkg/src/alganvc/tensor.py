"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ``np.ndarray`` together with an optional gradient and
a backward closure.  Operations build a DAG; ``backward`` walks it once in
reverse topological order, accumulating ``grad`` on every tensor created
with ``requires_grad=True``.  The walk is iterative (no recursion limit
issues on deep residual chains) and consumes the graph as it goes, so a
second backward through the same nodes is not possible by construction.

Also here: a ``no_grad`` context that suppresses graph construction, a
central-difference ``grad_check`` helper, and Adam with bias correction.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

DEFAULT_DTYPE = np.float64

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference, detached fakes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(DEFAULT_DTYPE)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._prev = ()

    # -- construction -------------------------------------------------

    @staticmethod
    def from_values(shape, values, requires_grad: bool = False, dtype=None) -> "Tensor":
        """Build a tensor of `shape` from a flat sequence, copying the data.

        Raises ValueError on a shape/length mismatch.
        """
        shape = tuple(int(s) for s in shape)
        if any(s < 0 for s in shape):
            raise ValueError(f"negative dimension in shape {shape}")
        flat = np.asarray(values, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
        if flat.ndim != 1:
            flat = flat.reshape(-1)
        n = 1
        for s in shape:
            n *= s
        if flat.size != n:
            raise ValueError(
                f"length mismatch: shape {shape} needs {n} values, got {flat.size}"
            )
        return Tensor(flat.reshape(shape).copy(), requires_grad=requires_grad)

    # -- bookkeeping ---------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Same data, no graph linkage, no gradient requirement."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- graph plumbing --------------------------------------------------

    def _make(self, data: np.ndarray, parents: tuple, backward) -> "Tensor":
        """Wrap an op result; link it into the graph only when tracking."""
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._prev = parents
            out._backward = backward(out)
        return out

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            a, b = self, other

            def bw(out):
                def run():
                    g = out.grad
                    if a.requires_grad:
                        a.accumulate_grad(_unbroadcast(g, a.shape))
                    if b.requires_grad:
                        b.accumulate_grad(_unbroadcast(g, b.shape))
                return run

            return self._make(a.data + b.data, (a, b), bw)
        a = self
        c = other

        def bw(out):
            def run():
                a.accumulate_grad(_unbroadcast(out.grad, a.shape))
            return run

        return self._make(a.data + c, (a,), bw)

    def __radd__(self, other):
        return self.__add__(other)

    def __neg__(self):
        a = self

        def bw(out):
            def run():
                a.accumulate_grad(-out.grad)
            return run

        return self._make(-a.data, (a,), bw)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return self.__add__(other.__neg__())
        return self.__add__(-other)

    def __rsub__(self, other):
        return self.__neg__().__add__(other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            a, b = self, other

            def bw(out):
                ad, bd = a.data, b.data

                def run():
                    g = out.grad
                    if a.requires_grad:
                        a.accumulate_grad(_unbroadcast(g * bd, a.shape))
                    if b.requires_grad:
                        b.accumulate_grad(_unbroadcast(g * ad, b.shape))
                return run

            return self._make(a.data * b.data, (a, b), bw)
        a = self
        c = other

        def bw(out):
            def run():
                a.accumulate_grad(_unbroadcast(out.grad * c, a.shape))
            return run

        return self._make(a.data * c, (a,), bw)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported; multiply by a constant reciprocal")
        return self.__mul__(1.0 / other)

    # -- elementwise ------------------------------------------------------

    def abs(self):
        a = self

        def bw(out):
            sign = np.sign(a.data)  # subgradient 0 at 0

            def run():
                a.accumulate_grad(out.grad * sign)
            return run

        return self._make(np.abs(a.data), (a,), bw)

    def square(self):
        a = self

        def bw(out):
            ad = a.data

            def run():
                a.accumulate_grad(out.grad * (2.0 * ad))
            return run

        return self._make(a.data * a.data, (a,), bw)

    def exp(self):
        a = self

        def bw(out):
            od = out.data

            def run():
                a.accumulate_grad(out.grad * od)
            return run

        return self._make(np.exp(a.data), (a,), bw)

    # -- reductions -------------------------------------------------------

    def sum(self):
        a = self

        def bw(out):
            def run():
                a.accumulate_grad(np.broadcast_to(out.grad, a.shape).copy())
            return run

        return self._make(np.asarray(a.data.sum()), (a,), bw)

    def mean(self):
        a = self
        n = a.data.size
        if n == 0:
            raise ValueError("mean of an empty tensor")

        def bw(out):
            def run():
                a.accumulate_grad(np.broadcast_to(out.grad / n, a.shape).copy())
            return run

        return self._make(np.asarray(a.data.mean()), (a,), bw)

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.shape

        def bw(out):
            def run():
                a.accumulate_grad(out.grad.reshape(old))
            return run

        return self._make(a.data.reshape(shape), (a,), bw)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = tuple(np.argsort(axes))

        def bw(out):
            def run():
                a.accumulate_grad(out.grad.transpose(inv))
            return run

        return self._make(a.data.transpose(axes), (a,), bw)

    def narrow(self, axis: int, start: int, length: int):
        """Contiguous slice [start, start+length) along `axis`."""
        a = self
        n = a.shape[axis]
        if not (0 <= start and start + length <= n):
            raise ValueError(
                f"narrow out of range: axis {axis} has size {n}, asked [{start}, {start + length})"
            )
        index = tuple(
            slice(start, start + length) if d == axis else slice(None)
            for d in range(a.ndim)
        )

        def bw(out):
            def run():
                full = np.zeros(a.shape, dtype=out.grad.dtype)
                full[index] = out.grad
                a.accumulate_grad(full)
            return run

        return self._make(a.data[index].copy(), (a,), bw)

    # -- backward ------------------------------------------------------------

    def backward(self, grad=None) -> None:
        backward(self, grad)


def backward(output: Tensor, grad=None) -> None:
    """Reverse-mode sweep from `output`; fills `.grad` on requires_grad leaves.

    The graph is consumed: visited interior nodes drop their closures,
    parent links, and intermediate gradients so memory is released as the
    sweep proceeds.
    """
    if grad is None:
        if output.data.size != 1:
            raise ValueError("backward without an explicit gradient needs a scalar output")
        grad = np.ones_like(output.data)
    else:
        grad = np.asarray(grad, dtype=output.data.dtype)

    order = []
    seen = set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if id(p) not in seen:
                stack.append((p, False))

    output.accumulate_grad(grad)
    for node in reversed(order):
        bw = node._backward
        if bw is None:
            continue
        bw()
        node._backward = None
        node._prev = ()
        node.grad = None  # interior value; leaf grads stay


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


def grad_check(fn, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `fn` maps a tensor to a scalar Tensor.  Relative error per coordinate is
    |analytic - numeric| / max(1, |numeric|); the max over coordinates is
    returned.  `x` is perturbed in place and restored.
    """
    x.requires_grad = True
    x.grad = None
    out = fn(x)
    backward(out)
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
    x.grad = None

    numeric = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        with no_grad():
            hi = fn(x).item()
        flat[i] = keep - h
        with no_grad():
            lo = fn(x).item()
        flat[i] = keep
        num_flat[i] = (hi - lo) / (2.0 * h)

    err = np.abs(analytic.astype(np.float64) - numeric)
    scale = np.maximum(1.0, np.abs(numeric))
    return float((err / scale).max()) if err.size else 0.0


# -- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment estimates and the shared step counter."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step_count: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on `params`.

    `params` and `grads` are parallel lists of arrays.  Moments are created
    lazily on the first call; afterwards their shapes are pinned.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads length mismatch")
    if not np.isfinite(lr):
        raise ValueError("non-finite learning rate")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


class Adam:
    """Adam over a fixed list of parameter tensors.

    The momentum default of 0.5 (rather than 0.9) keeps the discriminator
    updates from overshooting the generator early in adversarial training.
    """

    def __init__(self, params, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)

    def step(self, lr: float) -> None:
        grads = [
            p.grad if p.grad is not None else np.zeros_like(p.data)
            for p in self.params
        ]
        adam_step([p.data for p in self.params], grads, self.state, lr)

    def zero_grad(self) -> None:
        zero_grads(self.params)
