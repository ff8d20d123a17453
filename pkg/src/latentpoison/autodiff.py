"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Graphs are built functionally: every operation returns a fresh ``Tensor``
that records its parents and a closure mapping the output gradient to
parent gradients. Parameters are long-lived leaf tensors; intermediate
nodes are rebuilt on every forward pass, so "resetting" a graph amounts to
dropping it and zeroing parameter gradients. Everything runs in 64-bit
precision so finite-difference gradient checks at 1e-4 tolerance are
meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray

# Predictions are clamped away from {0, 1} before any log.
BCE_CLAMP = 1e-7

# Sigmoid outputs are kept strictly inside (0, 1) even in deep saturation.
_SIG_FLOOR = 1e-308
_SIG_CEIL = float(np.nextafter(1.0, 0.0))


class ShapeMismatchError(ValueError):
    """Operand shapes cannot combine for the requested operation."""


class Tensor:
    """A float64 array plus its position in a differentiation graph.

    Identity within a graph is plain Python object identity. ``grad`` is
    filled by :func:`backward` and accumulates across repeated calls until
    explicitly cleared.
    """

    __slots__ = ("data", "grad", "name", "_parents", "_backward")

    def __init__(self, data, name: str | None = None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"<Tensor{tag} shape={self.data.shape}>"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def backward(self) -> None:
        backward(self)


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum out dimensions numpy broadcasting introduced."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, length in enumerate(shape):
        if length == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor(out, _parents=(a, b), _backward=back)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor(out, _parents=(a, b), _backward=back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def back(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return Tensor(out, _parents=(a, b), _backward=back)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor(-a.data, _parents=(a,), _backward=lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError(
            f"cannot matrix-multiply {a.data.shape} by {b.data.shape}"
        )
    out = a.data @ b.data

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(out, _parents=(a, b), _backward=back)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return Tensor(out, _parents=(a,), _backward=lambda g: (g * out,))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return Tensor(out, _parents=(a,), _backward=lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    """Elementwise logistic function, output strictly inside (0, 1)."""
    a = _as_tensor(a)
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = np.clip(out, _SIG_FLOOR, _SIG_CEIL)
    return Tensor(out, _parents=(a,), _backward=lambda g: (g * out * (1.0 - out),))


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    out = np.asarray(a.data.sum())

    def back(g):
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return Tensor(out, _parents=(a,), _backward=back)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    out = np.asarray(a.data.mean())
    scale = 1.0 / a.data.size

    def back(g):
        return (np.broadcast_to(g * scale, a.data.shape).copy(),)

    return Tensor(out, _parents=(a,), _backward=back)


def linear(x, weights, bias) -> Tensor:
    """Affine map ``x @ weights + bias`` with the bias broadcast over rows."""
    x, weights, bias = _as_tensor(x), _as_tensor(weights), _as_tensor(bias)
    if (
        x.data.ndim != 2
        or weights.data.ndim != 2
        or x.data.shape[1] != weights.data.shape[0]
    ):
        raise ShapeMismatchError(
            f"linear: input {x.data.shape} does not conform to weights {weights.data.shape}"
        )
    if bias.data.shape != (weights.data.shape[1],):
        raise ShapeMismatchError(
            f"linear: bias {bias.data.shape} does not match weights {weights.data.shape}"
        )
    return add(matmul(x, weights), bias)


def bce(prediction, target) -> Tensor:
    """Mean binary cross-entropy of ``prediction`` against a constant target.

    Predictions are clamped to [BCE_CLAMP, 1 - BCE_CLAMP] before the log;
    the gradient is zero where the clamp is active, matching the clamped
    forward value exactly. The target is treated as data, never
    differentiated.
    """
    prediction = _as_tensor(prediction)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if prediction.data.shape != t.shape:
        raise ShapeMismatchError(
            f"bce: prediction {prediction.data.shape} vs target {t.shape}"
        )
    p = np.clip(prediction.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    out = np.asarray(-(t * np.log(p) + (1.0 - t) * np.log1p(-p)).mean())
    clamped = (prediction.data < BCE_CLAMP) | (prediction.data > 1.0 - BCE_CLAMP)
    scale = 1.0 / p.size

    def back(g):
        gp = g * scale * (p - t) / (p * (1.0 - p))
        gp[clamped] = 0.0
        return (gp,)

    return Tensor(out, _parents=(prediction,), _backward=back)


def kl_standard_normal(mu, log_var) -> Tensor:
    """KL divergence of diagonal Gaussians from the unit Gaussian.

    Inputs are [batch, dim]; returns the batch mean of
    0.5 * sum_d(mu^2 + var - 1 - log var).
    """
    mu, log_var = _as_tensor(mu), _as_tensor(log_var)
    if mu.data.shape != log_var.data.shape:
        raise ShapeMismatchError(
            f"kl: mu {mu.data.shape} vs log_var {log_var.data.shape}"
        )
    var = np.exp(log_var.data)
    batch = mu.data.shape[0] if mu.data.ndim > 0 else 1
    out = np.asarray(0.5 * (mu.data**2 + var - 1.0 - log_var.data).sum() / batch)

    def back(g):
        return g * mu.data / batch, g * 0.5 * (var - 1.0) / batch

    return Tensor(out, _parents=(mu, log_var), _backward=back)


def lp_penalty(x, norm_order: int) -> Tensor:
    """L1 or L2 norm of a vector; the L1 subgradient at 0 is taken as 0."""
    x = _as_tensor(x)
    if norm_order == 1:
        out = np.asarray(np.abs(x.data).sum())

        def back(g):
            return (g * np.sign(x.data),)

    elif norm_order == 2:
        value = math.sqrt(float((x.data**2).sum()))
        out = np.asarray(value)

        def back(g):
            if value == 0.0:
                return (np.zeros_like(x.data),)
            return (g * x.data / value,)

    else:
        raise ValueError(f"norm order must be 1 or 2, got {norm_order!r}")
    return Tensor(out, _parents=(x,), _backward=back)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor reachable from a scalar loss.

    Repeated calls without clearing gradients accumulate, each pass adding
    its own contribution.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    order = _topological_order(loss)
    incoming: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = incoming.get(id(node))
        if g is None:
            continue
        if node._backward is not None:
            for parent, pg in zip(node._parents, node._backward(g)):
                key = id(parent)
                if key in incoming:
                    incoming[key] = incoming[key] + pg
                else:
                    incoming[key] = pg
    for node in order:
        g = incoming.get(id(node))
        if g is None:
            g = np.zeros_like(node.data)
        node.grad = g if node.grad is None else node.grad + g


def zero_grad(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.grad = None


@dataclass
class AdamState:
    """Moment buffers and step counter for one parameter list."""

    first_moment: list[Array]
    second_moment: list[Array]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **hyper) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p.data) for p in params],
            second_moment=[np.zeros_like(p.data) for p in params],
            **hyper,
        )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[Array],
    state: AdamState,
    lr: float,
) -> None:
    """One bias-corrected Adam update, applied to the parameters in place."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError("parameter, gradient and state lengths differ")
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeMismatchError(
                f"gradient shape {g.shape} does not match parameter "
                f"{p.name or i} of shape {p.data.shape}"
            )
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient for parameter {p.name or i}")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.asarray(g) ** 2
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


class Adam:
    """Convenience wrapper driving :func:`adam_step` from tensor gradients."""

    def __init__(self, params: Sequence[Tensor], lr: float, **hyper):
        self.params = list(params)
        self.lr = lr
        self.state = AdamState.for_params(self.params, **hyper)

    def step(self) -> None:
        grads = []
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"parameter {p.name or i} has no gradient")
            grads.append(p.grad)
        adam_step(self.params, grads, self.state, self.lr)

    def zero_grad(self) -> None:
        zero_grad(self.params)


def grad_check(
    build: Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]],
    seed: int,
    fd_step: float = 1e-5,
) -> float:
    """Compare analytic gradients to central finite differences.

    ``build(rng)`` must return ``(loss_fn, params)`` where ``loss_fn()``
    rebuilds a scalar loss from the current parameter values and is
    deterministic (any random draws frozen at build time). Returns the
    worst relative error over all parameter elements, measured against the
    finite-difference estimate with a 1e-6 denominator floor; elements
    where both gradients are below 1e-12 count as exact.
    """
    if not 1e-6 <= fd_step <= 1e-4:
        raise ValueError(f"fd_step must lie in [1e-6, 1e-4], got {fd_step}")
    rng = np.random.default_rng(seed)
    loss_fn, params = build(rng)
    zero_grad(params)
    backward(loss_fn())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + fd_step
            upper = float(loss_fn().data)
            flat[i] = original - fd_step
            lower = float(loss_fn().data)
            flat[i] = original
            fd = (upper - lower) / (2.0 * fd_step)
            a = float(gflat[i])
            if abs(a) < 1e-12 and abs(fd) < 1e-12:
                continue
            worst = max(worst, abs(a - fd) / max(abs(fd), 1e-6))
    return worst
