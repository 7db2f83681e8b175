"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array and records, for every derived value, the
closure that routes upstream gradients to its inputs. Graphs are built per
forward pass and discarded after backward; only the handful of operations
the MLPs and losses need are provided (no general broadcasting).
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ParameterError, ShapeError

LOG_EPS = 1e-12


class Tensor:
    """A dense array node in a differentiable computation graph."""

    __slots__ = ("values", "requires_grad", "grad", "name", "_children", "_backward")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._children: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.values.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.values.shape}{tag}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        """A view of the same values cut off from the graph."""
        return Tensor(self.values, requires_grad=False)

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    # -- graph construction helpers ------------------------------------

    @staticmethod
    def _result(values, children, backward_fn) -> "Tensor":
        out = Tensor(values)
        if any(c.requires_grad for c in children):
            out.requires_grad = True
            out._children = tuple(children)
            out._backward = backward_fn
        return out

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return Tensor._result(self.values + other, (self,),
                                  lambda g: self._accumulate(g))
        if not isinstance(other, Tensor):
            return NotImplemented
        # gradient routing honors requires_grad as of graph construction,
        # so a parameter frozen during the forward stays out of the graph
        # even if backward() runs after the freeze is lifted
        need_self, need_other = self.requires_grad, other.requires_grad
        if other.values.shape == self.values.shape:
            def back(g):
                if need_self:
                    self._accumulate(g)
                if need_other:
                    other._accumulate(g)
            return Tensor._result(self.values + other.values, (self, other), back)
        # bias add: (n, k) + (k,)
        if self.values.ndim == 2 and other.values.ndim == 1 \
                and self.values.shape[1] == other.values.shape[0]:
            def back(g):
                if need_self:
                    self._accumulate(g)
                if need_other:
                    other._accumulate(g.sum(axis=0))
            return Tensor._result(self.values + other.values, (self, other), back)
        raise ShapeError(f"cannot add shapes {self.values.shape} and {other.values.shape}")

    __radd__ = __add__

    def __neg__(self):
        return Tensor._result(-self.values, (self,), lambda g: self._accumulate(-g))

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Tensor._result(self.values * other, (self,),
                                  lambda g: self._accumulate(g * other))
        if not isinstance(other, Tensor):
            return NotImplemented
        if other.values.shape != self.values.shape:
            raise ShapeError(
                f"cannot multiply shapes {self.values.shape} and {other.values.shape}")
        need_self, need_other = self.requires_grad, other.requires_grad

        def back(g):
            if need_self:
                self._accumulate(g * other.values)
            if need_other:
                other._accumulate(g * self.values)
        return Tensor._result(self.values * other.values, (self, other), back)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if not isinstance(scalar, (int, float)):
            return NotImplemented
        return self * (1.0 / scalar)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- reductions and elementwise functions ----------------------------

    def sum(self) -> "Tensor":
        def back(g):
            self._accumulate(np.full_like(self.values, float(g)))
        return Tensor._result(self.values.sum(), (self,), back)

    def log(self, eps: float = LOG_EPS) -> "Tensor":
        """Natural log with the argument clamped below at eps."""
        v = self.values

        def back(g):
            self._accumulate(g * np.where(v >= eps, 1.0 / np.maximum(v, eps), 0.0))
        return Tensor._result(np.log(np.maximum(v, eps)), (self,), back)

    def backward(self):
        """Accumulate d(self)/d(ancestor) into every requires_grad ancestor."""
        if self.values.ndim != 0:
            raise ShapeError(f"backward requires a scalar, got shape {self.values.shape}")

        topo: list[Tensor] = []
        visited = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._children:
                if id(child) not in visited:
                    stack.append((child, False))

        self._accumulate(np.ones_like(self.values))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Strict 2-D matrix product with gradients to both factors."""
    if a.values.ndim != 2 or b.values.ndim != 2 or a.values.shape[1] != b.values.shape[0]:
        raise ShapeError(f"cannot matmul shapes {a.values.shape} and {b.values.shape}")
    need_a, need_b = a.requires_grad, b.requires_grad

    def back(g):
        if need_a:
            a._accumulate(g @ b.values.T)
        if need_b:
            b._accumulate(a.values.T @ g)
    return Tensor._result(a.values @ b.values, (a, b), back)


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    """Elementwise max(x, slope*x); the subgradient at 0 takes the slope branch."""
    if not 0.0 <= slope < 1.0:
        raise ParameterError(f"leaky_relu slope must be in [0, 1), got {slope}")
    v = x.values

    def back(g):
        x._accumulate(g * np.where(v > 0.0, 1.0, slope))
    return Tensor._result(np.where(v > 0.0, v, slope * v), (x,), back)


def softmax_t(z: Tensor, temperature: float) -> Tensor:
    """Temperature softmax along the last axis, max-subtracted for stability."""
    if temperature <= 0.0:
        raise ParameterError(f"softmax temperature must be positive, got {temperature}")
    v = z.values
    scaled = v / temperature
    shifted = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        z._accumulate(p * (g - inner) / temperature)
    return Tensor._result(p, (z,), back)


def zero_grads(params):
    for p in params:
        p.grad = None


def _grad_or_zeros(param: Tensor) -> np.ndarray:
    if param.grad is None:
        return np.zeros_like(param.values)
    if np.isnan(param.grad).any():
        raise NumericError(f"NaN gradient for parameter {param.name or '<unnamed>'}")
    return param.grad


class SgdMomentum:
    """SGD with classical (coupled) weight decay: v <- mu*v + g + wd*theta."""

    kind = "sgd-momentum"

    def __init__(self, params, momentum: float = 0.9, weight_decay: float = 1e-4):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.values) for p in self.params]

    def step(self, lr: float):
        for p, v in zip(self.params, self.velocity):
            g = _grad_or_zeros(p)
            v *= self.momentum
            v += g
            if self.weight_decay:
                v += self.weight_decay * p.values
            p.values -= lr * v


class Adam:
    """Bias-corrected Adam."""

    kind = "adam"

    def __init__(self, params, betas=(0.9, 0.99), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.moment1 = [np.zeros_like(p.values) for p in self.params]
        self.moment2 = [np.zeros_like(p.values) for p in self.params]

    def step(self, lr: float):
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.moment1, self.moment2):
            g = _grad_or_zeros(p)
            if self.weight_decay:
                g = g + self.weight_decay * p.values
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def poly_lr(iteration: int, total: int, base: float, power: float) -> float:
    """Polynomial decay: base * (1 - iteration/total) ** power."""
    if total <= 0:
        raise ParameterError(f"total iterations must be positive, got {total}")
    if not 0 <= iteration <= total:
        raise ParameterError(f"iteration {iteration} outside [0, {total}]")
    return base * (1.0 - iteration / total) ** power
