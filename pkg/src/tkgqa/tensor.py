"""Minimal reverse-mode autodiff over numpy float64 arrays.

Dynamic tape: every op eagerly computes its value and records its parents
plus a closure that propagates the adjoint. Calling ``backward()`` on a
scalar root topologically sorts the tape and accumulates gradients into
every reachable tensor with ``requires_grad=True``.
"""

from __future__ import annotations

import numpy as np

# When True, every op asserts its output is finite. Cheap at desk scale;
# flip off for the longer experiment runs.
DEBUG_CHECKS = False


class ShapeError(ValueError):
    """Raised when an op receives incompatibly shaped inputs."""

    def __init__(self, op, *shapes):
        super().__init__(f"{op}: incompatible shapes {[tuple(s) for s in shapes]}")


def _check_finite(op, arr):
    if DEBUG_CHECKS and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{op}: non-finite values in output")


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    # keep numpy from hijacking ndarray <op> Tensor; defer to our reflected ops
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, _parents=(), op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = None
        self.op = op
        _check_finite(op, self.data)

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r})"

    def item(self):
        return float(self.data)

    # -- graph plumbing -------------------------------------------------

    def _accumulate(self, g):
        if not self.requires_grad and not self._parents:
            return  # constant leaf: nothing downstream needs this adjoint
        g = _unbroadcast(np.asarray(g, dtype=np.float64), self.data.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def topo_order(self):
        """Return the tape reachable from self in topological order."""
        order, seen = [], set()
        stack = [(self, iter(self._parents))]
        seen.add(id(self))
        while stack:
            node, parents = stack[-1]
            advanced = False
            for p in parents:
                if id(p) not in seen:
                    seen.add(id(p))
                    stack.append((p, iter(p._parents)))
                    advanced = True
                    break
            if not advanced:
                order.append(node)
                stack.pop()
        return order

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar root, got shape {self.shape}")
        order = self.topo_order()
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    # -- elementwise ops -------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, _parents=(self, other), op="add")

        def bwd(g):
            self._accumulate(g)
            other._accumulate(g)

        out._backward = bwd
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, _parents=(self,), op="neg")
        out._backward = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, _parents=(self, other), op="mul")

        def bwd(g):
            if self.requires_grad or self._parents:
                self._accumulate(g * other.data)
            if other.requires_grad or other._parents:
                other._accumulate(g * self.data)

        out._backward = bwd
        return out

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("division only supported by python scalars")
        return self * (1.0 / scalar)

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.shape[-1] != other.data.shape[-2 if other.data.ndim > 1 else 0]:
            raise ShapeError("matmul", self.shape, other.shape)
        out = Tensor(self.data @ other.data, _parents=(self, other), op="matmul")

        def bwd(g):
            a, b = self.data, other.data
            s_needs = self.requires_grad or self._parents
            o_needs = other.requires_grad or other._parents
            if b.ndim == 1:
                if s_needs:
                    self._accumulate(np.outer(g, b) if a.ndim > 1 else g * b)
                if o_needs:
                    other._accumulate(a.T @ g if a.ndim > 1 else g * a)
            else:
                if s_needs:
                    bt = np.swapaxes(b, -1, -2)
                    self._accumulate(_unbroadcast(np.atleast_2d(g) @ bt, a.shape))
                if o_needs:
                    at = np.swapaxes(a, -1, -2)
                    other._accumulate(_unbroadcast(at @ np.atleast_2d(g), b.shape))

        out._backward = bwd
        return out

    def __getitem__(self, idx):
        out = Tensor(self.data[idx], _parents=(self,), op="slice")

        def bwd(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accumulate(full)

        out._backward = bwd
        return out

    # -- reductions and reshapes ------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,), op="sum")

        def bwd(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.data.shape))

        out._backward = bwd
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / n

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), _parents=(self,), op="reshape")
        out._backward = lambda g: self._accumulate(g.reshape(self.data.shape))
        return out

    def transpose(self, *axes):
        axes = axes or None
        out = Tensor(self.data.transpose(axes), _parents=(self,), op="transpose")
        inv = np.argsort(axes) if axes else None
        out._backward = lambda g: self._accumulate(g.transpose(inv))
        return out

    @property
    def T(self):
        return self.transpose()

    # -- nonlinearities ----------------------------------------------------

    def log(self):
        out = Tensor(np.log(self.data), _parents=(self,), op="log")
        out._backward = lambda g: self._accumulate(g / self.data)
        return out

    def exp(self):
        out = Tensor(np.exp(self.data), _parents=(self,), op="exp")
        out._backward = lambda g: self._accumulate(g * out.data)
        return out

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), _parents=(self,), op="relu")
        out._backward = lambda g: self._accumulate(g * (self.data > 0))
        return out

    def tanh(self):
        out = Tensor(np.tanh(self.data), _parents=(self,), op="tanh")
        out._backward = lambda g: self._accumulate(g * (1.0 - out.data ** 2))
        return out

    def softmax(self, axis=-1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=axis, keepdims=True)
        out = Tensor(p, _parents=(self,), op="softmax")

        def bwd(g):
            dot = (g * p).sum(axis=axis, keepdims=True)
            self._accumulate(p * (g - dot))

        out._backward = bwd
        return out

    def log_softmax(self, axis=-1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        out = Tensor(shifted - lse, _parents=(self,), op="log_softmax")
        p = np.exp(out.data)

        def bwd(g):
            self._accumulate(g - p * g.sum(axis=axis, keepdims=True))

        out._backward = bwd
        return out

    def maximum(self, other):
        other = as_tensor(other)
        if self.data.shape != other.data.shape:
            raise ShapeError("maximum", self.shape, other.shape)
        take_self = self.data >= other.data
        out = Tensor(np.where(take_self, self.data, other.data),
                     _parents=(self, other), op="maximum")

        def bwd(g):
            self._accumulate(g * take_self)
            other._accumulate(g * ~take_self)

        out._backward = bwd
        return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data):
    return Tensor(data, requires_grad=True)


# -- structural ops --------------------------------------------------------


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 _parents=tuple(tensors), op="concat")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    out._backward = bwd
    return out


def embedding(table, idx):
    """Row lookup table[idx] with scatter-add gradient. idx may be any shape."""
    table = as_tensor(table)
    idx = np.asarray(idx)
    out = Tensor(table.data[idx], _parents=(table,), op="embedding")

    def bwd(g):
        if not table.requires_grad and not table._parents:
            return
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        table._accumulate(full)

    out._backward = bwd
    return out


def where(mask, a, b):
    """Elementwise select; mask is a plain bool array (no gradient)."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out = Tensor(np.where(mask, a.data, b.data), _parents=(a, b), op="where")

    def bwd(g):
        a._accumulate(np.where(mask, g, 0.0))
        b._accumulate(np.where(mask, 0.0, g))

    out._backward = bwd
    return out


def layer_norm(x, gain, bias, eps=1e-6):
    """Normalize the last axis of x, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data, _parents=(x, gain, bias), op="layer_norm")

    def bwd(g):
        n = x.data.shape[-1]
        gg = g * gain.data
        dx = inv * (gg - gg.mean(axis=-1, keepdims=True)
                    - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
        x._accumulate(dx)
        gain._accumulate(_unbroadcast(g * xhat, gain.data.shape))
        bias._accumulate(_unbroadcast(g, bias.data.shape))

    out._backward = bwd
    return out


def attention(q, k, v, mask=None):
    """Scaled dot-product attention over the last two axes.

    q, k, v: (..., N, d). mask: optional additive float array broadcastable
    to the (..., N, N) score matrix (use large negatives to hide positions).
    """
    d = q.shape[-1]
    scores = q @ k.transpose(*range(k.data.ndim - 2), k.data.ndim - 1, k.data.ndim - 2)
    scores = scores * (1.0 / np.sqrt(d))
    if mask is not None:
        scores = scores + Tensor(mask)
    return scores.softmax(axis=-1) @ v


def softmax_cross_entropy(logits, targets):
    """Mean cross-entropy of integer targets under softmax(logits).

    logits: (B, C) or (C,); targets: int array (B,) or scalar.
    """
    logits = as_tensor(logits)
    lp = logits.log_softmax(axis=-1)
    targets = np.asarray(targets)
    if lp.data.ndim == 1:
        return -lp[int(targets)]
    picked = lp[np.arange(lp.data.shape[0]), targets]
    return -picked.mean()


# -- optimizer --------------------------------------------------------------


class Adam:
    """Adam with bias correction; clears grads after each step."""

    def __init__(self, params, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        for p in self.params:
            if p.grad is None:
                raise ValueError(f"adam_step: parameter {p!r} has no gradient")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
            p.grad = None

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# -- gradient checking --------------------------------------------------------


def grad_check(loss_builder, params, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    loss_builder() must rebuild the scalar loss from the current values of
    `params` (a list of Tensors with requires_grad=True).
    """
    for p in params:
        p.grad = None
    loss = loss_builder()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        an_flat = an.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            hi = loss_builder().item()
            flat[j] = orig - h
            lo = loss_builder().item()
            flat[j] = orig
            fd = (hi - lo) / (2 * h)
            err = abs(an_flat[j] - fd) / (abs(an_flat[j]) + abs(fd) + 1e-12)
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
