"""Small reverse-mode autodiff over float64 numpy buffers, plus Adam.

A dynamic tape is rebuilt on every forward pass; backward walks the tape in
a fixed topological order, so single-threaded runs are bit-reproducible.
Only the primitives the denoiser needs are implemented; shapes are checked
eagerly and errors name the offending op.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.grad is not None else 'no'})"

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        out_data = self.data[key]

        def bwd(g, x=self, k=key, shape=self.data.shape):
            buf = np.zeros(shape)
            buf[k] += g
            x._accum(buf)

        return Tensor(out_data, parents=(self,), backward=bwd)

    def reshape(self, *shape):
        out_data = self.data.reshape(*shape)

        def bwd(g, x=self):
            x._accum(g.reshape(x.data.shape))

        return Tensor(out_data, parents=(self,), backward=bwd)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out_data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def bwd(g, a=a, b=b):
        a._accum(_unbroadcast(g, a.data.shape))
        b._accum(_unbroadcast(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out_data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def bwd(g, a=a, b=b):
        a._accum(_unbroadcast(g * b.data, a.data.shape))
        b._accum(_unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)

    def bwd(g, a=a, f=factor):
        a._accum(g * f)

    return Tensor(a.data * factor, parents=(a,), backward=bwd)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out_data = a.data @ b.data

    def bwd(g, a=a, b=b):
        a._accum(g @ b.data.T)
        b._accum(a.data.T @ g)

    return Tensor(out_data, parents=(a, b), backward=bwd)


def transpose(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g, a=a):
        a._accum(g.T)

    return Tensor(a.data.T, parents=(a,), backward=bwd)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def bwd(g, a=a, m=mask):
        a._accum(g * m)

    return Tensor(a.data * mask, parents=(a,), backward=bwd)


def silu(a) -> Tensor:
    """x * sigmoid(x); smooth, so finite-difference checks stay clean."""
    a = as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out_data = a.data * sig

    def bwd(g, a=a, sig=sig):
        a._accum(g * sig * (1.0 + a.data * (1.0 - sig)))

    return Tensor(out_data, parents=(a,), backward=bwd)


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g, a=a, y=y):
        dot = (g * y).sum(axis=-1, keepdims=True)
        a._accum(y * (g - dot))

    return Tensor(y, parents=(a,), backward=bwd)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    a = as_tensor(a)
    mean = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mean) * inv

    def bwd(g, a=a, inv=inv, xhat=xhat):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        a._accum(inv * (g - gm - xhat * gx))

    return Tensor(xhat, parents=(a,), backward=bwd)


def gather(table, ids) -> Tensor:
    """Embedding lookup: rows of ``table`` selected by an integer vector."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or table.data.ndim != 2:
        raise ShapeError(f"gather: need 2-D table and 1-D ids, got {table.shape} and {ids.shape}")

    def bwd(g, t=table, ids=ids):
        buf = np.zeros_like(t.data)
        np.add.at(buf, ids, g)
        t._accum(buf)

    return Tensor(table.data[ids], parents=(table,), backward=bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd(g, ts=tensors, sizes=sizes, axis=axis):
        offset = 0
        for t, size in zip(ts, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + size)
            t._accum(g[tuple(idx)])
            offset += size

    return Tensor(out_data, parents=tuple(tensors), backward=bwd)


def sum_all(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g, a=a):
        a._accum(np.full(a.data.shape, float(g)))

    return Tensor(a.data.sum(), parents=(a,), backward=bwd)


def cross_entropy(logits, targets, mask=None) -> Tensor:
    """Mean cross-entropy over rows, optionally restricted by a boolean mask.

    Masked-out rows contribute nothing to the value and receive exactly zero
    gradient.  An all-false mask yields a constant 0.
    """
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-D, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    rows = logits.data.shape[0]
    if targets.shape != (rows,):
        raise ShapeError(f"cross_entropy: {rows} logit rows vs targets {targets.shape}")
    if mask is None:
        mask = np.ones(rows, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        return Tensor(0.0)
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1)) + logits.data.max(axis=-1)
    picked = logits.data[np.arange(rows), targets]
    losses = (lse - picked) * mask
    value = losses.sum() / count

    def bwd(g, logits=logits, targets=targets, mask=mask, count=count):
        p = np.exp(logits.data - logits.data.max(axis=-1, keepdims=True))
        p /= p.sum(axis=-1, keepdims=True)
        p[np.arange(len(targets)), targets] -= 1.0
        p *= mask[:, None] / count
        logits._accum(p * float(g))

    return Tensor(value, parents=(logits,), backward=bwd)


def backward(loss: Tensor) -> None:
    """Populate .grad on every parameter reachable from a scalar loss."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    loss._accum(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


def grad_check(f, params, eps: float = 1e-5, order: int = 2) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a zero-argument callable running a fresh forward pass that
    returns a scalar Tensor depending on ``params``.  ``order=4`` selects a
    five-point central stencil, which tolerates a larger ``eps`` and keeps
    the difference quotient above the float64 noise floor when some
    gradients are very small (as in whole-model checks).
    """
    if order not in (2, 4):
        raise ValueError("grad_check supports order 2 or 4 only")
    zero_grads(params)
    backward(f())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        ga_flat = ga.reshape(-1)
        for idx in range(flat.size):
            keep = flat[idx]

            def at(delta):
                flat[idx] = keep + delta
                return float(f().data)

            if order == 2:
                gn = (at(eps) - at(-eps)) / (2 * eps)
            else:
                gn = (-at(2 * eps) + 8 * at(eps) - 8 * at(-eps) + at(-2 * eps)) / (12 * eps)
            flat[idx] = keep
            err = abs(ga_flat[idx] - gn) / max(1e-8, abs(ga_flat[idx]) + abs(gn))
            worst = max(worst, err)
    zero_grads(params)
    return worst


class Adam:
    """Standard Adam with bias correction; grads are cleared after a step."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        if any(p.grad is None for p in self.params):
            raise ValueError("adam_step: gradients missing on some parameters")
        lr = self.lr if lr is None else lr
        self.step_count += 1
        bc1 = 1 - self.beta1 ** self.step_count
        bc2 = 1 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * p.grad
            v *= self.beta2
            v += (1 - self.beta2) * p.grad ** 2
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        zero_grads(self.params)
