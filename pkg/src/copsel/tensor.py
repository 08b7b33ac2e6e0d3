"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every numeric operation the selection pipeline differentiates through
lives here: dense matmul (optionally batched over a leading axis),
elementwise nonlinearities, temperature softmax, Cholesky factorization
with its reverse-mode identity, the standard normal CDF, and batch
normalization. Everything is double precision.

A ``Tensor`` wraps an ndarray and, while gradients are enabled, each
operation records a closure that pushes gradients back to its parents.
``backward`` replays those closures in reverse topological order, so a
tensor feeding several consumers accumulates the sum of all path
gradients.
"""

from __future__ import annotations

import contextlib

import numpy as np
from scipy import special

SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class TensorError(ValueError):
    """Raised for shape/domain violations and non-finite results."""


class FactorizationError(TensorError):
    """Cholesky failure on a non positive definite matrix.

    ``pivot`` is the index of the first non-positive pivot encountered.
    """

    def __init__(self, pivot: int):
        self.pivot = pivot
        super().__init__(f"matrix is not positive definite (pivot {pivot} <= 0)")


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise TensorError(f"non-finite value produced by '{op}'")


class Tensor:
    """A double-precision array participating in the recorded graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(parent: Tensor, grad: np.ndarray) -> None:
    if parent.grad is None:
        parent.grad = np.zeros_like(parent.data)
    parent.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _make(data: np.ndarray, parents, backward_fn, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


# -- arithmetic ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bwd, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), bwd, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, -g)

    return _make(-a.data, (a,), bwd, "neg")


def matmul(a, b) -> Tensor:
    """Matrix product; supports a leading batch axis via np.matmul rules.

    Backward: grad_a = g @ b^T, grad_b = a^T @ g (summed over broadcast
    batch dims).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise TensorError("matmul requires at least 2-d operands")
    if a.shape[-1] != b.shape[-2]:
        raise TensorError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), bwd, "matmul")


def transpose_last(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, np.swapaxes(g, -1, -2))

    return _make(np.swapaxes(a.data, -1, -2), (a,), bwd, "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bwd, "reshape")


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            gr = g
            if not keepdims and axis is not None:
                gr = np.expand_dims(gr, axis)
            _accumulate(a, np.broadcast_to(gr, a.shape).copy())

    return _make(out_data, (a,), bwd, "sum")


def mean_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.shape[axis]

    def bwd(g):
        if a.requires_grad:
            gr = g
            if not keepdims and axis is not None:
                gr = np.expand_dims(gr, axis)
            _accumulate(a, np.broadcast_to(gr, a.shape).copy() / count)

    return _make(out_data, (a,), bwd, "mean")


# -- elementwise nonlinearities ------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * out_data)

    return _make(out_data, (a,), bwd, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise TensorError("log requires strictly positive input")
    out_data = np.log(a.data)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g / a.data)

    return _make(out_data, (a,), bwd, "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise TensorError("sqrt requires nonnegative input")
    out_data = np.sqrt(a.data)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * 0.5 / out_data)

    return _make(out_data, (a,), bwd, "sqrt")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = special.expit(a.data)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd, "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bwd, "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * (a.data > 0.0))

    return _make(out_data, (a,), bwd, "relu")


def selu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0.0
    out_data = SELU_LAMBDA * np.where(pos, a.data, SELU_ALPHA * np.expm1(a.data))

    def bwd(g):
        if a.requires_grad:
            local = SELU_LAMBDA * np.where(pos, 1.0, SELU_ALPHA * np.exp(a.data))
            _accumulate(a, g * local)

    return _make(out_data, (a,), bwd, "selu")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    # log(1 + e^x), computed stably for large |x|
    out_data = np.logaddexp(0.0, a.data)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * special.expit(a.data))

    return _make(out_data, (a,), bwd, "softplus")


def absolute(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.abs(a.data)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * np.sign(a.data))

    return _make(out_data, (a,), bwd, "abs")


def round_(a) -> Tensor:
    """Half-to-even rounding; forward only, no gradient path."""
    a = as_tensor(a)
    return Tensor(np.round(a.data))


def clamp(a, lo=None, hi=None) -> Tensor:
    """Clip values; gradient passes only through unclipped entries."""
    a = as_tensor(a)
    out_data = np.clip(a.data, lo, hi)
    passthrough = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        passthrough &= a.data >= lo
    if hi is not None:
        passthrough &= a.data <= hi

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * passthrough)

    return _make(out_data, (a,), bwd, "clamp")


def log_one_minus(a, floor: float = 1e-12) -> Tensor:
    """log(1 - a) via log1p, with a clipped to at most 1 - floor."""
    a = as_tensor(a)
    clipped = np.minimum(a.data, 1.0 - floor)
    out_data = np.log1p(-clipped)
    passthrough = a.data <= 1.0 - floor

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * passthrough * (-1.0 / (1.0 - clipped)))

    return _make(out_data, (a,), bwd, "log_one_minus")


def softmax(a, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """Temperature softmax along `axis`, computed with max subtraction."""
    a = as_tensor(a)
    if temperature <= 0.0:
        raise TensorError("softmax temperature must be positive")
    scaled = a.data / temperature
    scaled = scaled - scaled.max(axis=axis, keepdims=True)
    e = np.exp(scaled)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            _accumulate(a, out_data * (g - inner) / temperature)

    return _make(out_data, (a,), bwd, "softmax")


def normal_cdf(a) -> Tensor:
    """Standard normal CDF via erfc; backward is the normal pdf."""
    a = as_tensor(a)
    out_data = 0.5 * special.erfc(-a.data * _INV_SQRT2)

    def bwd(g):
        if a.requires_grad:
            pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
            _accumulate(a, g * pdf)

    return _make(out_data, (a,), bwd, "normal_cdf")


# -- linear algebra -------------------------------------------------------

def _first_bad_pivot(mat: np.ndarray) -> int:
    """Index of the first non-positive pivot of an (unbatched) matrix."""
    d = mat.shape[-1]
    m = mat.copy()
    for i in range(d):
        piv = m[i, i]
        if piv <= 0.0:
            return i
        m[i, i] = np.sqrt(piv)
        if i + 1 < d:
            m[i + 1:, i] /= m[i, i]
            m[i + 1:, i + 1:] -= np.outer(m[i + 1:, i], m[i + 1:, i])
    return d - 1


def cholesky(a) -> Tensor:
    """Lower Cholesky factor of an SPD matrix (batched over leading axes).

    The input is symmetrized before factorization. Backward follows the
    standard reverse-mode identity grad_A = (S + S^T)/2 with
    S = L^{-T} phi(L^T grad_L) L^{-1}, phi taking the lower triangle
    with halved diagonal.
    """
    a = as_tensor(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise TensorError("cholesky expects square matrices")
    sym = 0.5 * (a.data + np.swapaxes(a.data, -1, -2))
    try:
        out_data = np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        flat = sym.reshape(-1, *sym.shape[-2:])
        for m in flat:
            try:
                np.linalg.cholesky(m)
            except np.linalg.LinAlgError:
                raise FactorizationError(_first_bad_pivot(m)) from None
        raise

    d = sym.shape[-1]
    eye = np.eye(d)

    def bwd(g):
        if not a.requires_grad:
            return
        L = out_data
        LT = np.swapaxes(L, -1, -2)
        P = np.matmul(LT, g)
        phi = np.tril(P) / (1.0 + eye)
        # S = L^{-T} phi L^{-1}, via two (batched) solves
        inner = np.linalg.solve(LT, np.swapaxes(phi, -1, -2))
        S = np.linalg.solve(LT, np.swapaxes(inner, -1, -2))
        grad_a = 0.5 * (S + np.swapaxes(S, -1, -2))
        _accumulate(a, grad_a)

    return _make(out_data, (a,), bwd, "cholesky")


def diagonal_part(a) -> Tensor:
    """Extract the diagonal of the last two axes."""
    a = as_tensor(a)
    out_data = np.diagonal(a.data, axis1=-2, axis2=-1).copy()
    d = a.shape[-1]

    def bwd(g):
        if a.requires_grad:
            grad = np.zeros_like(a.data)
            idx = np.arange(d)
            grad[..., idx, idx] = g
            _accumulate(a, grad)

    return _make(out_data, (a,), bwd, "diagonal")


def gather_rows(a, idx) -> Tensor:
    """Pick a[i, idx[i]] for each row i of a 2-d tensor."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if a.ndim != 2 or idx.shape != (a.shape[0],):
        raise TensorError("gather_rows expects 2-d input and one index per row")
    rows = np.arange(a.shape[0])
    out_data = a.data[rows, idx]

    def bwd(g):
        if a.requires_grad:
            grad = np.zeros_like(a.data)
            np.add.at(grad, (rows, idx), g)
            _accumulate(a, grad)

    return _make(out_data, (a,), bwd, "gather")


# -- batch normalization ---------------------------------------------------

class BatchNorm:
    """Per-feature standardization with learned scale/shift.

    Training mode normalizes with batch statistics (variance floor
    eps=1e-5) and updates running statistics; inference mode uses the
    frozen running statistics.
    """

    def __init__(self, width: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(width), requires_grad=True)
        self.beta = Tensor(np.zeros(width), requires_grad=True)
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, a: Tensor, training: bool) -> Tensor:
        if training:
            if a.shape[0] < 2:
                raise TensorError("batch norm needs batch size >= 2 in training")
            m = mean_(a, axis=0, keepdims=True)
            centered = sub(a, m)
            var = mean_(mul(centered, centered), axis=0, keepdims=True)
            normed = div(centered, sqrt(add(var, self.eps)))
            self.running_mean += self.momentum * (
                m.data.reshape(-1) - self.running_mean)
            self.running_var += self.momentum * (
                var.data.reshape(-1) - self.running_var)
        else:
            normed = div(sub(a, self.running_mean),
                         np.sqrt(self.running_var + self.eps))
        return add(mul(normed, self.gamma), self.beta)

    def parameters(self):
        return [self.gamma, self.beta]


# -- backward pass ----------------------------------------------------------

def backward(root: Tensor, params=None):
    """Reverse-mode sweep from a scalar root.

    Visits each recorded operation exactly once in reverse execution
    order. If `params` is given, returns a list of gradients aligned
    with it, with zeros for parameters the root does not reach.
    """
    if root.size != 1:
        raise TensorError("backward root must be scalar")

    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward_fn is not None:
            node._backward_fn(node.grad)

    if params is not None:
        return [p.grad if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    return None


def zero_grads(params) -> None:
    for p in params:
        p.grad = None
