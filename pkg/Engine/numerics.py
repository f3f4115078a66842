"""
numerics.py
-----------
Dense-tensor arithmetic with reverse-mode automatic differentiation.

A Tensor wraps a contiguous numpy array. Every differentiable operation
records its parents and a backward closure; `backward(loss)` orders the
recorded graph topologically into a Tape and visits each node once.
The module also hosts the AdamW optimizer and a central-difference
gradient checker used by the test-suite.

Note: This module does NOT know about models, layers or losses; it only
provides the primitives those are written in.
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from exceptions import ContractError, DimensionError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily change the dtype used for tensors built from Python data."""
    global DEFAULT_DTYPE
    previous = DEFAULT_DTYPE
    DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        DEFAULT_DTYPE = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """
    Immutable n-dimensional value node of the autodiff graph.

    Args:
        data: array-like payload; floating numpy arrays keep their dtype,
              everything else is converted to DEFAULT_DTYPE
        requires_grad: whether gradients should flow into this tensor
        name: optional label (parameters carry their registry name)
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
            array = np.ascontiguousarray(data)
        else:
            array = np.ascontiguousarray(np.asarray(data, dtype=DEFAULT_DTYPE))
        self.data: np.ndarray = array
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = "leaf"

    # ------------------------------------------------------------------
    # introspection
    # ------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # operators
    # ------------------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


# ----------------------------------------------------------------------
# graph helpers
# ----------------------------------------------------------------------
def _lift(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if like is not None and not isinstance(value, np.ndarray):
        return Tensor(np.asarray(value, dtype=like.dtype))
    return Tensor(value)


def _make(data: np.ndarray, parents: Tuple[Tensor, ...], op: str,
          backward: Callable[[np.ndarray], None]) -> Tensor:
    needs_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad:
        out._parents = parents
        out._backward = backward
        out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    grad = _unbroadcast(grad, tensor.shape).astype(tensor.dtype, copy=False)
    if tensor.grad is None:
        tensor.grad = np.array(grad, copy=True)
    else:
        tensor.grad = tensor.grad + grad


# ----------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(a.data + b.data, (a, b), "add", backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _make(a.data - b.data, (a, b), "sub", backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _make(a.data * b.data, (a, b), "mul", backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def backward(g):
        _accumulate(a, g / b.data)
        _accumulate(b, -g * a.data / (b.data * b.data))

    return _make(a.data / b.data, (a, b), "div", backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), "neg", backward)


def power(a: Tensor, exponent: float) -> Tensor:
    def backward(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1))

    return _make(a.data ** exponent, (a,), "pow", backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), "exp", backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), "log", backward)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g * 0.5 / out_data)

    return _make(out_data, (a,), "sqrt", backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), "tanh", backward)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        _accumulate(a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner))

    return _make(out_data.astype(x.dtype, copy=False), (a,), "gelu", backward)


# ----------------------------------------------------------------------
# linear algebra and reductions
# ----------------------------------------------------------------------
def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """
    Batched matrix product with numpy broadcasting over leading axes.

    Raises:
        DimensionError: if operands are not at least 2-D or inner extents differ
    """
    a = _lift(a)
    b = _lift(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            _accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _make(np.matmul(a.data, b.data), (a, b), "matmul", backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), "sum", backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape) / count)

    return _make(np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), (a,), "mean", backward)


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), "reshape", backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(a, np.transpose(g, inverse))

    return _make(np.ascontiguousarray(np.transpose(a.data, axes)), (a,), "transpose", backward)


def swapaxes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[axis1], axes[axis2] = axes[axis2], axes[axis1]
    return transpose(a, axes)


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        _accumulate(a, full)

    return _make(np.array(a.data[index]), (a,), "getitem", backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(_lift(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        for tensor, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            _accumulate(tensor, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([expand_dims(_lift(t), axis) for t in tensors], axis=axis)


def expand_dims(a: Tensor, axis: int) -> Tensor:
    shape = list(a.shape)
    position = axis if axis >= 0 else len(shape) + axis + 1
    shape.insert(position, 1)
    return reshape(a, tuple(shape))


# ----------------------------------------------------------------------
# fused primitives (explicit backward for speed and stability)
# ----------------------------------------------------------------------
def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Max-subtracted softmax.

    Args:
        x: logits
        axis: reduction axis
        mask: optional boolean array broadcastable to x; False entries get
              exactly zero probability. Every slice must keep one True entry.
    """
    data = x.data
    if mask is not None:
        data = np.where(mask, data, -np.inf)
    shifted = data - data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(x, out_data * (g - inner))

    return _make(out_data.astype(x.dtype, copy=False), (x,), "softmax", backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """LayerNorm over the last axis with affine gain and bias."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out_data = xhat * gamma.data + beta.data

    def backward(g):
        if x.requires_grad:
            dxhat = g * gamma.data
            dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
            _accumulate(x, dx)
        _accumulate(gamma, g * xhat)
        _accumulate(beta, g)

    return _make(out_data.astype(x.dtype, copy=False), (x, gamma, beta), "layer_norm", backward)


def rms_normalize(x: Tensor, eps: float = 1e-6) -> Tensor:
    """Divide by the root-mean-square over the last axis (no gain)."""
    rms = np.sqrt((x.data * x.data).mean(axis=-1, keepdims=True) + eps)
    out_data = x.data / rms

    def backward(g):
        inner = (g * out_data).mean(axis=-1, keepdims=True)
        _accumulate(x, (g - out_data * inner) / rms)

    return _make(out_data, (x,), "rms_normalize", backward)


def vector_norm(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along `axis`; the gradient at a zero vector is zero."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(norm > 0, norm, 1.0)
        _accumulate(x, np.where(norm > 0, g * x.data / safe, 0.0))

    out_data = norm if keepdims else np.squeeze(norm, axis=axis)
    return _make(np.asarray(out_data), (x,), "vector_norm", backward)


def _swap_pairs(z: np.ndarray) -> np.ndarray:
    # (a, b) -> (-b, a) on consecutive pairs of the last axis
    out = np.empty_like(z)
    out[..., 0::2] = -z[..., 1::2]
    out[..., 1::2] = z[..., 0::2]
    return out


def _swap_pairs_transposed(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    out[..., 0::2] = z[..., 1::2]
    out[..., 1::2] = -z[..., 0::2]
    return out


def rope_rotate(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate consecutive feature pairs of `x` by the angles encoded in cos/sin."""
    out_data = x.data * cos + _swap_pairs(x.data) * sin

    def backward(g):
        _accumulate(x, g * cos + _swap_pairs_transposed(g * sin))

    return _make(out_data.astype(x.dtype, copy=False), (x,), "rope", backward)


def im2col3x3(x: Tensor) -> Tensor:
    """
    Gather zero-padded 3x3 neighbourhoods of a channels-last image batch.

    (n, H, W, c) -> (n, H, W, 9*c), neighbourhood-major then channel.
    """
    if x.ndim != 4:
        raise DimensionError(f"im2col3x3 expects (n, H, W, c), got {x.shape}")
    n, h, w, c = x.shape
    padded = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((n, h, w, 9, c), dtype=x.dtype)
    for dy in range(3):
        for dx in range(3):
            cols[:, :, :, dy * 3 + dx, :] = padded[:, dy:dy + h, dx:dx + w, :]

    def backward(g):
        g = g.reshape(n, h, w, 9, c)
        grad_padded = np.zeros((n, h + 2, w + 2, c), dtype=g.dtype)
        for dy in range(3):
            for dx in range(3):
                grad_padded[:, dy:dy + h, dx:dx + w, :] += g[:, :, :, dy * 3 + dx, :]
        _accumulate(x, grad_padded[:, 1:h + 1, 1:w + 1, :])

    return _make(cols.reshape(n, h, w, 9 * c), (x,), "im2col3x3", backward)


# ----------------------------------------------------------------------
# backward pass
# ----------------------------------------------------------------------
@dataclass
class TapeRecord:
    op: str
    inputs: Tuple[int, ...]
    output: int


@dataclass
class Tape:
    """Topologically ordered record of the primitive ops behind a scalar loss."""

    nodes: List[Tensor] = field(default_factory=list)

    @property
    def records(self) -> List[TapeRecord]:
        return [
            TapeRecord(node._op, tuple(id(p) for p in node._parents), id(node))
            for node in self.nodes if node._parents
        ]

    def run(self, seed: np.ndarray) -> None:
        self.nodes[-1].grad = seed
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
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


def backward(loss: Tensor) -> Tape:
    """
    Propagate d(loss)/d(.) into `.grad` of every tensor that requires it.

    Raises:
        ContractError: if `loss` is not a scalar
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape(_topological_order(loss))
    if loss.requires_grad:
        tape.run(np.ones_like(loss.data))
    logger.debug(f"Backward pass over {len(tape.nodes)} nodes")
    return tape


def zero_grad(params: Iterable[Tensor]) -> None:
    for param in params:
        param.grad = None


# ----------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------
@dataclass
class OptimizerState:
    """AdamW moments and hyperparameters."""

    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_params(cls, params: Dict[str, Tensor], **hyper) -> "OptimizerState":
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
            **hyper,
        )


def adamw_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray],
               state: OptimizerState, lr: Optional[float] = None) -> Dict[str, Tensor]:
    """
    One AdamW update with bias-corrected moments and decoupled weight decay.

        m = b1*m + (1-b1)*g ;  v = b2*v + (1-b2)*g^2
        p = p - lr*wd*p - lr * m_hat / (sqrt(v_hat) + eps)

    Parameters are rebound to new arrays; the old arrays are left untouched.

    Args:
        lr: optional override of state.lr for this step (warmup schedules)

    Raises:
        DimensionError: if a gradient or moment does not match its parameter
    """
    rate = state.lr if lr is None else lr
    beta1, beta2 = state.betas
    step = state.step + 1
    bias1 = 1.0 - beta1 ** step
    bias2 = 1.0 - beta2 ** step

    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape or state.m[name].shape != param.shape:
            raise DimensionError(
                f"AdamW shape mismatch for '{name}': param {param.shape}, grad {grad.shape}, "
                f"moment {state.m[name].shape}"
            )
        m = beta1 * state.m[name] + (1.0 - beta1) * grad
        v = beta2 * state.v[name] + (1.0 - beta2) * grad * grad
        state.m[name] = m.astype(param.dtype, copy=False)
        state.v[name] = v.astype(param.dtype, copy=False)
        update = (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        new_data = param.data - rate * state.weight_decay * param.data - rate * update
        param.data = new_data.astype(param.dtype, copy=False)

    state.step = step
    return params


class AdamW:
    """Stateful wrapper around `adamw_step` that reads `.grad` from parameters."""

    def __init__(self, params: Dict[str, Tensor], lr: float = 1e-3,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.state = OptimizerState.for_params(params, lr=lr, betas=tuple(betas), eps=eps,
                                               weight_decay=weight_decay)

    def zero_grad(self) -> None:
        zero_grad(self.params.values())

    def step(self, lr: Optional[float] = None) -> None:
        grads = {
            name: p.grad if p.grad is not None else np.zeros_like(p.data)
            for name, p in self.params.items()
        }
        adamw_step(self.params, grads, self.state, lr=lr)


# ----------------------------------------------------------------------
# gradient checking
# ----------------------------------------------------------------------
def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of the scalar `fn()` w.r.t. `param` (in place probing)."""
    grad = np.zeros_like(param.data)
    original = param.data
    flat = original.reshape(-1)
    for i in range(flat.size):
        probe = flat.copy()
        probe[i] = flat[i] + h
        param.data = probe.reshape(original.shape)
        with no_grad():
            plus = fn().item()
        probe[i] = flat[i] - h
        param.data = probe.reshape(original.shape)
        with no_grad():
            minus = fn().item()
        grad.reshape(-1)[i] = (plus - minus) / (2 * h)
    param.data = original
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def gradient_check(fn: Callable[[], Tensor], params: Dict[str, Tensor],
                   h: float = 1e-5) -> Dict[str, float]:
    """
    Compare analytic and central-difference gradients for each parameter.

    Returns:
        parameter name -> norm-wise relative error
    """
    zero_grad(params.values())
    backward(fn())
    analytic = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy()
                for name, p in params.items()}
    return {
        name: relative_error(analytic[name], numerical_gradient(fn, p, h))
        for name, p in params.items()
    }
