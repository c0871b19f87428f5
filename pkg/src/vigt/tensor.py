"""Dense tensors with reverse-mode automatic differentiation.

Eager numpy arrays wrapped in a tape: every operation stores its parents
and a closure computing the vector-Jacobian product, and ``backward`` on a
scalar walks the tape once in reverse topological order.  Only the
operations the grounding model needs exist; broadcasting is supported
where the model uses it (bias rows, scalars, stacked matmul) and nowhere
fancier.

Precision is a process-global switch (``set_default_dtype``): 64-bit for
gradient verification, 32-bit for training speed.  A graph and its
tensors belong to one thread for the duration of a forward/backward pass;
independent graphs may live on independent threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, UsageError

_DTYPES = {"f32": np.float32, "f64": np.float64}
_default_dtype = np.float64


def set_default_dtype(name: str) -> None:
    """Set the dtype new tensors are created with: "f32" or "f64".

    Affects tensors created after the call; existing tensors keep theirs.
    """
    global _default_dtype
    if name not in _DTYPES:
        raise ConfigError(f"unknown dtype {name!r}, expected one of {sorted(_DTYPES)}")
    _default_dtype = _DTYPES[name]


def get_default_dtype() -> type:
    return _default_dtype


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation.

    ``grad`` is allocated lazily and accumulates: calling ``backward``
    twice without resetting doubles the gradients (useful for summing
    per-sample contributions across a batch).
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != _default_dtype:
            arr = arr.astype(_default_dtype)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(())[()])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        backward(self)

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{req}{nm})"

    # operator sugar; free functions below do the work
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return elementwise_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    """Lift a number or array to a constant Tensor; pass Tensors through."""
    return x if isinstance(x, Tensor) else Tensor(x)


def _wire(out: Tensor, parents: tuple[Tensor, ...], vjp) -> Tensor:
    """Attach graph edges to ``out`` if any parent wants gradients."""
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable tensor with requires_grad.

    ``loss`` must be a scalar.  Gradients accumulate across calls until
    reset (e.g. by an optimizer's ``zero_grad``).
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor")
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._vjp is not None and node.grad is not None:
            node._vjp(node.grad)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _wire(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _wire(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)

    def vjp(g):
        a._accumulate(-g)

    return _wire(out, (a,), vjp)


def elementwise_mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _wire(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _wire(out, (a, b), vjp)


def matmul(a, b) -> Tensor:
    """Matrix product; both operands must be at least 2-D.

    Leading (batch) dimensions follow numpy's stacked-matmul broadcasting.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-D+ operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))

    return _wire(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))

    def vjp(g):
        x._accumulate(g * mask)

    return _wire(out, (x,), vjp)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    e = np.exp(-np.abs(x.data))
    s = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = Tensor(s)

    def vjp(g):
        x._accumulate(g * s * (1.0 - s))

    return _wire(out, (x,), vjp)


def log(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.log(x.data))

    def vjp(g):
        x._accumulate(g / x.data)

    return _wire(out, (x,), vjp)


def smooth_l1(x) -> Tensor:
    """Elementwise smooth-L1 with threshold 1: 0.5x^2 inside, |x|-0.5 outside."""
    x = as_tensor(x)
    a = np.abs(x.data)
    inside = a < 1.0
    out = Tensor(np.where(inside, 0.5 * x.data * x.data, a - 0.5))

    def vjp(g):
        x._accumulate(g * np.where(inside, x.data, np.sign(x.data)))

    return _wire(out, (x,), vjp)


def maximum(a, b) -> Tensor:
    """Elementwise maximum; on ties the gradient routes to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data
    out = Tensor(np.where(take_a, a.data, b.data))

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~take_a, b.shape))

    return _wire(out, (a, b), vjp)


def minimum(a, b) -> Tensor:
    """Elementwise minimum; on ties the gradient routes to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    out = Tensor(np.where(take_a, a.data, b.data))

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~take_a, b.shape))

    return _wire(out, (a, b), vjp)


def clamp(x, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; subgradient 0 at and beyond the boundaries."""
    x = as_tensor(x)
    interior = (x.data > lo) & (x.data < hi)
    out = Tensor(np.clip(x.data, lo, hi))

    def vjp(g):
        x._accumulate(g * interior)

    return _wire(out, (x,), vjp)


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))

    def vjp(g):
        x._accumulate(g.reshape(x.shape))

    return _wire(out, (x,), vjp)


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    out = Tensor(x.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        x._accumulate(g.transpose(inverse))

    return _wire(out, (x,), vjp)


def getitem(x, idx) -> Tensor:
    """Basic (non-repeating) indexing: ints and slices only."""
    x = as_tensor(x)
    out = Tensor(x.data[idx])

    def vjp(g):
        full = np.zeros_like(x.data)
        full[idx] += g
        x._accumulate(full)

    return _wire(out, (x,), vjp)


def concat_along_first_dim(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise UsageError("concat_along_first_dim needs at least one tensor")
    trailing = {p.shape[1:] for p in parts}
    if len(trailing) != 1:
        raise ShapeError(f"concat trailing dims disagree: {[p.shape for p in parts]}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def vjp(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accumulate(g[lo:hi])

    return _wire(out, tuple(parts), vjp)


def mean(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims))
    count = x.size if axis is None else x.shape[axis]

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape) / count)

    return _wire(out, (x,), vjp)


# ---------------------------------------------------------------------------
# normalization, attention building blocks
# ---------------------------------------------------------------------------

def softmax_lastdim(x) -> Tensor:
    """Softmax over the last dimension, stabilized by max subtraction."""
    x = as_tensor(x)
    if x.shape[-1] < 1:
        raise ShapeError("softmax_lastdim needs a non-empty last dimension")
    if np.isnan(x.data).any():
        raise NumericError("softmax_lastdim received NaN input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        x._accumulate(y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _wire(out, (x,), vjp)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last dimension to mean 0 / variance 1, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise ShapeError("layer_norm needs a non-empty last dimension")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = xc * istd
    out = Tensor(xhat * gain.data + bias.data)
    lead = tuple(range(x.ndim - 1))

    def vjp(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).sum(axis=lead))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=lead))
        if x.requires_grad:
            dxhat = g * gain.data
            dx = istd * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            x._accumulate(dx)

    return _wire(out, (x, gain, bias), vjp)


def conv1d(x, kernel, bias) -> Tensor:
    """1-D convolution over a [T, d_in] sequence with "same" zero padding.

    ``kernel`` has shape [K, d_in, d_out] with K odd; output is [T, d_out].
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if x.ndim != 2 or kernel.ndim != 3:
        raise ShapeError(f"conv1d expects x[T,d_in], kernel[K,d_in,d_out]; got {x.shape}, {kernel.shape}")
    k, d_in, d_out = kernel.shape
    if k % 2 == 0:
        raise ConfigError(f"conv1d kernel size must be odd, got {k}")
    if x.shape[1] != d_in:
        raise ShapeError(f"conv1d channel mismatch: x {x.shape} vs kernel {kernel.shape}")
    if bias.shape != (d_out,):
        raise ShapeError(f"conv1d bias must have shape ({d_out},), got {bias.shape}")
    t = x.shape[0]
    pad = (k - 1) // 2
    xp = np.zeros((t + 2 * pad, d_in), dtype=x.data.dtype)
    xp[pad:pad + t] = x.data
    y = np.broadcast_to(bias.data, (t, d_out)).copy()
    for i in range(k):
        y += xp[i:i + t] @ kernel.data[i]
    out = Tensor(y)

    def vjp(g):
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0))
        if kernel.requires_grad:
            dk = np.empty_like(kernel.data)
            for i in range(k):
                dk[i] = xp[i:i + t].T @ g
            kernel._accumulate(dk)
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for i in range(k):
                dxp[i:i + t] += g @ kernel.data[i].T
            x._accumulate(dxp[pad:pad + t])

    return _wire(out, (x, kernel, bias), vjp)


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate); identity in eval."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise UsageError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    out = Tensor(x.data * mask)

    def vjp(g):
        x._accumulate(g * mask)

    return _wire(out, (x,), vjp)


# ---------------------------------------------------------------------------
# multi-head attention
# ---------------------------------------------------------------------------

@dataclass
class AttentionParams:
    """Projection weights for one multi-head attention operator."""

    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d: int) -> "AttentionParams":
        def w():
            return Tensor(rng.normal(0.0, d ** -0.5, size=(d, d)), requires_grad=True)

        def b():
            return Tensor(np.zeros(d), requires_grad=True)

        return cls(w(), b(), w(), b(), w(), b(), w(), b())

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.{field}": getattr(self, field)
            for field in ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o")
        }


def _split_heads(x: Tensor, heads: int) -> Tensor:
    lq, d = x.shape
    return transpose(reshape(x, (lq, heads, d // heads)), (1, 0, 2))


def multi_head_attention(
    q,
    k,
    v,
    params: AttentionParams,
    heads: int,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention with ``heads`` heads.

    Returns the [Lq, d] output and the post-softmax attention map of shape
    [heads, Lq, Lk] (captured before dropout, so each row sums to 1).
    Dropout, when training, applies to the attention weights only.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    if d % heads != 0:
        raise ConfigError(f"model dim {d} not divisible by {heads} heads")
    qh = _split_heads(add(matmul(q, params.w_q), params.b_q), heads)
    kh = _split_heads(add(matmul(k, params.w_k), params.b_k), heads)
    vh = _split_heads(add(matmul(v, params.w_v), params.b_v), heads)
    scale = (d // heads) ** -0.5
    scores = elementwise_mul(matmul(qh, transpose(kh, (0, 2, 1))), scale)
    attn = softmax_lastdim(scores)
    weights = dropout(attn, dropout_rate, training, rng)
    ctx = matmul(weights, vh)
    lq = q.shape[0]
    merged = reshape(transpose(ctx, (1, 0, 2)), (lq, d))
    out = add(matmul(merged, params.w_o), params.b_o)
    return out, attn
