"""Dense float64 tensors with reverse-mode differentiation.

Small by design: row-major numpy storage, a handful of differentiable
operations, and mask-aware reductions for padded (B, L, D) batches. Any
operation that produces NaN/Inf from finite inputs raises
:class:`~seqattn.errors.NumericError` instead of propagating the value.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import ContractError, NumericError, ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A dense array plus an optional gradient buffer and graph edge."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...], vjp, op: str) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise NumericError(f"non-finite values produced by '{op}'")
        out = Tensor.__new__(Tensor)
        out.data = data
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out.grad = np.zeros_like(data) if track else None
        out._parents = parents if track else ()
        out._vjp = vjp if track else None
        return out

    # -- arithmetic ----------------------------------------------------------

    @staticmethod
    def _coerce(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))

    def __add__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        a, b = self.data, other.data

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._result(a + b, (self, other), vjp, "add")

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._result(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other) -> "Tensor":
        return self + (-Tensor._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return Tensor._coerce(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        a, b = self.data, other.data

        def vjp(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return Tensor._result(a * b, (self, other), vjp, "mul")

    __rmul__ = __mul__

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def reshape(self, *shape: int) -> "Tensor":
        src = self.data.shape
        return Tensor._result(
            self.data.reshape(*shape), (self,), lambda g: (g.reshape(src),), "reshape"
        )

    def sum(self) -> "Tensor":
        src = self.data.shape
        return Tensor._result(
            np.asarray(self.data.sum()), (self,), lambda g: (np.broadcast_to(g, src).copy(),), "sum"
        )

    def mean(self) -> "Tensor":
        n = self.data.size
        src = self.data.shape
        return Tensor._result(
            np.asarray(self.data.mean()),
            (self,),
            lambda g: (np.broadcast_to(g / n, src).copy(),),
            "mean",
        )

    # -- activations -----------------------------------------------------------

    def relu(self) -> "Tensor":
        x = self.data
        return Tensor._result(np.maximum(x, 0.0), (self,), lambda g: (g * (x > 0.0),), "relu")

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def backward(self) -> None:
        backward(self)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard 2-D matrix product with gradients for both operands."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return Tensor._result(ad @ bd, (a, b), vjp, "matmul")


def matmul_ordered(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product accumulated over the inner dimension in index order.

    Appending an all-zero input coordinate plus an all-zero weight row is
    then an exact no-op bit for bit, which BLAS tiling does not guarantee.
    The token-axis network uses this so that growing the padded length
    leaves its outputs at existing positions bit-identical.
    """
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    out = np.zeros((ad.shape[0], bd.shape[1]))
    for k in range(ad.shape[1]):
        out += ad[:, k, None] * bd[k, None, :]

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return Tensor._result(out, (a, b), vjp, "matmul_ordered")


def relu(x: Tensor) -> Tensor:
    return x.relu()


_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic, clamped strictly inside (0, 1)."""
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    np.clip(out, _SIG_LO, _SIG_HI, out=out)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Tensor._result(out, (x,), vjp, "sigmoid")


class Mask:
    """Per-position validity flags for a padded (B, L) batch.

    Flags are exactly 0.0 or 1.0 and every row has at least one valid
    position; both are checked at construction.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"mask must be 2-D (B, L), got shape {arr.shape}")
        if not np.all((arr == 0.0) | (arr == 1.0)):
            raise ContractError("mask flags must be exactly 0 or 1")
        if np.any(arr.sum(axis=1) == 0.0):
            raise ContractError("every mask row needs at least one valid position")
        self.data = arr

    @classmethod
    def from_lengths(cls, lengths, max_len: int) -> "Mask":
        lengths = np.asarray(lengths, dtype=np.int64)
        arr = (np.arange(max_len)[None, :] < lengths[:, None]).astype(np.float64)
        return cls(arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def counts(self) -> np.ndarray:
        return self.data.sum(axis=1)

    def extended(self, extra: int) -> "Mask":
        """The same mask with `extra` all-padding positions appended."""
        pad = np.zeros((self.data.shape[0], extra))
        return Mask(np.concatenate([self.data, pad], axis=1))


def _check_mask(x: Tensor, mask: Mask, ndim: int) -> None:
    if x.data.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-D tensor, got shape {x.shape}")
    if x.shape[:2] != mask.shape:
        raise ShapeError(f"tensor {x.shape} does not align with mask {mask.shape}")
    if np.any(mask.data.sum(axis=1) == 0.0):
        raise ContractError("mask row with no valid positions")


def masked_softmax(x: Tensor, mask: Mask) -> Tensor:
    """Row softmax over valid positions; masked positions are exactly 0."""
    _check_mask(x, mask, 2)
    md = mask.data
    s = kernels.masked_softmax_fwd(x.data, md)

    def vjp(g):
        return (kernels.masked_softmax_bwd(g, s, md),)

    return Tensor._result(s, (x,), vjp, "masked_softmax")


def masked_maxpool(x: Tensor, mask: Mask, axis: str) -> Tensor:
    """Max over valid tokens (axis="token", (B,L,D) -> (B,D)) or over
    features (axis="feature", (B,L,D) -> (B,L), zeroed at padding)."""
    _check_mask(x, mask, 3)
    md = mask.data
    if axis == "token":
        out, arg = kernels.token_maxpool_fwd(x.data, md)
        seq_len = x.shape[1]

        def vjp(g):
            return (kernels.token_maxpool_bwd(g, arg, seq_len),)

    elif axis == "feature":
        out, arg = kernels.feature_maxpool_fwd(x.data, md)
        dim = x.shape[2]

        def vjp(g):
            return (kernels.feature_maxpool_bwd(g, md, arg, dim),)

    else:
        raise ShapeError(f"pooling axis must be 'token' or 'feature', got {axis!r}")
    return Tensor._result(out, (x,), vjp, "masked_maxpool")


def masked_avgpool(x: Tensor, mask: Mask, axis: str) -> Tensor:
    """Mean over valid tokens (dividing by the valid count, not L) or over
    features (zeroed at padding)."""
    _check_mask(x, mask, 3)
    md = mask.data
    if axis == "token":
        out = kernels.token_avgpool_fwd(x.data, md)

        def vjp(g):
            return (kernels.token_avgpool_bwd(g, md),)

    elif axis == "feature":
        out = kernels.feature_avgpool_fwd(x.data, md)
        dim = x.shape[2]

        def vjp(g):
            return (kernels.feature_avgpool_bwd(g, md, dim),)

    else:
        raise ShapeError(f"pooling axis must be 'token' or 'feature', got {axis!r}")
    return Tensor._result(out, (x,), vjp, "masked_avgpool")


def _topo_order(root: Tensor) -> list[Tensor]:
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
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d tensor into every participating grad buffer.

    Repeated calls without zeroing accumulate; the walk itself is
    deterministic, so two runs after a reset equal one run exactly.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        node.grad += g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + pg
            else:
                adjoint[key] = pg
