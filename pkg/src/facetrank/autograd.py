"""Reverse-mode tensor kernels for the re-ranker.

Everything runs on numpy float64: desk-scale shapes make precision cheap and
let the finite-difference checks stay tight.  The graph is built as Tensors
whose backward closures accumulate into their parents; ops are plain
functions, not a framework.  Tie-broken routing (channel max, k-max) always
selects the first maximizer so backward passes are deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError


class Tensor:
    """A node in the computation graph. Leaves have no parents."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.item())

    def backward(self, seed: float = 1.0) -> None:
        """Accumulate gradients of a scalar output into every reachable node."""
        if self.data.size != 1:
            raise ShapeError("backward root must be a scalar")
        topo: list[Tensor] = []
        visited: set[int] = set()
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
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.full_like(self.data, seed)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


@dataclass
class Parameter:
    """Named leaf tensor; the name keys optimizer state and checkpoints."""

    name: str
    value: Tensor


def conv2d_square(
    x: Tensor, filters: Tensor, bias: Tensor, apply_relu: bool = True
) -> Tensor:
    """Same-size zero-padded square convolution, ReLU'd by default.

    x: q x d, filters: f x n x n, bias: f  ->  f x q x d.  Even n pads one
    extra cell on the bottom/right so output extents match the input.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"conv input must be 2-D, got {x.shape}")
    if filters.data.ndim != 3 or filters.data.shape[1] != filters.data.shape[2]:
        raise ShapeError(f"filters must be f x n x n, got {filters.shape}")
    f, n, _ = filters.data.shape
    if bias.data.shape != (f,):
        raise ShapeError(f"bias must have shape ({f},), got {bias.shape}")
    q, d = x.data.shape
    pt, pb = (n - 1) // 2, n // 2
    xp = np.pad(x.data, ((pt, pb), (pt, pb)))
    windows = sliding_window_view(xp, (n, n))  # q x d x n x n
    pre = np.tensordot(windows, filters.data, axes=([2, 3], [1, 2]))  # q x d x f
    pre = np.ascontiguousarray(pre.transpose(2, 0, 1)) + bias.data[:, None, None]
    out_data = np.maximum(pre, 0.0) if apply_relu else pre

    out = Tensor(out_data, parents=(x, filters, bias))

    def backward(grad: np.ndarray) -> None:
        dpre = grad * (pre > 0.0) if apply_relu else grad
        _accumulate(bias, dpre.sum(axis=(1, 2)))
        _accumulate(filters, np.tensordot(dpre, windows, axes=([1, 2], [0, 1])))
        # Input gradient: correlate the swap-padded output gradient with the
        # spatially flipped filters.
        dpp = np.pad(dpre, ((0, 0), (pb, pt), (pb, pt)))
        dwin = sliding_window_view(dpp, (n, n), axis=(1, 2))  # f x q x d x n x n
        flipped = filters.data[:, ::-1, ::-1]
        _accumulate(x, np.einsum("fqdab,fab->qd", dwin, flipped))

    out._backward = backward
    return out


def channel_max(x: Tensor) -> Tensor:
    """Max over the leading (channel) axis: f x q x d -> q x d."""
    if x.data.ndim != 3:
        raise ShapeError(f"channel_max input must be 3-D, got {x.shape}")
    winners = x.data.argmax(axis=0)  # first maximizer on ties
    out = Tensor(x.data.max(axis=0), parents=(x,))

    def backward(grad: np.ndarray) -> None:
        dx = np.zeros_like(x.data)
        q, d = grad.shape
        dx[winners, np.arange(q)[:, None], np.arange(d)[None, :]] = grad
        _accumulate(x, dx)

    out._backward = backward
    return out


def kmax_rows(x: Tensor, k: int) -> Tensor:
    """Per-row k largest values, descending: q x d -> q x k.

    Rows shorter than k are zero-padded on the right; gradient flows to the
    source positions, first occurrence on ties.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if x.data.ndim != 2:
        raise ShapeError(f"kmax_rows input must be 2-D, got {x.shape}")
    q, d = x.data.shape
    m = min(k, d)
    # Stable argsort of the negated row keeps the earliest index first among
    # equal values.
    order = np.argsort(-x.data, axis=1, kind="stable")[:, :m]
    taken = np.take_along_axis(x.data, order, axis=1)
    if m < k:
        taken = np.concatenate([taken, np.zeros((q, k - m))], axis=1)
    out = Tensor(taken, parents=(x,))

    def backward(grad: np.ndarray) -> None:
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, order, grad[:, :m], axis=1)
        _accumulate(x, dx)

    out._backward = backward
    return out


_ACTIVATIONS = ("identity", "relu", "tanh")


def dense(x: Tensor, W: Tensor, b: Tensor, activation: str = "identity") -> Tensor:
    """activation(x @ W + b) for a 1-D input."""
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    if x.data.ndim != 1 or W.data.ndim != 2 or x.data.shape[0] != W.data.shape[0]:
        raise ShapeError(f"dense shapes do not conform: x {x.shape}, W {W.shape}")
    if b.data.shape != (W.data.shape[1],):
        raise ShapeError(f"dense bias shape {b.shape} does not match W {W.shape}")
    pre = x.data @ W.data + b.data
    if activation == "relu":
        out_data = np.maximum(pre, 0.0)
    elif activation == "tanh":
        out_data = np.tanh(pre)
    else:
        out_data = pre
    out = Tensor(out_data, parents=(x, W, b))

    def backward(grad: np.ndarray) -> None:
        if activation == "relu":
            dpre = grad * (pre > 0.0)
        elif activation == "tanh":
            dpre = grad * (1.0 - out_data**2)
        else:
            dpre = grad
        _accumulate(x, W.data @ dpre)
        _accumulate(W, np.outer(x.data, dpre))
        _accumulate(b, dpre)

    out._backward = backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat of nothing")
    nd = tensors[0].data.ndim
    if any(t.data.ndim != nd for t in tensors):
        raise ShapeError("concat operands must share rank")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(grad: np.ndarray) -> None:
        offset = 0
        for t, size in zip(tensors, sizes):
            sl = [slice(None)] * nd
            sl[axis] = slice(offset, offset + size)
            _accumulate(t, grad[tuple(sl)])
            offset += size

    out._backward = backward
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape), parents=(x,))

    def backward(grad: np.ndarray) -> None:
        _accumulate(x, grad.reshape(x.data.shape))

    out._backward = backward
    return out


def pairwise_softmax_loss(s_pos: Tensor, s_neg: Tensor) -> Tensor:
    """-ln(softmax probability of the positive), stable via logaddexp.

    d(loss)/d(s_pos) = p - 1 and d(loss)/d(s_neg) = 1 - p, where p is the
    softmax probability of the positive score.
    """
    if s_pos.data.size != 1 or s_neg.data.size != 1:
        raise ShapeError("pairwise loss takes scalar scores")
    diff = s_neg.data.item() - s_pos.data.item()  # loss = ln(1 + e^diff)
    out = Tensor(np.logaddexp(0.0, diff), parents=(s_pos, s_neg))

    def backward(grad: np.ndarray) -> None:
        # sigmoid(diff) = 1 - p, computed stably on either side of 0
        if diff >= 0:
            sig = 1.0 / (1.0 + np.exp(-diff))
        else:
            e = np.exp(diff)
            sig = e / (1.0 + e)
        g = grad.item() * sig
        _accumulate(s_pos, np.full_like(s_pos.data, -g))
        _accumulate(s_neg, np.full_like(s_neg.data, g))

    out._backward = backward
    return out


# --- optimizers -----------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "adam"
    lr: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.method not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.method!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class _AdamSlot:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


class Optimizer:
    """SGD or Adam over named parameters; grads are zeroed after each step."""

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self._slots: dict[str, _AdamSlot] = {}

    def step(self, params: Sequence[Parameter]) -> None:
        cfg = self.config
        for p in params:
            g = p.value.grad
            if g is None:
                g = np.zeros_like(p.value.data)
            if cfg.method == "sgd":
                p.value.data -= cfg.lr * g
            else:
                slot = self._slots.get(p.name)
                if slot is None:
                    slot = _AdamSlot(np.zeros_like(p.value.data), np.zeros_like(p.value.data))
                    self._slots[p.name] = slot
                b1, b2 = cfg.betas
                slot.t += 1
                slot.m = b1 * slot.m + (1.0 - b1) * g
                slot.v = b2 * slot.v + (1.0 - b2) * g * g
                m_hat = slot.m / (1.0 - b1**slot.t)
                v_hat = slot.v / (1.0 - b2**slot.t)
                p.value.data -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
            p.value.grad = None


def gradient_check(
    fn: Callable[[], Tensor], leaves: Sequence[Tensor], eps: float = 1e-5
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `fn` must rebuild its graph from the live `leaves` data on every call.
    Relative error is |a - f| / max(|a|, |f|, 1e-8) per element.
    """
    for leaf in leaves:
        leaf.grad = None
    out = fn()
    out.backward()
    analytic = [
        leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.data)
        for leaf in leaves
    ]
    worst = 0.0
    for leaf, ana in zip(leaves, analytic):
        flat = leaf.data.reshape(-1)
        aflat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn().data.item()
            flat[i] = orig - eps
            lo = fn().data.item()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            denom = max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst
