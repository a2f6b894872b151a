"""Small reverse-mode autodiff engine over float64 numpy arrays.

Only the operations needed by the generators, discriminators and losses are
provided. Shapes never broadcast implicitly; every mismatch raises
``ShapeError``. The LSTM layer is a single fused node with its own
back-propagation-through-time so the 1000-step recurrence stays affordable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from . import _lstm_kernel as _kernel
except ImportError:  # pragma: no cover - extension not built
    _kernel = None

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


class Tensor:
    """An array plus (optionally) the record needed to differentiate it."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, grad={self.requires_grad})"


def _not_scalar(t: Tensor):
    raise ShapeError(f"expected a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise / structural


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    a = as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def bias_add(x, b, axis: int = -1) -> Tensor:
    """Add vector ``b`` along ``axis`` of ``x``; ``b`` must match that extent exactly."""
    x, b = as_tensor(x), as_tensor(b)
    axis = axis % x.data.ndim
    if b.data.ndim != 1 or b.shape[0] != x.shape[axis]:
        raise ShapeError(f"bias_add: bias {b.shape} does not match axis {axis} of {x.shape}")
    view = [1] * x.data.ndim
    view[axis] = b.shape[0]
    others = tuple(i for i in range(x.data.ndim) if i != axis)
    return _node(x.data + b.data.reshape(view), (x, b), lambda g: (g, g.sum(axis=others)))


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),))


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ref = xs[0].shape
    axis = axis % len(ref)
    for x in xs[1:]:
        if len(x.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(x.shape, ref)) if i != axis
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {x.shape} on axis {axis}")
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def backward(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return _node(np.concatenate([x.data for x in xs], axis=axis), xs, backward)


def take_rows(x, start: int, stop: int) -> Tensor:
    """Slice ``x[start:stop]`` along the leading axis."""
    x = as_tensor(x)
    n = x.shape[0]
    if not 0 <= start < stop <= n:
        raise ShapeError(f"take_rows: [{start}:{stop}] out of range for leading extent {n}")
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[start:stop] = g
        return (full,)

    return _node(x.data[start:stop], (x,), backward)


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _node(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean_all(x) -> Tensor:
    x = as_tensor(x)
    shape, n = x.shape, x.data.size
    return _node(np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return _node(ad @ bd, (a, b), backward)


def conv1d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` [B, C_in, L] (or [C_in, L]) with ``kernel`` [C_out, C_in, K]."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if stride < 1 or padding < 0:
        raise ValueError(f"conv1d: stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    batched = x.data.ndim == 3
    xd = x.data if batched else x.data[None]
    if xd.ndim != 3 or kernel.data.ndim != 3 or kernel.shape[1] != xd.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with kernel {kernel.shape}")
    B, C, L = xd.shape
    O, _, K = kernel.shape
    if L + 2 * padding < K:
        raise ShapeError(f"conv1d: kernel length {K} exceeds padded input length {L + 2 * padding}")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    L_out = (L + 2 * padding - K) // stride + 1
    # cols: [B, L_out, C*K]
    win = sliding_window_view(xp, K, axis=2)[:, :, : (L_out - 1) * stride + 1 : stride, :]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B, L_out, C * K)
    kflat = kernel.data.reshape(O, C * K)
    out = (cols @ kflat.T).transpose(0, 2, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        g = g if batched else g[None]
        gt = g.transpose(0, 2, 1)  # [B, L_out, O]
        dk = None
        if kernel.requires_grad:
            dk = np.tensordot(gt, cols, axes=([0, 1], [0, 1])).reshape(O, C, K)
        dx = None
        if x.requires_grad:
            dcols = (gt @ kflat).reshape(B, L_out, C, K)
            dxp = np.zeros((B, C, L + 2 * padding), dtype=DTYPE)
            span = (L_out - 1) * stride + 1
            for k in range(K):
                dxp[:, :, k : k + span : stride] += dcols[:, :, :, k].transpose(0, 2, 1)
            dx = dxp[:, :, padding : padding + L] if padding else dxp
            if not batched:
                dx = dx[0]
        return dx, dk

    return _node(out if batched else out[0], (x, kernel), backward)


def maxpool1d(x, window: int) -> tuple[Tensor, np.ndarray]:
    """Non-overlapping max pooling on the last axis; trailing remainder is dropped.

    Returns the pooled tensor and the absolute argmax index of every window.
    """
    if window < 1:
        raise ValueError(f"maxpool1d: window must be >= 1, got {window}")
    x = as_tensor(x)
    L = x.shape[-1]
    n = L // window
    if n == 0:
        raise ShapeError(f"maxpool1d: window {window} longer than input length {L}")
    lead = x.shape[:-1]
    blocks = x.data[..., : n * window].reshape(*lead, n, window)
    local = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, local[..., None], axis=-1)[..., 0]
    absolute = local + np.arange(n) * window
    shape = x.shape

    def backward(g):
        dx = np.zeros(shape, dtype=DTYPE)
        dblocks = dx[..., : n * window].reshape(*lead, n, window)
        np.put_along_axis(dblocks, local[..., None], g[..., None], axis=-1)
        return (dx,)

    return _node(out, (x,), backward), absolute


# ---------------------------------------------------------------------------
# activations and losses


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def activation(x, kind: str) -> Tensor:
    x = as_tensor(x)
    if kind == "sigmoid":
        y = _sigmoid(x.data)
        return _node(y, (x,), lambda g: (g * y * (1.0 - y),))
    if kind == "tanh":
        y = np.tanh(x.data)
        return _node(y, (x,), lambda g: (g * (1.0 - y * y),))
    if kind == "relu":
        mask = x.data > 0
        return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))
    raise ValueError(f"unknown activation {kind!r}")


def sigmoid(x) -> Tensor:
    return activation(x, "sigmoid")


def tanh(x) -> Tensor:
    return activation(x, "tanh")


def relu(x) -> Tensor:
    return activation(x, "relu")


def mse_loss(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape("mse_loss", pred, target)
    diff = pred.data - target.data
    n = diff.size
    k = 2.0 / n

    def backward(g):
        d = diff * (k * float(g))
        return d, -d

    return _node(np.asarray(np.mean(diff * diff)), (pred, target), backward)


def l1_loss(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("l1_loss", a, b)
    diff = a.data - b.data
    n = diff.size

    def backward(g):
        d = np.sign(diff) * (float(g) / n)
        return d, -d

    return _node(np.asarray(np.mean(np.abs(diff))), (a, b), backward)


# ---------------------------------------------------------------------------
# fused LSTM layer


def lstm(x, w_ih, w_hh, b, use_kernel: bool = True) -> Tensor:
    """One LSTM layer over a time-major sequence.

    ``x`` is [T, B, I]; ``w_ih`` is [I, 4H]; ``w_hh`` is [H, 4H]; ``b`` is [4H].
    Gate column blocks are ordered input, forget, cell candidate, output.
    Initial hidden and cell states are zero. Returns hidden states [T, B, H].
    The compiled recurrence is used when available; ``use_kernel=False``
    forces the pure numpy loop.
    """
    x, w_ih, w_hh, b = (as_tensor(v) for v in (x, w_ih, w_hh, b))
    if x.data.ndim != 3:
        raise ShapeError(f"lstm: input must be [T, B, I], got {x.shape}")
    T, B, I = x.shape
    H = w_hh.shape[0]
    if w_ih.shape != (I, 4 * H) or w_hh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError(
            f"lstm: weights {w_ih.shape}, {w_hh.shape}, {b.shape} do not fit input {x.shape}"
        )

    # exp(-z) for sigmoid gates, exp(-2z) for the candidate block: tanh(z) = 2*sigmoid(2z) - 1
    cs = np.full(4 * H, -1.0)
    cs[2 * H : 3 * H] = -2.0
    whh_s = np.ascontiguousarray(w_hh.data * cs)
    xs = (x.data.reshape(T * B, I) @ (w_ih.data * cs) + b.data * cs).reshape(T, B, 4 * H)

    Z = np.empty((T, B, 4 * H))
    Cs = np.empty((T + 1, B, H))
    TC = np.empty((T, B, H))
    Hs = np.empty((T + 1, B, H))
    if _kernel is not None and use_kernel:
        _kernel.forward(xs, whh_s, Z, Cs, TC, Hs)
    else:
        _lstm_forward_numpy(xs, whh_s, Z, Cs, TC, Hs)

    def backward(dH):
        DZ = np.empty((T, B, 4 * H))
        whhT = np.ascontiguousarray(w_hh.data.T)
        if _kernel is not None and use_kernel:
            _kernel.backward(np.ascontiguousarray(dH), whhT, Z, Cs, TC, DZ)
        else:
            _lstm_backward_numpy(dH, whhT, Z, Cs, TC, DZ)
        dz = DZ.reshape(T * B, 4 * H)
        dx = (dz @ w_ih.data.T).reshape(T, B, I) if x.requires_grad else None
        dwih = x.data.reshape(T * B, I).T @ dz if w_ih.requires_grad else None
        dwhh = Hs[:-1].reshape(T * B, H).T @ dz if w_hh.requires_grad else None
        db = dz.sum(axis=0) if b.requires_grad else None
        return dx, dwih, dwhh, db

    return _node(Hs[1:], (x, w_ih, w_hh, b), backward)


def _lstm_forward_numpy(xs, whh_s, Z, Cs, TC, Hs) -> None:
    T, B, G = xs.shape
    H = G // 4
    Cs[0] = 0.0
    Hs[0] = 0.0
    tmp = np.empty((B, H))
    with np.errstate(over="ignore"):
        for t in range(T):
            a = Z[t]
            np.matmul(Hs[t], whh_s, out=a)
            a += xs[t]
            np.exp(a, out=a)
            a += 1.0
            np.reciprocal(a, out=a)
            g = a[:, 2 * H : 3 * H]
            g *= 2.0
            g -= 1.0
            c = Cs[t + 1]
            np.multiply(a[:, H : 2 * H], Cs[t], out=c)
            np.multiply(a[:, :H], g, out=tmp)
            c += tmp
            np.tanh(c, out=TC[t])
            np.multiply(a[:, 3 * H :], TC[t], out=Hs[t + 1])


def _lstm_backward_numpy(dH, whhT, Z, Cs, TC, DZ) -> None:
    T, B, G = Z.shape
    H = G // 4
    i = Z[..., :H]
    f = Z[..., H : 2 * H]
    gg = Z[..., 2 * H : 3 * H]
    o = Z[..., 3 * H :]
    A = np.empty((T, B, 4, H))
    np.multiply(gg, i * (1.0 - i), out=A[:, :, 0])
    np.multiply(Cs[:-1], f * (1.0 - f), out=A[:, :, 1])
    np.multiply(i, 1.0 - gg * gg, out=A[:, :, 2])
    np.multiply(TC, o * (1.0 - o), out=A[:, :, 3])
    Bc = o * (1.0 - TC * TC)
    F = np.ascontiguousarray(f)
    DZ4 = DZ.reshape(T, B, 4, H)
    dh = np.zeros((B, H))
    dc = np.zeros((B, H))
    tmp = np.empty((B, H))
    for t in range(T - 1, -1, -1):
        dh += dH[t]
        np.multiply(dh, Bc[t], out=tmp)
        dc += tmp
        np.multiply(A[t, :, :3], dc[:, None, :], out=DZ4[t, :, :3])
        np.multiply(dh, A[t, :, 3], out=DZ4[t, :, 3])
        dc *= F[t]
        np.matmul(DZ[t], whhT, out=dh)


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. every leaf tensor that requires grad."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if node._backward is None:
            leaves[id(node)] = node
            grads[id(node)] = g if g is not None else np.zeros_like(node.data)
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=DTYPE).reshape(parent.shape)
    return {leaf: grads[key] for key, leaf in leaves.items()}


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def fresh(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            step=0,
        )

    def copy(self) -> "AdamState":
        return AdamState(
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
            step=self.step,
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 2e-4,
    beta1: float = 0.5,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {k!r}")
        if g.shape != params[k].shape:
            raise ShapeError(f"adam_step: gradient {g.shape} vs parameter {params[k].shape} for {k!r}")
    if not state.m:
        state = AdamState.fresh(params)
    t = state.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        if p.shape != state.m[k].shape:
            raise ShapeError(f"adam_step: state {state.m[k].shape} vs parameter {p.shape} for {k!r}")
        g = grads.get(k)
        if g is None:
            new_params[k], new_m[k], new_v[k] = p, state.m[k], state.v[k]
            continue
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * (g * g)
        new_params[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[k], new_v[k] = m, v
    return new_params, AdamState(new_m, new_v, t)


def parameters(arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
    """Wrap named arrays as gradient-tracking leaves."""
    return {k: Tensor(a, requires_grad=True, name=k) for k, a in arrays.items()}


def constants(arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(a, name=k) for k, a in arrays.items()}


def grads_by_name(grads: dict[Tensor, np.ndarray], leaves: Iterable[Tensor]) -> dict[str, np.ndarray]:
    out = {}
    for leaf in leaves:
        if leaf in grads:
            out[leaf.name] = grads[leaf]
        else:
            out[leaf.name] = np.zeros_like(leaf.data)
    return out
