"""Define-by-run reverse-mode automatic differentiation over numpy arrays.

The op set is sized for a small convolutional noise-prediction network:
elementwise arithmetic, dense and convolutional linear maps, SiLU, group
normalization, 2x pooling/upsampling, channel concatenation, bias
broadcasts, and scalar reductions.  A fresh graph is recorded on every
forward pass; tracked tensors are never mutated in place.  Everything runs
in float64 unless the caller feeds float32 data (the fast path used for
training — gradient tests always run in float64).

Gradient conventions: :func:`backward` accumulates ``dLoss/dLeaf`` into
``.grad`` of every ``requires_grad`` leaf, additively across calls, until
the caller resets ``.grad``.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from scipy.special import expit

try:  # optional JIT for the conv patch gather (pure-numpy fallback below)
    from numba import njit
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

__all__ = [
    "Tensor", "tensor", "no_grad", "backward",
    "add", "sub", "mul", "scale", "matmul", "add_bias",
    "conv2d", "silu", "group_norm",
    "avg_pool2", "upsample2", "concat_channels", "add_channel_map",
    "channels_last", "channels_first",
    "tsum", "tmean", "mse",
]

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / constants)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional float array with optional gradient tracking.

    ``data`` is a numpy float array (row-major); ``grad``, once populated by
    :func:`backward`, always matches ``data``'s shape.  Interior nodes hold
    the recorded parents and a vector-Jacobian closure; leaves hold neither.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._vjp is None

    def detach(self) -> "Tensor":
        """Same data, no tracking (data is shared, not copied)."""
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _node(data, parents, vjp) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _need(t, op: str) -> Tensor:
    if not isinstance(t, Tensor):
        raise TypeError(f"{op}: expected Tensor, got {type(t).__name__}")
    return t


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise / linear ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _need(a, "add"), _need(b, "add")
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _need(a, "sub"), _need(b, "sub")
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _need(a, "mul"), _need(b, "mul")
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a Python scalar (no broadcasting machinery needed)."""
    _need(a, "scale")
    s = float(s)
    return _node(a.data * s, (a,), lambda g: (g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product (n,k) @ (k,m)."""
    _need(a, "matmul"), _need(b, "matmul")
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias: (n, d) + (d,)."""
    _need(x, "add_bias"), _need(b, "add_bias")
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ValueError(f"add_bias: shape mismatch {x.shape} vs {b.shape}")
    return _node(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# convolution (channels-last layout for cache-friendly im2col)
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:
    # serial on purpose: a parallel region here thrashes against the BLAS
    # thread pool that runs the adjacent matmuls; writes every output entry
    # (zeros at the padding border) so the caller can use np.empty
    @njit(cache=True)
    def _gather_patches(x, cols, kh, kw, ph, pw, ho, wo):
        b, h, w, ci = x.shape
        for bi in range(b):
            for i in range(ho):
                for u in range(kh):
                    si = i + u - ph
                    inside_row = 0 <= si < h
                    base_u = u * kw
                    for j in range(wo):
                        for v in range(kw):
                            sj = j + v - pw
                            base = (base_u + v) * ci
                            if inside_row and 0 <= sj < w:
                                for c in range(ci):
                                    cols[bi, i, j, base + c] = x[bi, si, sj, c]
                            else:
                                for c in range(ci):
                                    cols[bi, i, j, base + c] = 0.0


def _im2col(x: np.ndarray, kh: int, kw: int, ph: int, pw: int):
    """Stride-1 zero-padded patch matrix for channels-last input.

    ``x`` is (B, H, W, Ci); the result is (B*Ho*Wo, kh*kw*Ci) with patch
    entries ordered (kh, kw, Ci) to match the kernel layout.
    """
    b, h, w, ci = x.shape
    ho, wo = h + 2 * ph - kh + 1, w + 2 * pw - kw + 1
    if kh == 1 and kw == 1:
        if ph or pw:
            x = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        return x.reshape(b * ho * wo, ci), ho, wo
    if _HAVE_NUMBA:
        cols = np.empty((b, ho, wo, kh * kw * ci), dtype=x.dtype)
        _gather_patches(np.ascontiguousarray(x), cols, kh, kw, ph, pw, ho, wo)
        return cols.reshape(b * ho * wo, kh * kw * ci), ho, wo
    if ph or pw:
        x = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, kh * kw * ci)
    return cols, ho, wo


def _conv_forward(x: np.ndarray, w: np.ndarray, ph: int, pw: int):
    """x (B,H,W,Ci) * w (kh,kw,Ci,Co) -> (B,Ho,Wo,Co) plus the patch matrix."""
    kh, kw, ci, co = w.shape
    cols, ho, wo = _im2col(x, kh, kw, ph, pw)
    out = cols @ w.reshape(kh * kw * ci, co)
    return out.reshape(x.shape[0], ho, wo, co), cols


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1 2-D convolution with zero padding preserving spatial size.

    ``x`` is channels-last (B, H, W, Ci); ``w`` is (kh, kw, Ci, Co) with odd
    kh, kw; the optional bias is (Co,).  A 1x1 kernel degenerates to a
    per-pixel linear map with no padding.
    """
    _need(x, "conv2d"), _need(w, "conv2d")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d: need 4-D input/weight, got {x.shape}, {w.shape}")
    kh, kw, ci, co = w.shape
    if x.shape[3] != ci:
        raise ValueError(f"conv2d: channel mismatch {x.shape} vs {w.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel dims must be odd, got {(kh, kw)}")
    if b is not None:
        _need(b, "conv2d")
        if b.shape != (co,):
            raise ValueError(f"conv2d: bias shape {b.shape} != ({co},)")
    ph, pw = kh // 2, kw // 2
    xd, wdat = x.data, w.data
    out, cols = _conv_forward(xd, wdat, ph, pw)
    if b is not None:
        out = out + b.data

    def vjp(g):
        gmat = g.reshape(-1, co)
        dw = (cols.T @ gmat).reshape(wdat.shape)
        # full correlation with the spatially flipped, channel-swapped kernel
        wr = np.ascontiguousarray(np.flip(wdat, (0, 1)).transpose(0, 1, 3, 2))
        dx, _ = _conv_forward(g, wr, kh - 1 - ph, kw - 1 - pw)
        if b is not None:
            return (dx, dw, gmat.sum(axis=0))
        return (dx, dw)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, vjp)


# ---------------------------------------------------------------------------
# nonlinearity / normalization
# ---------------------------------------------------------------------------

def silu(x: Tensor) -> Tensor:
    """Sigmoid-weighted linear unit x * sigmoid(x) (a smooth ReLU)."""
    _need(x, "silu")
    xd = x.data
    s = expit(xd)
    return _node(xd * s, (x,), lambda g: (g * (s * (1.0 + xd * (1.0 - s))),))


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int,
               eps: float = 1e-5) -> Tensor:
    """Group normalization over channels-last (B, H, W, C) with per-channel
    affine.  Groups partition the channel axis; statistics pool over the
    spatial dims and the channels within a group."""
    _need(x, "group_norm"), _need(gamma, "group_norm"), _need(beta, "group_norm")
    if x.data.ndim != 4:
        raise ValueError(f"group_norm: need 4-D input, got {x.shape}")
    bsz, h, w, c = x.shape
    if c % groups != 0:
        raise ValueError(f"group_norm: {groups} groups do not divide {c} channels")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(
            f"group_norm: affine shapes {gamma.shape}/{beta.shape} != ({c},)")
    cg = c // groups
    m = h * w * cg

    def group_mean(a):
        # innermost-axis-first reduction keeps every pass contiguous
        return a.reshape(bsz, h * w, groups, cg).sum(axis=3).sum(axis=1) / m

    def group_mean_prod(a, b):
        # fused multiply-reduce without materializing the product
        return np.einsum("bmgc,bmgc->bg",
                         a.reshape(bsz, h * w, groups, cg),
                         b.reshape(bsz, h * w, groups, cg)) / m

    def per_channel(stat):
        # (B, groups) -> broadcastable (B, 1, 1, C)
        return np.repeat(stat, cg, axis=1)[:, None, None, :]

    xd = x.data
    mu = per_channel(group_mean(xd))
    xc = xd - mu
    var = per_channel(group_mean_prod(xc, xc))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    gd = gamma.data

    def vjp(g):
        dgamma = np.einsum("bhwc,bhwc->c", g, xhat)
        dbeta = g.sum(axis=(0, 1, 2))
        gh = g * gd
        dx = inv * (gh - per_channel(group_mean(gh))
                    - xhat * per_channel(group_mean_prod(gh, xhat)))
        return (dx, dgamma, dbeta)

    return _node(out, (x, gamma, beta), vjp)


# ---------------------------------------------------------------------------
# resolution / layout ops
# ---------------------------------------------------------------------------

def avg_pool2(x: Tensor) -> Tensor:
    """2x2 mean pooling on channels-last input; spatial dims must be even."""
    _need(x, "avg_pool2")
    bsz, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2: odd spatial size {(h, w)}")
    out = x.data.reshape(bsz, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def vjp(g):
        return (np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25,)

    return _node(out, (x,), vjp)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling on channels-last input."""
    _need(x, "upsample2")
    bsz, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def vjp(g):
        return (g.reshape(bsz, h, 2, w, 2, c).sum(axis=(2, 4)),)

    return _node(out, (x,), vjp)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel (last) axis of (B, H, W, C) tensors."""
    _need(a, "concat_channels"), _need(b, "concat_channels")
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ValueError(f"concat_channels: need 4-D, got {a.shape}, {b.shape}")
    if a.shape[:3] != b.shape[:3]:
        raise ValueError(f"concat_channels: shape mismatch {a.shape} vs {b.shape}")
    ca = a.shape[3]
    out = np.concatenate([a.data, b.data], axis=3)
    return _node(out, (a, b), lambda g: (g[..., :ca], g[..., ca:]))


def channels_last(x: Tensor) -> Tensor:
    """View (B, C, H, W) as (B, H, W, C); the data is not copied."""
    _need(x, "channels_last")
    if x.data.ndim != 4:
        raise ValueError(f"channels_last: need 4-D, got {x.shape}")
    return _node(x.data.transpose(0, 2, 3, 1), (x,),
                 lambda g: (g.transpose(0, 3, 1, 2),))


def channels_first(x: Tensor) -> Tensor:
    """View (B, H, W, C) as (B, C, H, W); the data is not copied."""
    _need(x, "channels_first")
    if x.data.ndim != 4:
        raise ValueError(f"channels_first: need 4-D, got {x.shape}")
    return _node(x.data.transpose(0, 3, 1, 2), (x,),
                 lambda g: (g.transpose(0, 2, 3, 1),))


def add_channel_map(x: Tensor, v: Tensor) -> Tensor:
    """Broadcast-add a per-item, per-channel vector: (B,H,W,C) + (B,C)."""
    _need(x, "add_channel_map"), _need(v, "add_channel_map")
    if x.data.ndim != 4 or v.data.ndim != 2 \
            or (x.shape[0], x.shape[3]) != v.shape:
        raise ValueError(f"add_channel_map: shape mismatch {x.shape} vs {v.shape}")
    out = x.data + v.data[:, None, None, :]
    return _node(out, (x, v), lambda g: (g, g.sum(axis=(1, 2))))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(x: Tensor) -> Tensor:
    """Sum of all elements (scalar tensor)."""
    _need(x, "tsum")
    shp = x.shape
    return _node(np.asarray(x.data.sum()), (x,),
                 lambda g: (np.broadcast_to(g, shp).copy(),))


def tmean(x: Tensor) -> Tensor:
    """Mean of all elements (scalar tensor)."""
    _need(x, "tmean")
    shp = x.shape
    n = x.data.size
    return _node(np.asarray(x.data.mean()), (x,),
                 lambda g: (np.broadcast_to(g / n, shp).copy(),))


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared difference of two same-shape tensors (scalar)."""
    _need(a, "mse"), _need(b, "mse")
    _same_shape(a, b, "mse")
    d = a.data - b.data
    n = d.size
    val = np.asarray(np.mean(d * d))

    def vjp(g):
        ga = g * (2.0 / n) * d
        return (ga, -ga)

    return _node(val, (a, b), vjp)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dLeaf into every requires_grad leaf below ``loss``.

    ``loss`` must be a scalar (shape ``()``).  Gradients add across calls;
    reset ``leaf.grad = None`` between optimization steps.
    """
    _need(loss, "backward")
    if loss.data.shape != ():
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any tracked tensor")

    # iterative post-order topological sort
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.asarray(1.0, dtype=loss.data.dtype)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad or pg is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
