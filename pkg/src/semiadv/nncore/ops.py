"""Differentiable primitives. Every op takes/returns :class:`Tensor` (NCHW for images)."""
import numpy as np

from . import kernels
from .tensor import Tensor, as_tensor

BCE_EPS = 1e-7


def _make(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise -----------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b, dtype=a.dtype if isinstance(a, Tensor) else None)
    out = a.data + b.data.astype(a.dtype, copy=False)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape).astype(b.dtype, copy=False)

    return _make(out, (a, b), backward)


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    if not isinstance(b, Tensor):
        s = float(b)
        return _make(a.data * a.dtype.type(s), (a,), lambda g: (g * a.dtype.type(s),))
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), backward)


def square(a):
    return _make(a.data * a.data, (a,), lambda g: (2 * a.data * g,))


def leaky_relu(x, slope=0.2):
    if not 0 < slope < 1:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    s = x.dtype.type(slope)
    pos = x.data >= 0
    out = np.where(pos, x.data, x.data * s)
    return _make(out, (x,), lambda g: (np.where(pos, g, g * s),))


def sigmoid(x):
    z = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1 / (1 + e), e / (1 + e))
    return _make(out, (x,), lambda g: (g * out * (1 - out),))


def dropout(x, p, rng, training=True):
    if not training or p <= 0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


# reductions and shape --------------------------------------------------------

def tsum(x):
    out = np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype)
    return _make(out, (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),))


def sum_per_sample(x):
    """Sum over every axis except the first: ``[N, ...] -> [N]``."""
    axes = tuple(range(1, x.ndim))
    out = x.data.sum(axis=axes)

    def backward(g):
        return (np.broadcast_to(g.reshape((-1,) + (1,) * len(axes)), x.shape).astype(x.dtype),)

    return _make(out, (x,), backward)


def reshape(x, shape):
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def flatten(x):
    return reshape(x, (x.shape[0], -1))


def index(x, key):
    out = x.data[key]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return _make(np.array(out), (x,), backward)


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        sl = [slice(None)] * g.ndim
        res = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[axis] = slice(lo, hi)
            res.append(g[tuple(sl)])
        return tuple(res)

    return _make(out, tuple(tensors), backward)


def l2_normalize(x, axis=1, eps=1e-12):
    """Scale ``x`` to unit Euclidean length along ``axis`` (rows of ``[N, D]`` by default)."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True) + x.dtype.type(eps))
    out = x.data / norm

    def backward(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)

    return _make(out, (x,), backward)


# layers ------------------------------------------------------------------------

def _to_cm(a):
    """NCHW -> (C, N*H*W)."""
    n, c, h, w = a.shape
    return np.ascontiguousarray(a.transpose(1, 0, 2, 3)).reshape(c, n * h * w)


def _from_cm(a, n, h, w):
    """(C, N*H*W) -> NCHW."""
    return np.ascontiguousarray(a.reshape(-1, n, h, w).transpose(1, 0, 2, 3))


def conv2d(x, kernel, bias=None):
    """Stride-1 zero-padded "same" convolution (cross-correlation).

    x: [N, C, H, W]; kernel: [K, C, kh, kw] with odd kh, kw; bias: [K].

    When K >= C the input is unfolded (im2col) and hit with one GEMM. When
    K < C the channels are contracted first, giving one small map per kernel
    tap, and those maps are shift-added (col2im with flipped taps); this
    avoids unfolding wide inputs for narrow outputs such as the final
    131 -> 1 autoencoder layer.
    """
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be 4-d NCHW, got shape {x.shape}")
    if kernel.ndim != 4:
        raise ValueError(f"conv2d kernel must be 4-d [K, C, kh, kw], got shape {kernel.shape}")
    k, c, kh, kw = kernel.shape
    n, cx, h, w = x.shape
    if cx != c:
        raise ValueError(f"conv2d channel mismatch: input has {cx} channels, kernel expects {c}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d kernel spatial dims must be odd, got {kh}x{kw}")
    if bias is not None and bias.shape != (k,):
        raise ValueError(f"conv2d bias must have shape ({k},), got {bias.shape}")
    ph, pw = kh // 2, kw // 2
    pads = ((0, 0), (0, 0), (ph, ph), (pw, pw))
    parents = (x, kernel) if bias is None else (x, kernel, bias)
    wdata = kernel.data

    if k >= c:
        cols = kernels.im2col(np.pad(x.data, pads), kh, kw, h, w)     # C*kh*kw, N*H*W
        wmat = wdata.reshape(k, -1)
        out = _from_cm(wmat @ cols, n, h, w)
    else:
        xc = _to_cm(x.data)                                           # C, N*H*W
        wflip = wdata[:, :, ::-1, ::-1]
        amat = np.ascontiguousarray(wflip.transpose(0, 2, 3, 1)).reshape(k * kh * kw, c)
        taps = amat @ xc                                              # K*kh*kw, N*H*W
        out = np.ascontiguousarray(kernels.col2im(taps, k, kh, kw, h, w)[:, :, ph:ph + h, pw:pw + w])
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gx = gk = gb = None
        if k >= c:
            gc = _to_cm(g)                                            # K, N*H*W
            if x.requires_grad:
                gcols = wmat.T @ gc
                gx = np.ascontiguousarray(kernels.col2im(gcols, c, kh, kw, h, w)[:, :, ph:ph + h, pw:pw + w])
            if kernel.requires_grad:
                gk = (gc @ cols.T).reshape(kernel.shape)
        else:
            gtaps = kernels.im2col(np.pad(g, pads), kh, kw, h, w)     # K*kh*kw, N*H*W
            if x.requires_grad:
                gx = _from_cm(amat.T @ gtaps, n, h, w)
            if kernel.requires_grad:
                ga = (gtaps @ xc.T).reshape(k, kh, kw, c).transpose(0, 3, 1, 2)
                gk = np.ascontiguousarray(ga[:, :, ::-1, ::-1])
        if bias is not None and bias.requires_grad:
            gb = g.reshape(n, k, h * w).sum(axis=2).sum(axis=0)
        return (gx, gk) if bias is None else (gx, gk, gb)

    return _make(out, parents, backward)


def dense(x, weights, bias=None):
    """Affine map ``x @ W + b``; x: [N, D], W: [D, M], b: [M]."""
    if x.ndim != 2 or weights.ndim != 2:
        raise ValueError(f"dense expects 2-d input and weights, got {x.shape} and {weights.shape}")
    if x.shape[1] != weights.shape[0]:
        raise ValueError(
            f"dense inner dimension mismatch: input has {x.shape[1]} features, weights expect {weights.shape[0]}"
        )
    out = x.data @ weights.data
    if bias is not None:
        if bias.shape != (weights.shape[1],):
            raise ValueError(f"dense bias must have shape ({weights.shape[1]},), got {bias.shape}")
        out = out + bias.data
    parents = (x, weights) if bias is None else (x, weights, bias)

    def backward(g):
        gx = g @ weights.data.T if x.requires_grad else None
        gw = x.data.T @ g if weights.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _make(out, parents, backward)


def _sum_2x2(a):
    """Sum of each non-overlapping 2x2 block; four strided adds beat a 6-d reduce."""
    return (a[:, :, 0::2, 0::2] + a[:, :, 0::2, 1::2]) + (a[:, :, 1::2, 0::2] + a[:, :, 1::2, 1::2])


def _repeat_2x2(a):
    n, c, h, w = a.shape
    return np.broadcast_to(a[:, :, :, None, :, None], (n, c, h, 2, w, 2)).reshape(n, c, 2 * h, 2 * w)


def avg_pool2d(x):
    """2x2 window, stride 2. Spatial dims must be even."""
    n, c, h, w = x.shape
    if h < 2 or w < 2 or h % 2 or w % 2:
        raise ValueError(f"avg_pool2d needs even spatial dims >= 2, got {h}x{w}")
    quarter = x.dtype.type(0.25)
    out = _sum_2x2(x.data) * quarter

    def backward(g):
        return (_repeat_2x2(g * quarter),)

    return _make(out, (x,), backward)


def max_pool2d(x, ceil_mode=False):
    """2x2 window, stride 2.

    With ``ceil_mode`` an odd trailing row/column is padded by replicating the
    border, so odd sizes round up (7 -> 4); otherwise they round down.
    """
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ValueError(f"max_pool2d needs spatial dims >= 2, got {h}x{w}")
    pad_h, pad_w = h % 2, w % 2
    src = x.data
    if ceil_mode and (pad_h or pad_w):
        src = np.pad(src, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)), mode="edge")
    elif pad_h or pad_w:
        src = src[:, :, : h - pad_h, : w - pad_w]
    out, idx = kernels.maxpool2x2(src)

    def backward(g):
        gsrc = kernels.maxpool2x2_backward(g, idx)
        if ceil_mode and (pad_h or pad_w):
            if pad_h:
                gsrc[:, :, h - 1, :] += gsrc[:, :, h, :]
            if pad_w:
                gsrc[:, :, :, w - 1] += gsrc[:, :, :, w]
            return (np.ascontiguousarray(gsrc[:, :, :h, :w]),)
        if pad_h or pad_w:
            gx = np.zeros_like(x.data)
            gx[:, :, : h - pad_h, : w - pad_w] = gsrc
            return (gx,)
        return (gsrc,)

    return _make(out, (x,), backward)


def upsample_nearest2d(x, factor=2):
    if factor == 2:
        out = _repeat_2x2(x.data)
        return _make(out, (x,), lambda g: (_sum_2x2(g),))
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    n, c, h, w = x.shape

    def backward(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _make(out, (x,), backward)


# losses ------------------------------------------------------------------------

def binary_cross_entropy(target, prediction, eps=BCE_EPS):
    """Summed elementwise ``-t ln p - (1-t) ln(1-p)`` with p clamped to [eps, 1-eps]."""
    p = as_tensor(prediction)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    t = np.broadcast_to(t, p.shape)
    pd = p.data.astype(np.float64)
    pc = np.clip(pd, eps, 1 - eps)
    val = -(t * np.log(pc) + (1 - t) * np.log1p(-pc)).sum()
    inside = (pd >= eps) & (pd <= 1 - eps)

    def backward(g):
        d = (pc - t) / (pc * (1 - pc))
        return ((g * d * inside).astype(p.dtype),)

    return _make(np.asarray(val, dtype=p.dtype), (p,), backward)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    labels = np.asarray(labels, dtype=np.intp)
    nll = -(z[np.arange(n), labels] - np.log(ez.sum(axis=1)))

    def backward(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1
        return (d * (g / n),)

    return _make(np.asarray(nll.mean(), dtype=logits.dtype), (logits,), backward)
