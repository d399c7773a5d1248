"""Hot inner loops for convolution and pooling.

Two interchangeable backends live here: numba ``@njit`` kernels and a
pure-numpy path. The backend is picked once at import time from the
``SEMIADV_NUMBA`` environment variable ("0"/"false"/"off" disables numba);
when numba is unavailable the numpy path is used regardless.

Both backends accumulate in the same order, so their results agree bit for bit.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

_flag = os.environ.get("SEMIADV_NUMBA", "1").strip().lower()
NUMBA_ENABLED = numba is not None and _flag not in ("0", "false", "off", "no")


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------

def im2col_numpy(xpad, kh, kw, out_h, out_w):
    n, c = xpad.shape[:2]
    cols = np.empty((c, kh, kw, n, out_h, out_w), dtype=xpad.dtype)
    xt = xpad.transpose(1, 0, 2, 3)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + out_h, j:j + out_w]
    return cols.reshape(c * kh * kw, n * out_h * out_w)


def col2im_numpy(cols, c, kh, kw, out_h, out_w):
    n = cols.shape[1] // (out_h * out_w)
    cols = cols.reshape(c, kh, kw, n, out_h, out_w)
    xpad = np.zeros((c, n, out_h + kh - 1, out_w + kw - 1), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xpad[:, :, i:i + out_h, j:j + out_w] += cols[:, i, j]
    return xpad.transpose(1, 0, 2, 3)


def maxpool2x2_numpy(x):
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1).astype(np.int8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward_numpy(gout, idx):
    n, c, oh, ow = gout.shape
    gwin = np.zeros((n, c, oh, ow, 4), dtype=gout.dtype)
    np.put_along_axis(gwin, idx[..., None].astype(np.intp), gout[..., None], axis=-1)
    gwin = gwin.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return gwin.reshape(n, c, oh * 2, ow * 2)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if numba is not None:

    @numba.njit(cache=True)
    def _im2col_nb(xpad, kh, kw, out_h, out_w):
        n, c = xpad.shape[0], xpad.shape[1]
        hw = out_h * out_w
        cols = np.empty((c * kh * kw, n * hw), dtype=xpad.dtype)
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for b in range(n):
                        base = b * hw
                        for y in range(out_h):
                            off = base + y * out_w
                            for x in range(out_w):
                                cols[row, off + x] = xpad[b, ch, y + i, x + j]
        return cols

    @numba.njit(cache=True)
    def _col2im_nb(cols, c, kh, kw, out_h, out_w):
        hw = out_h * out_w
        n = cols.shape[1] // hw
        xpad = np.zeros((n, c, out_h + kh - 1, out_w + kw - 1), dtype=cols.dtype)
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for b in range(n):
                        base = b * hw
                        for y in range(out_h):
                            off = base + y * out_w
                            for x in range(out_w):
                                xpad[b, ch, y + i, x + j] += cols[row, off + x]
        return xpad

    @numba.njit(cache=True)
    def _maxpool_nb(x):
        n, c, h, w = x.shape
        oh, ow = h // 2, w // 2
        out = np.empty((n, c, oh, ow), dtype=x.dtype)
        idx = np.empty((n, c, oh, ow), dtype=np.int8)
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for xx in range(ow):
                        best = x[b, ch, 2 * y, 2 * xx]
                        arg = 0
                        for k in range(1, 4):
                            v = x[b, ch, 2 * y + k // 2, 2 * xx + k % 2]
                            if v > best:
                                best = v
                                arg = k
                        out[b, ch, y, xx] = best
                        idx[b, ch, y, xx] = arg
        return out, idx

    @numba.njit(cache=True)
    def _maxpool_backward_nb(gout, idx):
        n, c, oh, ow = gout.shape
        gin = np.zeros((n, c, oh * 2, ow * 2), dtype=gout.dtype)
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for xx in range(ow):
                        k = idx[b, ch, y, xx]
                        gin[b, ch, 2 * y + k // 2, 2 * xx + k % 2] = gout[b, ch, y, xx]
        return gin


def _dispatch(nb_fn, np_fn):
    if NUMBA_ENABLED:
        return nb_fn
    return np_fn


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"


def im2col(xpad, kh, kw, out_h, out_w):
    """Unfold a padded NCHW array into ``(C*kh*kw, N*out_h*out_w)`` patch columns."""
    xpad = np.ascontiguousarray(xpad)
    fn = _dispatch(globals().get("_im2col_nb"), im2col_numpy)
    return fn(xpad, kh, kw, out_h, out_w)


def col2im(cols, c, kh, kw, out_h, out_w):
    """Adjoint of :func:`im2col`: scatter-add columns back to a padded NCHW array."""
    cols = np.ascontiguousarray(cols)
    fn = _dispatch(globals().get("_col2im_nb"), col2im_numpy)
    return fn(cols, c, kh, kw, out_h, out_w)


def maxpool2x2(x):
    """2x2/stride-2 max pool on even spatial dims; returns (out, argmax-in-window)."""
    x = np.ascontiguousarray(x)
    fn = _dispatch(globals().get("_maxpool_nb"), maxpool2x2_numpy)
    return fn(x)


def maxpool2x2_backward(gout, idx):
    gout = np.ascontiguousarray(gout)
    fn = _dispatch(globals().get("_maxpool_backward_nb"), maxpool2x2_backward_numpy)
    return fn(gout, idx)
