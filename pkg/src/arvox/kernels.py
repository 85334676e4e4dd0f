"""Hot numeric kernels with runtime backend selection.

Two implementations exist for each kernel: a pure-numpy one (vectorised,
always available) and a numba-jitted twin in :mod:`arvox.kernels_numba`.
The ``ARVOX_KERNELS`` environment variable picks the backend once at import:

``auto``    fastest known path per kernel: jitted resampling when numba is
            importable, BLAS-backed convolution always (default)
``numba``   require numba and run every jitted twin, convolution included
``numpy``   force the pure-numpy path even when numba is present

Resampling twins share coordinate math and operation order, so they agree
bit-for-bit.  The convolution twins accumulate taps in different orders
(tap-major tensordot vs nested scalar loops, both in float64), which leaves
differences at the float32 rounding level — treat cross-backend convolution
equality as ~1e-6, not bitwise.  ``auto`` routes convolution to the numpy
path because BLAS batches the tap contractions faster than the scalar loop
on every size measured (see the kernel-bench subcommand).
"""

import os

import numpy as np

_FLAG = os.environ.get("ARVOX_KERNELS", "auto").strip().lower()
if _FLAG not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"ARVOX_KERNELS must be one of auto/numba/numpy, got {_FLAG!r}"
    )

if _FLAG == "numpy":
    _nb = None
else:
    try:
        from arvox import kernels_numba as _nb
    except ImportError:
        if _FLAG == "numba":
            raise
        _nb = None

NUMBA_ENABLED = _nb is not None


def active_backend():
    """Backend serving the resampling kernels: ``"numba"`` or ``"numpy"``.

    Convolution follows this only when the flag is ``numba``; under ``auto``
    it stays on the BLAS path regardless (see the module docstring).
    """
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def axis_coords(n_in, n_out):
    """Source coordinates for axis resampling without corner alignment.

    Output index ``i`` samples source position ``(i + 0.5) * n_in / n_out -
    0.5``, clamped to ``[0, n_in - 1]``.  Returns ``(i0, i1, t)`` where
    ``i0``/``i1`` are the bracketing integer indices (int64) and ``t`` the
    fractional weight as float32.
    """
    scale = n_in / n_out
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = (pos - i0).astype(np.float32)
    return i0, i1, t


def axis_coords_nearest(n_in, n_out):
    """Nearest-index lookup table for axis resampling (half rounds up)."""
    scale = n_in / n_out
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    idx = np.floor(pos + 0.5).astype(np.int64)
    return np.minimum(idx, n_in - 1)


def resample_trilinear(x, out_shape):
    """Trilinear resample of a ``(C, H, W, D)`` float32 array.

    Identity shapes return a copy so no-op resampling is bitwise exact.
    """
    oh, ow, od = out_shape
    if (oh, ow, od) == x.shape[1:]:
        return x.copy()
    ih0, ih1, th = axis_coords(x.shape[1], oh)
    iw0, iw1, tw = axis_coords(x.shape[2], ow)
    id0, id1, td = axis_coords(x.shape[3], od)
    if NUMBA_ENABLED:
        return _nb.resample_trilinear(x, ih0, ih1, th, iw0, iw1, tw, id0, id1, td)
    return _resample_trilinear_numpy(x, ih0, ih1, th, iw0, iw1, tw, id0, id1, td)


def _resample_trilinear_numpy(x, ih0, ih1, th, iw0, iw1, tw, id0, id1, td):
    def gather(ah, aw, ad):
        return x[:, ah[:, None, None], aw[None, :, None], ad[None, None, :]]

    fh = th[None, :, None, None]
    fw = tw[None, None, :, None]
    fd = td[None, None, None, :]
    v000 = gather(ih0, iw0, id0)
    v001 = gather(ih0, iw0, id1)
    v010 = gather(ih0, iw1, id0)
    v011 = gather(ih0, iw1, id1)
    v100 = gather(ih1, iw0, id0)
    v101 = gather(ih1, iw0, id1)
    v110 = gather(ih1, iw1, id0)
    v111 = gather(ih1, iw1, id1)
    x00 = v000 + fd * (v001 - v000)
    x01 = v010 + fd * (v011 - v010)
    x10 = v100 + fd * (v101 - v100)
    x11 = v110 + fd * (v111 - v110)
    y0 = x00 + fw * (x01 - x00)
    y1 = x10 + fw * (x11 - x10)
    return np.ascontiguousarray(y0 + fh * (y1 - y0))


def resample_nearest(x, out_shape):
    """Nearest-neighbour resample of a ``(C, H, W, D)`` float32 array."""
    oh, ow, od = out_shape
    if (oh, ow, od) == x.shape[1:]:
        return x.copy()
    ih = axis_coords_nearest(x.shape[1], oh)
    iw = axis_coords_nearest(x.shape[2], ow)
    idx = axis_coords_nearest(x.shape[3], od)
    if NUMBA_ENABLED:
        return _nb.resample_nearest(x, ih, iw, idx)
    return np.ascontiguousarray(
        x[:, ih[:, None, None], iw[None, :, None], idx[None, None, :]]
    )


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv3d(x, w, b, stride=1, pad=0):
    """3D convolution: ``x (Cin,H,W,D)`` * ``w (Cout,Cin,kh,kw,kd)`` + ``b``.

    Zero padding, integer stride, float32 output accumulated in float64.
    1x1x1 stride-1 kernels always take the BLAS path — for those the
    convolution is a plain channel mix and matmul beats any explicit loop.
    """
    cout, cin, kh, kw, kd = w.shape
    if x.shape[0] != cin:
        raise ValueError(f"channel mismatch: x has {x.shape[0]}, w wants {cin}")
    if kh == kw == kd == 1 and stride == 1 and pad == 0:
        mat = w.reshape(cout, cin).astype(np.float64)
        flat = x.reshape(cin, -1).astype(np.float64)
        out = mat @ flat + b.astype(np.float64)[:, None]
        return out.astype(np.float32).reshape(cout, *x.shape[1:])
    if _FLAG == "numba":
        return _nb.conv3d(x, w, b, stride, pad)
    return _conv3d_numpy(x, w, b, stride, pad)


def _conv3d_numpy(x, w, b, stride, pad):
    cout, cin, kh, kw, kd = w.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (pad, pad)))
    H, W, D = x.shape[1:]
    oh = (H - kh) // stride + 1
    ow = (W - kw) // stride + 1
    od = (D - kd) // stride + 1
    acc = np.zeros((cout, oh, ow, od), np.float64)
    x64 = x.astype(np.float64)
    w64 = w.astype(np.float64)
    for i in range(kh):
        for j in range(kw):
            for k in range(kd):
                patch = x64[
                    :,
                    i : i + oh * stride : stride,
                    j : j + ow * stride : stride,
                    k : k + od * stride : stride,
                ]
                acc += np.tensordot(w64[:, :, i, j, k], patch, axes=(1, 0))
    acc += b.astype(np.float64)[:, None, None, None]
    return acc.astype(np.float32)


# ---------------------------------------------------------------------------
# pointwise ops shared by both backends (cheap; numpy is fine)
# ---------------------------------------------------------------------------

def instance_norm(x, eps=1e-5):
    """Per-channel normalisation over the spatial axes (no learned affine)."""
    x64 = x.astype(np.float64)
    mean = x64.mean(axis=(1, 2, 3), keepdims=True)
    var = x64.var(axis=(1, 2, 3), keepdims=True)
    return ((x64 - mean) / np.sqrt(var + eps)).astype(np.float32)


def leaky_relu(x, slope=0.01):
    return np.where(x >= 0, x, np.float32(slope) * x).astype(np.float32)


def softmax_rows(z):
    """Row softmax with max subtraction, computed in float64."""
    z64 = z.astype(np.float64)
    z64 -= z64.max(axis=-1, keepdims=True)
    e = np.exp(z64)
    return e / e.sum(axis=-1, keepdims=True)
