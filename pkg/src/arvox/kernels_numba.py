"""Numba-jitted twins of the hot kernels in :mod:`arvox.kernels`.

Importing this module triggers no compilation; each kernel compiles lazily on
first call and is cached on disk (``cache=True``), so repeated processes pay
the JIT cost once.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv3d(x, w, b, stride, pad):
    # x: (Cin, H, W, D) f32, w: (Cout, Cin, kh, kw, kd) f32, b: (Cout,) f32
    cout, cin, kh, kw, kd = w.shape
    H, W, D = x.shape[1], x.shape[2], x.shape[3]
    oh = (H + 2 * pad - kh) // stride + 1
    ow = (W + 2 * pad - kw) // stride + 1
    od = (D + 2 * pad - kd) // stride + 1
    out = np.empty((cout, oh, ow, od), np.float32)
    for co in range(cout):
        for a in range(oh):
            ih0 = a * stride - pad
            for bb in range(ow):
                iw0 = bb * stride - pad
                for cc in range(od):
                    id0 = cc * stride - pad
                    acc = np.float64(b[co])
                    for ci in range(cin):
                        for i in range(kh):
                            ih = ih0 + i
                            if ih < 0 or ih >= H:
                                continue
                            for j in range(kw):
                                iw = iw0 + j
                                if iw < 0 or iw >= W:
                                    continue
                                for k in range(kd):
                                    idd = id0 + k
                                    if idd < 0 or idd >= D:
                                        continue
                                    acc += np.float64(
                                        x[ci, ih, iw, idd] * w[co, ci, i, j, k]
                                    )
                    out[co, a, bb, cc] = np.float32(acc)
    return out


@njit(cache=True)
def resample_trilinear(x, ih0, ih1, th, iw0, iw1, tw, id0, id1, td):
    # Nested-lerp form: exact for constant inputs and for zero fractions.
    C = x.shape[0]
    oh, ow, od = ih0.size, iw0.size, id0.size
    out = np.empty((C, oh, ow, od), np.float32)
    for c in range(C):
        for a in range(oh):
            h0, h1, fh = ih0[a], ih1[a], th[a]
            for bb in range(ow):
                w0, w1, fw = iw0[bb], iw1[bb], tw[bb]
                for cc in range(od):
                    d0, d1, fd = id0[cc], id1[cc], td[cc]
                    v000 = x[c, h0, w0, d0]
                    v001 = x[c, h0, w0, d1]
                    v010 = x[c, h0, w1, d0]
                    v011 = x[c, h0, w1, d1]
                    v100 = x[c, h1, w0, d0]
                    v101 = x[c, h1, w0, d1]
                    v110 = x[c, h1, w1, d0]
                    v111 = x[c, h1, w1, d1]
                    x00 = v000 + fd * (v001 - v000)
                    x01 = v010 + fd * (v011 - v010)
                    x10 = v100 + fd * (v101 - v100)
                    x11 = v110 + fd * (v111 - v110)
                    y0 = x00 + fw * (x01 - x00)
                    y1 = x10 + fw * (x11 - x10)
                    out[c, a, bb, cc] = y0 + fh * (y1 - y0)
    return out


@njit(cache=True)
def resample_nearest(x, ih, iw, idx):
    C = x.shape[0]
    oh, ow, od = ih.size, iw.size, idx.size
    out = np.empty((C, oh, ow, od), np.float32)
    for c in range(C):
        for a in range(oh):
            for bb in range(ow):
                for cc in range(od):
                    out[c, a, bb, cc] = x[c, ih[a], iw[bb], idx[cc]]
    return out
