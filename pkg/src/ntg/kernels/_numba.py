"""Numba-jitted hot kernels.

Convolution kernels are serial: at desk-scale map sizes the per-call
threading overhead outweighs the work, and LLVM already vectorizes the
stride-1 inner loops. The patch matcher parallelizes over rows; each output
element is produced by exactly one thread in a fixed sequence, so results
are bitwise identical at any thread count. Reduction kernels opt into
reassociation (reassoc/contract/nsz) for SIMD; the compiled order is still
fixed, so runs remain reproducible.
"""

import numpy as np
from numba import njit, prange

_REASSOC = {"reassoc", "contract", "nsz"}


@njit(cache=True)
def _pad(x, pad):
    C, H, W = x.shape
    xp = np.zeros((C, H + 2 * pad, W + 2 * pad), dtype=np.float64)
    xp[:, pad : pad + H, pad : pad + W] = x
    return xp


@njit(cache=True)
def conv2d_forward(x, w, b, stride, pad):
    O, C, kh, kw = w.shape
    xp = _pad(x, pad) if pad > 0 else x
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    out = np.empty((O, ho, wo), dtype=np.float64)
    for o in range(O):
        for oy in range(ho):
            orow = out[o, oy]
            for ox in range(wo):
                orow[ox] = b[o]
        for c in range(C):
            for ky in range(kh):
                for kx in range(kw):
                    wv = w[o, c, ky, kx]
                    for oy in range(ho):
                        xrow = xp[c, oy * stride + ky]
                        orow = out[o, oy]
                        if stride == 1:
                            for ox in range(wo):
                                orow[ox] += wv * xrow[ox + kx]
                        else:
                            for ox in range(wo):
                                orow[ox] += wv * xrow[ox * stride + kx]
    return out


@njit(cache=True)
def conv2d_backward_input(go, w, stride, pad, H, W):
    O, C, kh, kw = w.shape
    ho, wo = go.shape[1], go.shape[2]
    gxp = np.zeros((C, H + 2 * pad, W + 2 * pad), dtype=np.float64)
    for c in range(C):
        for o in range(O):
            for ky in range(kh):
                for kx in range(kw):
                    wv = w[o, c, ky, kx]
                    for oy in range(ho):
                        grow = go[o, oy]
                        xrow = gxp[c, oy * stride + ky]
                        if stride == 1:
                            for ox in range(wo):
                                xrow[ox + kx] += wv * grow[ox]
                        else:
                            for ox in range(wo):
                                xrow[ox * stride + kx] += wv * grow[ox]
    if pad > 0:
        return gxp[:, pad : pad + H, pad : pad + W].copy()
    return gxp


@njit(cache=True, fastmath=_REASSOC)
def conv2d_backward_kernel(go, x, stride, pad, kh, kw):
    O, ho, wo = go.shape
    C = x.shape[0]
    xp = _pad(x, pad) if pad > 0 else x
    gw = np.empty((O, C, kh, kw), dtype=np.float64)
    for o in range(O):
        for c in range(C):
            for ky in range(kh):
                for kx in range(kw):
                    s = 0.0
                    for oy in range(ho):
                        grow = go[o, oy]
                        xrow = xp[c, oy * stride + ky]
                        if stride == 1:
                            for ox in range(wo):
                                s += grow[ox] * xrow[ox + kx]
                        else:
                            for ox in range(wo):
                                s += grow[ox] * xrow[ox * stride + kx]
                    gw[o, c, ky, kx] = s
    return gw


@njit(cache=True)
def avgpool2_forward(x):
    C, H, W = x.shape
    ho, wo = (H + 1) // 2, (W + 1) // 2
    out = np.empty((C, ho, wo), dtype=np.float64)
    for c in range(C):
        for i in range(ho):
            for j in range(wo):
                s = 0.0
                n = 0.0
                for di in range(2):
                    y = 2 * i + di
                    if y >= H:
                        continue
                    for dj in range(2):
                        xx = 2 * j + dj
                        if xx >= W:
                            continue
                        s += x[c, y, xx]
                        n += 1.0
                out[c, i, j] = s / n
    return out


@njit(cache=True)
def avgpool2_backward(go, H, W):
    C = go.shape[0]
    gx = np.empty((C, H, W), dtype=np.float64)
    for c in range(C):
        for y in range(H):
            i = y // 2
            for xx in range(W):
                j = xx // 2
                ny = 2.0 if 2 * i + 1 < H else 1.0
                nx = 2.0 if 2 * j + 1 < W else 1.0
                gx[c, y, xx] = go[c, i, j] / (ny * nx)
    return gx


@njit(cache=True)
def upsample2_forward(x):
    C, H, W = x.shape
    out = np.empty((C, 2 * H, 2 * W), dtype=np.float64)
    for c in range(C):
        for y in range(H):
            for xx in range(W):
                v = x[c, y, xx]
                out[c, 2 * y, 2 * xx] = v
                out[c, 2 * y, 2 * xx + 1] = v
                out[c, 2 * y + 1, 2 * xx] = v
                out[c, 2 * y + 1, 2 * xx + 1] = v
    return out


@njit(cache=True)
def upsample2_backward(go):
    C, H2, W2 = go.shape
    H, W = H2 // 2, W2 // 2
    gx = np.empty((C, H, W), dtype=np.float64)
    for c in range(C):
        for y in range(H):
            for xx in range(W):
                gx[c, y, xx] = (
                    go[c, 2 * y, 2 * xx]
                    + go[c, 2 * y, 2 * xx + 1]
                    + go[c, 2 * y + 1, 2 * xx]
                    + go[c, 2 * y + 1, 2 * xx + 1]
                )
    return gx


@njit(cache=True, parallel=True, fastmath=_REASSOC)
def match_argmax(x, qn, k):
    C, H, W = x.shape
    ho, wo = H - k + 1, W - k + 1
    N = qn.shape[0]
    L = C * k * k
    idx = np.empty((ho, wo), dtype=np.int64)
    best = np.empty((ho, wo), dtype=np.float64)
    for oy in prange(ho):
        p = np.empty(L, dtype=np.float64)
        for ox in range(wo):
            i = 0
            for c in range(C):
                for ky in range(k):
                    for kx in range(k):
                        p[i] = x[c, oy + ky, ox + kx]
                        i += 1
            bj = 0
            bs = -np.inf
            for j in range(N):
                q = qn[j]
                s = 0.0
                for t in range(L):
                    s += p[t] * q[t]
                if s > bs:
                    bs = s
                    bj = j
            idx[oy, ox] = bj
            best[oy, ox] = bs
    return idx, best


@njit(cache=True)
def accumulate_patches(idx, score, patches, C, k):
    ho, wo = idx.shape
    H, W = ho + k - 1, wo + k - 1
    T = np.zeros((C, H, W), dtype=np.float64)
    ws = np.zeros((H, W), dtype=np.float64)
    cnt = np.zeros((H, W), dtype=np.float64)
    for y in range(ho):
        for x in range(wo):
            j = idx[y, x]
            base = 0
            for c in range(C):
                for ky in range(k):
                    for kx in range(k):
                        T[c, y + ky, x + kx] += patches[j, base]
                        base += 1
            for ky in range(k):
                for kx in range(k):
                    ws[y + ky, x + kx] += score[y, x]
                    cnt[y + ky, x + kx] += 1.0
    for c in range(C):
        for y in range(H):
            for x in range(W):
                T[c, y, x] /= cnt[y, x]
    return T, ws / cnt
