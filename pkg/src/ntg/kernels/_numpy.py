"""Pure-numpy fallback kernels (im2col + BLAS matmul).

Semantically equivalent to the numba backend; summation order differs, so
cross-backend agreement is to float tolerance, not bitwise.
"""

import numpy as np


def _pad(x, pad):
    if pad == 0:
        return x
    C, H, W = x.shape
    xp = np.zeros((C, H + 2 * pad, W + 2 * pad), dtype=x.dtype)
    xp[:, pad:-pad, pad:-pad] = x
    return xp


def _im2col(xp, kh, kw, stride, ho, wo):
    C = xp.shape[0]
    cols = np.empty((C * kh * kw, ho * wo), dtype=xp.dtype)
    i = 0
    for c in range(C):
        for ky in range(kh):
            for kx in range(kw):
                cols[i] = xp[
                    c,
                    ky : ky + (ho - 1) * stride + 1 : stride,
                    kx : kx + (wo - 1) * stride + 1 : stride,
                ].ravel()
                i += 1
    return cols


def conv2d_forward(x, w, b, stride, pad):
    O, C, kh, kw = w.shape
    xp = _pad(x, pad)
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    out = (w.reshape(O, -1) @ cols).reshape(O, ho, wo)
    return out + b[:, None, None]


def conv2d_backward_input(go, w, stride, pad, H, W):
    O, C, kh, kw = w.shape
    ho, wo = go.shape[1], go.shape[2]
    gcols = w.reshape(O, -1).T @ go.reshape(O, -1)  # (C*kh*kw, ho*wo)
    gxp = np.zeros((C, H + 2 * pad, W + 2 * pad), dtype=go.dtype)
    i = 0
    for c in range(C):
        for ky in range(kh):
            for kx in range(kw):
                gxp[
                    c,
                    ky : ky + (ho - 1) * stride + 1 : stride,
                    kx : kx + (wo - 1) * stride + 1 : stride,
                ] += gcols[i].reshape(ho, wo)
                i += 1
    if pad:
        return gxp[:, pad:-pad, pad:-pad].copy()
    return gxp


def conv2d_backward_kernel(go, x, stride, pad, kh, kw):
    O, ho, wo = go.shape
    xp = _pad(x, pad)
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    return (go.reshape(O, -1) @ cols.T).reshape(O, x.shape[0], kh, kw)


def avgpool2_forward(x):
    C, H, W = x.shape
    ho, wo = (H + 1) // 2, (W + 1) // 2
    xp = np.zeros((C, 2 * ho, 2 * wo), dtype=x.dtype)
    xp[:, :H, :W] = x
    ones = np.zeros((2 * ho, 2 * wo), dtype=x.dtype)
    ones[:H, :W] = 1.0
    s = xp[:, 0::2, 0::2] + xp[:, 0::2, 1::2] + xp[:, 1::2, 0::2] + xp[:, 1::2, 1::2]
    n = ones[0::2, 0::2] + ones[0::2, 1::2] + ones[1::2, 0::2] + ones[1::2, 1::2]
    return s / n


def avgpool2_backward(go, H, W):
    C = go.shape[0]
    ho, wo = go.shape[1], go.shape[2]
    ones = np.zeros((2 * ho, 2 * wo), dtype=go.dtype)
    ones[:H, :W] = 1.0
    n = ones[0::2, 0::2] + ones[0::2, 1::2] + ones[1::2, 0::2] + ones[1::2, 1::2]
    g = go / n
    gx = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2)
    return gx[:, :H, :W].copy()


def upsample2_forward(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def upsample2_backward(go):
    C, H2, W2 = go.shape
    return go.reshape(C, H2 // 2, 2, W2 // 2, 2).sum(axis=(2, 4))


def match_argmax(x, qn, k):
    """Best-scoring reference patch per location.

    qn holds flattened reference patches (already normalized), one row each.
    Returns (index map, best score map); np.argmax breaks ties by lowest index.
    """
    C, H, W = x.shape
    ho, wo = H - k + 1, W - k + 1
    cols = _im2col(x, k, k, 1, ho, wo)  # (C*k*k, ho*wo)
    scores = qn @ cols  # (N, ho*wo)
    idx = np.argmax(scores, axis=0)
    best = scores[idx, np.arange(scores.shape[1])]
    return idx.reshape(ho, wo).astype(np.int64), best.reshape(ho, wo)


def accumulate_patches(idx, score, patches, C, k):
    """Fold chosen patches back to a (C,H,W) map, averaging overlaps.

    Also averages the per-location scores over each pixel's covering patches.
    """
    ho, wo = idx.shape
    H, W = ho + k - 1, wo + k - 1
    P = patches.reshape(-1, C, k, k)
    T = np.zeros((C, H, W), dtype=patches.dtype)
    ws = np.zeros((H, W), dtype=patches.dtype)
    cnt = np.zeros((H, W), dtype=patches.dtype)
    for y in range(ho):
        for x in range(wo):
            T[:, y : y + k, x : x + k] += P[idx[y, x]]
            ws[y : y + k, x : x + k] += score[y, x]
            cnt[y : y + k, x : x + k] += 1.0
    return T / cnt, ws / cnt
