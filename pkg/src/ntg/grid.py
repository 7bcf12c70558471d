"""Dense multi-channel 2-D arrays and the numeric primitives built on them.

A grid is a C-contiguous float64 ndarray of shape (channels, height, width).
Operations are pure: inputs are never mutated.
"""

import math

import numpy as np

from . import kernels
from .errors import NumericError, ShapeError

CUBIC_A = -0.5  # Catmull-Rom


def as_grid(a, name="grid"):
    """Coerce to a (C,H,W) float64 array, validating shape and finiteness."""
    g = np.ascontiguousarray(a, dtype=np.float64)
    if g.ndim == 2:
        g = g[None, :, :]
    if g.ndim != 3 or g.shape[0] < 1 or g.shape[1] < 1 or g.shape[2] < 1:
        raise ShapeError(f"{name} must be (channels, height, width), got {g.shape}")
    if not np.isfinite(g).all():
        raise NumericError(f"{name} contains non-finite values")
    return g


def conv2d(inp, kernels_bank, bias=None, stride=1, padding=0):
    """Cross-correlation of a (C,H,W) grid with an (O,C,kh,kw) kernel bank."""
    x = as_grid(inp, "input")
    w = np.ascontiguousarray(kernels_bank, dtype=np.float64)
    if w.ndim != 4:
        raise ShapeError(f"kernel bank must be 4-D (out,in,kh,kw), got {w.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"bad stride/padding: {stride}/{padding}")
    O, cin, kh, kw = w.shape
    if cin != x.shape[0]:
        raise ShapeError(
            f"kernel in-channels {w.shape} do not match input {x.shape}"
        )
    ho = (x.shape[1] + 2 * padding - kh) // stride + 1
    wo = (x.shape[2] + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"kernel {w.shape} does not fit input {x.shape} "
            f"(stride={stride}, padding={padding})"
        )
    b = np.zeros(O) if bias is None else np.ascontiguousarray(bias, dtype=np.float64)
    if b.shape != (O,):
        raise ShapeError(f"bias shape {b.shape} does not match {O} out-channels")
    return kernels.conv2d_forward(x, w, b, stride, padding)


def concat_channels(a, b):
    ga, gb = as_grid(a, "a"), as_grid(b, "b")
    if ga.shape[1:] != gb.shape[1:]:
        raise ShapeError(f"spatial dims differ: {ga.shape} vs {gb.shape}")
    return np.concatenate([ga, gb], axis=0)


def cubic_kernel(d):
    """Cubic convolution weight at offset d (a = -0.5)."""
    d = abs(d)
    if d <= 1.0:
        return (CUBIC_A + 2.0) * d**3 - (CUBIC_A + 3.0) * d**2 + 1.0
    if d < 2.0:
        return CUBIC_A * (d**3 - 5.0 * d**2 + 8.0 * d - 4.0)
    return 0.0


def resample_matrix(n_in, scale):
    """Row-stochastic (n_out, n_in) bicubic resampling matrix, edge-clamped.

    Half-pixel center mapping: src = (dst + 0.5)/scale - 0.5. Out-of-range
    taps are clamped to the border sample, keeping row sums at exactly the
    kernel's unit partition.
    """
    n_out = int(math.floor(n_in * scale + 0.5))
    if n_out < 1:
        raise ValueError(f"scale {scale} collapses axis of size {n_in}")
    M = np.zeros((n_out, n_in))
    for o in range(n_out):
        src = (o + 0.5) / scale - 0.5
        base = math.floor(src)
        for t in range(-1, 3):
            j = min(max(base + t, 0), n_in - 1)
            M[o, j] += cubic_kernel(src - (base + t))
    return M


def bicubic_resample(inp, scale):
    """Per-channel bicubic rescale by a positive factor; scale 1 copies."""
    x = as_grid(inp, "input")
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    mh = resample_matrix(x.shape[1], scale)
    mw = resample_matrix(x.shape[2], scale)
    return np.ascontiguousarray(mh @ x @ mw.T)


def blur_downup(inp, factor=2.0):
    """Down-then-up resample by the same factor (the matching-side blur)."""
    x = as_grid(inp, "input")
    down = bicubic_resample(x, 1.0 / factor)
    up = resample_matrix(down.shape[1], x.shape[1] / down.shape[1]) @ down @ (
        resample_matrix(down.shape[2], x.shape[2] / down.shape[2]).T
    )
    if up.shape != x.shape:  # guard: ratios above always restore the dims
        raise ShapeError(f"blur round trip changed shape: {x.shape} -> {up.shape}")
    return np.ascontiguousarray(up)
