"""Image quality metrics (SSIM, MSE, PSNR, histogram correlation) and the
boxplot-style per-corpus summary.

Metrics operate on 8-bit-scaled single-channel images (values in [0, 255]);
evaluate_pair() converts the package's internal [0,1] grids.
"""

import math

import numpy as np

from . import kernels
from .errors import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2


def _plane(a, name):
    p = np.asarray(a, dtype=np.float64)
    if p.ndim == 3:
        if p.shape[0] != 1:
            raise ShapeError(f"{name} must be single channel, got {p.shape}")
        p = p[0]
    if p.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {p.shape}")
    return p


def _require_same(x, y):
    if x.shape != y.shape:
        raise ShapeError(f"image shapes differ: {x.shape} vs {y.shape}")


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _filter(img, win):
    k = win.shape[0]
    bank = np.ascontiguousarray(win[None, None, :, :])
    x = np.ascontiguousarray(img[None, :, :])
    return kernels.conv2d_forward(x, bank, np.zeros(1), 1, 0)[0]


def ssim(x, y):
    """Mean windowed SSIM (11x11 Gaussian, sigma 1.5) over valid positions."""
    xp, yp = _plane(x, "x"), _plane(y, "y")
    _require_same(xp, yp)
    if min(xp.shape) < SSIM_WINDOW:
        raise ShapeError(
            f"image {xp.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    win = _gaussian_window()
    mx = _filter(xp, win)
    my = _filter(yp, win)
    sxx = _filter(xp * xp, win) - mx * mx
    syy = _filter(yp * yp, win) - my * my
    sxy = _filter(xp * yp, win) - mx * my
    num = (2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return float((num / den).mean())


def mse(g, t):
    gp, tp = _plane(g, "g"), _plane(t, "t")
    _require_same(gp, tp)
    d = gp - tp
    return float((d * d).mean())


def psnr(g, t, max_f=255.0):
    e = mse(g, t)
    if e == 0.0:
        return math.inf
    return 20.0 * math.log10(max_f / math.sqrt(e))


def histogram_correlation(a, b, bins=256):
    """Pearson correlation between the two intensity histograms.

    Bin k covers [k, k+1) with the last bin closed. If either histogram has
    zero variance: 1.0 when the histograms are equal, else 0.0.
    """
    ap, bp = _plane(a, "a"), _plane(b, "b")
    ha = np.histogram(ap.ravel(), bins=bins, range=(0.0, float(bins)))[0].astype(float)
    hb = np.histogram(bp.ravel(), bins=bins, range=(0.0, float(bins)))[0].astype(float)
    da = ha - ha.mean()
    db = hb - hb.mean()
    va = float(da @ da)
    vb = float(db @ db)
    if va == 0.0 or vb == 0.0:
        return 1.0 if np.array_equal(ha, hb) else 0.0
    return float((da @ db) / math.sqrt(va * vb))


def evaluate_pair(pred01, target01):
    """Metric row for a predicted/target pair of internal [0,1] grids."""
    p = np.clip(_plane(pred01, "pred"), 0.0, 1.0) * 255.0
    t = np.clip(_plane(target01, "target"), 0.0, 1.0) * 255.0
    return {
        "ssim": ssim(p, t),
        "mse": mse(p, t),
        "psnr": psnr(p, t),
        "histcorr": histogram_correlation(p, t),
    }


def summarize(values):
    """Mean/median/quartiles and 1.5 IQR outliers for one metric column."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot summarize an empty metric column")
    q1 = float(np.percentile(v, 25))
    q3 = float(np.percentile(v, 75))
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    out = v[(v < lo) | (v > hi)]
    return {
        "mean": float(v.mean()),
        "median": float(np.median(v)),
        "q1": q1,
        "q3": q3,
        "outliers": out.tolist(),
    }


def fmt(x):
    """CSV number formatting: 9 significant digits, inf sentinel spelled out."""
    xf = float(x)
    if math.isinf(xf):
        return "inf" if xf > 0 else "-inf"
    return f"{xf:.9g}"


METRIC_COLUMNS = ("ssim", "mse", "psnr", "histcorr")


def report_lines(rows):
    """Rows (dicts with id + metric columns) to eval-CSV lines, LF separated:
    data first, then a commented summary block."""
    lines = ["id,ssim,mse,psnr,histcorr"]
    for r in rows:
        lines.append(
            ",".join([str(r["id"])] + [fmt(r[c]) for c in METRIC_COLUMNS])
        )
    lines.append("# summary")
    lines.append("# metric,mean,median,q1,q3,n_outliers")
    for c in METRIC_COLUMNS:
        s = summarize([r[c] for r in rows])
        lines.append(
            f"# {c},{fmt(s['mean'])},{fmt(s['median'])},{fmt(s['q1'])},"
            f"{fmt(s['q3'])},{len(s['outliers'])}"
        )
    return lines
