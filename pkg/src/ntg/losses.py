"""Objective terms: Gram texture loss, adversarial pair, cycle consistency,
and the combined objective.

Conventions pinned here: the Frobenius distance between weighted Grams is
squared; per-level normalizers are 1/(4 C^2 (H W)^2); logs are natural and
guarded (see autograd.LOG_GUARD); cycle terms use mean reduction so the
cycle weight is image-size independent. The generator optimizes the
non-saturating -log D(fake) surrogate while the reported adversarial value
is the literal log D(real) + log(1 - D(fake)).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import LOG_GUARD
from .errors import ShapeError


@dataclass
class LossWeights:
    lambda_cyc: float = 10.0
    lambda_tex: float = 1e-4


def level_norm(shape):
    """Texture normalizer for one feature level of shape (C, H, W)."""
    C, H, W = shape
    return 1.0 / (4.0 * C * C * (H * W) ** 2)


def gram(features):
    """Gr(F)[a,b] = sum_xy F_a(x,y) F_b(x,y); symmetric PSD."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 3:
        raise ShapeError(f"features must be (C,H,W), got {f.shape}")
    F = f.reshape(f.shape[0], -1)
    return F @ F.T


def texture_loss_vars(tape, out_levels, swaps, weights):
    """Taped texture loss over the levels present in `swaps`.

    out_levels: per-level feature Vars of the generated image, finest first.
    Each term is lambda_l * ||Gr(phi_l(out) . S*_l) - Gr(T_l . S*_l)||_F^2,
    with the 1-channel weight map broadcast across channels.
    """
    total = None
    for s in swaps:
        if not 1 <= s.level <= len(out_levels):
            raise ShapeError(f"swap level {s.level} outside pyramid 1..{len(out_levels)}")
        out = out_levels[s.level - 1]
        if out.value.shape != s.swapped.shape:
            raise ShapeError(
                f"level {s.level}: output features {out.value.shape} vs "
                f"swapped {s.swapped.shape}"
            )
        lam = level_norm(s.swapped.shape)
        target = gram(s.swapped * s.weight_map)
        weighted = ag.mul_const(out, s.weight_map)
        diff = ag.sub(ag.gram(weighted), tape.const(target))
        term = ag.sumsq(diff) * lam
        total = term if total is None else total + term
    if total is None:
        total = tape.const(np.zeros(()))
    return total


def texture_loss(output_pyramid, swaps, weights=None):
    """Plain-value texture loss for a fixed pyramid (no gradients kept)."""
    tape = ag.Tape()
    levels = [tape.const(g) for g in output_pyramid]
    return float(texture_loss_vars(tape, levels, swaps, weights).value)


def adversarial_loss(d_real, d_fake):
    """log D(real) + log(1 - D(fake)), natural log, guarded."""
    return math.log(max(float(d_real), LOG_GUARD)) + math.log(
        max(1.0 - float(d_fake), LOG_GUARD)
    )


def adversarial_loss_vars(d_real, d_fake):
    return ag.add(ag.log_guarded(d_real), ag.log_guarded(ag.rsub_const(1.0, d_fake)))


def generator_adv_vars(d_fake):
    """Non-saturating generator surrogate: -log D(fake)."""
    return -ag.log_guarded(d_fake)


def cycle_loss(x, fgx, y, gfy):
    """mean |F(G(x)) - x| + mean |G(F(y)) - y|."""
    x, fgx = np.asarray(x, float), np.asarray(fgx, float)
    y, gfy = np.asarray(y, float), np.asarray(gfy, float)
    if x.shape != fgx.shape:
        raise ShapeError(f"x {x.shape} vs F(G(x)) {fgx.shape}")
    if y.shape != gfy.shape:
        raise ShapeError(f"y {y.shape} vs G(F(y)) {gfy.shape}")
    return float(np.abs(fgx - x).mean() + np.abs(gfy - y).mean())


def cycle_loss_vars(x, fgx, y, gfy):
    return ag.add(
        ag.amean(ag.absval(ag.sub(fgx, x))), ag.amean(ag.absval(ag.sub(gfy, y)))
    )


def total_objective(adv_g, adv_f, cyc, tex_g, tex_f, weights):
    """Combined objective value: adversarial terms plus weighted cycle and
    texture terms."""
    return (
        float(adv_g)
        + float(adv_f)
        + weights.lambda_cyc * float(cyc)
        + weights.lambda_tex * (float(tex_g) + float(tex_f))
    )
