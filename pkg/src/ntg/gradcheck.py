"""Finite-difference verification of every objective term on a seeded toy
instance.

Texture maps are frozen at the unperturbed input (patch selection is
piecewise constant, so this is the almost-everywhere exact derivative);
everything else, including the feature extractor applied to generated
images, is differentiated end to end.
"""

import os

import numpy as np

from . import autograd as ag
from . import featnet, generator, losses, trainer
from .errors import UsageError
from .formats import derive_seed

TERMS = ("tex", "adv_G", "adv_F", "cyc", "total")
TOLERANCE = 1e-4


def build_instance(size=8, seed=0):
    """Toy two-domain instance sized for exhaustive-ish finite differences."""
    if size > 16:
        raise UsageError(f"gradcheck size capped at 16, got {size}")
    if size < 8:
        raise UsageError("gradcheck needs size >= 8 (discriminator depth)")
    levels = 2 if size < 12 else 3
    plan = (6, 12) if levels == 2 else (6, 12, 24)
    cfg = trainer.TrainConfig(
        seed=seed,
        image_size=size,
        train_per_domain=4,
        val_pairs=1,
        levels=levels,
        channel_plan=plan,
        refs_per_image=2,
        mode="full",
    )
    corpus = trainer.make_toy_corpus(
        trainer.ToyDomainSpec(size, cfg.train_per_domain, cfg.val_pairs, seed)
    )
    state = trainer.TrainState(cfg, corpus)
    x_key, y_key = ("x", 0), ("y", 1)
    inst = {
        "config": cfg,
        "state": state,
        "x": corpus.train_x[x_key[1]],
        "y": corpus.train_y[y_key[1]],
        "swaps_g": state.swaps_for(x_key, "y"),
        "swaps_f": state.swaps_for(y_key, "x"),
        "swaps_cyc_f": state.swaps_for(x_key, "x"),
        "swaps_cyc_g": state.swaps_for(y_key, "y"),
        "weights": state.weights,
    }
    inst["params"] = _collect_params(state, inst)
    return inst


def _collect_params(state, inst):
    params = {}
    for prefix, net in (("gxy", state.g_xy), ("gyx", state.g_yx)):
        for k, v in net.params.items():
            params[f"{prefix}.{k}"] = v.copy()
    for prefix, net in (("dx", state.d_x), ("dy", state.d_y)):
        for k, v in net.params.items():
            params[f"{prefix}.{k}"] = v.copy()
    params["pixels.x"] = inst["x"].copy()
    params["pixels.y"] = inst["y"].copy()
    return params


def _terms(inst, params, tape):
    state = inst["state"]
    leaves = {k: tape.leaf(v, k) for k, v in params.items()}
    sub = lambda prefix, net: {k: leaves[f"{prefix}.{k}"] for k in net.params}
    pv_gxy, pv_gyx = sub("gxy", state.g_xy), sub("gyx", state.g_yx)
    pv_dx, pv_dy = sub("dx", state.d_x), sub("dy", state.d_y)
    x, y = leaves["pixels.x"], leaves["pixels.y"]

    tex_of = lambda swaps: {s.level: s.swapped for s in swaps}
    fake_y = generator.forward_vars(tape, state.g_xy, x, tex_of(inst["swaps_g"]), pv_gxy)
    fake_x = generator.forward_vars(tape, state.g_yx, y, tex_of(inst["swaps_f"]), pv_gyx)
    rec_x = generator.forward_vars(
        tape, state.g_yx, fake_y, tex_of(inst["swaps_cyc_f"]), pv_gyx
    )
    rec_y = generator.forward_vars(
        tape, state.g_xy, fake_x, tex_of(inst["swaps_cyc_g"]), pv_gxy
    )
    adv_g = losses.adversarial_loss_vars(
        trainer.disc_forward(tape, state.d_y, y, pv_dy),
        trainer.disc_forward(tape, state.d_y, fake_y, pv_dy),
    )
    adv_f = losses.adversarial_loss_vars(
        trainer.disc_forward(tape, state.d_x, x, pv_dx),
        trainer.disc_forward(tape, state.d_x, fake_x, pv_dx),
    )
    cyc = losses.cycle_loss_vars(x, rec_x, y, rec_y)
    tex = ag.add(
        losses.texture_loss_vars(
            tape, featnet.forward_vars(tape, state.feat, fake_y), inst["swaps_g"], inst["weights"]
        ),
        losses.texture_loss_vars(
            tape, featnet.forward_vars(tape, state.feat, fake_x), inst["swaps_f"], inst["weights"]
        ),
    )
    w = inst["weights"]
    total = adv_g + adv_f + w.lambda_cyc * cyc + w.lambda_tex * tex
    return {"tex": tex, "adv_G": adv_g, "adv_F": adv_f, "cyc": cyc, "total": total}, leaves


def term_function(inst, term):
    def f(params, need_grad):
        tape = ag.Tape()
        terms, leaves = _terms(inst, params, tape)
        loss = terms[term]
        grads = None
        if need_grad:
            raw = tape.backward(loss)
            grads = {
                name: raw.get(var, np.zeros_like(var.value))
                for name, var in leaves.items()
            }
        return float(loss.value), grads

    return f


def run_gradcheck(size=8, seed=0, h=1e-5, sample=240):
    """Check every term; returns [(term, max_rel_err, per_param)] in order.

    NTG_GRADCHECK_CORRUPT=<term|all> skews that term's analytic gradient
    (negative-control hook for the test suite)."""
    inst = build_instance(size, seed)
    corrupt = os.environ.get("NTG_GRADCHECK_CORRUPT", "")
    results = []
    for term in TERMS:
        f = term_function(inst, term)
        if corrupt in (term, "all"):
            base = f

            def f(params, need_grad, _base=base):  # noqa: E731
                value, grads = _base(params, need_grad)
                if grads is not None:
                    first = next(iter(grads))
                    grads[first] = grads[first] + 0.05
                return value, grads

        err, per_param = ag.finite_diff_check(
            f, inst["params"], h=h, sample=sample, seed=derive_seed(seed, term) % (2**32)
        )
        results.append((term, err, per_param))
    return results
