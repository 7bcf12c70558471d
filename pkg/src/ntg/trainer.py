"""Cycle-consistent adversarial training at desk scale.

Two generators (G: X->Y, F: Y->X) and two patch-style discriminators train
on an unpaired synthetic two-texture corpus with ADAM (beta1 0.5), batch 1,
an initial learning rate of 2e-4 halved every 50 epochs, and a cycle weight
of 10. Texture matching is parameter-free (fixed extractor, fixed images),
so swap results are cached per (input, reference set, level set).

Reference selection: every image gets a fixed seeded sample of 4 references
from the opposite domain's training pool. Cycle reconstructions reuse the
swaps of their target image (the matching input for F(G(x)) is x itself,
which keeps every matching cacheable and is exact for the argmax-frozen
gradient a.e.).
"""

import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import featnet, generator, grid, losses, matchswap, metrics
from .errors import NumericError, ShapeError, UsageError
from .formats import SeededWeightStream, derive_seed, write_ntx1
from .optim import Adam

MODES = ("full", "single_scale_texture", "no_texture")

# 8-bit-exact intensity levels of the synthetic textures
BG_LEVEL = 26
LO_LEVEL = 64
HI_LEVEL = 217


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1
    lr0: float = 2e-4
    lr_halving_period: int = 50
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_cyc: float = 10.0
    lambda_tex: float = 1e-4
    seed: int = 0
    mode: str = "full"
    # toy-scale architecture/corpus knobs
    image_size: int = 32
    train_per_domain: int = 64
    val_pairs: int = 16
    levels: int = 3
    channel_plan: tuple = (8, 16, 32)
    refs_per_image: int = 4
    blur_factor: float = 2.0
    patch_size: int = 3
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise UsageError("epochs must be >= 0 and batch_size >= 1")
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got {self.mode!r}")
        if len(self.channel_plan) != self.levels:
            raise UsageError(
                f"channel plan {self.channel_plan} does not fit {self.levels} levels"
            )

    def learning_rate(self, epoch):
        return self.lr0 / 2 ** (epoch // self.lr_halving_period)


@dataclass
class ToyDomainSpec:
    image_size: int = 32
    train_per_domain: int = 64
    val_pairs: int = 16
    seed: int = 0


@dataclass
class Corpus:
    spec: ToyDomainSpec
    train_x: list
    train_y: list
    val_x: list
    val_y: list


def _geometry_mask(stream, size):
    mask = np.zeros((size, size), dtype=bool)
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(stream.integer(2, 4)):
        if stream.uniform01() < 0.5:
            w = stream.integer(size // 4, size // 2)
            h = stream.integer(size // 4, size // 2)
            x0 = stream.integer(0, size - w)
            y0 = stream.integer(0, size - h)
            mask[y0 : y0 + h, x0 : x0 + w] = True
        else:
            r = stream.integer(size // 8, size // 4)
            cx = stream.integer(r, size - 1 - r)
            cy = stream.integer(r, size - 1 - r)
            mask |= (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    return mask


def _fill(mask, domain, size):
    """Texture fill on an 8-bit-exact intensity grid (PGM round trips are
    lossless)."""
    yy, xx = np.mgrid[0:size, 0:size]
    if domain == "x":
        hi = (yy % 4) < 2  # horizontal stripes, period 4
    else:
        hi = ((yy // 2) + (xx // 2)) % 2 == 0  # checkerboard, period 4
    img = np.full((size, size), BG_LEVEL, dtype=np.float64)
    img[mask & hi] = HI_LEVEL
    img[mask & ~hi] = LO_LEVEL
    return (img / 255.0)[None, :, :]


def make_toy_corpus(spec):
    """Unpaired train pools (disjoint geometry) plus paired validation."""
    size = spec.image_size

    def geom(tag, i):
        return _geometry_mask(SeededWeightStream(derive_seed(spec.seed, f"{tag}:{i}")), size)

    train_x = [_fill(geom("trainx", i), "x", size) for i in range(spec.train_per_domain)]
    train_y = [_fill(geom("trainy", i), "y", size) for i in range(spec.train_per_domain)]
    val_masks = [geom("val", i) for i in range(spec.val_pairs)]
    val_x = [_fill(m, "x", size) for m in val_masks]
    val_y = [_fill(m, "y", size) for m in val_masks]
    return Corpus(spec, train_x, train_y, val_x, val_y)


# ---------------------------------------------------------------------------
# Discriminator (patch-style; widths 16/32/64, leaky ReLU 0.2)


@dataclass
class Discriminator:
    in_channels: int
    widths: tuple
    params: dict = field(repr=False)


def build_discriminator(seed, in_channels=1, widths=(16, 32, 64)):
    stream = SeededWeightStream(seed)
    params = {}
    prev = in_channels
    for i, c in enumerate(widths, start=1):
        params[f"c{i}.w"] = stream.he_kernel(c, prev, 3, 3)
        params[f"c{i}.b"] = np.zeros(c)
        prev = c
    params["out.w"] = stream.he_kernel(1, prev, 1, 1)
    params["out.b"] = np.zeros(1)
    return Discriminator(in_channels, tuple(widths), params)


def disc_forward(tape, disc, image, param_vars=None):
    """Probability the image is real: convs -> sigmoid -> spatial mean."""
    if param_vars is None:
        param_vars = {k: tape.const(v, k) for k, v in disc.params.items()}
    cur = image
    for i in range(1, len(disc.widths) + 1):
        cur = ag.leaky_relu(
            ag.conv2d(cur, param_vars[f"c{i}.w"], param_vars[f"c{i}.b"], 2, 1), 0.2
        )
    logits = ag.conv2d(cur, param_vars["out.w"], param_vars["out.b"], 1, 0)
    return ag.amean(ag.sigmoid(logits))


def disc_to_arrays(disc, prefix):
    out = {f"{prefix}.{k}": v for k, v in disc.params.items()}
    out[f"meta.{prefix}"] = np.array(
        [disc.in_channels, *disc.widths], dtype=np.float64
    )
    return out


# ---------------------------------------------------------------------------
# Training state


def levels_for_mode(mode, levels):
    if mode == "full":
        return tuple(range(1, levels + 1))
    if mode == "single_scale_texture":
        return (1,)
    return ()


class TrainState:
    def __init__(self, config, corpus):
        self.config = config
        self.corpus = corpus
        self.weights = losses.LossWeights(config.lambda_cyc, config.lambda_tex)
        seed = config.seed
        plan = tuple(config.channel_plan)
        self.feat = featnet.build_extractor(
            derive_seed(seed, "feat"), config.levels, plan, in_channels=1
        )
        self.g_xy = generator.build_generator(derive_seed(seed, "g_xy"), plan)
        self.g_yx = generator.build_generator(derive_seed(seed, "g_yx"), plan)
        self.d_x = build_discriminator(derive_seed(seed, "d_x"))
        self.d_y = build_discriminator(derive_seed(seed, "d_y"))

        gp = {f"gxy.{k}": v for k, v in self.g_xy.params.items()}
        gp.update({f"gyx.{k}": v for k, v in self.g_yx.params.items()})
        dp = {f"dx.{k}": v for k, v in self.d_x.params.items()}
        dp.update({f"dy.{k}": v for k, v in self.d_y.params.items()})
        self.opt_g = Adam(gp, config.lr0, config.adam_beta1, config.adam_beta2, config.adam_eps)
        self.opt_d = Adam(dp, config.lr0, config.adam_beta1, config.adam_beta2, config.adam_eps)

        # fixed reference assignments (opposite pool for forward swaps, own
        # pool minus self for cycle-target swaps)
        rs = SeededWeightStream(derive_seed(seed, "refs"))
        nx, ny, k = len(corpus.train_x), len(corpus.train_y), config.refs_per_image

        def sample(n, exclude=None):
            pool = [i for i in range(n) if i != exclude]
            perm = rs.shuffled(len(pool))
            return tuple(pool[p] for p in perm[: min(k, len(pool))])

        self.refs = {}
        for i in range(nx):
            self.refs[("x", i, "y")] = sample(ny)
            self.refs[("x", i, "x")] = sample(nx, exclude=i)
        for j in range(ny):
            self.refs[("y", j, "x")] = sample(nx)
            self.refs[("y", j, "y")] = sample(ny, exclude=j)
        for v in range(len(corpus.val_x)):
            self.refs[("vx", v, "y")] = sample(ny)

        self._pyr_cache = {}
        self._ref_cache = {}
        self._swap_cache = {}

    # -- cached, parameter-free matching ------------------------------------

    def _image(self, key):
        kind, idx = key
        pool = {
            "x": self.corpus.train_x,
            "y": self.corpus.train_y,
            "vx": self.corpus.val_x,
            "vy": self.corpus.val_y,
        }[kind]
        return pool[idx]

    def _pyramid(self, key):
        if key not in self._pyr_cache:
            self._pyr_cache[key] = featnet.extract_pyramid(self.feat, self._image(key))
        return self._pyr_cache[key]

    def _ref_features(self, key):
        """(raw pyramid, blurred pyramid) of a reference image."""
        if key not in self._ref_cache:
            img = self._image(key)
            blurred = grid.blur_downup(img, self.config.blur_factor)
            self._ref_cache[key] = (
                featnet.extract_pyramid(self.feat, img),
                featnet.extract_pyramid(self.feat, blurred),
            )
        return self._ref_cache[key]

    def swaps_for(self, key, ref_domain):
        """Per-level swap results matching image `key` against its fixed
        references from `ref_domain`, at the mode's levels."""
        lv = levels_for_mode(self.config.mode, self.config.levels)
        if not lv:
            return []
        ck = (key, ref_domain, lv)
        if ck not in self._swap_cache:
            ref_ids = self.refs[(key[0], key[1], ref_domain)]
            pyr = self._pyramid(key)
            ref_feats = [self._ref_features((ref_domain, r)) for r in ref_ids]
            out = []
            for level in lv:
                pairs = [
                    (raw[level - 1], blur[level - 1]) for raw, blur in ref_feats
                ]
                out.append(
                    matchswap.swap_features_pooled(
                        pyr[level - 1], pairs, self.config.patch_size, level
                    )
                )
            self._swap_cache[ck] = out
        return self._swap_cache[ck]


def _named_grads(leaves, grads):
    return {name: grads[v] for name, v in leaves.items() if v in grads}


def _check_finite(name, value):
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss term {name}: {value}")
    return float(value)


def train_step(state, x, y, x_key, y_key):
    """One discriminator ascent step and one generator descent step.

    Returns the loss report dict. x/y are one image from each domain; keys
    identify them in the corpus for the swap cache.
    """
    cfg = state.config
    if x.shape[1] != cfg.image_size or y.shape[1] != cfg.image_size:
        raise ShapeError(
            f"images {x.shape}/{y.shape} do not match configured size "
            f"{cfg.image_size}"
        )
    textured = cfg.mode != "no_texture"
    swaps_g = state.swaps_for(x_key, "y")
    swaps_f = state.swaps_for(y_key, "x")
    swaps_cyc_f = state.swaps_for(x_key, "x")
    swaps_cyc_g = state.swaps_for(y_key, "y")

    # generator tape: fakes first, so the discriminator step sees them
    tape = ag.Tape()
    gl = {}
    for k, v in state.g_xy.params.items():
        gl[f"gxy.{k}"] = tape.leaf(v, f"gxy.{k}")
    for k, v in state.g_yx.params.items():
        gl[f"gyx.{k}"] = tape.leaf(v, f"gyx.{k}")
    pv_gxy = {k: gl[f"gxy.{k}"] for k in state.g_xy.params}
    pv_gyx = {k: gl[f"gyx.{k}"] for k in state.g_yx.params}
    x_in = tape.leaf(x, "x", requires_grad=False)
    y_in = tape.leaf(y, "y", requires_grad=False)
    fake_y = generator.forward_vars(
        tape, state.g_xy, x_in, {s.level: s.swapped for s in swaps_g}, pv_gxy
    )
    fake_x = generator.forward_vars(
        tape, state.g_yx, y_in, {s.level: s.swapped for s in swaps_f}, pv_gyx
    )

    # discriminator ascent on its own tape (fakes detached)
    tape_d = ag.Tape()
    dl = {}
    for k, v in state.d_x.params.items():
        dl[f"dx.{k}"] = tape_d.leaf(v, f"dx.{k}")
    for k, v in state.d_y.params.items():
        dl[f"dy.{k}"] = tape_d.leaf(v, f"dy.{k}")
    pv_dx = {k: dl[f"dx.{k}"] for k in state.d_x.params}
    pv_dy = {k: dl[f"dy.{k}"] for k in state.d_y.params}
    d_real_y = disc_forward(tape_d, state.d_y, tape_d.const(y), pv_dy)
    d_fake_y = disc_forward(tape_d, state.d_y, tape_d.const(fake_y.value), pv_dy)
    d_real_x = disc_forward(tape_d, state.d_x, tape_d.const(x), pv_dx)
    d_fake_x = disc_forward(tape_d, state.d_x, tape_d.const(fake_x.value), pv_dx)
    adv_g_var = losses.adversarial_loss_vars(d_real_y, d_fake_y)
    adv_f_var = losses.adversarial_loss_vars(d_real_x, d_fake_x)
    adv_g = _check_finite("adv_G", adv_g_var.value)
    adv_f = _check_finite("adv_F", adv_f_var.value)
    d_grads = tape_d.backward(-(adv_g_var + adv_f_var))
    state.opt_d.step(_named_grads(dl, d_grads))

    # generator descent against the updated discriminators
    d_fake_y2 = disc_forward(tape, state.d_y, fake_y)
    d_fake_x2 = disc_forward(tape, state.d_x, fake_x)
    rec_x = generator.forward_vars(
        tape, state.g_yx, fake_y, {s.level: s.swapped for s in swaps_cyc_f}, pv_gyx
    )
    rec_y = generator.forward_vars(
        tape, state.g_xy, fake_x, {s.level: s.swapped for s in swaps_cyc_g}, pv_gxy
    )
    cyc_var = losses.cycle_loss_vars(x_in, rec_x, y_in, rec_y)
    cyc = _check_finite("cyc", cyc_var.value)
    g_obj = (
        losses.generator_adv_vars(d_fake_y2)
        + losses.generator_adv_vars(d_fake_x2)
        + cfg.lambda_cyc * cyc_var
    )
    if textured:
        pyr_fake_y = featnet.forward_vars(tape, state.feat, fake_y)
        pyr_fake_x = featnet.forward_vars(tape, state.feat, fake_x)
        tex_g_var = losses.texture_loss_vars(tape, pyr_fake_y, swaps_g, state.weights)
        tex_f_var = losses.texture_loss_vars(tape, pyr_fake_x, swaps_f, state.weights)
        tex_g = _check_finite("tex_G", tex_g_var.value)
        tex_f = _check_finite("tex_F", tex_f_var.value)
        g_obj = g_obj + cfg.lambda_tex * (tex_g_var + tex_f_var)
    else:
        tex_g = tex_f = 0.0
    g_grads = tape.backward(g_obj)
    state.opt_g.step(_named_grads(gl, g_grads))

    total = losses.total_objective(adv_g, adv_f, cyc, tex_g, tex_f, state.weights)
    return {
        "adv_G": adv_g,
        "adv_F": adv_f,
        "cyc": cyc,
        "tex_G": tex_g,
        "tex_F": tex_f,
        "total": _check_finite("total", total),
    }


def translate(state, key, image):
    """G(x) for a validation image, using its cached swaps."""
    swaps = state.swaps_for(key, "y")
    return generator.generate(state.g_xy, image, swaps)


def validate(state):
    rows = []
    for v in range(len(state.corpus.val_x)):
        out = translate(state, ("vx", v), state.corpus.val_x[v])
        rows.append(metrics.evaluate_pair(out, state.corpus.val_y[v]))
    return {
        "psnr": float(np.mean([r["psnr"] for r in rows])),
        "ssim": float(np.mean([r["ssim"] for r in rows])),
    }


def checkpoint_arrays(state):
    out = {}
    out.update(featnet.to_arrays(state.feat, "feat"))
    out.update(generator.to_arrays(state.g_xy, "gxy"))
    out.update(generator.to_arrays(state.g_yx, "gyx"))
    out.update(disc_to_arrays(state.d_x, "dx"))
    out.update(disc_to_arrays(state.d_y, "dy"))
    return out


CSV_HEADER = "epoch,lr,adv_G,adv_F,cyc,tex_G,tex_F,total,val_psnr,val_ssim"


def run_training(config, corpus, out_dir):
    """Full schedule; writes periodic checkpoints, final.ntx1, and the
    per-epoch metrics CSV. Returns the list of per-epoch row dicts."""
    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise UsageError(f"output directory {out_dir!r} is not writable")

    state = TrainState(config, corpus)
    write_ntx1(checkpoint_arrays(state), os.path.join(out_dir, "checkpoint_000.ntx1"))

    n = min(len(corpus.train_x), len(corpus.train_y))
    rows = []
    csv_path = os.path.join(out_dir, "metrics.csv")
    _write_csv(csv_path, rows)
    for epoch in range(config.epochs):
        lr = config.learning_rate(epoch)
        state.opt_g.lr = lr
        state.opt_d.lr = lr
        sx = SeededWeightStream(derive_seed(config.seed, f"shuffle_x:{epoch}"))
        sy = SeededWeightStream(derive_seed(config.seed, f"shuffle_y:{epoch}"))
        perm_x, perm_y = sx.shuffled(n), sy.shuffled(n)
        sums = dict.fromkeys(("adv_G", "adv_F", "cyc", "tex_G", "tex_F", "total"), 0.0)
        for i in range(n):
            ix, iy = perm_x[i], perm_y[i]
            report = train_step(
                state, corpus.train_x[ix], corpus.train_y[iy], ("x", ix), ("y", iy)
            )
            for k in sums:
                sums[k] += report[k]
        val = validate(state)
        row = {"epoch": epoch, "lr": lr}
        row.update({k: sums[k] / n for k in sums})
        row["val_psnr"] = val["psnr"]
        row["val_ssim"] = val["ssim"]
        rows.append(row)
        _write_csv(csv_path, rows)
        if (epoch + 1) % config.checkpoint_every == 0:
            write_ntx1(
                checkpoint_arrays(state),
                os.path.join(out_dir, f"checkpoint_{epoch + 1:03d}.ntx1"),
            )
    write_ntx1(checkpoint_arrays(state), os.path.join(out_dir, "final.ntx1"))
    return rows


def _write_csv(path, rows):
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            ",".join(
                [str(r["epoch"])]
                + [
                    metrics.fmt(r[k])
                    for k in (
                        "lr",
                        "adv_G",
                        "adv_F",
                        "cyc",
                        "tex_G",
                        "tex_F",
                        "total",
                        "val_psnr",
                        "val_ssim",
                    )
                ]
            )
        )
    blob = ("\n".join(lines) + "\n").encode("utf-8")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Config files: flat "key = value" text, utf-8, '#' comments


def parse_config_text(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise UsageError(f"config line {lineno}: empty key")
        out[key] = value
    return out


def config_from_mapping(mapping, base=None):
    cfg = base or TrainConfig()
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    updates = {}
    for key, value in mapping.items():
        if key not in fields:
            raise UsageError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        if isinstance(current, bool):
            updates[key] = value.lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            updates[key] = int(value)
        elif isinstance(current, float):
            updates[key] = float(value)
        elif isinstance(current, tuple):
            updates[key] = tuple(int(v) for v in value.replace(",", " ").split())
        else:
            updates[key] = value
    return dataclasses.replace(cfg, **updates)


def load_config(path, base=None):
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_mapping(parse_config_text(fh.read()), base)
