"""Recursive multi-scale fusion generator.

An encoder of stride-2 convolutions produces the base code at 1/2^(L-1)
resolution; each fusion stage concatenates the matching-resolution swapped
texture map, applies a two-conv residual block with additive skip, then
upsamples 2x (nearest neighbor followed by a 3x3 convolution that steps the
width down to the next pyramid level's). A 3x3 head maps to image channels;
super-resolution mode inserts one extra upsample before the head. Output
values stay raw; clamping happens at export.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import ShapeError
from .formats import SeededWeightStream


@dataclass
class GeneratorNet:
    in_channels: int
    out_channels: int
    plan: tuple  # channel widths, finest level first (mirrors the pyramid)
    scale_factor: int  # 1 = same-size translation, 2 = super-resolution
    params: dict = field(repr=False)

    @property
    def levels(self):
        return len(self.plan)

    def param_count(self):
        return sum(p.size for p in self.params.values())


def build_generator(seed, plan=(16, 32, 64), in_channels=1, out_channels=1, scale_factor=1):
    plan = tuple(int(c) for c in plan)
    if len(plan) < 2:
        raise ValueError("generator needs at least two pyramid levels")
    if scale_factor not in (1, 2):
        raise ValueError(f"scale_factor must be 1 or 2, got {scale_factor}")
    L = len(plan)
    stream = SeededWeightStream(seed)
    params = {}

    def conv(name, cout, cin, k):
        params[f"{name}.w"] = stream.he_kernel(cout, cin, k, k)
        params[f"{name}.b"] = np.zeros(cout)

    prev = in_channels
    for i in range(1, L):
        conv(f"enc{i}", plan[i], prev, 3)
        prev = plan[i]
    for m in range(1, L):
        c = plan[L - m]  # width at this stage's resolution
        conv(f"s{m}.ra", c, 2 * c, 3)
        conv(f"s{m}.rb", c, c, 3)
        conv(f"s{m}.up", plan[L - m - 1], c, 3)
    if scale_factor == 2:
        conv("sr", plan[0], plan[0], 3)
    conv("head", out_channels, plan[0], 3)
    return GeneratorNet(in_channels, out_channels, plan, scale_factor, params)


def forward_vars(tape, net, image, textures=None, param_vars=None, collect=None):
    """Taped generator forward.

    textures maps pyramid level (1 = finest) to a texture grid Var or plain
    array at that level's geometry; missing levels contribute zero maps.
    `collect`, when a list, receives the per-stage codes (base code first).
    """
    if param_vars is None:
        param_vars = {k: tape.const(v, k) for k, v in net.params.items()}
    if textures is None:
        textures = {}

    def conv(name, x, stride=1):
        return ag.conv2d(x, param_vars[f"{name}.w"], param_vars[f"{name}.b"], stride, 1)

    if image.value.shape[0] != net.in_channels:
        raise ShapeError(
            f"generator expects {net.in_channels} input channels, "
            f"got {image.value.shape}"
        )
    L = net.levels
    cur = image
    for i in range(1, L):
        cur = ag.relu(conv(f"enc{i}", cur, stride=2))
    if collect is not None:
        collect.append(cur)

    for m in range(1, L):
        level = L - m + 1  # pyramid level consumed by this stage
        c, h, w = cur.value.shape
        tex = textures.get(level)
        if tex is None:
            tex = tape.const(np.zeros((c, h, w)), f"T{level}")
        elif not isinstance(tex, ag.Var):
            tex = tape.const(tex, f"T{level}")
        if tex.value.shape != (c, h, w):
            raise ShapeError(
                f"texture map for level {level} has shape {tex.value.shape}, "
                f"stage expects {(c, h, w)}"
            )
        res = conv(f"s{m}.rb", ag.relu(conv(f"s{m}.ra", ag.concat(cur, tex))))
        cur = ag.relu(conv(f"s{m}.up", ag.upsample_nearest2(ag.add(res, cur))))
        if collect is not None:
            collect.append(cur)

    if net.scale_factor == 2:
        cur = ag.relu(conv("sr", ag.upsample_nearest2(cur)))
    return conv("head", cur)


def _texture_dict(swaps):
    if swaps is None:
        return {}
    if isinstance(swaps, dict):
        return dict(swaps)
    return {s.level: s.swapped for s in swaps}


def generate(net, image, swaps):
    """Run the generator on a plain image grid with per-level swap results."""
    tape = ag.Tape()
    out = forward_vars(
        tape, net, tape.const(image, "image"), textures=_texture_dict(swaps)
    )
    return out.value


def generate_without_texture(net, image):
    """Ablation arm: identical recursion with all texture maps zero."""
    return generate(net, image, None)


def to_arrays(net, prefix):
    out = {f"{prefix}.{k}": v for k, v in net.params.items()}
    out[f"meta.{prefix}"] = np.array(
        [net.in_channels, net.out_channels, net.scale_factor, *net.plan],
        dtype=np.float64,
    )
    return out


def from_arrays(arrays, prefix):
    meta_key = f"meta.{prefix}"
    if meta_key not in arrays:
        raise ShapeError(f"weight map has no {meta_key} section")
    meta = arrays[meta_key].astype(int).tolist()
    in_ch, out_ch, scale, plan = meta[0], meta[1], meta[2], tuple(meta[3:])
    ref = build_generator(0, plan, in_ch, out_ch, scale)
    params = {}
    for name, proto in ref.params.items():
        key = f"{prefix}.{name}"
        if key not in arrays:
            raise ShapeError(f"weight map is missing section {key}")
        arr = arrays[key]
        if arr.shape != proto.shape:
            raise ShapeError(
                f"section {key} has shape {arr.shape}, expected {proto.shape}"
            )
        params[name] = arr
    return GeneratorNet(in_ch, out_ch, plan, scale, params)
