"""Fixed convolutional feature pyramid (the texture-space extractor).

Each level applies a 3x3 convolution (stride 1, pad 1) and ReLU; levels
after the first then halve resolution with a 2x2 average pool. Default
plan is 16/32/64 channels over three levels. Weights come from the seeded
stream in `formats`, so a seed pins the extractor bit-exactly; converted
external weights can be loaded from an NTX1 file instead.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import ShapeError
from .formats import SeededWeightStream

DEFAULT_PLAN = (16, 32, 64)


@dataclass
class FeatureExtractor:
    in_channels: int
    plan: tuple
    params: dict = field(repr=False)  # l{i}.w / l{i}.b, 1-based

    @property
    def levels(self):
        return len(self.plan)

    def param_count(self):
        return sum(p.size for p in self.params.values())


@dataclass
class FeaturePyramid:
    """Per-level feature grids, finest (level 1) first."""

    levels: list

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]

    def geometry(self):
        """(channels, height, width, downsample factor) per level."""
        return [
            (g.shape[0], g.shape[1], g.shape[2], 2**i)
            for i, g in enumerate(self.levels)
        ]


def build_extractor(seed, levels=3, channel_plan=DEFAULT_PLAN, in_channels=1):
    if levels < 1:
        raise ValueError("need at least one level")
    plan = tuple(int(c) for c in channel_plan)
    if len(plan) != levels or any(c < 1 for c in plan):
        raise ValueError(f"channel plan {plan} does not fit {levels} levels")
    stream = SeededWeightStream(seed)
    params = {}
    prev = in_channels
    for i, c in enumerate(plan, start=1):
        params[f"l{i}.w"] = stream.he_kernel(c, prev, 3, 3)
        params[f"l{i}.b"] = np.zeros(c)
        prev = c
    return FeatureExtractor(in_channels=in_channels, plan=plan, params=params)


def forward_vars(tape, net, image, param_vars=None):
    """Taped pyramid forward; returns a list of level Vars, finest first.

    param_vars maps the extractor's parameter names to existing leaves; by
    default the (fixed) parameters are recorded as constants.
    """
    if image.value.shape[0] != net.in_channels:
        raise ShapeError(
            f"extractor expects {net.in_channels} input channels, "
            f"got image {image.value.shape}"
        )
    if param_vars is None:
        param_vars = {k: tape.const(v, k) for k, v in net.params.items()}
    levels = []
    cur = image
    for i in range(1, net.levels + 1):
        cur = ag.relu(
            ag.conv2d(cur, param_vars[f"l{i}.w"], param_vars[f"l{i}.b"], 1, 1)
        )
        if i > 1:
            cur = ag.avg_pool2(cur)
        levels.append(cur)
    return levels


def extract_pyramid(net, image):
    """Pyramid of plain grids for a fixed extractor."""
    tape = ag.Tape()
    vars_ = forward_vars(tape, net, tape.const(image, "image"))
    return FeaturePyramid([v.value for v in vars_])


def to_arrays(net, prefix="feat"):
    out = {f"{prefix}.{k}": v for k, v in net.params.items()}
    out[f"meta.{prefix}"] = np.array(
        [net.in_channels, net.levels, *net.plan], dtype=np.float64
    )
    return out


def from_arrays(arrays, prefix="feat"):
    meta_key = f"meta.{prefix}"
    if meta_key not in arrays:
        raise ShapeError(f"weight map has no {meta_key} section")
    meta = arrays[meta_key].astype(int).tolist()
    in_channels, levels, plan = meta[0], meta[1], tuple(meta[2:])
    params = {}
    prev = in_channels
    for i, c in enumerate(plan, start=1):
        w = arrays[f"{prefix}.l{i}.w"]
        b = arrays[f"{prefix}.l{i}.b"]
        if w.shape != (c, prev, 3, 3) or b.shape != (c,):
            raise ShapeError(
                f"extractor layer {i} shapes {w.shape}/{b.shape} do not match "
                f"plan {plan}"
            )
        params[f"l{i}.w"] = w
        params[f"l{i}.b"] = b
        prev = c
    return FeatureExtractor(in_channels=in_channels, plan=plan, params=params)
