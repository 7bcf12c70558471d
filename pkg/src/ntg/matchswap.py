"""Patch matching and feature swapping.

Input feature patches are scored against every blurred-reference patch by
inner product with the normalized reference patch; the best raw-reference
patch is folded back at each location, averaging overlaps. The score map
realization (correlation with the normalized patch as a kernel) matches the
direct per-pair inner products to float precision.
"""

from dataclasses import dataclass

import numpy as np

from . import grid, kernels
from .errors import ShapeError

NORM_EPS = 1e-12
PATCH_SIZE = 3  # default patch geometry: 3x3, stride 1, every level


@dataclass
class PatchSet:
    """Flattened k x k patches of one feature map (valid positions only)."""

    patch_size: int
    stride: int
    coords: np.ndarray  # (N, 2) top-left (y, x)
    patches: np.ndarray  # (N, C*k*k), channel-major then row-major
    channels: int


@dataclass
class SwapResult:
    level: int
    swapped: np.ndarray  # (C, H, W) texture map T
    weight_map: np.ndarray  # (1, H, W) best cosine scores, overlap-averaged
    index_map: np.ndarray  # (H-k+1, W-k+1) chosen reference patch index


def extract_patches(features, patch_size, stride=1):
    f = grid.as_grid(features, "features")
    k, s = int(patch_size), int(stride)
    C, H, W = f.shape
    if k > H or k > W:
        raise ShapeError(f"patch size {k} exceeds feature map {f.shape}")
    if s < 1:
        raise ValueError("stride must be >= 1")
    ys = range(0, H - k + 1, s)
    xs = range(0, W - k + 1, s)
    coords = np.array([(y, x) for y in ys for x in xs], dtype=np.int64)
    patches = np.empty((len(coords), C * k * k))
    for i, (y, x) in enumerate(coords):
        patches[i] = f[:, y : y + k, x : x + k].ravel()
    return PatchSet(k, s, coords, patches, C)


def _normalized(patches):
    norms = np.sqrt(np.einsum("ij,ij->i", patches, patches))
    return patches / (norms + NORM_EPS)[:, None], norms


def similarity_maps(input_features, ref_patches):
    """Score maps S_j for every reference patch, stacked (N, H', W').

    Realized as a correlation of the feature map with each normalized
    reference patch used as a convolution kernel.
    """
    f = grid.as_grid(input_features, "input features")
    if ref_patches.patches.shape[0] == 0:
        raise ShapeError("empty reference patch set")
    if ref_patches.channels != f.shape[0]:
        raise ShapeError(
            f"reference patches have {ref_patches.channels} channels, "
            f"input features {f.shape[0]}"
        )
    k = ref_patches.patch_size
    qn, _ = _normalized(ref_patches.patches)
    bank = qn.reshape(-1, f.shape[0], k, k)
    return grid.conv2d(f, bank, stride=1, padding=0)


def swap_features(input_features, ref_raw_features, ref_blur_features, patch_size=PATCH_SIZE, level=1):
    """Single-reference feature swap; see swap_features_pooled for the
    multi-reference variant."""
    return swap_features_pooled(
        input_features, [(ref_raw_features, ref_blur_features)], patch_size, level
    )


def swap_features_pooled(input_features, ref_pairs, patch_size=PATCH_SIZE, level=1):
    """Swap best-matching reference patches into the input feature geometry.

    ref_pairs is a list of (raw, blurred) reference feature maps; patch sets
    are pooled across references (indices concatenated in list order), so
    the argmax runs over every candidate. Matching uses blurred features,
    the fold uses raw features. Ties break toward the lowest patch index.
    """
    f = grid.as_grid(input_features, "input features")
    if not ref_pairs:
        raise ShapeError("need at least one (raw, blur) reference pair")
    k = int(patch_size)
    raw_sets = []
    blur_sets = []
    for raw, blur in ref_pairs:
        raw = grid.as_grid(raw, "ref raw features")
        blur = grid.as_grid(blur, "ref blur features")
        if raw.shape != blur.shape:
            raise ShapeError(
                f"raw {raw.shape} and blurred {blur.shape} reference features differ"
            )
        if raw.shape[0] != f.shape[0]:
            raise ShapeError(
                f"reference channels {raw.shape[0]} != input channels {f.shape[0]}"
            )
        raw_sets.append(extract_patches(raw, k).patches)
        blur_sets.append(extract_patches(blur, k).patches)
    raw_patches = np.vstack(raw_sets)
    blur_patches = np.vstack(blur_sets)

    qn, _ = _normalized(blur_patches)
    idx, best = kernels.match_argmax(f, np.ascontiguousarray(qn), k)

    # Cosine weight: divide the best raw score by the input patch norm.
    C = f.shape[0]
    ones = np.ones((1, C, k, k))
    sq = kernels.conv2d_forward(
        np.ascontiguousarray(f * f), ones, np.zeros(1), 1, 0
    )[0]
    pnorm = np.sqrt(np.maximum(sq, 0.0))
    cos = np.clip(best / (pnorm + NORM_EPS), -1.0, 1.0)

    swapped, weight = kernels.accumulate_patches(
        idx, cos, np.ascontiguousarray(raw_patches), C, k
    )
    return SwapResult(level, swapped, weight[None, :, :], idx)
