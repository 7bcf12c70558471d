import numpy as np
import pytest

from ntg import matchswap
from ntg.errors import ShapeError


def brute_force_scores(features, ref_patches_raw, k):
    """Direct per-pair inner products against normalized reference patches."""
    C, H, W = features.shape
    qn = ref_patches_raw / (
        np.linalg.norm(ref_patches_raw, axis=1, keepdims=True) + 1e-12
    )
    out = np.zeros((qn.shape[0], H - k + 1, W - k + 1))
    for j in range(qn.shape[0]):
        for y in range(H - k + 1):
            for x in range(W - k + 1):
                p = features[:, y : y + k, x : x + k].ravel()
                out[j, y, x] = float(p @ qn[j])
    return out


def exhaustive_argmax(features, ref_blur, k):
    """Independent O(N^2) search with the lowest-index tie rule."""
    refs = matchswap.extract_patches(ref_blur, k).patches
    qn = refs / (np.linalg.norm(refs, axis=1, keepdims=True) + 1e-12)
    C, H, W = features.shape
    idx = np.zeros((H - k + 1, W - k + 1), dtype=np.int64)
    for y in range(H - k + 1):
        for x in range(W - k + 1):
            p = features[:, y : y + k, x : x + k].ravel()
            scores = qn @ p
            idx[y, x] = int(np.argmax(scores))
    return idx


class TestExtractPatches:
    def test_whole_map_single_patch(self):
        f = np.arange(9.0).reshape(1, 3, 3)
        ps = matchswap.extract_patches(f, 3)
        assert ps.patches.shape == (1, 9)
        assert np.array_equal(ps.patches[0], f.ravel())

    def test_count_4x4_k3(self):
        ps = matchswap.extract_patches(np.zeros((1, 4, 4)), 3)
        assert ps.patches.shape[0] == 4

    def test_count_and_length_strided(self):
        ps = matchswap.extract_patches(np.zeros((2, 5, 5)), 3, stride=2)
        assert ps.patches.shape == (4, 18)

    def test_row_major_coords_and_channel_major_flatten(self):
        f = np.random.default_rng(0).normal(size=(2, 4, 5))
        ps = matchswap.extract_patches(f, 3)
        assert np.array_equal(ps.coords[0], [0, 0])
        assert np.array_equal(ps.coords[1], [0, 1])
        assert np.array_equal(ps.coords[3], [1, 0])
        assert np.array_equal(ps.patches[4], f[:, 1:4, 1:4].ravel())

    def test_patch_too_large_rejected(self):
        with pytest.raises(ShapeError):
            matchswap.extract_patches(np.zeros((1, 2, 4)), 3)


class TestSimilarityMaps:
    def test_self_patch_scores_its_norm(self):
        rng = np.random.default_rng(1)
        f = rng.normal(size=(2, 6, 6))
        ref = matchswap.extract_patches(f, 3)
        maps = matchswap.similarity_maps(f, ref)
        p0 = f[:, 0:3, 0:3].ravel()
        assert maps[0, 0, 0] == pytest.approx(np.linalg.norm(p0), rel=1e-10)

    def test_reference_scale_invariance(self):
        rng = np.random.default_rng(2)
        f = rng.normal(size=(1, 6, 6))
        ref = rng.normal(size=(1, 6, 6))
        m1 = matchswap.similarity_maps(f, matchswap.extract_patches(ref, 3))
        m2 = matchswap.similarity_maps(f, matchswap.extract_patches(7.3 * ref, 3))
        assert np.abs(m1 - m2).max() < 1e-10

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        f = rng.normal(size=(2, 8, 8))
        ref = rng.normal(size=(2, 5, 6))
        ps = matchswap.extract_patches(ref, 3)
        pick = rng.choice(ps.patches.shape[0], size=10, replace=False)
        subset = matchswap.PatchSet(3, 1, ps.coords[pick], ps.patches[pick], 2)
        got = matchswap.similarity_maps(f, subset)
        want = brute_force_scores(f, ps.patches[pick], 3)
        assert np.abs(got - want).max() < 1e-10

    def test_empty_patchset_rejected(self):
        ps = matchswap.PatchSet(3, 1, np.zeros((0, 2)), np.zeros((0, 9)), 1)
        with pytest.raises(ShapeError):
            matchswap.similarity_maps(np.zeros((1, 4, 4)), ps)

    def test_channel_mismatch_rejected(self):
        ps = matchswap.extract_patches(np.zeros((2, 4, 4)), 3)
        with pytest.raises(ShapeError):
            matchswap.similarity_maps(np.zeros((1, 4, 4)), ps)


class TestSwapFeatures:
    def test_self_match_fixed_point(self):
        rng = np.random.default_rng(4)
        f = np.abs(rng.normal(size=(3, 8, 8))) + 0.1
        res = matchswap.swap_features(f, f, f, 3)
        assert np.abs(res.swapped - f).max() < 1e-9 * max(1, np.abs(f).max())
        assert np.abs(res.weight_map - 1.0).max() < 1e-9

    def test_single_reference_patch_tiles(self):
        rng = np.random.default_rng(5)
        f = rng.normal(size=(1, 5, 5))
        ref = rng.normal(size=(1, 3, 3))  # exactly one patch available
        res = matchswap.swap_features(f, ref, ref, 3)
        assert np.all(res.index_map == 0)
        # overlap-averaged tiling of that patch, built directly
        k = 3
        acc = np.zeros((1, 5, 5))
        cnt = np.zeros((5, 5))
        for y in range(3):
            for x in range(3):
                acc[:, y : y + k, x : x + k] += ref
                cnt[y : y + k, x : x + k] += 1
        assert np.abs(res.swapped - acc / cnt).max() < 1e-12

    @pytest.mark.parametrize("seed", range(8))
    def test_index_map_matches_exhaustive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        f = rng.normal(size=(2, 16, 16))
        ref = rng.normal(size=(2, 16, 16))
        blur = rng.normal(size=(2, 16, 16))
        res = matchswap.swap_features(f, ref, blur, 3)
        assert np.array_equal(res.index_map, exhaustive_argmax(f, blur, 3))

    def test_argmax_invariant_to_input_scale(self):
        rng = np.random.default_rng(6)
        f = rng.normal(size=(2, 12, 12))
        ref = rng.normal(size=(2, 12, 12))
        blur = rng.normal(size=(2, 12, 12))
        base = matchswap.swap_features(f, ref, blur, 3).index_map
        for alpha in (0.1, 1.0, 7.3):
            scaled = matchswap.swap_features(alpha * f, ref, blur, 3).index_map
            assert np.array_equal(base, scaled)

    def test_cosine_selection_equals_raw_selection(self):
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            f = rng.normal(size=(2, 10, 10))
            blur = rng.normal(size=(2, 10, 10))
            raw_idx = matchswap.swap_features(f, blur, blur, 3).index_map
            # fully normalized scores: divide each location's scores by the
            # input patch norm before the argmax
            refs = matchswap.extract_patches(blur, 3).patches
            qn = refs / (np.linalg.norm(refs, axis=1, keepdims=True) + 1e-12)
            H = W = 10 - 3 + 1
            cos_idx = np.zeros((H, W), dtype=np.int64)
            for y in range(H):
                for x in range(W):
                    p = f[:, y : y + 3, x : x + 3].ravel()
                    cos_idx[y, x] = int(np.argmax(qn @ (p / np.linalg.norm(p))))
            assert np.array_equal(raw_idx, cos_idx)

    def test_weight_map_bounds_and_shapes(self):
        rng = np.random.default_rng(7)
        f = rng.normal(size=(4, 9, 9))
        ref = rng.normal(size=(4, 9, 9))
        res = matchswap.swap_features(f, ref, ref, 3)
        assert res.swapped.shape == f.shape
        assert res.weight_map.shape == (1, 9, 9)
        assert res.weight_map.min() >= -1.0 and res.weight_map.max() <= 1.0
        assert res.index_map.shape == (7, 7)
        assert res.index_map.min() >= 0 and res.index_map.max() < 49

    def test_pooled_references_extend_index_space(self):
        rng = np.random.default_rng(8)
        f = rng.normal(size=(1, 6, 6))
        r1 = rng.normal(size=(1, 6, 6))
        r2 = f.copy()  # self-copy in the second reference wins every match
        res = matchswap.swap_features_pooled(f, [(r1, r1), (r2, r2)], 3)
        n1 = matchswap.extract_patches(r1, 3).patches.shape[0]
        coords = matchswap.extract_patches(f, 3).coords
        own = n1 + np.arange(coords.shape[0])
        assert np.array_equal(res.index_map.ravel(), own)

    def test_dimension_mismatches_rejected(self):
        with pytest.raises(ShapeError):
            matchswap.swap_features(
                np.zeros((1, 6, 6)), np.zeros((1, 6, 6)), np.zeros((1, 5, 6)), 3
            )
        with pytest.raises(ShapeError):
            matchswap.swap_features(
                np.zeros((2, 6, 6)), np.zeros((1, 6, 6)), np.zeros((1, 6, 6)), 3
            )
