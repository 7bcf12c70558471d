import numpy as np
import pytest

from ntg import featnet, formats
from ntg.errors import ShapeError

# frozen once from the reference path: sum of level-1 activations for
# build_extractor(seed=7, plan=(16,32,64)) applied to the 8x8 ramp below
GOLDEN_L1_SUM = 226.0042603513918


def ramp_image(n=8):
    return (np.arange(n * n, dtype=float).reshape(n, n) / (n * n - 1))[None]


class TestBuildExtractor:
    def test_seed_determinism(self):
        a = featnet.build_extractor(42)
        b = featnet.build_extractor(42)
        for k in a.params:
            assert np.array_equal(a.params[k], b.params[k])

    def test_seed_sensitivity(self):
        a = featnet.build_extractor(42)
        b = featnet.build_extractor(43)
        assert not np.array_equal(a.params["l1.w"], b.params["l1.w"])

    def test_parameter_count_default_plan(self):
        net = featnet.build_extractor(0, 3, (16, 32, 64), in_channels=1)
        assert net.param_count() == 16 * 1 * 9 + 16 + 32 * 16 * 9 + 32 + 64 * 32 * 9 + 64
        assert net.param_count() == 23472

    def test_bad_plan_rejected(self):
        with pytest.raises(ValueError):
            featnet.build_extractor(0, 0, ())
        with pytest.raises(ValueError):
            featnet.build_extractor(0, 3, (16, 32))


class TestExtractPyramid:
    def test_shape_contract_32(self):
        net = featnet.build_extractor(1)
        pyr = featnet.extract_pyramid(net, np.zeros((1, 32, 32)))
        assert [g.shape for g in pyr.levels] == [(16, 32, 32), (32, 16, 16), (64, 8, 8)]
        assert pyr.geometry()[2] == (64, 8, 8, 4)

    def test_odd_dims_ceil(self):
        net = featnet.build_extractor(1)
        pyr = featnet.extract_pyramid(net, np.zeros((1, 9, 10)))
        assert [g.shape[1:] for g in pyr.levels] == [(9, 10), (5, 5), (3, 3)]

    def test_zero_image_zero_pyramid(self):
        net = featnet.build_extractor(5)
        pyr = featnet.extract_pyramid(net, np.zeros((1, 16, 16)))
        for g in pyr.levels:
            assert np.all(g == 0.0)

    def test_activations_nonnegative(self):
        net = featnet.build_extractor(9)
        img = np.random.default_rng(0).uniform(size=(1, 16, 16))
        for g in featnet.extract_pyramid(net, img).levels:
            assert g.min() >= 0.0

    def test_positive_homogeneity_level1(self):
        net = featnet.build_extractor(3)
        img = np.random.default_rng(1).uniform(size=(1, 12, 12))
        p1 = featnet.extract_pyramid(net, img)[0]
        p2 = featnet.extract_pyramid(net, 2.5 * img)[0]
        assert np.abs(p2 - 2.5 * p1).max() < 1e-12

    def test_golden_level1_checksum(self):
        net = featnet.build_extractor(7)
        pyr = featnet.extract_pyramid(net, ramp_image())
        assert float(pyr[0].sum()) == pytest.approx(GOLDEN_L1_SUM, rel=1e-12)

    def test_channel_mismatch_rejected(self):
        net = featnet.build_extractor(0)
        with pytest.raises(ShapeError):
            featnet.extract_pyramid(net, np.zeros((3, 8, 8)))

    def test_determinism_across_runs(self):
        net = featnet.build_extractor(11)
        img = np.random.default_rng(2).uniform(size=(1, 16, 16))
        a = featnet.extract_pyramid(net, img)
        b = featnet.extract_pyramid(net, img)
        for ga, gb in zip(a.levels, b.levels):
            assert np.array_equal(ga, gb)


class TestSerialization:
    def test_ntx1_round_trip(self, tmp_path):
        net = featnet.build_extractor(21, 2, (4, 8))
        path = tmp_path / "w.ntx1"
        formats.write_ntx1(featnet.to_arrays(net), path)
        back = featnet.from_arrays(formats.read_ntx1(path))
        assert back.plan == net.plan
        img = np.random.default_rng(3).uniform(size=(1, 8, 8))
        a = featnet.extract_pyramid(net, img)
        b = featnet.extract_pyramid(back, img)
        # weights pass through f32 on disk
        for ga, gb in zip(a.levels, b.levels):
            assert np.abs(ga - gb).max() < 1e-6

    def test_missing_meta_rejected(self):
        with pytest.raises(ShapeError):
            featnet.from_arrays({"feat.l1.w": np.zeros((4, 1, 3, 3))})
