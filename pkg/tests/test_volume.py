import math

import numpy as np
import pytest

from wavediff.errors import ConstantVolume, DimMismatch, InvalidParams, InvalidPercentile
from wavediff.volume import (
    MaskVolume,
    NormalizationParams,
    Volume,
    apply_void,
    denormalize_volume,
    normalize_volume,
)


def nearest_rank(values, pct):
    """Independent percentile oracle: ceil(p/100 * n)-th smallest, min at 0."""
    s = sorted(values)
    if pct == 0:
        return s[0]
    rank = math.ceil(pct / 100.0 * len(s))
    return s[rank - 1]


class TestNormalize:
    def test_full_range_is_2x_minus_1(self):
        data = np.linspace(0.0, 1.0, 64).reshape(4, 4, 4)
        out, params = normalize_volume(Volume(data), 0.0, 100.0)
        assert params == NormalizationParams(0.0, 1.0)
        assert np.allclose(out.data, 2.0 * data - 1.0, atol=1e-12)

    def test_constant_volume_rejected(self):
        with pytest.raises(ConstantVolume):
            normalize_volume(Volume(np.full((3, 3, 3), 7.0)))

    def test_percentiles_match_nearest_rank_oracle(self):
        data = np.arange(100.0).reshape(5, 5, 4)
        _, params = normalize_volume(Volume(data), 1.0, 99.0)
        assert params.lo == nearest_rank(data.ravel(), 1.0)
        assert params.hi == nearest_rank(data.ravel(), 99.0)

    @pytest.mark.parametrize("lo,hi", [(-1.0, 50.0), (50.0, 120.0), (60.0, 40.0), (30.0, 30.0)])
    def test_bad_percentile_bounds(self, lo, hi):
        with pytest.raises(InvalidPercentile):
            normalize_volume(Volume(np.arange(27.0).reshape(3, 3, 3)), lo, hi)

    def test_output_range_property(self, rng):
        for _ in range(20):
            data = rng.normal(rng.uniform(-50, 50), rng.uniform(0.1, 20), (6, 5, 4))
            out, _ = normalize_volume(Volume(data), 0.5, 99.5)
            assert out.data.min() >= -1.0 - 1e-12
            assert out.data.max() <= 1.0 + 1e-12


class TestDenormalize:
    def test_zero_maps_to_midpoint(self):
        v = Volume(np.zeros((2, 2, 2)))
        out = denormalize_volume(v, NormalizationParams(3.0, 9.0))
        assert np.all(out.data == 6.0)

    def test_endpoint(self):
        v = Volume(np.ones((2, 2, 2)))
        out = denormalize_volume(v, NormalizationParams(0.0, 1.0))
        assert np.all(out.data == 1.0)

    def test_roundtrip_in_window(self, rng):
        data = rng.uniform(0, 100, (8, 8, 8))
        normed, params = normalize_volume(Volume(data), 0.0, 100.0)
        back = denormalize_volume(normed, params)
        assert np.max(np.abs(back.data - data)) <= 1e-6 * np.max(np.abs(data))

    def test_invalid_params(self):
        with pytest.raises(InvalidParams):
            NormalizationParams(2.0, 2.0)


class TestApplyVoid:
    def test_empty_mask_identity(self, rng):
        v = Volume(rng.standard_normal((4, 4, 4)))
        m = MaskVolume(np.zeros((4, 4, 4), dtype=np.uint8))
        assert np.array_equal(apply_void(v, m).data, v.data)

    def test_full_mask_fill(self, rng):
        v = Volume(rng.standard_normal((4, 4, 4)))
        m = MaskVolume(np.ones((4, 4, 4), dtype=np.uint8))
        assert np.all(apply_void(v, m, fill=0.0).data == 0.0)

    def test_checkerboard_matches_scalar_loop(self, rng):
        v = Volume(rng.standard_normal((4, 4, 4)))
        idx = np.indices((4, 4, 4)).sum(axis=0)
        m = MaskVolume(((idx % 2) == 0).astype(np.uint8))
        out = apply_void(v, m, fill=-0.25)
        for i in range(4):
            for j in range(4):
                for k in range(4):
                    expect = -0.25 if m.data[i, j, k] else v.data[i, j, k]
                    assert out.data[i, j, k] == expect

    def test_idempotent(self, rng):
        v = Volume(rng.standard_normal((4, 4, 4)))
        m = MaskVolume((rng.random((4, 4, 4)) > 0.5).astype(np.uint8))
        once = apply_void(v, m, fill=0.5)
        twice = apply_void(once, m, fill=0.5)
        assert np.array_equal(once.data, twice.data)

    def test_dim_mismatch(self, rng):
        v = Volume(rng.standard_normal((4, 4, 4)))
        m = MaskVolume(np.zeros((2, 2, 2), dtype=np.uint8))
        with pytest.raises(DimMismatch):
            apply_void(v, m)


class TestMaskAlgebra:
    def test_mask_is_idempotent_and_complement_exact(self, rng):
        m = (rng.random((5, 5, 5)) > 0.4).astype(np.uint8)
        mask = MaskVolume(m)
        assert np.array_equal(mask.data * mask.data, mask.data)
        assert np.array_equal(1 - mask.data + mask.data, np.ones_like(m))

    def test_values_validated(self):
        with pytest.raises(InvalidParams):
            MaskVolume(np.full((2, 2, 2), 2))

    def test_nonfinite_rejected(self):
        data = np.zeros((2, 2, 2))
        data[0, 0, 0] = np.nan
        with pytest.raises(InvalidParams):
            Volume(data)
