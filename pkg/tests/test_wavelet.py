import numpy as np
import pytest

from wavediff.errors import BadChannelCount, OddDimension
from wavediff.volume import Volume
from wavediff.wavelet import (
    SubbandStack,
    dwt3,
    dwt3_channels,
    idwt3,
    idwt3_channels,
    pool_mask_to_half,
)

# hand-composed 1D Haar applied three times: a constant block of ones turns
# into a single low-pass coefficient of (2/sqrt(2))^3
LLL_OF_ONES = 2.0 ** 1.5


class TestForward:
    def test_all_ones_concentrates_in_lll(self):
        s = dwt3(Volume(np.ones((2, 2, 2))))
        assert s.channels.shape == (8, 1, 1, 1)
        assert abs(s.channels[0, 0, 0, 0] - LLL_OF_ONES) < 1e-12
        assert np.all(s.channels[1:] == 0.0)

    def test_unit_impulse_spreads_evenly(self):
        x = np.zeros((2, 2, 2))
        x[0, 0, 0] = 1.0
        s = dwt3(Volume(x))
        coeffs = s.channels[:, 0, 0, 0]
        # explicit 8-term tensor expansion: every subband holds +-1/2^(3/2)
        assert np.allclose(np.abs(coeffs), 1.0 / 2.0**1.5, atol=1e-12)
        assert abs(np.sum(coeffs**2) - 1.0) < 1e-12

    def test_odd_dims_rejected(self):
        with pytest.raises(OddDimension):
            dwt3(Volume(np.zeros((3, 4, 4))))

    def test_constant_input_only_lll(self, rng):
        s = dwt3(Volume(np.full((8, 8, 8), 2.7)))
        assert np.all(s.channels[1:] == 0.0)
        assert np.all(s.channels[0] != 0.0)


class TestInverse:
    def test_zero_stack(self):
        v = idwt3(SubbandStack(np.zeros((8, 2, 2, 2))))
        assert np.all(v.data == 0.0)

    def test_lll_singleton_reconstructs_ones(self):
        ch = np.zeros((8, 1, 1, 1))
        ch[0, 0, 0, 0] = LLL_OF_ONES
        v = idwt3(SubbandStack(ch))
        assert np.allclose(v.data, 1.0, atol=1e-12)

    def test_bad_channel_count(self):
        with pytest.raises(BadChannelCount):
            SubbandStack(np.zeros((7, 2, 2, 2)))
        with pytest.raises(BadChannelCount):
            idwt3(SubbandStack(np.zeros((16, 2, 2, 2))))  # one volume only

    def test_stack_roundtrip(self, rng):
        ch = rng.standard_normal((16, 4, 4, 4))
        again = dwt3_channels(idwt3_channels(ch))
        assert np.max(np.abs(again - ch)) <= 1e-6 * np.max(np.abs(ch))


class TestInvariants:
    @pytest.mark.parametrize("size", [(4, 4, 4), (8, 6, 4), (16, 16, 16), (32, 8, 10)])
    def test_perfect_reconstruction(self, rng, size):
        x = rng.standard_normal(size)
        v = Volume(x)
        back = idwt3(dwt3(v))
        assert np.max(np.abs(back.data - x)) <= 1e-6 * np.max(np.abs(x))

    @pytest.mark.parametrize("size", [(4, 4, 4), (10, 8, 6), (16, 16, 16)])
    def test_parseval(self, rng, size):
        x = rng.standard_normal(size)
        s = dwt3(Volume(x))
        assert abs(np.sum(x * x) - np.sum(s.channels**2)) <= 1e-6 * np.sum(x * x)

    def test_linearity(self, rng):
        u = rng.standard_normal((8, 8, 8))
        v = rng.standard_normal((8, 8, 8))
        a, b = 1.7, -0.3
        lhs = dwt3(Volume(a * u + b * v)).channels
        rhs = a * dwt3(Volume(u)).channels + b * dwt3(Volume(v)).channels
        assert np.max(np.abs(lhs - rhs)) <= 1e-6 * max(np.max(np.abs(lhs)), 1.0)

    def test_factor_eight_structure(self, rng):
        for dims in [(4, 6, 8), (10, 4, 6), (16, 16, 16)]:
            x = rng.standard_normal(dims)
            s = dwt3(Volume(x))
            assert s.channels.shape[0] == 8
            assert s.channels[0].size == x.size // 8
            assert s.half_dims == tuple(d // 2 for d in dims)


class TestMaskPooling:
    def test_single_one_pools_to_single_voxel(self):
        m = np.zeros((2, 2, 2))
        m[1, 0, 1] = 1
        pooled = pool_mask_to_half(m)
        assert pooled.shape == (1, 1, 1)
        assert pooled[0, 0, 0] == 1.0

    def test_pool_is_max(self, rng):
        m = (rng.random((8, 8, 8)) > 0.9).astype(np.uint8)
        pooled = pool_mask_to_half(m)
        for i in range(4):
            for j in range(4):
                for k in range(4):
                    block = m[2 * i : 2 * i + 2, 2 * j : 2 * j + 2, 2 * k : 2 * k + 2]
                    assert pooled[i, j, k] == block.max()
