import numpy as np
import pytest

from wavediff.errors import MissingMask, ShapeMismatch, WrongModalityCount
from wavediff.objectives import (
    LOCAL_OBJECTIVES,
    LossWeights,
    loss_global,
    loss_global_grad,
    loss_local,
    loss_local_grad,
)


@pytest.fixture
def masks(rng):
    m_h = (rng.random((4, 4, 4)) > 0.6).astype(float)
    m_uh = (rng.random((4, 4, 4)) > 0.7).astype(float)
    return m_h, m_uh


class TestZeroResidual:
    @pytest.mark.parametrize("objective", LOCAL_OBJECTIVES)
    def test_zero_for_equal_inputs(self, objective, rng, masks):
        x0 = rng.standard_normal((8, 4, 4, 4))
        m_h, m_uh = masks
        assert loss_local(objective, x0, x0, m_h, m_uh) == 0.0


class TestDcIdentities:
    def test_full_mask_constant_residual_is_eleven_c_squared(self, rng):
        # both terms equal c^2, so the total is (1 + lambda1) c^2 = 11 c^2
        c = 0.3
        x0 = rng.standard_normal((8, 4, 4, 4))
        ones = np.ones((4, 4, 4))
        out = loss_local("DC", x0 + c, x0, ones, ones, LossWeights(10.0))
        assert out == pytest.approx(11.0 * c * c, rel=1e-12)

    def test_empty_mask_equals_d(self, rng):
        x0 = rng.standard_normal((8, 4, 4, 4))
        x0_hat = x0 + rng.standard_normal(x0.shape)
        zeros = np.zeros((4, 4, 4))
        assert loss_local("DC", x0_hat, x0, zeros, zeros) == loss_local("D", x0_hat, x0)

    def test_mask_union_decomposition(self, rng, masks):
        # masked term on the union = on m_h + on m_uh - on the intersection
        m_h, m_uh = masks
        x0 = rng.standard_normal((8, 4, 4, 4))
        r = rng.standard_normal(x0.shape)

        def masked_term(m):
            return np.sum((m[None] * r) ** 2) / r.size

        union = np.maximum(m_h, m_uh)
        inter = m_h * m_uh
        lhs = masked_term(union)
        rhs = masked_term(m_h) + masked_term(m_uh) - masked_term(inter)
        assert lhs == pytest.approx(rhs, rel=1e-12)
        # and the DC loss indeed uses the union
        w = LossWeights(10.0)
        expect = loss_local("D", x0 + r, x0) + 10.0 * masked_term(union)
        assert loss_local("DC", x0 + r, x0, m_h, m_uh, w) == pytest.approx(expect, rel=1e-12)


class TestAkhStructure:
    def test_zero_when_residual_confined_to_unhealthy(self, rng):
        x0 = rng.standard_normal((8, 4, 4, 4))
        m_uh = np.zeros((4, 4, 4))
        m_uh[:2] = 1.0
        m_h = np.zeros((4, 4, 4))
        x0_hat = x0 + 5.0 * m_uh[None]  # residual only inside m_uh
        assert loss_local("AKH", x0_hat, x0, m_h, m_uh) == 0.0

    def test_fully_masked_out_is_zero_regardless_of_residual(self, rng):
        x0 = rng.standard_normal((8, 4, 4, 4))
        ones = np.ones((4, 4, 4))
        zeros = np.zeros((4, 4, 4))
        assert loss_local("AKH", x0 + 100.0, x0, zeros, ones) == 0.0


class TestLambdaMonotonicity:
    @pytest.mark.parametrize("objective", ["DC", "AK", "AKH"])
    def test_loss_nondecreasing_in_lambda(self, objective, rng, masks):
        m_h, m_uh = masks
        x0 = rng.standard_normal((8, 4, 4, 4))
        x0_hat = x0 + rng.standard_normal(x0.shape)
        values = [
            loss_local(objective, x0_hat, x0, m_h, m_uh, LossWeights(lam))
            for lam in (0.0, 1.0, 10.0, 100.0)
        ]
        assert all(b >= a for a, b in zip(values, values[1:]))


class TestErrors:
    def test_missing_masks(self, rng):
        x0 = rng.standard_normal((8, 4, 4, 4))
        with pytest.raises(MissingMask):
            loss_local("DC", x0, x0, None, None)
        with pytest.raises(MissingMask):
            loss_local("AK", x0, x0, None, None)
        with pytest.raises(MissingMask):
            loss_local("AKH", x0, x0, np.ones((4, 4, 4)), None)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            loss_local("D", rng.standard_normal((8, 4, 4, 4)), rng.standard_normal((8, 2, 2, 2)))

    def test_nonbinary_mask_rejected(self, rng):
        x0 = rng.standard_normal((8, 4, 4, 4))
        with pytest.raises(ShapeMismatch):
            loss_local("AK", x0, x0, np.full((4, 4, 4), 0.5), None)


class TestGlobal:
    def test_zero_for_equal(self, rng):
        a0 = rng.standard_normal((4, 8, 2, 2, 2))
        assert loss_global(a0, a0) == 0.0

    def test_single_modality_residual(self, rng):
        a0 = rng.standard_normal((4, 8, 2, 2, 2))
        a0_hat = a0.copy()
        a0_hat[2] += 0.5  # residual c on one of four equal-sized blocks
        assert loss_global(a0_hat, a0) == pytest.approx(0.25 / 4.0, rel=1e-12)

    def test_equals_flattened_d(self, rng):
        a0 = rng.standard_normal((4, 8, 2, 2, 2))
        a0_hat = a0 + rng.standard_normal(a0.shape)
        flat = a0.reshape(32, 2, 2, 2)
        flat_hat = a0_hat.reshape(32, 2, 2, 2)
        assert loss_global(a0_hat, a0) == pytest.approx(
            loss_local("D", flat_hat, flat), rel=1e-15
        )

    def test_wrong_modality_count(self, rng):
        bad = rng.standard_normal((3, 8, 2, 2, 2))
        with pytest.raises(WrongModalityCount):
            loss_global(bad, bad)


class TestGradsAgreeWithValues:
    @pytest.mark.parametrize("objective", LOCAL_OBJECTIVES)
    def test_value_consistency(self, objective, rng, masks):
        m_h, m_uh = masks
        x0 = rng.standard_normal((8, 4, 4, 4))
        x0_hat = x0 + 0.1 * rng.standard_normal(x0.shape)
        value = loss_local(objective, x0_hat, x0, m_h, m_uh)
        value2, grad = loss_local_grad(objective, x0_hat, x0, m_h, m_uh)
        assert value == pytest.approx(value2, rel=1e-14)
        assert grad.shape == x0.shape

    def test_global_grad(self, rng):
        a0 = rng.standard_normal((4, 2, 2, 2, 2))
        a0_hat = a0 + 0.2
        value, grad = loss_global_grad(a0_hat, a0)
        assert value == pytest.approx(loss_global(a0_hat, a0), rel=1e-14)
        assert np.allclose(grad, 2.0 * 0.2 / a0.size, atol=1e-12)
