import numpy as np
import pytest

from wavediff.denoiser import (
    AffineDenoiserParams,
    GaussianDataSpec,
    LatentCase,
    TrainConfig,
    affine_predict_x0,
    batch_loss,
    batch_loss_grad,
    draw_training_batch,
    load_checkpoint,
    oracle_predict_x0,
    save_checkpoint,
    synthetic_latent_cases,
    train_affine,
)
from wavediff.diffusion import q_sample
from wavediff.errors import (
    BinOutOfRange,
    EmptyDataset,
    NonFiniteLoss,
    ShapeMismatch,
    TOutOfRange,
)
from wavediff.objectives import OBJECTIVES, LossWeights
from wavediff.schedule import Schedule, build_schedule


def handmade_schedule(abar_values):
    ab = np.asarray(abar_values, dtype=float)
    prev = np.concatenate([[1.0], ab[:-1]])
    beta = 1.0 - ab / prev
    return Schedule(kind="linear", T=len(ab), beta=beta, alpha=1 - beta, alpha_bar=ab,
                    posterior_var=beta * (1 - prev) / (1 - ab))


class TestOracle:
    def test_tiny_prior_width_returns_mu(self):
        sched = handmade_schedule([0.5])
        gauss = GaussianDataSpec(mu=2.0, sigma0=1e-9)
        x_t = np.array([[[[17.0]]]])
        out = oracle_predict_x0(x_t, 1, sched, gauss)
        assert out[0, 0, 0, 0] == pytest.approx(2.0, abs=1e-6)

    def test_noiseless_observation_returns_x_t(self):
        sched = handmade_schedule([1.0 - 1e-300])  # rounds to abar == 1.0
        gauss = GaussianDataSpec(mu=5.0, sigma0=0.3)
        x_t = np.array([[[[1.2]]]])
        out = oracle_predict_x0(x_t, 1, sched, gauss)
        assert out[0, 0, 0, 0] == pytest.approx(1.2, abs=1e-12)

    def test_half_abar_shrinkage(self):
        # mu=0, sigma0=1, abar=0.5 -> gain sqrt(0.5)
        sched = handmade_schedule([0.5])
        gauss = GaussianDataSpec(mu=0.0, sigma0=1.0)
        x_t = np.full((1, 1, 1, 1), 4.0)
        out = oracle_predict_x0(x_t, 1, sched, gauss)
        assert out[0, 0, 0, 0] == pytest.approx(0.7071067811865476 * 4.0, rel=1e-12)

    def test_t_bounds(self):
        sched = build_schedule("linear", 5)
        with pytest.raises(TOutOfRange):
            oracle_predict_x0(np.zeros((1, 1, 1, 1)), 0, sched, GaussianDataSpec(0.0, 1.0))


class TestAffinePredict:
    def test_identity(self, rng):
        params = AffineDenoiserParams.initial(bins=1, channels=3, T=10)
        x = rng.standard_normal((3, 2, 2, 2))
        assert np.array_equal(affine_predict_x0(params, x, 4), x)

    def test_constant_prediction(self):
        params = AffineDenoiserParams(bins=1, T=10, gain=np.zeros((1, 2)),
                                      bias=np.full((1, 2), 0.3))
        out = affine_predict_x0(params, np.ones((2, 2, 2, 2)), 1)
        assert np.all(out == 0.3)

    def test_scalar_arithmetic(self):
        params = AffineDenoiserParams(bins=1, T=10, gain=np.array([[0.5]]),
                                      bias=np.array([[0.1]]))
        out = affine_predict_x0(params, np.full((1, 1, 1, 1), 2.0), 7)
        assert out[0, 0, 0, 0] == pytest.approx(1.1, abs=1e-15)

    def test_cond_channels_enter_additively(self):
        params = AffineDenoiserParams(bins=1, T=10, gain=np.ones((1, 1)),
                                      bias=np.zeros((1, 1)), cond_gain=np.array([[2.0]]))
        x = np.zeros((1, 2, 2, 2))
        cond = np.full((1, 2, 2, 2), 0.25)
        out = affine_predict_x0(params, x, 1, cond)
        assert np.all(out == 0.5)

    def test_bin_routing_and_bounds(self):
        params = AffineDenoiserParams.initial(bins=4, channels=1, T=100)
        assert params.bin_for(1) == 0
        assert params.bin_for(25) == 0
        assert params.bin_for(26) == 1
        assert params.bin_for(100) == 3
        with pytest.raises(BinOutOfRange):
            params.bin_for(0)
        with pytest.raises(BinOutOfRange):
            params.bin_for(101)

    def test_shape_contract(self, rng):
        params = AffineDenoiserParams.initial(bins=1, channels=3, T=10)
        with pytest.raises(ShapeMismatch):
            affine_predict_x0(params, rng.standard_normal((2, 2, 2, 2)), 1)


class TestGradients:
    @pytest.mark.parametrize("objective", OBJECTIVES)
    def test_analytic_matches_central_differences(self, objective, rng):
        sched = build_schedule("linear", 40)
        cases = synthetic_latent_cases(3, size=8, seed=9, groups=4 if objective == "Dg" else 1)
        samples = draw_training_batch(cases, objective, sched, np.random.default_rng(4), batch=4)
        channels = cases[0].x0.shape[0]
        cond_channels = {"D": 0, "Dg": 0, "DC": 2, "AK": 1, "AKH": 1}[objective]
        params = AffineDenoiserParams(
            bins=2, T=40,
            gain=1.0 + 0.2 * rng.standard_normal((2, channels)),
            bias=0.1 * rng.standard_normal((2, channels)),
            cond_gain=0.3 * rng.standard_normal((2, cond_channels)) if cond_channels else None,
        )
        w = LossWeights(10.0)
        _, grads = batch_loss_grad(params, samples, objective, w)
        h = 1e-6
        for arr_name in grads:
            arr = getattr(params, arr_name)
            for idx in np.ndindex(arr.shape):
                plus, minus = params.copy(), params.copy()
                getattr(plus, arr_name)[idx] += h
                getattr(minus, arr_name)[idx] -= h
                fd = (batch_loss(plus, samples, objective, w)
                      - batch_loss(minus, samples, objective, w)) / (2 * h)
                denom = max(abs(fd), 1e-8)
                assert abs(grads[arr_name][idx] - fd) / denom <= 1e-4, (
                    f"{objective} d{arr_name}{idx}: analytic={grads[arr_name][idx]}, fd={fd}"
                )


class TestTraining:
    def test_single_bin_gain_matches_normal_equations(self):
        sched = build_schedule("linear", 1000)
        rng = np.random.default_rng(42)
        cases = [LatentCase(x0=np.full((1, 1, 1, 1), v)) for v in rng.normal(0.0, 3.0, 64)]
        res = train_affine(cases, "D", 10.0, sched,
                           TrainConfig(lr=0.1, iters=1500, batch=128, seed=2, lr_decay=40, bins=1))
        # independent normal-equations oracle over the same generative process
        orng = np.random.default_rng(777)
        n = 200_000
        x0s = np.array([cases[i].x0[0, 0, 0, 0] for i in orng.integers(0, len(cases), n)])
        ts = orng.integers(1, sched.T + 1, n)
        ab = sched.alpha_bar[ts - 1]
        xts = np.sqrt(ab) * x0s + np.sqrt(1 - ab) * orng.standard_normal(n)
        design = np.stack([xts, np.ones(n)], axis=1)
        (a_star, b_star), *_ = np.linalg.lstsq(design, x0s, rcond=None)
        assert abs(res.params.gain[0, 0] - a_star) / abs(a_star) <= 0.05
        assert abs(res.params.bias[0, 0] - b_star) <= 0.05 * 3.0

    def test_dc_with_zero_lambda_and_empty_masks_reduces_to_d(self):
        sched = build_schedule("linear", 100)
        cases = synthetic_latent_cases(4, size=8, seed=3, masks="empty")
        opt = TrainConfig(lr=0.05, iters=50, batch=8, seed=12)
        res_d = train_affine(cases, "D", 0.0, sched, opt)
        res_dc = train_affine(cases, "DC", 0.0, sched, opt)
        assert np.array_equal(res_d.losses, res_dc.losses)
        assert np.array_equal(res_d.params.gain, res_dc.params.gain)
        assert np.array_equal(res_d.params.bias, res_dc.params.bias)

    def test_per_bin_gains_converge_to_oracle_shrinkage(self):
        # bins = T: each bin sees one step; trained gains approach the exact
        # posterior-mean shrinkage for the Gaussian data at that step
        sched = handmade_schedule([0.9, 0.6, 0.3, 0.1])
        s0 = 3.0
        rng = np.random.default_rng(5)
        cases = [LatentCase(x0=np.full((1, 1, 1, 1), v)) for v in rng.normal(0.0, s0, 2048)]
        res = train_affine(cases, "D", 10.0, sched,
                           TrainConfig(lr=0.05, iters=2000, batch=256, seed=2, lr_decay=40, bins=4))
        shrink = np.sqrt(sched.alpha_bar) * s0**2 / (sched.alpha_bar * s0**2 + 1 - sched.alpha_bar)
        for b in range(4):
            assert abs(res.params.gain[b, 0] - shrink[b]) / shrink[b] <= 0.05

    def test_oracle_beats_trained_denoiser(self):
        # Bayes optimality: oracle MSE <= trained affine MSE (+ tolerance)
        sched = handmade_schedule([0.7, 0.4, 0.15])
        s0 = 2.0
        rng = np.random.default_rng(8)
        cases = [LatentCase(x0=np.full((1, 1, 1, 1), v)) for v in rng.normal(0.0, s0, 1024)]
        res = train_affine(cases, "D", 10.0, sched,
                           TrainConfig(lr=0.05, iters=800, batch=128, seed=3, lr_decay=60, bins=3))
        gauss = GaussianDataSpec(mu=0.0, sigma0=s0)
        eval_rng = np.random.default_rng(99)
        n = 50_000
        mse_oracle = mse_affine = 0.0
        for t in (1, 2, 3):
            x0 = eval_rng.normal(0.0, s0, (n, 1, 1, 1))
            xt = q_sample(x0, t, eval_rng.standard_normal(x0.shape), sched)
            pred_o = oracle_predict_x0(xt, t, sched, gauss)
            b = res.params.bin_for(t)
            pred_a = res.params.gain[b, 0] * xt + res.params.bias[b, 0]
            mse_oracle += np.mean((pred_o - x0) ** 2)
            mse_affine += np.mean((pred_a - x0) ** 2)
        assert mse_oracle <= mse_affine * 1.02

    def test_empty_dataset_rejected(self):
        with pytest.raises(EmptyDataset):
            train_affine([], "D", 10.0, build_schedule("linear", 10))

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_divergence_raises_nonfinite(self):
        sched = build_schedule("linear", 100)
        cases = [LatentCase(x0=np.full((1, 1, 1, 1), v)) for v in (3.0, -2.0, 4.0)]
        with pytest.raises(NonFiniteLoss):
            train_affine(cases, "D", 10.0, sched,
                         TrainConfig(lr=50.0, iters=300, batch=8, seed=0, lr_decay=1e9))


class TestCheckpoints:
    def test_roundtrip_exact(self, tmp_path, rng):
        sched = build_schedule("linear", 50)
        params = AffineDenoiserParams(
            bins=3, T=50,
            gain=rng.standard_normal((3, 8)),
            bias=rng.standard_normal((3, 8)),
            cond_gain=rng.standard_normal((3, 2)),
        )
        path = tmp_path / "ckpt.bin"
        save_checkpoint(params, path, objective="DC", sched=sched)
        loaded, meta = load_checkpoint(path)
        assert np.array_equal(loaded.gain, params.gain)
        assert np.array_equal(loaded.bias, params.bias)
        assert np.array_equal(loaded.cond_gain, params.cond_gain)
        assert meta["objective"] == "DC"
        assert meta["bins"] == 3 and meta["T"] == 50
        assert len(meta["schedule_hash"]) == 64

    def test_blob_is_little_endian_float64(self, tmp_path):
        params = AffineDenoiserParams(bins=1, T=10, gain=np.array([[1.5]]),
                                      bias=np.array([[-0.25]]))
        path = tmp_path / "p.bin"
        save_checkpoint(params, path)
        raw = np.frombuffer(path.read_bytes(), dtype="<f8")
        assert raw.tolist() == [1.5, -0.25]
