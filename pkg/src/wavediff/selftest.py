"""Built-in invariant battery behind the ``selftest`` subcommand.

Each check is small and fast; together they cover the load-bearing contracts
(transform exactness, schedule shape, sampler determinism, loss identities,
metric identities, placement constraints, file round trips) so a deployment
can be smoke-checked without the test suite installed.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from . import conditioning, maskgen, metrics, nifti, objectives
from .denoiser import GaussianDataSpec, GaussianOracleDenoiser
from .diffusion import ddpm_sample, posterior_step, q_sample
from .schedule import build_schedule
from .volume import MaskVolume, Volume
from .wavelet import dwt3_channels, idwt3_channels


def _check_wavelet() -> None:
    rng = np.random.default_rng(7)
    for size in (8, 16):
        x = rng.standard_normal((1, size, size, size))
        s = dwt3_channels(x)
        assert s.shape == (8, size // 2, size // 2, size // 2)
        back = idwt3_channels(s)
        assert np.max(np.abs(back - x)) <= 1e-6 * np.max(np.abs(x))
        assert abs(np.sum(x * x) - np.sum(s * s)) <= 1e-6 * np.sum(x * x)
    const = np.ones((1, 8, 8, 8))
    s = dwt3_channels(const)
    assert np.all(s[1:] == 0.0) and np.all(s[0] != 0.0)


def _check_schedule() -> None:
    for kind in ("linear", "cosine"):
        sched = build_schedule(kind, 1000)
        assert np.all(sched.beta > 0) and np.all(sched.beta < 1)
        assert np.all(np.diff(sched.alpha_bar) < 0)
    lin = build_schedule("linear", 1000)
    assert abs(lin.beta[0] - 1e-4) < 1e-15 and abs(lin.beta[-1] - 0.02) < 1e-15


def _check_diffusion() -> None:
    sched = build_schedule("linear", 100)
    x0 = np.full((2, 2, 2), 1.5)
    assert np.array_equal(q_sample(x0, 0, None, sched), x0)
    mean_only = posterior_step(x0, x0, 1, sched, None)
    again = posterior_step(x0, x0, 1, sched, np.ones_like(x0))
    assert np.array_equal(mean_only, again)
    den = GaussianOracleDenoiser(GaussianDataSpec(mu=0.0, sigma0=1.0), sched)
    a = ddpm_sample(den, (4, 4, 4), sched, seed=11)
    b = ddpm_sample(den, (4, 4, 4), sched, seed=11)
    assert np.array_equal(a, b)


def _check_losses() -> None:
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal((8, 4, 4, 4))
    x0_hat = x0 + 1.0
    ones = np.ones((4, 4, 4))
    zeros = np.zeros((4, 4, 4))
    d = objectives.loss_local("D", x0_hat, x0)
    dc_full = objectives.loss_local("DC", x0_hat, x0, m_h=ones, m_uh=ones)
    assert abs(dc_full - 11.0 * d) <= 1e-12 * max(1.0, abs(dc_full))
    dc_empty = objectives.loss_local("DC", x0_hat, x0, m_h=zeros, m_uh=zeros)
    assert dc_empty == d
    resid_in_uh = x0.copy()
    resid_in_uh[:, :2] += 5.0
    uh = np.zeros((4, 4, 4))
    uh[:2] = 1.0
    akh = objectives.loss_local("AKH", resid_in_uh, x0, m_h=zeros, m_uh=uh)
    assert akh == 0.0


def _check_metrics() -> None:
    rng = np.random.default_rng(5)
    ref = rng.uniform(0, 1, (10, 10, 10))
    roi = np.ones((10, 10, 10))
    pred = np.clip(ref + 0.1, 0, None)
    mse = metrics.mse_roi(pred, ref, roi)
    psnr = metrics.psnr_roi(pred, ref, roi, 1.0)
    assert abs(psnr - (-10.0 * np.log10(mse))) <= 1e-12
    assert abs(metrics.ssim_roi(ref, ref, roi) - 1.0) <= 1e-9


def _check_maskgen() -> None:
    rng = np.random.default_rng(9)
    brain = np.zeros((24, 24, 24), dtype=np.uint8)
    brain[2:22, 2:22, 2:22] = 1
    uh = np.zeros_like(brain)
    uh[4:8, 4:8, 4:8] = 1
    brain_m, uh_m = MaskVolume(brain), MaskVolume(uh)
    policy = maskgen.PlacementPolicy(blob_size_range=(2.0, 3.0), blob_roughness=0.2)
    for _ in range(20):
        placed = maskgen.place_masks(rng, brain_m, uh_m, policy=policy)
        assert not np.any(placed.mask.data & uh)
        assert not np.any(placed.mask.data & (1 - brain))


def _check_nifti() -> None:
    rng = np.random.default_rng(13)
    vol = Volume(rng.integers(0, 200, (6, 5, 4)).astype(np.float64))
    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp) / "v.nii.gz"
        nifti.write_nifti(vol, p)
        back, _ = nifti.read_nifti(p)
        assert np.array_equal(back.data, vol.data)


def _check_conditioning() -> None:
    rng = np.random.default_rng(17)
    sched = build_schedule("linear", 20)
    scan = Volume(rng.uniform(-1, 1, (8, 8, 8)))
    m = np.zeros((8, 8, 8), dtype=np.uint8)
    m[2:5, 2:5, 2:5] = 1
    req = conditioning.InpaintRequest(
        scan=scan, m_h=MaskVolume(m), variant="ak", sched=sched, seed=4
    )
    den = GaussianOracleDenoiser(GaussianDataSpec(mu=0.0, sigma0=1.0), sched)
    out = conditioning.known_region_inpaint(den, req)
    keep = m == 0
    assert np.array_equal(out.data[keep], scan.data[keep])


CHECKS = [
    ("wavelet-exactness", _check_wavelet),
    ("schedule-shape", _check_schedule),
    ("diffusion-contracts", _check_diffusion),
    ("loss-identities", _check_losses),
    ("metric-identities", _check_metrics),
    ("maskgen-constraints", _check_maskgen),
    ("nifti-roundtrip", _check_nifti),
    ("conditioning-passthrough", _check_conditioning),
]


def run_selftest(verbose: bool = True) -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS:
        try:
            fn()
            results.append((name, True, ""))
            if verbose:
                print(f"selftest {name}: PASS")
        except Exception as exc:  # noqa: BLE001 - report every failure kind
            results.append((name, False, f"{type(exc).__name__}: {exc}"))
            if verbose:
                print(f"selftest {name}: FAIL ({exc})")
    return results
