"""Forward process, reverse posterior step, and the two samplers.

The denoiser contract everywhere in this package is x0-prediction: a denoiser
is an object with ``predict_x0(x_t, t, cond) -> x0_hat`` of the same shape as
``x_t`` (its data channels). Reverse steps always go through the closed-form
Gaussian posterior q(x_{t-1} | x_t, x0_hat) with the fixed lower-bound
variance beta_tilde. Predictions are never clipped here: wavelet coefficients
are unbounded, and any image-space clamping belongs after reconstruction.

Both samplers are deterministic functions of their seed: they own a fresh
PCG64 generator and draw noise in a fixed order (initial state first, then
one draw per step that needs one).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import GridTooShort, ShapeMismatch, TOutOfRange
from .schedule import Schedule, SigmaGrid


def q_sample(x0: np.ndarray, t: int, eps: np.ndarray | None, sched: Schedule) -> np.ndarray:
    """Forward-process draw: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    abar(0) = 1, so t=0 returns x0 exactly and eps may be None there.
    """
    if not 0 <= t <= sched.T:
        raise TOutOfRange(f"t={t} outside [0, {sched.T}]")
    x0 = np.asarray(x0, dtype=np.float64)
    if t == 0:
        return x0.copy()
    if eps is None or np.shape(eps) != x0.shape:
        raise ShapeMismatch(f"eps shape {np.shape(eps)} != x0 shape {x0.shape}")
    ab = sched.abar(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def posterior_mean_coeffs(
    beta_t: float, alpha_t: float, abar_t: float, abar_prev: float
) -> tuple[float, float]:
    """Weights (on x0_hat, on x_t) of the posterior mean q(x_{t-1}|x_t, x0)."""
    denom = 1.0 - abar_t
    c0 = math.sqrt(abar_prev) * beta_t / denom
    ct = math.sqrt(alpha_t) * (1.0 - abar_prev) / denom
    return c0, ct


def posterior_step(
    x_t: np.ndarray,
    x0_hat: np.ndarray,
    t: int,
    sched: Schedule,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """One reverse step: sample q(x_{t-1} | x_t, x0_hat).

    The variance is beta_tilde_t = beta_t (1 - abar_{t-1}) / (1 - abar_t),
    which is exactly 0 at t=1, so the final step returns the posterior mean
    and ignores ``noise``.
    """
    if not 1 <= t <= sched.T:
        raise TOutOfRange(f"t={t} outside [1, {sched.T}]")
    x_t = np.asarray(x_t, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    if x_t.shape != x0_hat.shape:
        raise ShapeMismatch(f"x_t {x_t.shape} vs x0_hat {x0_hat.shape}")
    c0, ct = posterior_mean_coeffs(
        float(sched.beta[t - 1]), float(sched.alpha[t - 1]), sched.abar(t), sched.abar(t - 1)
    )
    mean = c0 * x0_hat + ct * x_t
    if t == 1:
        return mean
    var = float(sched.posterior_var[t - 1])
    if noise is None:
        return mean
    if np.shape(noise) != x_t.shape:
        raise ShapeMismatch(f"noise shape {np.shape(noise)} != state shape {x_t.shape}")
    return mean + math.sqrt(var) * noise


def ddpm_sample(
    denoiser,
    shape: tuple[int, ...],
    sched: Schedule,
    cond: np.ndarray | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Ancestral sampling: start from N(0, I) at t=T and walk down to t=0."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    for t in range(sched.T, 0, -1):
        x0_hat = denoiser.predict_x0(x, t, cond)
        if np.shape(x0_hat) != x.shape:
            raise ShapeMismatch(
                f"denoiser returned {np.shape(x0_hat)}, expected {x.shape}"
            )
        noise = rng.standard_normal(shape) if t > 1 else None
        x = posterior_step(x, x0_hat, t, sched, noise)
    return x


def sigma_to_t(sigma: float, sched: Schedule) -> int:
    """Nearest discrete step for a continuous noise level, via abar = 1/(1+s^2)."""
    target = 1.0 / (1.0 + sigma * sigma)
    idx = int(np.argmin(np.abs(sched.alpha_bar - target)))
    return idx + 1


def dpmpp2m_sample(
    denoiser,
    shape: tuple[int, ...],
    grid: SigmaGrid,
    sched: Schedule,
    cond: np.ndarray | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Second-order multistep sampler on a decreasing sigma grid.

    The state is variance-exploding (x = x0 + sigma * eps). Denoiser calls map
    a level sigma to the variance-preserving state via abar = 1/(1+sigma^2):
    the model sees sqrt(abar) * x at the nearest discrete step of ``sched``.

    With lam = -log sigma and h_i = lam_{i+1} - lam_i, the first update (and
    any update onto sigma = 0) is the first-order denoised-prediction step;
    later updates combine the current and previous predictions with weights
    (1 + 1/(2 r_i)) and -1/(2 r_i), where r_i = h_{i-1} / h_i. The final
    sigma = 0 step therefore returns the last denoised prediction.
    """
    sig = grid.sigmas
    if len(sig) < 3:
        raise GridTooShort(f"need at least 2 nonzero levels, got {len(sig) - 1}")
    rng = np.random.default_rng(seed)
    x = sig[0] * rng.standard_normal(shape)
    old_denoised: np.ndarray | None = None
    for i in range(len(sig) - 1):
        s, s_next = float(sig[i]), float(sig[i + 1])
        abar = 1.0 / (1.0 + s * s)
        t = sigma_to_t(s, sched)
        denoised = denoiser.predict_x0(math.sqrt(abar) * x, t, cond)
        if np.shape(denoised) != x.shape:
            raise ShapeMismatch(
                f"denoiser returned {np.shape(denoised)}, expected {x.shape}"
            )
        ratio = s_next / s
        if old_denoised is None or s_next == 0.0:
            x = ratio * x + (1.0 - ratio) * denoised
        else:
            h = math.log(s) - math.log(s_next)
            h_last = math.log(float(sig[i - 1])) - math.log(s)
            r = h_last / h
            combined = (1.0 + 1.0 / (2.0 * r)) * denoised - (1.0 / (2.0 * r)) * old_denoised
            x = ratio * x + (1.0 - ratio) * combined
        old_denoised = denoised
    return x
