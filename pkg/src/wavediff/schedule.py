"""Noise schedules for the diffusion process.

Two discrete beta schedules (linear, cosine) for arbitrary step counts T, and
the rho-warped sigma grid used by the second-order multistep sampler.

Conventions:
  - steps are 1-based: beta_t for t = 1..T is stored at ``beta[t-1]``;
  - alpha_bar(0) == 1 by definition, so drawing at t=0 returns the data;
  - the linear schedule scales its endpoints by 1000/T so the total noise
    budget is roughly preserved when sampling with more steps than the
    T=1000 training default. Betas are capped at 0.999, which only engages
    for very small T where the rescaled endpoint would reach 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidRange, InvalidT, TOutOfRange

BETA_START = 1e-4
BETA_END = 0.02
COSINE_S = 0.008
MAX_BETA = 0.999

SCHEDULE_KINDS = ("linear", "cosine")


@dataclass(frozen=True)
class Schedule:
    kind: str
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_var: np.ndarray

    def abar(self, t: int) -> float:
        """alpha_bar at step t, with abar(0) = 1."""
        if not 0 <= t <= self.T:
            raise TOutOfRange(f"t={t} outside [0, {self.T}]")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def sigma(self, t: int) -> float:
        """Variance-preserving noise level: sigma^2 = (1 - abar) / abar."""
        ab = self.abar(t)
        return float(np.sqrt((1.0 - ab) / ab))

    def to_manifest(self) -> dict:
        return {
            "kind": self.kind,
            "T": self.T,
            "beta_1": float(self.beta[0]),
            "beta_T": float(self.beta[-1]),
        }


def build_schedule(kind: str, T: int) -> Schedule:
    """Construct a schedule of the given kind with T steps."""
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise InvalidT(f"T must be an integer >= 1, got {T!r}")
    if kind == "linear":
        scale = 1000.0 / T
        beta = np.linspace(BETA_START * scale, BETA_END * scale, T)
        beta = np.minimum(beta, MAX_BETA)
    elif kind == "cosine":
        t = np.arange(T + 1, dtype=np.float64)
        f = np.cos(((t / T) + COSINE_S) / (1.0 + COSINE_S) * np.pi / 2.0) ** 2
        abar = f / f[0]
        beta = np.minimum(1.0 - abar[1:] / abar[:-1], MAX_BETA)
    else:
        raise InvalidT(f"unknown schedule kind {kind!r}")

    if np.any(beta <= 0.0) or np.any(beta >= 1.0):
        raise InvalidT(f"schedule produced beta outside (0,1) for kind={kind}, T={T}")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    abar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    posterior_var = beta * (1.0 - abar_prev) / (1.0 - alpha_bar)
    return Schedule(
        kind=kind,
        T=int(T),
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        posterior_var=posterior_var,
    )


@dataclass(frozen=True)
class SigmaGrid:
    """n+1 strictly decreasing noise levels ending in an exact 0."""

    sigmas: np.ndarray
    rho: float
    sigma_min: float
    sigma_max: float

    @property
    def n(self) -> int:
        return len(self.sigmas) - 1

    def to_manifest(self) -> dict:
        return {
            "n": self.n,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "rho": self.rho,
        }


def karras_sigmas(
    n: int, sigma_min: float = 0.002, sigma_max: float = 80.0, rho: float = 7.0
) -> SigmaGrid:
    """Rho-warped decreasing sigma grid with an appended zero.

    sigma_i = (smax^(1/rho) + i/(n-1) * (smin^(1/rho) - smax^(1/rho)))^rho
    """
    if n < 2:
        raise InvalidRange(f"need n >= 2 grid points, got {n}")
    if not (0.0 < sigma_min < sigma_max) or rho <= 0.0:
        raise InvalidRange(
            f"need 0 < sigma_min < sigma_max and rho > 0, got ({sigma_min}, {sigma_max}, {rho})"
        )
    ramp = np.arange(n, dtype=np.float64) / (n - 1)
    inv_rho = 1.0 / rho
    sig = (sigma_max**inv_rho + ramp * (sigma_min**inv_rho - sigma_max**inv_rho)) ** rho
    return SigmaGrid(
        sigmas=np.append(sig, 0.0),
        rho=float(rho),
        sigma_min=float(sigma_min),
        sigma_max=float(sigma_max),
    )
