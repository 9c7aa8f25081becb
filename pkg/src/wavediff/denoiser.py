"""Pluggable x0-predictors and the desk-scale trainable denoiser.

Two denoisers ship with the package:

* :class:`GaussianOracleDenoiser` — the exact Bayes posterior mean for data
  drawn from N(mu, sigma0^2 I). It is the reference against which both
  samplers are verified: feeding it to the samplers must reproduce the target
  Gaussian to Monte Carlo accuracy.

* :class:`AffineDenoiser` — a per-time-bin affine map
  ``x0_hat = gain_b * x_t + bias_b (+ sum_k cond_gain_b[k] * cond[k])``.
  It is deliberately tiny: small enough that gradients are checkable against
  finite differences and per-bin optima have closed forms, yet expressive
  enough that the conditional training pipelines are functionally distinct.

Training draws one (case, t, eps) triple per sample and builds the noisy
input exactly as the matching sampling pipeline prescribes: plain objectives
noise everywhere; the always-known variants noise only the region to be
inpainted, and the healthy-only variant additionally voids the unhealthy
region of the input.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .diffusion import q_sample
from .errors import (
    BinOutOfRange,
    EmptyDataset,
    InvalidParams,
    MissingMask,
    NonFiniteLoss,
    ShapeMismatch,
    TOutOfRange,
    WrongModalityCount,
)
from .objectives import (
    LOCAL_OBJECTIVES,
    OBJECTIVES,
    LossWeights,
    loss_global_grad,
    loss_local_grad,
)
from .schedule import Schedule


# ---------------------------------------------------------------------------
# Gaussian oracle


@dataclass(frozen=True)
class GaussianDataSpec:
    """Data model x0 ~ N(mu, sigma0^2 I); mu may be a scalar or a grid."""

    mu: float | np.ndarray
    sigma0: float

    def __post_init__(self) -> None:
        if not self.sigma0 > 0:
            raise InvalidParams(f"sigma0 must be > 0, got {self.sigma0}")


def oracle_predict_x0(
    x_t: np.ndarray, t: int, sched: Schedule, gauss: GaussianDataSpec
) -> np.ndarray:
    """Exact posterior mean E[x0 | x_t] for Gaussian data.

    With abar = abar_t and s2 = sigma0^2:
        x0_hat = mu + sqrt(abar) s2 / (abar s2 + 1 - abar) * (x_t - sqrt(abar) mu)
    """
    if t < 1:
        raise TOutOfRange(f"t={t} must be >= 1")
    ab = sched.abar(t)
    s2 = gauss.sigma0**2
    k = np.sqrt(ab) * s2 / (ab * s2 + 1.0 - ab)
    return gauss.mu + k * (np.asarray(x_t, dtype=np.float64) - np.sqrt(ab) * gauss.mu)


class GaussianOracleDenoiser:
    """Bayes-optimal denoiser for a known Gaussian data distribution."""

    def __init__(self, gauss: GaussianDataSpec, sched: Schedule):
        self.gauss = gauss
        self.sched = sched
        self.name = f"oracle:mu={gauss.mu},sigma0={gauss.sigma0}"

    def predict_x0(self, x_t, t, cond=None):
        return oracle_predict_x0(x_t, t, self.sched, self.gauss)


# ---------------------------------------------------------------------------
# Affine denoiser


@dataclass
class AffineDenoiserParams:
    """Per-time-bin, per-channel gains and biases; optional gains for
    conditioning channels whose (summed) contribution is added to every
    data channel."""

    bins: int
    T: int
    gain: np.ndarray  # (bins, channels)
    bias: np.ndarray  # (bins, channels)
    cond_gain: np.ndarray | None = None  # (bins, cond_channels)

    def __post_init__(self) -> None:
        self.gain = np.asarray(self.gain, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.bins < 1 or self.T < 1:
            raise InvalidParams(f"need bins >= 1 and T >= 1, got {self.bins}, {self.T}")
        if self.gain.shape != self.bias.shape or self.gain.ndim != 2 or self.gain.shape[0] != self.bins:
            raise InvalidParams("gain/bias must both be (bins, channels)")
        if self.cond_gain is not None:
            self.cond_gain = np.asarray(self.cond_gain, dtype=np.float64)
            if self.cond_gain.ndim != 2 or self.cond_gain.shape[0] != self.bins:
                raise InvalidParams("cond_gain must be (bins, cond_channels)")
        for arr in (self.gain, self.bias, self.cond_gain):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise InvalidParams("parameters must be finite")

    @property
    def channels(self) -> int:
        return self.gain.shape[1]

    @property
    def cond_channels(self) -> int:
        return 0 if self.cond_gain is None else self.cond_gain.shape[1]

    def bin_for(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise BinOutOfRange(f"t={t} outside [1, {self.T}]")
        return (t - 1) * self.bins // self.T

    @classmethod
    def initial(cls, bins: int, channels: int, T: int, cond_channels: int = 0):
        """Identity map start: gain 1, bias 0, conditioning contribution 0."""
        cg = np.zeros((bins, cond_channels)) if cond_channels else None
        return cls(bins=bins, T=T, gain=np.ones((bins, channels)),
                   bias=np.zeros((bins, channels)), cond_gain=cg)

    def copy(self) -> "AffineDenoiserParams":
        return AffineDenoiserParams(
            bins=self.bins, T=self.T, gain=self.gain.copy(), bias=self.bias.copy(),
            cond_gain=None if self.cond_gain is None else self.cond_gain.copy(),
        )


def affine_predict_x0(
    params: AffineDenoiserParams, x_t: np.ndarray, t: int, cond: np.ndarray | None = None
) -> np.ndarray:
    """Apply the per-bin affine map; ``x_t`` is (channels, x, y, z)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.ndim != 4 or x_t.shape[0] != params.channels:
        raise ShapeMismatch(
            f"expected ({params.channels}, x, y, z) input, got {x_t.shape}"
        )
    b = params.bin_for(t)
    y = params.gain[b][:, None, None, None] * x_t + params.bias[b][:, None, None, None]
    if cond is not None and params.cond_gain is not None:
        cond = np.asarray(cond, dtype=np.float64)
        if cond.shape[0] != params.cond_channels:
            raise ShapeMismatch(
                f"expected {params.cond_channels} conditioning channels, got {cond.shape[0]}"
            )
        y = y + np.tensordot(params.cond_gain[b], cond, axes=1)[None]
    return y


class AffineDenoiser:
    """Denoiser wrapper binding :class:`AffineDenoiserParams`."""

    def __init__(self, params: AffineDenoiserParams, name: str = "affine"):
        self.params = params
        self.name = name

    def predict_x0(self, x_t, t, cond=None):
        return affine_predict_x0(self.params, x_t, t, cond)


# ---------------------------------------------------------------------------
# Training


@dataclass
class LatentCase:
    """One training record in the coefficient domain: clean coefficients and
    the (subband-resolution) masks that condition the pipelines."""

    x0: np.ndarray  # (channels, hx, hy, hz)
    m_h: np.ndarray | None = None  # (hx, hy, hz) binary
    m_uh: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        if self.x0.ndim != 4:
            raise ShapeMismatch(f"latent must be (channels, x, y, z), got {self.x0.shape}")


@dataclass
class TrainingSample:
    x_t: np.ndarray
    x0: np.ndarray
    cond: np.ndarray | None
    m_h: np.ndarray | None
    m_uh: np.ndarray | None
    t: int


@dataclass
class TrainConfig:
    lr: float = 0.05
    iters: int = 2000
    batch: int = 32
    seed: int = 0
    lr_decay: float = 200.0  # step lr = lr / (1 + iter / lr_decay)
    bins: int = 1


@dataclass
class TrainResult:
    params: AffineDenoiserParams
    losses: np.ndarray


def make_training_sample(
    case: LatentCase, t: int, eps: np.ndarray, objective: str, sched: Schedule
) -> TrainingSample:
    """Build the noisy model input and conditioning for one draw, following
    the pipeline that matches the objective."""
    x0 = case.x0
    if objective in ("D", "Dg"):
        if objective == "Dg" and x0.shape[0] % 4 != 0:
            raise WrongModalityCount(
                f"Dg needs 4 modality groups; {x0.shape[0]} channels not divisible by 4"
            )
        return TrainingSample(q_sample(x0, t, eps, sched), x0, None, None, None, t)
    if case.m_h is None:
        raise MissingMask(f"objective {objective} needs a healthy mask on every case")
    mh = case.m_h[None]
    if objective == "DC":
        if case.m_uh is None:
            raise MissingMask("DC needs an unhealthy mask on every case")
        cond = np.stack([case.m_h, case.m_uh]).astype(np.float64)
        return TrainingSample(q_sample(x0, t, eps, sched), x0, cond, case.m_h, case.m_uh, t)
    if objective == "AK":
        x_t = mh * q_sample(x0, t, eps, sched) + (1.0 - mh) * x0
        return TrainingSample(x_t, x0, case.m_h[None].astype(np.float64), case.m_h, None, t)
    if objective == "AKH":
        if case.m_uh is None:
            raise MissingMask("AKH needs an unhealthy mask on every case")
        x0_void = (1.0 - case.m_uh[None]) * x0
        x_t = mh * q_sample(x0_void, t, eps, sched) + (1.0 - mh) * x0_void
        return TrainingSample(x_t, x0, case.m_h[None].astype(np.float64), case.m_h, case.m_uh, t)
    raise MissingMask(f"unknown objective {objective!r}")


def draw_training_batch(
    dataset: list[LatentCase],
    objective: str,
    sched: Schedule,
    rng: np.random.Generator,
    batch: int,
) -> list[TrainingSample]:
    samples = []
    for _ in range(batch):
        case = dataset[int(rng.integers(len(dataset)))]
        t = int(rng.integers(1, sched.T + 1))
        eps = rng.standard_normal(case.x0.shape)
        samples.append(make_training_sample(case, t, eps, objective, sched))
    return samples


def _sample_loss_grad(
    params: AffineDenoiserParams, s: TrainingSample, objective: str, w: LossWeights
) -> tuple[float, np.ndarray]:
    y = affine_predict_x0(params, s.x_t, s.t, s.cond)
    if objective == "Dg":
        groups = y.shape[0] // 4
        loss, g = loss_global_grad(
            y.reshape(4, groups, *y.shape[1:]), s.x0.reshape(4, groups, *y.shape[1:])
        )
        return loss, g.reshape(y.shape)
    return loss_local_grad(objective, y, s.x0, s.m_h, s.m_uh, w)


def batch_loss(
    params: AffineDenoiserParams,
    samples: list[TrainingSample],
    objective: str,
    w: LossWeights = LossWeights(),
) -> float:
    """Mean loss of a fixed batch; pure in ``params`` (finite-differencible)."""
    total = 0.0
    for s in samples:
        loss, _ = _sample_loss_grad(params, s, objective, w)
        total += loss
    return total / len(samples)


def batch_loss_grad(
    params: AffineDenoiserParams,
    samples: list[TrainingSample],
    objective: str,
    w: LossWeights = LossWeights(),
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss and its analytic gradient for every parameter array."""
    g_gain = np.zeros_like(params.gain)
    g_bias = np.zeros_like(params.bias)
    g_cond = None if params.cond_gain is None else np.zeros_like(params.cond_gain)
    total = 0.0
    for s in samples:
        loss, dy = _sample_loss_grad(params, s, objective, w)
        total += loss
        b = params.bin_for(s.t)
        g_gain[b] += np.sum(dy * s.x_t, axis=(1, 2, 3))
        g_bias[b] += np.sum(dy, axis=(1, 2, 3))
        if g_cond is not None and s.cond is not None:
            # conditioning contribution is shared by all data channels
            g_cond[b] += np.tensordot(np.sum(dy, axis=0), s.cond, axes=([0, 1, 2], [1, 2, 3]))
    n = len(samples)
    grads = {"gain": g_gain / n, "bias": g_bias / n}
    if g_cond is not None:
        grads["cond_gain"] = g_cond / n
    return total / n, grads


def _cond_channels_for(objective: str) -> int:
    return {"D": 0, "Dg": 0, "DC": 2, "AK": 1, "AKH": 1}[objective]


def train_affine(
    dataset: list[LatentCase],
    objective: str,
    lambda1: float,
    sched: Schedule,
    opt: TrainConfig = TrainConfig(),
) -> TrainResult:
    """Stochastic gradient descent on the selected objective.

    Per iteration one batch of (case, t, eps) triples is drawn, the noisy
    inputs are assembled per the objective's pipeline, and all parameter
    arrays take one descent step. Deterministic given ``opt.seed``.
    """
    if not dataset:
        raise EmptyDataset("training needs at least one case")
    if objective not in OBJECTIVES:
        raise MissingMask(f"unknown objective {objective!r}; pick one of {OBJECTIVES}")
    if opt.lr <= 0:
        raise InvalidParams(f"lr must be > 0, got {opt.lr}")
    channels = dataset[0].x0.shape[0]
    for c in dataset:
        if c.x0.shape[0] != channels:
            raise ShapeMismatch("all cases must share the channel count")
    w = LossWeights(lambda1)
    params = AffineDenoiserParams.initial(
        opt.bins, channels, sched.T, cond_channels=_cond_channels_for(objective)
    )
    rng = np.random.default_rng(opt.seed)
    losses = np.empty(opt.iters)
    for i in range(opt.iters):
        samples = draw_training_batch(dataset, objective, sched, rng, opt.batch)
        loss, grads = batch_loss_grad(params, samples, objective, w)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss diverged at iteration {i}: {loss}")
        losses[i] = loss
        lr = opt.lr / (1.0 + i / opt.lr_decay)
        params.gain -= lr * grads["gain"]
        params.bias -= lr * grads["bias"]
        if params.cond_gain is not None:
            params.cond_gain -= lr * grads["cond_gain"]
    return TrainResult(params=params, losses=losses)


# ---------------------------------------------------------------------------
# Checkpoints: flat little-endian float64 blob + JSON sidecar


def schedule_hash(sched: Schedule) -> str:
    payload = json.dumps(sched.to_manifest(), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def save_checkpoint(
    params: AffineDenoiserParams, path: str | Path, objective: str = "", sched: Schedule | None = None
) -> None:
    path = Path(path)
    parts = [params.gain.ravel(), params.bias.ravel()]
    if params.cond_gain is not None:
        parts.append(params.cond_gain.ravel())
    blob = np.concatenate(parts).astype("<f8")
    path.write_bytes(blob.tobytes())
    meta = {
        "bins": params.bins,
        "channels": params.channels,
        "cond_channels": params.cond_channels,
        "T": params.T,
        "objective": objective,
        "schedule": None if sched is None else sched.to_manifest(),
        "schedule_hash": None if sched is None else schedule_hash(sched),
        "dtype": "<f8",
        "layout": ["gain", "bias", "cond_gain"],
    }
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_checkpoint(path: str | Path) -> tuple[AffineDenoiserParams, dict]:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f8")
    b, c, k = meta["bins"], meta["channels"], meta["cond_channels"]
    expected = b * c * 2 + b * k
    if raw.size != expected:
        raise InvalidParams(f"checkpoint holds {raw.size} values, sidecar implies {expected}")
    gain = raw[: b * c].reshape(b, c).copy()
    bias = raw[b * c : 2 * b * c].reshape(b, c).copy()
    cond = raw[2 * b * c :].reshape(b, k).copy() if k else None
    return AffineDenoiserParams(bins=b, T=meta["T"], gain=gain, bias=bias, cond_gain=cond), meta


# ---------------------------------------------------------------------------
# Synthetic data for desk-scale runs


def synthetic_latent_cases(
    n: int, size: int = 16, seed: int = 0, masks: str = "boxes", groups: int = 1
) -> list[LatentCase]:
    """Smooth random textures transformed to the coefficient domain.

    ``masks`` picks the mask style: "boxes" (disjoint random boxes pooled to
    subband resolution), "empty" (all-zero masks) or "none".
    """
    from .wavelet import dwt3_channels, pool_mask_to_half

    if masks not in ("boxes", "empty", "none"):
        raise InvalidParams(f"masks must be 'boxes', 'empty' or 'none', got {masks!r}")
    rng = np.random.default_rng(seed)
    half = size // 2
    cases = []
    for _ in range(n):
        vols = []
        for _ in range(groups):
            tex = gaussian_filter(rng.standard_normal((size, size, size)), sigma=1.5)
            tex = tex / tex.std()
            vols.append(tex)
        x0 = np.concatenate([dwt3_channels(v[None]) for v in vols], axis=0)
        m_h = m_uh = None
        if masks == "empty":
            m_h = np.zeros((half, half, half))
            m_uh = np.zeros((half, half, half))
        elif masks == "boxes":
            m_h_img = np.zeros((size, size, size))
            m_uh_img = np.zeros((size, size, size))
            q = max(2, size // 4)
            hx, hy, hz = (int(rng.integers(0, size - q)) for _ in range(3))
            m_h_img[hx : hx + q, hy : hy + q, hz : hz + q] = 1
            # unhealthy box confined to the opposite x half to keep it disjoint
            ux = int(rng.integers(0, size // 2 - q)) if hx >= size // 2 else int(
                rng.integers(size // 2, size - q)
            )
            uy, uz = (int(rng.integers(0, size - q)) for _ in range(2))
            m_uh_img[ux : ux + q, uy : uy + q, uz : uz + q] = 1
            m_h = pool_mask_to_half(m_h_img)
            m_uh = pool_mask_to_half(m_uh_img)
        cases.append(LatentCase(x0=x0, m_h=m_h, m_uh=m_uh))
    return cases
