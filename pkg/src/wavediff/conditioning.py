"""Conditional sampling pipelines.

Three local inpainting variants and three global missing-modality variants,
all operating in the wavelet coefficient domain with image-resolution masks
max-pooled to subband resolution.

Inpainting ("m_h" marks the region to generate):

* replace — unconditional reverse walk; after every step the complement of
  the region of interest is overwritten with a forward-process draw of the
  reference scan at the new time (clean at t=0).
* ak — the known region never carries noise: the state starts as noise
  inside the region and the voided scan's coefficients outside, and the
  outside is re-imposed after every step. The denoiser sees the pooled
  region mask as a conditioning channel.
* akh — same walk as ``ak`` but the unhealthy region of the input is voided
  before transforming, so the model only ever sees healthy tissue.

Every inpainting variant finishes with an image-space composition
``out = m_h * reconstruction + (1 - m_h) * input`` so the known region is
preserved bitwise: wavelet-domain replacement alone leaks across subband
supports near mask edges.

Missing-modality synthesis (modality order t1n, t1c, t2w, flair):

* default — the model sees all four modality groups; known groups are
  forward-process draws refreshed at each step's target time, the missing
  group is iterated.
* kat — known groups stay clean at every step; indicator channels mark the
  missing modality.
* k3t1 — the model maps the three known groups (plus indicator channels) to
  a prediction of the missing one; only the missing group's state is
  iterated and it is never a model input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diffusion import posterior_step, q_sample, sigma_to_t
from .errors import (
    BadIndex,
    ChannelContractMismatch,
    EmptyMask,
    MissingScan,
    MissingUnhealthyMask,
    ShapeMismatch,
    WrongMissingCount,
)
from .schedule import Schedule, SigmaGrid
from .volume import MODALITIES, MaskVolume, NormalizationParams, Volume, denormalize_volume
from .wavelet import dwt3_channels, idwt3_channels, pool_mask_to_half

INPAINT_VARIANTS = ("replace", "ak", "akh")
SYNTH_PIPELINES = ("default", "kat", "k3t1")
SAMPLERS = ("ddpm", "dpmpp2m")


def build_conditioning_channels(
    kind: str,
    m_h: MaskVolume | np.ndarray | None = None,
    m_uh: MaskVolume | np.ndarray | None = None,
    missing_idx: int | None = None,
    half_dims: tuple[int, int, int] | None = None,
) -> np.ndarray:
    """Assemble conditioning channels at subband resolution.

    ``masks``: one max-pooled channel per provided mask (m_h first).
    ``indicator``: four constant channels; the missing modality's channel is
    all ones, the others all zeros.
    """
    if kind == "masks":
        chans = []
        for m in (m_h, m_uh):
            if m is None:
                continue
            data = m.data if isinstance(m, MaskVolume) else np.asarray(m)
            chans.append(pool_mask_to_half(data))
        if not chans:
            raise EmptyMask("mask conditioning needs at least one mask")
        return np.stack(chans)
    if kind == "indicator":
        if missing_idx is None or not 0 <= int(missing_idx) <= 3:
            raise BadIndex(f"missing_idx must be in 0..3, got {missing_idx}")
        if half_dims is None:
            raise BadIndex("indicator channels need half_dims")
        chans = np.zeros((4, *half_dims))
        chans[int(missing_idx)] = 1.0
        return chans
    raise BadIndex(f"unknown conditioning kind {kind!r}")


@dataclass
class InpaintRequest:
    """Inputs for one inpainting run. ``scan`` is the full reference for the
    replace variant and the voided scan for ak/akh; intensities are expected
    in normalized [-1, 1] space."""

    scan: Volume
    m_h: MaskVolume
    variant: str
    sched: Schedule
    m_uh: MaskVolume | None = None
    sampler: str = "ddpm"
    sigma_grid: SigmaGrid | None = None
    seed: int = 0
    void_fill: float = 0.0

    def __post_init__(self) -> None:
        if self.variant not in INPAINT_VARIANTS:
            raise BadIndex(f"variant must be one of {INPAINT_VARIANTS}, got {self.variant!r}")
        if self.sampler not in SAMPLERS:
            raise BadIndex(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.scan is None:
            raise MissingScan("inpainting needs an input scan")
        if self.scan.dims != self.m_h.dims:
            raise ShapeMismatch(f"scan dims {self.scan.dims} != mask dims {self.m_h.dims}")
        if self.variant == "akh" and self.m_uh is None:
            raise MissingUnhealthyMask("akh voids the unhealthy region; m_uh required")


def _compose(region: MaskVolume, inside: np.ndarray, outside: Volume) -> Volume:
    """Image-space composition: generated values inside the region, the
    original input bitwise outside it."""
    return outside.with_data(np.where(region.data > 0, inside, outside.data))


def _sigma_grid_for(sched: Schedule, grid: SigmaGrid | None, n_default: int = 50) -> SigmaGrid:
    from .schedule import karras_sigmas

    if grid is not None:
        return grid
    return karras_sigmas(n_default, sigma_min=sched.sigma(1), sigma_max=sched.sigma(sched.T))


def repaint_inpaint(denoiser, req: InpaintRequest) -> Volume:
    """Replacement conditioning with a full (non-voided) reference scan."""
    if req.variant != "replace":
        raise BadIndex(f"repaint_inpaint handles variant 'replace', got {req.variant!r}")
    if req.m_h.is_empty():
        return req.scan.with_data(req.scan.data.copy())  # no ROI: nothing to generate
    s0 = dwt3_channels(req.scan.data[None])
    roi = pool_mask_to_half(req.m_h.data)[None]
    rng = np.random.default_rng(req.seed)
    if req.sampler == "ddpm":
        sched = req.sched
        x = rng.standard_normal(s0.shape)
        for t in range(sched.T, 0, -1):
            x0_hat = denoiser.predict_x0(x, t, None)
            noise = rng.standard_normal(s0.shape) if t > 1 else None
            x = posterior_step(x, x0_hat, t, sched, noise)
            known = q_sample(s0, t - 1, rng.standard_normal(s0.shape) if t > 1 else None, sched)
            x = roi * x + (1.0 - roi) * known
    else:
        grid = _sigma_grid_for(req.sched, req.sigma_grid)
        x = _dpmpp2m_masked(denoiser, s0.shape, grid, req.sched, None, rng,
                            roi=roi, known_clean=s0, known_gets_noise=True)
    recon = idwt3_channels(x)[0]
    return _compose(req.m_h, recon, req.scan)


def known_region_inpaint(denoiser, req: InpaintRequest) -> Volume:
    """Always-known conditioning: the state outside the region is the voided
    scan's coefficients at every step, never noised."""
    if req.variant not in ("ak", "akh"):
        raise BadIndex(f"known_region_inpaint handles 'ak'/'akh', got {req.variant!r}")
    if req.m_h.is_empty():
        raise EmptyMask("inpainting region is empty")
    voided = req.scan
    if req.variant == "akh":
        if req.m_uh is None:
            raise MissingUnhealthyMask("akh needs the unhealthy mask")
        voided = voided.with_data(
            np.where(req.m_uh.data > 0, req.void_fill, voided.data)
        )
    s_void = dwt3_channels(voided.data[None])
    roi = pool_mask_to_half(req.m_h.data)[None]
    cond = build_conditioning_channels("masks", m_h=req.m_h)
    rng = np.random.default_rng(req.seed)
    if req.sampler == "ddpm":
        sched = req.sched
        x = roi * rng.standard_normal(s_void.shape) + (1.0 - roi) * s_void
        for t in range(sched.T, 0, -1):
            x0_hat = denoiser.predict_x0(x, t, cond)
            noise = rng.standard_normal(s_void.shape) if t > 1 else None
            x = posterior_step(x, x0_hat, t, sched, noise)
            x = roi * x + (1.0 - roi) * s_void
    else:
        grid = _sigma_grid_for(req.sched, req.sigma_grid)
        x = _dpmpp2m_masked(denoiser, s_void.shape, grid, req.sched, cond, rng,
                            roi=roi, known_clean=s_void, known_gets_noise=False)
    recon = idwt3_channels(x)[0]
    return _compose(req.m_h, recon, voided)


def _dpmpp2m_masked(
    denoiser,
    shape: tuple[int, ...],
    grid: SigmaGrid,
    sched: Schedule,
    cond: np.ndarray | None,
    rng: np.random.Generator,
    roi: np.ndarray,
    known_clean: np.ndarray,
    known_gets_noise: bool,
) -> np.ndarray:
    """Multistep sampler with per-step known-region replacement.

    The state is variance-exploding. With ``known_gets_noise`` the known part
    tracks the forward process at the next level (known + sigma * eps); else
    it is held at the clean coefficients throughout.
    """
    sig = grid.sigmas
    x = sig[0] * rng.standard_normal(shape)
    if not known_gets_noise:
        x = roi * x + (1.0 - roi) * known_clean
    old = None
    for i in range(len(sig) - 1):
        s, s_next = float(sig[i]), float(sig[i + 1])
        abar = 1.0 / (1.0 + s * s)
        t = sigma_to_t(s, sched)
        denoised = denoiser.predict_x0(math.sqrt(abar) * x, t, cond)
        ratio = s_next / s
        if old is None or s_next == 0.0:
            x = ratio * x + (1.0 - ratio) * denoised
        else:
            h = math.log(s) - math.log(s_next)
            h_last = math.log(float(sig[i - 1])) - math.log(s)
            r = h_last / h
            x = ratio * x + (1.0 - ratio) * (
                (1.0 + 1.0 / (2.0 * r)) * denoised - (1.0 / (2.0 * r)) * old
            )
        old = denoised
        if known_gets_noise:
            known = known_clean if s_next == 0.0 else known_clean + s_next * rng.standard_normal(shape)
            x = roi * x + (1.0 - roi) * known
        else:
            x = roi * x + (1.0 - roi) * known_clean
    return x


@dataclass
class SynthRequest:
    """Inputs for one missing-modality run: the four modality slots in the
    fixed order (t1n, t1c, t2w, flair) with exactly one slot None."""

    modalities: dict[str, Volume | None]
    pipeline: str
    sched: Schedule
    seed: int = 0
    norm: NormalizationParams | None = None  # applied to the output if given

    missing_idx: int = field(init=False)

    def __post_init__(self) -> None:
        if self.pipeline not in SYNTH_PIPELINES:
            raise BadIndex(f"pipeline must be one of {SYNTH_PIPELINES}, got {self.pipeline!r}")
        missing = [k for k in MODALITIES if self.modalities.get(k) is None]
        extra = set(self.modalities) - set(MODALITIES)
        if extra:
            raise BadIndex(f"unknown modality names {sorted(extra)}")
        if len(missing) != 1:
            raise WrongMissingCount(f"exactly one modality may be missing, got {missing}")
        self.missing_idx = MODALITIES.index(missing[0])
        dims = {self.modalities[k].dims for k in MODALITIES if self.modalities.get(k) is not None}
        if len(dims) != 1:
            raise ShapeMismatch(f"known modalities disagree on dims: {dims}")

    @property
    def missing_name(self) -> str:
        return MODALITIES[self.missing_idx]


def _expect_shape(name: str, got: tuple[int, ...], want: tuple[int, ...]) -> None:
    if got != want:
        raise ChannelContractMismatch(f"{name} returned {got}, pipeline needs {want}")


def synth_missing(denoiser, req: SynthRequest) -> Volume:
    """Generate the missing modality; returns it in image space (denormalized
    when the request carries normalization parameters)."""
    known_names = [k for k in MODALITIES if k != req.missing_name]
    ref = req.modalities[known_names[0]]
    half = tuple(d // 2 for d in ref.dims)
    groups = {k: dwt3_channels(req.modalities[k].data[None]) for k in known_names}
    j = req.missing_idx
    sched = req.sched
    rng = np.random.default_rng(req.seed)

    def assemble(miss: np.ndarray, knowns: dict[str, np.ndarray]) -> np.ndarray:
        blocks = [miss if k == req.missing_name else knowns[k] for k in MODALITIES]
        return np.concatenate(blocks, axis=0)

    x_miss = rng.standard_normal((8, *half))
    if req.pipeline == "default":
        for t in range(sched.T, 0, -1):
            if t - 1 >= 1:
                knowns = {
                    k: q_sample(groups[k], t - 1, rng.standard_normal(groups[k].shape), sched)
                    for k in known_names
                }
            else:
                knowns = groups
            full = assemble(x_miss, knowns)
            x0_hat = denoiser.predict_x0(full, t, None)
            _expect_shape(denoiser.name, np.shape(x0_hat), full.shape)
            noise = rng.standard_normal(x_miss.shape) if t > 1 else None
            x_miss = posterior_step(x_miss, x0_hat[8 * j : 8 * j + 8], t, sched, noise)
    elif req.pipeline == "kat":
        cond = build_conditioning_channels("indicator", missing_idx=j, half_dims=half)
        for t in range(sched.T, 0, -1):
            full = assemble(x_miss, groups)
            x0_hat = denoiser.predict_x0(full, t, cond)
            _expect_shape(denoiser.name, np.shape(x0_hat), full.shape)
            noise = rng.standard_normal(x_miss.shape) if t > 1 else None
            x_miss = posterior_step(x_miss, x0_hat[8 * j : 8 * j + 8], t, sched, noise)
    else:  # k3t1: the model never sees the evolving missing group
        cond = build_conditioning_channels("indicator", missing_idx=j, half_dims=half)
        known_stack = np.concatenate([groups[k] for k in known_names], axis=0)
        for t in range(sched.T, 0, -1):
            x0_hat = denoiser.predict_x0(known_stack, t, cond)
            _expect_shape(denoiser.name, np.shape(x0_hat), x_miss.shape)
            noise = rng.standard_normal(x_miss.shape) if t > 1 else None
            x_miss = posterior_step(x_miss, x0_hat, t, sched, noise)

    out = Volume(idwt3_channels(x_miss)[0], spacing=ref.spacing, affine=ref.affine.copy())
    if req.norm is not None:
        out = denormalize_volume(out, req.norm)
    return out
