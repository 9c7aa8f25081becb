"""wavediff: conditional 3D wavelet diffusion for volumetric MRI.

Diffusion runs in the 8-channel half-resolution coefficient domain of a
single-level orthonormal Haar transform. The package provides the transform,
linear/cosine noise schedules plus a rho-warped sigma grid, an ancestral and
a second-order multistep sampler, four conditional training objectives with a
desk-scale trainable denoiser, six conditioning pipelines for inpainting and
missing-modality synthesis, constrained mask augmentation, ROI-restricted
quality metrics, and NIfTI-1 file I/O — all deterministic given a seed.
"""

__version__ = "0.1.0"

from .volume import Case, MaskVolume, NormalizationParams, Volume  # noqa: F401
from .wavelet import SubbandStack, dwt3, idwt3  # noqa: F401
from .schedule import Schedule, SigmaGrid, build_schedule, karras_sigmas  # noqa: F401
from .diffusion import ddpm_sample, dpmpp2m_sample, posterior_step, q_sample  # noqa: F401
from .denoiser import (  # noqa: F401
    AffineDenoiser,
    AffineDenoiserParams,
    GaussianDataSpec,
    GaussianOracleDenoiser,
    train_affine,
)
from .objectives import LossWeights, loss_global, loss_local  # noqa: F401
from .conditioning import (  # noqa: F401
    InpaintRequest,
    SynthRequest,
    known_region_inpaint,
    repaint_inpaint,
    synth_missing,
)
from .metrics import MetricReport, evaluate, mse_roi, psnr_roi, ssim_roi  # noqa: F401
