"""Single-level 3D orthonormal Haar analysis/synthesis.

One level of separable Haar along x, then y, then z turns an even-dimension
volume into eight half-resolution subband channels, cutting each spatial axis
in half (a factor-8 reduction in voxels per channel). The filter pair on
non-overlapping voxel pairs (a, b) is::

    low  = (a + b) / sqrt(2)
    high = (a - b) / sqrt(2)

which makes the transform orthonormal: the inverse is the adjoint, energy is
preserved (Parseval), and reconstruction is exact up to float rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadChannelCount, OddDimension
from .volume import Volume

SQRT2 = np.sqrt(2.0)

# channel order per input channel; letter i is the filter applied along axis i
SUBBAND_ORDER = ("lll", "llh", "lhl", "lhh", "hll", "hlh", "hhl", "hhh")


@dataclass
class SubbandStack:
    """8*C half-resolution subband grids, ordered LLL..HHH per input channel."""

    channels: np.ndarray  # (8*C, nx/2, ny/2, nz/2)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 4:
            raise BadChannelCount(f"expected (channels, x, y, z), got {self.channels.shape}")
        if self.channels.shape[0] % 8 != 0 or self.channels.shape[0] == 0:
            raise BadChannelCount(f"channel count {self.channels.shape[0]} not a multiple of 8")

    @property
    def half_dims(self) -> tuple[int, int, int]:
        return self.channels.shape[1:]

    @property
    def n_groups(self) -> int:
        """Number of 8-channel groups (one per input channel/modality)."""
        return self.channels.shape[0] // 8

    def group(self, g: int) -> np.ndarray:
        return self.channels[8 * g : 8 * (g + 1)]


def _split(a: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    even = [slice(None)] * a.ndim
    odd = [slice(None)] * a.ndim
    even[axis] = slice(0, None, 2)
    odd[axis] = slice(1, None, 2)
    e, o = a[tuple(even)], a[tuple(odd)]
    return (e + o) / SQRT2, (e - o) / SQRT2


def _merge(lo: np.ndarray, hi: np.ndarray, axis: int) -> np.ndarray:
    shape = list(lo.shape)
    shape[axis] *= 2
    out = np.empty(shape, dtype=np.float64)
    even = [slice(None)] * lo.ndim
    odd = [slice(None)] * lo.ndim
    even[axis] = slice(0, None, 2)
    odd[axis] = slice(1, None, 2)
    out[tuple(even)] = (lo + hi) / SQRT2
    out[tuple(odd)] = (lo - hi) / SQRT2
    return out


def _check_even(shape: tuple[int, ...]) -> None:
    if any(n % 2 for n in shape):
        raise OddDimension(f"all dims must be even, got {shape}")


def dwt3_channels(x: np.ndarray) -> np.ndarray:
    """Forward transform of a (C, X, Y, Z) array into (8*C, X/2, Y/2, Z/2)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    _check_even(x.shape[1:])
    lo_x, hi_x = _split(x, 1)
    out = []
    for bx in (lo_x, hi_x):
        lo_y, hi_y = _split(bx, 2)
        for by in (lo_y, hi_y):
            lo_z, hi_z = _split(by, 3)
            out.append(lo_z)
            out.append(hi_z)
    # out[i] has shape (C, hx, hy, hz); interleave so each input channel
    # contributes a contiguous LLL..HHH block
    stacked = np.stack(out, axis=1)  # (C, 8, hx, hy, hz)
    c = x.shape[0]
    return stacked.reshape(8 * c, *stacked.shape[2:])


def idwt3_channels(ch: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dwt3_channels`: (8*C, hx, hy, hz) -> (C, X, Y, Z)."""
    ch = np.asarray(ch, dtype=np.float64)
    if ch.ndim != 4 or ch.shape[0] % 8 != 0 or ch.shape[0] == 0:
        raise BadChannelCount(f"need a (8*C, hx, hy, hz) array, got {ch.shape}")
    c = ch.shape[0] // 8
    sub = ch.reshape(c, 8, *ch.shape[1:])
    # undo z, then y, then x
    per_x: list[np.ndarray] = []
    for bx in range(2):
        per_y = []
        for by in range(2):
            lo_z = sub[:, 4 * bx + 2 * by + 0]
            hi_z = sub[:, 4 * bx + 2 * by + 1]
            per_y.append(_merge(lo_z, hi_z, 3))
        per_x.append(_merge(per_y[0], per_y[1], 2))
    return _merge(per_x[0], per_x[1], 1)


def dwt3(v: Volume) -> SubbandStack:
    """Single-level forward transform of a volume into its 8 subbands."""
    _check_even(v.dims)
    return SubbandStack(dwt3_channels(v.data[None]), spacing=v.spacing, affine=v.affine.copy())


def idwt3(s: SubbandStack) -> Volume:
    """Exact inverse of :func:`dwt3` for a single 8-channel stack."""
    if s.channels.shape[0] != 8:
        raise BadChannelCount(
            f"idwt3 reconstructs one volume from 8 channels, got {s.channels.shape[0]}"
        )
    data = idwt3_channels(s.channels)[0]
    return Volume(data, spacing=s.spacing, affine=s.affine)


def pool_mask_to_half(mask: np.ndarray) -> np.ndarray:
    """2x2x2 max-pool a binary image-resolution mask down to subband
    resolution. Conservative: any touched half-res voxel counts as masked."""
    m = np.asarray(mask)
    _check_even(m.shape)
    nx, ny, nz = m.shape
    pooled = m.reshape(nx // 2, 2, ny // 2, 2, nz // 2, 2).max(axis=(1, 3, 5))
    return pooled.astype(np.float64)
