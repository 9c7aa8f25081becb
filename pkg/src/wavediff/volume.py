"""Core volumetric data model: scalar volumes, binary masks, intensity
normalization, and masked removal (voiding).

All arrays are float64 (volumes) or uint8 (masks), stored x-fastest
(Fortran voxel order on disk maps to index [x, y, z] here). Operations are
pure: they return new objects and never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConstantVolume, DimMismatch, InvalidParams, InvalidPercentile

MODALITIES = ("t1n", "t1c", "t2w", "flair")


def _default_affine(spacing: tuple[float, float, float]) -> np.ndarray:
    aff = np.eye(4)
    aff[0, 0], aff[1, 1], aff[2, 2] = spacing
    return aff


@dataclass
class Volume:
    """A 3D scalar grid with voxel spacing and a voxel-to-world affine."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise DimMismatch(f"volume must be 3D with positive dims, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise InvalidParams("volume contains non-finite samples")
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.affine is None:
            self.affine = _default_affine(self.spacing)
        else:
            self.affine = np.asarray(self.affine, dtype=np.float64).reshape(4, 4)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "Volume":
        """Same geometry, new samples."""
        return Volume(data, spacing=self.spacing, affine=self.affine.copy())


@dataclass
class MaskVolume:
    """Binary 3D grid; values are exactly 0 or 1."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise DimMismatch(f"mask must be 3D with positive dims, got {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise InvalidParams("mask values must be exactly 0 or 1")
        self.data = arr.astype(np.uint8)
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def count(self) -> int:
        return int(self.data.sum())

    def is_empty(self) -> bool:
        return self.count == 0


@dataclass(frozen=True)
class NormalizationParams:
    """Affine window: source intensity ``lo`` maps to -1, ``hi`` to +1."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.hi <= self.lo:
            raise InvalidParams(f"need hi > lo, got lo={self.lo}, hi={self.hi}")


@dataclass
class Case:
    """One dataset record: modality volumes, masks, voided scan, and the
    per-modality normalization windows used to map them to [-1, 1]."""

    modalities: dict[str, Volume] = field(default_factory=dict)
    healthy_mask: MaskVolume | None = None
    unhealthy_mask: MaskVolume | None = None
    brain_mask: MaskVolume | None = None
    voided: Volume | None = None
    norm: dict[str, NormalizationParams] = field(default_factory=dict)
    pad: tuple[int, int, int] = (0, 0, 0)
    case_id: str = ""

    def __post_init__(self) -> None:
        dims = None
        members = list(self.modalities.values())
        members += [m for m in (self.healthy_mask, self.unhealthy_mask, self.brain_mask) if m]
        if self.voided is not None:
            members.append(self.voided)
        for m in members:
            if dims is None:
                dims = m.dims
            elif m.dims != dims:
                raise DimMismatch(f"case members disagree on dims: {m.dims} vs {dims}")

    @property
    def dims(self) -> tuple[int, int, int] | None:
        for v in self.modalities.values():
            return v.dims
        return self.voided.dims if self.voided is not None else None


def _nearest_rank_percentile(flat: np.ndarray, pct: float) -> float:
    # classic nearest-rank definition: ceil(p/100 * n)-th smallest, min at p=0
    return float(np.percentile(flat, pct, method="inverted_cdf"))


def normalize_volume(
    v: Volume, lo_pct: float = 0.5, hi_pct: float = 99.5
) -> tuple[Volume, NormalizationParams]:
    """Percentile-clip and affinely map intensities into [-1, 1].

    ``lo_pct``/``hi_pct`` select nearest-rank percentiles of the input; values
    outside the window are clipped to the window edges before mapping.
    """
    if not (0.0 <= lo_pct < hi_pct <= 100.0):
        raise InvalidPercentile(f"need 0 <= lo < hi <= 100, got ({lo_pct}, {hi_pct})")
    flat = v.data.ravel()
    if flat.min() == flat.max():
        raise ConstantVolume("cannot normalize a constant volume")
    lo = _nearest_rank_percentile(flat, lo_pct)
    hi = _nearest_rank_percentile(flat, hi_pct)
    if hi <= lo:
        raise ConstantVolume(f"degenerate percentile window [{lo}, {hi}]")
    params = NormalizationParams(lo, hi)
    mapped = 2.0 * (np.clip(v.data, lo, hi) - lo) / (hi - lo) - 1.0
    return v.with_data(mapped), params


def denormalize_volume(v: Volume, p: NormalizationParams) -> Volume:
    """Inverse of the in-window branch of :func:`normalize_volume`."""
    if p.hi <= p.lo:
        raise InvalidParams(f"need hi > lo, got {p}")
    return v.with_data((v.data + 1.0) * 0.5 * (p.hi - p.lo) + p.lo)


def apply_void(v: Volume, m: MaskVolume, fill: float = 0.0) -> Volume:
    """Replace samples under the mask with ``fill``; keep the rest."""
    if v.dims != m.dims:
        raise DimMismatch(f"volume dims {v.dims} != mask dims {m.dims}")
    return v.with_data(np.where(m.data > 0, float(fill), v.data))
