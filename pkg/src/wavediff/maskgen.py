"""Synthetic mask generation and constrained placement.

Masks for training-time augmentation come from two sources with equal
probability: real masks from a library (randomly flipped/rotated through the
48-element axis-aligned symmetry group) and fresh parametric blobs (a random
ellipsoid roughened by thresholded smoothed noise). Placements draw a center
uniformly among voxels inside the brain and outside the unhealthy mask, and
reject candidates that leave the brain, touch unhealthy tissue, or overlap an
already placed region.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, label

from .errors import DegenerateSize, EmptyMask, PlacementExhausted
from .volume import MaskVolume


@dataclass
class MaskLibrary:
    entries: list[MaskVolume]
    source: str = "real"

    @classmethod
    def from_masks(cls, masks: list[MaskVolume], source: str = "real") -> "MaskLibrary":
        """Crop each mask to its bounding box so entries stamp cheaply."""
        entries = []
        for m in masks:
            if m.is_empty():
                continue
            idx = np.argwhere(m.data > 0)
            lo, hi = idx.min(axis=0), idx.max(axis=0) + 1
            entries.append(MaskVolume(m.data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]))
        return cls(entries=entries, source=source)


@dataclass
class PlacementPolicy:
    region_count_probs: tuple[float, float, float] = (0.45, 0.45, 0.10)
    source_prob_real: float = 0.5
    max_retries: int = 200
    blob_size_range: tuple[float, float] = (3.0, 6.0)
    blob_elongation: tuple[float, float] = (0.75, 1.35)
    blob_roughness: float = 0.3

    def __post_init__(self) -> None:
        if abs(sum(self.region_count_probs) - 1.0) > 1e-9:
            raise DegenerateSize(f"region probabilities must sum to 1: {self.region_count_probs}")
        if not 0.0 <= self.source_prob_real <= 1.0:
            raise DegenerateSize(f"source_prob_real outside [0,1]: {self.source_prob_real}")


@dataclass
class Placement:
    mask: MaskVolume
    region_masks: list[np.ndarray] = field(default_factory=list)

    @property
    def region_count(self) -> int:
        return len(self.region_masks)


def ellipsoid_mask(semi_axes: tuple[float, float, float]) -> np.ndarray:
    """Discrete ellipsoid (implicit surface <= 1) on a tight odd-sized grid."""
    a, b, c = semi_axes
    if min(a, b, c) <= 0:
        raise DegenerateSize(f"semi-axes must be positive, got {semi_axes}")
    r = int(np.ceil(max(a, b, c)))
    x, y, z = np.mgrid[-r : r + 1, -r : r + 1, -r : r + 1]
    return ((x / a) ** 2 + (y / b) ** 2 + (z / c) ** 2 <= 1.0).astype(np.uint8)


def generate_blob_mask(
    rng: np.random.Generator,
    size_range: tuple[float, float] = (3.0, 6.0),
    elongation_range: tuple[float, float] = (0.75, 1.35),
    roughness: float = 0.3,
    semi_axes: tuple[float, float, float] | None = None,
) -> MaskVolume:
    """One 6-connected random blob on a tight grid.

    Semi-axes are drawn per axis from ``size_range`` and scaled by a per-axis
    elongation factor (or passed explicitly). ``roughness`` in [0, 1] warps
    the ellipsoid's implicit surface with smoothed noise; the connected
    component containing the center survives, so the result is always a
    single nonempty component.
    """
    lo, hi = size_range
    if lo <= 0 or hi < lo or not 0.0 <= roughness <= 1.0:
        raise DegenerateSize(
            f"need 0 < lo <= hi and roughness in [0,1], got {size_range}, {roughness}"
        )
    if semi_axes is None:
        base = rng.uniform(lo, hi, size=3)
        stretch = rng.uniform(*elongation_range, size=3)
        semi_axes = tuple(np.maximum(base * stretch, 1.0))
    core = ellipsoid_mask(semi_axes)
    if roughness == 0.0:
        return MaskVolume(core)
    a, b, c = semi_axes
    r = int(np.ceil(max(a, b, c)))
    x, y, z = np.mgrid[-r : r + 1, -r : r + 1, -r : r + 1]
    implicit = (x / a) ** 2 + (y / b) ** 2 + (z / c) ** 2
    noise = gaussian_filter(rng.standard_normal(core.shape), sigma=1.2)
    noise = noise / (noise.std() + 1e-12)
    blob = implicit + roughness * noise <= 1.0
    blob[r, r, r] = True  # keep the center voxel so a component always exists
    labels, _ = label(blob)  # default structure: 6-connectivity
    return MaskVolume((labels == labels[r, r, r]).astype(np.uint8))


def apply_cube_symmetry(m: MaskVolume, perm: tuple[int, int, int], flips: tuple[int, int, int]) -> MaskVolume:
    """Apply one element of the 48-element axis-aligned symmetry group."""
    arr = np.transpose(m.data, perm)
    for axis, f in enumerate(flips):
        if f:
            arr = np.flip(arr, axis=axis)
    return MaskVolume(np.ascontiguousarray(arr))


def transform_real_mask(rng: np.random.Generator, m: MaskVolume) -> MaskVolume:
    """Uniformly random axis permutation and flips; voxel count preserved."""
    if m.is_empty():
        raise EmptyMask("cannot transform an empty mask")
    perm = tuple(int(i) for i in rng.permutation(3))
    flips = tuple(int(f) for f in rng.integers(0, 2, size=3))
    return apply_cube_symmetry(m, perm, flips)


def _bbox_center(arr: np.ndarray) -> np.ndarray:
    idx = np.argwhere(arr > 0)
    return (idx.min(axis=0) + idx.max(axis=0)) // 2


def _stamp(candidate: np.ndarray, center: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray | None:
    """Place the candidate so its bounding-box center lands on ``center``;
    None when it would leave the volume."""
    offset = center - _bbox_center(candidate)
    lo = offset
    hi = offset + np.array(candidate.shape)
    if np.any(lo < 0) or np.any(hi > np.array(shape)):
        return None
    out = np.zeros(shape, dtype=np.uint8)
    out[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] = candidate
    return out


def place_masks(
    rng: np.random.Generator,
    brain: MaskVolume,
    m_uh: MaskVolume | None = None,
    lib: MaskLibrary | None = None,
    policy: PlacementPolicy = PlacementPolicy(),
) -> Placement:
    """Draw 1-3 regions (probabilities from the policy) and place each under
    the hard constraints: fully inside the brain, zero overlap with the
    unhealthy mask, and mutually disjoint."""
    if brain.is_empty():
        raise EmptyMask("brain mask is empty")
    shape = brain.dims
    uh = m_uh.data if m_uh is not None else np.zeros(shape, dtype=np.uint8)
    if uh.shape != shape:
        raise EmptyMask(f"unhealthy mask dims {uh.shape} != brain dims {shape}")
    eligible = np.argwhere((brain.data > 0) & (uh == 0))
    if len(eligible) == 0:
        raise PlacementExhausted("no eligible centers inside brain and outside unhealthy mask")
    k = int(rng.choice((1, 2, 3), p=policy.region_count_probs))
    union = np.zeros(shape, dtype=np.uint8)
    regions: list[np.ndarray] = []
    for _ in range(k):
        placed = None
        for _attempt in range(policy.max_retries):
            use_real = (
                lib is not None and lib.entries and rng.random() < policy.source_prob_real
            )
            if use_real:
                entry = lib.entries[int(rng.integers(len(lib.entries)))]
                candidate = transform_real_mask(rng, entry).data
            else:
                candidate = generate_blob_mask(
                    rng,
                    size_range=policy.blob_size_range,
                    elongation_range=policy.blob_elongation,
                    roughness=policy.blob_roughness,
                ).data
            center = eligible[int(rng.integers(len(eligible)))]
            region = _stamp(candidate, center, shape)
            if region is None:
                continue
            if np.any(region & uh) or np.any(region & (1 - brain.data)) or np.any(region & union):
                continue
            placed = region
            break
        if placed is None:
            raise PlacementExhausted(
                f"could not place a region after {policy.max_retries} retries"
            )
        union |= placed
        regions.append(placed)
    return Placement(mask=MaskVolume(union), region_masks=regions)


def shift_unhealthy(
    rng: np.random.Generator,
    m_uh: MaskVolume,
    brain: MaskVolume,
    max_retries: int = 200,
    transform: bool = False,
) -> MaskVolume:
    """Translate the unhealthy mask to healthy territory: the shifted copy
    must lie inside the brain and miss the original. Voxel count preserved."""
    if m_uh.is_empty():
        raise EmptyMask("unhealthy mask is empty")
    shape = brain.dims
    idx = np.argwhere(m_uh.data > 0)
    lo, hi = idx.min(axis=0), idx.max(axis=0) + 1
    cropped = MaskVolume(m_uh.data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]])
    eligible = np.argwhere((brain.data > 0) & (m_uh.data == 0))
    if len(eligible) == 0:
        raise PlacementExhausted("no eligible centers")
    for _attempt in range(max_retries):
        candidate = transform_real_mask(rng, cropped).data if transform else cropped.data
        center = eligible[int(rng.integers(len(eligible)))]
        shifted = _stamp(candidate, center, shape)
        if shifted is None:
            continue
        if np.any(shifted & m_uh.data) or np.any(shifted & (1 - brain.data)):
            continue
        return MaskVolume(shifted)
    raise PlacementExhausted(f"could not shift the mask after {max_retries} retries")
