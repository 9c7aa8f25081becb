"""Bit-exact NIfTI-1 single-file reader/writer and dataset case loading.

Only the single-file (.nii / .nii.gz) flavor is handled: 348-byte header,
4-byte extension pad, voxel payload at ``vox_offset`` (>= 352) in x-fastest
(Fortran) order. Supported on-disk datatypes are uint8 (2), int16 (4) and
float32 (16). Endianness is decided by ``sizeof_hdr``: if it reads 348 after
a byte swap, every field and the payload are swapped. Files are written
little-endian with deterministic gzip framing (mtime 0), so identical inputs
produce identical bytes.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DimMismatch,
    DimOverflow,
    EndianDetectFailure,
    IoFailure,
    MissingRole,
    TruncatedFile,
    UnsupportedDatatype,
)
from .volume import MODALITIES, Case, MaskVolume, Volume, normalize_volume

HEADER_SIZE = 348
VOX_OFFSET = 352.0
MAGIC_SINGLE = b"n+1\x00"


def _is_single_magic(value) -> bool:
    # numpy S-types trim trailing NULs on read
    return bytes(value).ljust(4, b"\x00") == MAGIC_SINGLE

_HEADER_FIELDS = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
]

DTYPE_BY_CODE = {2: np.uint8, 4: np.int16, 16: np.float32}
CODE_BY_KIND = {"u1": 2, "i2": 4, "f4": 16}
BITPIX_BY_CODE = {2: 8, 4: 16, 16: 32}


def header_dtype(order: str = "<") -> np.dtype:
    return np.dtype(_HEADER_FIELDS).newbyteorder(order)


assert header_dtype().itemsize == HEADER_SIZE


@dataclass
class NiftiHeader:
    """Parsed header record plus the byte order it was stored in."""

    record: np.ndarray  # structured scalar (shape ()) in file byte order
    byte_order: str = "<"

    @property
    def dim(self) -> np.ndarray:
        return self.record["dim"]

    @property
    def datatype(self) -> int:
        return int(self.record["datatype"])

    @property
    def pixdim(self) -> np.ndarray:
        return self.record["pixdim"]

    @property
    def vox_offset(self) -> int:
        return int(self.record["vox_offset"])

    def spatial_shape(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.dim[1:4])

    def affine(self) -> np.ndarray:
        if int(self.record["sform_code"]) > 0:
            aff = np.eye(4)
            aff[0] = self.record["srow_x"]
            aff[1] = self.record["srow_y"]
            aff[2] = self.record["srow_z"]
            return aff
        return np.diag([*[float(p) for p in self.pixdim[1:4]], 1.0])


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_header(raw: bytes) -> NiftiHeader:
    if len(raw) < HEADER_SIZE:
        raise TruncatedFile(f"file holds {len(raw)} bytes, header needs {HEADER_SIZE}")
    for order in ("<", ">"):
        rec = np.frombuffer(raw[:HEADER_SIZE], dtype=header_dtype(order))[0]
        if int(rec["sizeof_hdr"]) == HEADER_SIZE:
            return NiftiHeader(record=rec, byte_order=order)
    raise EndianDetectFailure("sizeof_hdr is not 348 under either byte order")


def read_nifti(path: str | Path, as_mask: bool = False):
    """Read a single-file NIfTI-1 volume. Returns (Volume, header) or, with
    ``as_mask``, (MaskVolume, header) after validating the values are 0/1."""
    path = Path(path)
    raw = _read_bytes(path)
    hdr = _parse_header(raw)
    if not _is_single_magic(hdr.record["magic"]):
        raise BadMagic(f"magic {bytes(hdr.record['magic'])!r} is not a single-file NIfTI-1")
    ndim = int(hdr.dim[0])
    if not 1 <= ndim <= 7:
        raise BadMagic(f"dim[0]={ndim} outside [1, 7]")
    if hdr.datatype not in DTYPE_BY_CODE:
        raise UnsupportedDatatype(f"datatype code {hdr.datatype} unsupported (want 2, 4, or 16)")
    shape = [int(d) for d in hdr.dim[1 : ndim + 1]]
    if len(shape) < 3:
        shape += [1] * (3 - len(shape))
    if len(shape) > 3:
        if any(d != 1 for d in shape[3:]):
            raise DimMismatch(f"expected a 3D volume, got shape {shape}")
        shape = shape[:3]
    dtype = np.dtype(DTYPE_BY_CODE[hdr.datatype]).newbyteorder(hdr.byte_order)
    offset = max(hdr.vox_offset, HEADER_SIZE)
    count = int(np.prod(shape))
    need = offset + count * dtype.itemsize
    if len(raw) < need:
        raise TruncatedFile(f"file holds {len(raw)} bytes, payload needs {need}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    data = data.reshape(shape, order="F").astype(np.float64)
    slope = float(hdr.record["scl_slope"])
    inter = float(hdr.record["scl_inter"])
    if slope != 0.0 and np.isfinite(slope):
        data = data * slope + (inter if np.isfinite(inter) else 0.0)
    spacing = tuple(float(abs(p)) or 1.0 for p in hdr.pixdim[1:4])
    if as_mask:
        return MaskVolume(data.astype(np.uint8) if np.isin(data, (0, 1)).all() else data,
                          spacing=spacing), hdr
    return Volume(data, spacing=spacing, affine=hdr.affine()), hdr


def _fresh_record() -> np.ndarray:
    rec = np.zeros((), dtype=header_dtype("<"))
    rec["sizeof_hdr"] = HEADER_SIZE
    rec["regular"] = b"r"
    rec["magic"] = MAGIC_SINGLE
    rec["scl_slope"] = 0.0  # 0 means identity scaling by convention
    rec["scl_inter"] = 0.0
    return rec


def _payload(data: np.ndarray, code: int) -> bytes:
    dtype = np.dtype(DTYPE_BY_CODE[code]).newbyteorder("<")
    if code in (2, 4):
        arr = np.rint(data).astype(dtype)
    else:
        arr = data.astype(dtype)
    return arr.tobytes(order="F")


def _write_file(path: Path, blob: bytes, compress: bool) -> None:
    try:
        if compress:
            with open(path, "wb") as f:
                with gzip.GzipFile(fileobj=f, mode="wb", mtime=0) as gz:
                    gz.write(blob)
        else:
            path.write_bytes(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_nifti(
    v: Volume | MaskVolume,
    path: str | Path,
    header_template: NiftiHeader | None = None,
    datatype: int | None = None,
    compress: bool | None = None,
) -> None:
    """Write a volume or mask as single-file NIfTI-1 (little-endian).

    Masks are stored as uint8 by default, volumes as float32. ``compress``
    defaults to the path's extension (.gz). A header template's descriptive
    fields are carried over verbatim; geometry, datatype and offsets are
    always rewritten to match the data.
    """
    path = Path(path)
    data = v.data
    if any(d > np.iinfo(np.int16).max for d in data.shape):
        raise DimOverflow(f"dims {data.shape} do not fit in NIfTI-1 shorts")
    if datatype is None:
        datatype = 2 if isinstance(v, MaskVolume) else 16
    if datatype not in DTYPE_BY_CODE:
        raise UnsupportedDatatype(f"datatype code {datatype} unsupported")
    if compress is None:
        compress = path.suffix == ".gz"
    if header_template is not None:
        src = np.frombuffer(
            header_template.record.tobytes(), dtype=header_dtype(header_template.byte_order)
        )
        rec = src.astype(header_dtype("<")).copy().reshape(())
    else:
        rec = _fresh_record()
    rec["sizeof_hdr"] = HEADER_SIZE
    rec["magic"] = MAGIC_SINGLE
    rec["dim"] = 0
    rec["dim"][0] = 3
    rec["dim"][1:4] = data.shape
    rec["dim"][4:] = 1
    rec["datatype"] = datatype
    rec["bitpix"] = BITPIX_BY_CODE[datatype]
    rec["vox_offset"] = VOX_OFFSET
    rec["scl_slope"] = 0.0
    rec["scl_inter"] = 0.0
    spacing = getattr(v, "spacing", (1.0, 1.0, 1.0))
    rec["pixdim"][0] = 1.0
    rec["pixdim"][1:4] = spacing
    if isinstance(v, Volume):
        rec["sform_code"] = 1
        rec["srow_x"], rec["srow_y"], rec["srow_z"] = v.affine[0], v.affine[1], v.affine[2]
    blob = rec.tobytes() + b"\x00" * 4 + _payload(data, datatype)
    _write_file(path, blob, compress)


# ---------------------------------------------------------------------------
# 4D subband-stack files (used by the dwt CLI round trip)


def write_subband_stack(channels: np.ndarray, path: str | Path, compress: bool | None = None) -> None:
    """Store an (C, hx, hy, hz) coefficient stack as a 4D float32 NIfTI-1
    file with the channel axis last."""
    path = Path(path)
    channels = np.asarray(channels, dtype=np.float64)
    if channels.ndim != 4:
        raise DimMismatch(f"expected (channels, x, y, z), got {channels.shape}")
    if compress is None:
        compress = path.suffix == ".gz"
    rec = _fresh_record()
    c = channels.shape[0]
    rec["dim"][0] = 4
    rec["dim"][1:4] = channels.shape[1:]
    rec["dim"][4] = c
    rec["dim"][5:] = 1
    rec["datatype"] = 16
    rec["bitpix"] = 32
    rec["vox_offset"] = VOX_OFFSET
    rec["pixdim"][0:5] = 1.0
    payload = np.moveaxis(channels, 0, -1).astype("<f4").tobytes(order="F")
    _write_file(path, rec.tobytes() + b"\x00" * 4 + payload, compress)


def read_subband_stack(path: str | Path) -> np.ndarray:
    path = Path(path)
    raw = _read_bytes(path)
    hdr = _parse_header(raw)
    if not _is_single_magic(hdr.record["magic"]):
        raise BadMagic("not a single-file NIfTI-1")
    if int(hdr.dim[0]) != 4:
        raise DimMismatch(f"expected a 4D stack, got dim[0]={int(hdr.dim[0])}")
    if hdr.datatype not in DTYPE_BY_CODE:
        raise UnsupportedDatatype(f"datatype code {hdr.datatype}")
    shape = [int(d) for d in hdr.dim[1:5]]
    dtype = np.dtype(DTYPE_BY_CODE[hdr.datatype]).newbyteorder(hdr.byte_order)
    count = int(np.prod(shape))
    offset = max(hdr.vox_offset, HEADER_SIZE)
    if len(raw) < offset + count * dtype.itemsize:
        raise TruncatedFile("stack payload truncated")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return np.moveaxis(data.reshape(shape, order="F").astype(np.float64), -1, 0)


# ---------------------------------------------------------------------------
# Case loading


ROLES = ("t1n", "t1c", "t2w", "flair", "mask", "mask-healthy", "mask-unhealthy", "voided")
MASK_ROLES = ("mask", "mask-healthy", "mask-unhealthy")


@dataclass
class CaseLayout:
    """Maps filename suffixes to roles inside one case directory."""

    directory: Path
    roles: dict[str, str]  # suffix -> role
    pad_to_even: bool = True
    lo_pct: float = 0.5
    hi_pct: float = 99.5

    def __post_init__(self) -> None:
        self.directory = Path(self.directory)
        bad = set(self.roles.values()) - set(ROLES)
        if bad:
            raise MissingRole(f"unknown roles {sorted(bad)}; valid: {ROLES}")
        if len(set(self.roles.values())) != len(self.roles):
            raise MissingRole("roles must be unique")

    @classmethod
    def from_json(cls, path: str | Path) -> "CaseLayout":
        cfg = json.loads(Path(path).read_text())
        return cls(
            directory=Path(cfg["directory"]),
            roles=dict(cfg["roles"]),
            pad_to_even=bool(cfg.get("pad_to_even", True)),
            lo_pct=float(cfg.get("lo_pct", 0.5)),
            hi_pct=float(cfg.get("hi_pct", 99.5)),
        )

    def resolve(self) -> dict[str, Path]:
        found: dict[str, Path] = {}
        for entry in sorted(self.directory.iterdir()):
            if not entry.is_file():
                continue
            for suffix, role in self.roles.items():
                if entry.name.endswith(suffix):
                    found[role] = entry
        return found


def pad_to_even(arr: np.ndarray, value: float = 0.0) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Zero-pad each odd axis by one voxel at the high end."""
    pad = tuple(d % 2 for d in arr.shape)
    if not any(pad):
        return arr, (0, 0, 0)
    padded = np.pad(arr, [(0, p) for p in pad], constant_values=value)
    return padded, pad


def crop_pad(arr: np.ndarray, pad: tuple[int, int, int]) -> np.ndarray:
    """Inverse of :func:`pad_to_even`."""
    sl = tuple(slice(0, n - p) for n, p in zip(arr.shape, pad))
    return arr[sl]


def load_case(layout: CaseLayout, task: str) -> Case:
    """Load, validate, normalize and (optionally) pad one case directory."""
    if task not in ("inpaint", "synth"):
        raise MissingRole(f"task must be 'inpaint' or 'synth', got {task!r}")
    files = layout.resolve()
    if task == "inpaint":
        if "mask-healthy" not in files:
            raise MissingRole("inpaint case needs a healthy mask")
        if "voided" not in files and "t1n" not in files:
            raise MissingRole("inpaint case needs the voided scan or the full scan")
    else:
        present = [m for m in MODALITIES if m in files]
        if len(present) != 3:
            raise MissingRole(
                f"synth case needs exactly 3 of 4 modalities, found {present}"
            )

    modalities: dict[str, Volume] = {}
    norm = {}
    masks: dict[str, MaskVolume] = {}
    voided = None
    dims = None

    def check_dims(d):
        nonlocal dims
        if dims is None:
            dims = d
        elif d != dims:
            raise DimMismatch(f"case members disagree on dims: {d} vs {dims}")

    for role, path in files.items():
        if role in MASK_ROLES:
            mask, _ = read_nifti(path, as_mask=True)
            check_dims(mask.dims)
            masks[role] = mask
        else:
            vol, _ = read_nifti(path)
            check_dims(vol.dims)
            normed, params = normalize_volume(vol, layout.lo_pct, layout.hi_pct)
            norm[role] = params
            if role == "voided":
                voided = normed
            else:
                modalities[role] = normed

    pad = (0, 0, 0)
    if layout.pad_to_even and dims is not None and any(d % 2 for d in dims):
        for name, vol in modalities.items():
            data, pad = pad_to_even(vol.data)
            modalities[name] = Volume(data, spacing=vol.spacing, affine=vol.affine)
        if voided is not None:
            data, pad = pad_to_even(voided.data)
            voided = Volume(data, spacing=voided.spacing, affine=voided.affine)
        for name, mask in masks.items():
            data, pad = pad_to_even(mask.data)
            masks[name] = MaskVolume(data, spacing=mask.spacing)

    return Case(
        modalities=modalities,
        healthy_mask=masks.get("mask-healthy"),
        unhealthy_mask=masks.get("mask-unhealthy"),
        brain_mask=masks.get("mask"),
        voided=voided,
        norm=norm,
        pad=pad,
        case_id=layout.directory.name,
    )
