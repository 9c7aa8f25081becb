"""Error taxonomy.

Every failure raised by this package derives from :class:`WavediffError` and
carries a stable ``code`` string (the class name) that the CLI emits in its
machine-readable error output.
"""

from __future__ import annotations


class WavediffError(Exception):
    """Base class for all package errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


# volume
class ConstantVolume(WavediffError):
    pass


class InvalidPercentile(WavediffError):
    pass


class InvalidParams(WavediffError):
    pass


class DimMismatch(WavediffError):
    pass


# wavelet
class OddDimension(WavediffError):
    pass


class BadChannelCount(WavediffError):
    pass


# schedule
class InvalidT(WavediffError):
    pass


class InvalidRange(WavediffError):
    pass


# diffusion
class ShapeMismatch(WavediffError):
    pass


class TOutOfRange(WavediffError):
    pass


class GridTooShort(WavediffError):
    pass


# denoiser
class BinOutOfRange(WavediffError):
    pass


class EmptyDataset(WavediffError):
    pass


class NonFiniteLoss(WavediffError):
    pass


# objectives
class MissingMask(WavediffError):
    pass


class WrongModalityCount(WavediffError):
    pass


# conditioning
class EmptyMask(WavediffError):
    pass


class MissingScan(WavediffError):
    pass


class MissingUnhealthyMask(WavediffError):
    pass


class WrongMissingCount(WavediffError):
    pass


class ChannelContractMismatch(WavediffError):
    pass


class BadIndex(WavediffError):
    pass


# maskgen
class DegenerateSize(WavediffError):
    pass


class PlacementExhausted(WavediffError):
    pass


# metrics
class EmptyROI(WavediffError):
    pass


class WindowTooLarge(WavediffError):
    pass


# nifti
class BadMagic(WavediffError):
    pass


class UnsupportedDatatype(WavediffError):
    pass


class TruncatedFile(WavediffError):
    pass


class EndianDetectFailure(WavediffError):
    pass


class IoFailure(WavediffError):
    pass


class DimOverflow(WavediffError):
    pass


class MissingRole(WavediffError):
    pass
