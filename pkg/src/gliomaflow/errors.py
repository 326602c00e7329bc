"""Exception hierarchy shared across gliomaflow modules."""

from __future__ import annotations


class GliomaflowError(Exception):
    """Base class for every error raised by this package."""


# -- DICOM ingest -----------------------------------------------------------

class DicomError(GliomaflowError):
    pass


class MissingMagic(DicomError):
    pass


class UnsupportedTransferSyntax(DicomError):
    pass


class TruncatedElement(DicomError):
    pass


class InconsistentGeometry(DicomError):
    pass


# -- volume math ------------------------------------------------------------

class VolumeError(GliomaflowError):
    pass


class DegenerateIntensities(VolumeError):
    pass


class ModeLabelMismatch(VolumeError):
    pass


class SingularTransform(VolumeError):
    pass


class InvalidLabel(VolumeError):
    pass


class NiftiError(VolumeError):
    pass


# -- pipeline ---------------------------------------------------------------

class AdapterFailure(GliomaflowError):
    """An external stage (or the stage-2 classifier) failed.

    ``series_uid`` is set when the failure happened while classifying a
    particular series.
    """

    def __init__(self, message: str, *, series_uid: str | None = None,
                 stage: str | None = None):
        super().__init__(message)
        self.series_uid = series_uid
        self.stage = stage

    def __str__(self) -> str:
        msg = super().__str__()
        if self.series_uid:
            msg = f"{msg} [series {self.series_uid}]"
        if self.stage:
            msg = f"{msg} [stage {self.stage}]"
        return msg


class EmptySession(GliomaflowError):
    pass


class ConfigError(GliomaflowError):
    pass


# -- radiomics / evaluation -------------------------------------------------

class EmptyMask(GliomaflowError):
    pass


class DegenerateMatrix(GliomaflowError):
    pass


class GridMismatch(GliomaflowError):
    pass


class EmptyMatrix(GliomaflowError):
    pass


class DegenerateSample(GliomaflowError):
    pass
