"""dataforge: harmonize autonomous-driving QA datasets into training manifests."""

__version__ = "0.1.0"

from .core import (
    BBoxNorm,
    BBoxPx,
    CameraId,
    DatasetId,
    MediaKind,
    MediaRef,
    ObjectRef,
    PointNorm,
    PointPx,
    Provenance,
    QAPair,
    QAStyle,
    Sample,
    Violation,
    validate_sample,
)

__all__ = [
    "BBoxNorm",
    "BBoxPx",
    "CameraId",
    "DatasetId",
    "MediaKind",
    "MediaRef",
    "ObjectRef",
    "PointNorm",
    "PointPx",
    "Provenance",
    "QAPair",
    "QAStyle",
    "Sample",
    "Violation",
    "validate_sample",
    "__version__",
]
