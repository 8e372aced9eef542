from .records import (
    KINDS,
    MODALITIES,
    ORGANS,
    QUALITY_TIERS,
    SOURCES,
    DatasetManifest,
    ImageRef,
    QARecord,
    RecordError,
    load_manifest,
    record_from_line,
    record_to_line,
    save_manifest,
)
from .ingest import ADAPTERS, IngestError, IngestResult, RejectedLine, ingest, write_rejects
from .splits import SplitError, split
from .validate import Finding, ValidationReport, validate

__all__ = [
    "KINDS", "MODALITIES", "ORGANS", "QUALITY_TIERS", "SOURCES",
    "DatasetManifest", "ImageRef", "QARecord", "RecordError",
    "load_manifest", "record_from_line", "record_to_line", "save_manifest",
    "ADAPTERS", "IngestError", "IngestResult", "RejectedLine", "ingest", "write_rejects",
    "SplitError", "split",
    "Finding", "ValidationReport", "validate",
]
