"""Inference exporter that turns transformer checkpoints into the
annotation and vector-store files consumed by the evaluation toolkit."""

from .config import BridgeConfig
from .formats import (
    AnnotationRecord,
    FormatError,
    ReportRecord,
    normalize_key,
    read_annotations,
    read_reports,
    write_annotations,
    write_vector_store,
)
from .infer import (
    DECODING_SCHEME,
    RELATION_SCHEMA,
    CheckpointError,
    classify_relations,
    export_annotations,
    export_vectors,
    extract_entities,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotationRecord",
    "BridgeConfig",
    "CheckpointError",
    "DECODING_SCHEME",
    "FormatError",
    "RELATION_SCHEMA",
    "ReportRecord",
    "classify_relations",
    "export_annotations",
    "export_vectors",
    "extract_entities",
    "normalize_key",
    "read_annotations",
    "read_reports",
    "write_annotations",
    "write_vector_store",
    "__version__",
]
