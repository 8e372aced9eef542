"""Case-inspection HTTP service: schemas, persistence, app factory."""

from .app import MAX_MATRIX_CELLS, create_app
from .schemas import (
    RESPONSE_MODELS,
    SCHEMA_VERSION,
    VERDICTS,
    CaseCreate,
    CaseCreated,
    GridShape,
    HealthView,
    InferRequest,
    InferResponse,
    OrganReportView,
    OrganRowView,
    SamplingSpec,
    SaliencyResponse,
    SchemaIndex,
    SessionList,
    SessionView,
    TokenSpan,
    VerdictLogged,
    VerdictRequest,
)
from .store import CaseStore, InferenceRecord, Session, StoreError, payload_case_id

__all__ = [
    "create_app", "MAX_MATRIX_CELLS",
    "SCHEMA_VERSION", "VERDICTS", "RESPONSE_MODELS",
    "CaseCreate", "CaseCreated", "SessionView", "SessionList",
    "SamplingSpec", "InferRequest", "InferResponse", "TokenSpan",
    "GridShape", "SaliencyResponse", "VerdictRequest", "VerdictLogged",
    "OrganRowView", "OrganReportView", "HealthView", "SchemaIndex",
    "CaseStore", "Session", "InferenceRecord", "StoreError", "payload_case_id",
]
