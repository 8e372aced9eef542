"""Request and response bodies for the case-inspection HTTP service.

Every 2xx body is one of these models; /schema publishes their JSON
schemas so clients can validate against the exact running version.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from radvqa.corpus import ORGANS

SCHEMA_VERSION = "v1"

VERDICTS = ("correct", "incorrect", "abstain")


class CaseCreate(BaseModel):
    """One diagnostic case: a question plus exactly one image payload,
    either pre-extracted patch features or raw grayscale pixels."""

    question: str = Field(min_length=1, max_length=2000)
    features: Optional[list[list[float]]] = None
    pixels: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def _exactly_one_payload(self):
        if (self.features is None) == (self.pixels is None):
            raise ValueError("provide exactly one of features or pixels")
        return self

    @property
    def payload_kind(self) -> str:
        return "features" if self.features is not None else "pixels"

    @property
    def matrix(self) -> list[list[float]]:
        return self.features if self.features is not None else self.pixels


class CaseCreated(BaseModel):
    case_id: str
    created: bool   # False when an identical payload already existed


class SessionView(BaseModel):
    case_id: str
    question: str
    payload_kind: Literal["features", "pixels"]
    image_ref: str
    created_at: str
    answer: Optional[str] = None
    attention_dump_id: Optional[str] = None


class SessionList(BaseModel):
    cases: list[SessionView]


class SamplingSpec(BaseModel):
    mode: Literal["greedy", "temperature"] = "greedy"
    temperature: float = Field(default=1.0, gt=0)
    seed: int = 0
    max_new_tokens: int = Field(default=16, ge=1, le=64)


class InferRequest(BaseModel):
    sampling: SamplingSpec = SamplingSpec()


class TokenSpan(BaseModel):
    """position is response-relative and doubles as the saliency token
    index; start/end are character offsets into the answer string."""

    position: int
    token_id: int
    text: str
    start: int
    end: int


class InferResponse(BaseModel):
    case_id: str
    answer: str
    token_spans: list[TokenSpan]
    attention_dump_id: str
    sampling: SamplingSpec


class GridShape(BaseModel):
    rows: int
    cols: int


class SaliencyResponse(BaseModel):
    case_id: str
    direction: Literal["token_to_image", "patch_to_tokens"]
    method: Literal["raw", "rollout"]
    index: int
    scores: list[float]
    argmax: int
    flags: list[str]
    provenance: dict
    grid: GridShape


class VerdictRequest(BaseModel):
    verdict: Literal["correct", "incorrect", "abstain"]
    organ: str
    note: str = Field(default="", max_length=2000)

    @field_validator("organ")
    @classmethod
    def _known_organ(cls, v: str) -> str:
        if v not in ORGANS:
            raise ValueError(f"organ must be one of {ORGANS}, got {v!r}")
        return v


class VerdictLogged(BaseModel):
    case_id: str
    verdict: Literal["correct", "incorrect", "abstain"]
    organ: str
    note: str
    timestamp: str
    entry_index: int


class OrganRowView(BaseModel):
    organ: str
    label: str
    correct: int
    total: int
    cell: str


class OrganReportView(BaseModel):
    rows: list[OrganRowView]
    total: int
    abstained: int
    footnote: str
    markdown: str


class HealthView(BaseModel):
    status: Literal["ok"]
    checkpoint: Optional[str] = None   # content hash when loaded
    stage: Optional[str] = None


class SchemaIndex(BaseModel):
    version: str
    schemas: dict


RESPONSE_MODELS = {
    "CaseCreated": CaseCreated,
    "SessionView": SessionView,
    "SessionList": SessionList,
    "InferResponse": InferResponse,
    "SaliencyResponse": SaliencyResponse,
    "VerdictLogged": VerdictLogged,
    "OrganReportView": OrganReportView,
    "HealthView": HealthView,
}
