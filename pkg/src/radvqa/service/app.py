"""HTTP service for interactive case inspection.

Binds checkpoint inference, attention saliency, and expert verdict
logging behind a small JSON API. One checkpoint is loaded at startup and
never swapped, cases are deduplicated by payload hash, inference on a
given case is serialized, and the organ report is rebuilt from the
verdict log on every request.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Query
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from radvqa.corpus import ORGANS
from radvqa.evalkit import OrganReport, OrganRow
from radvqa.saliency import SaliencyError, SaliencyQuery, compute_map
from radvqa.toyvlm import (
    Checkpoint,
    DataError,
    GenSampling,
    Tokenizer,
    generate,
    load_checkpoint,
    pixels_to_patches,
)

from .schemas import (
    RESPONSE_MODELS,
    SCHEMA_VERSION,
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
from .store import CaseStore, InferenceRecord, Session

MAX_MATRIX_CELLS = 1 << 20


class _State:
    def __init__(self, store: CaseStore, checkpoint: Optional[Checkpoint]):
        self.store = store
        self.checkpoint = checkpoint
        self.checkpoint_hash = checkpoint.content_hash if checkpoint else None
        self.tokenizer = Tokenizer(checkpoint.config.vocab_size) if checkpoint else None
        self._dump_cache: dict[str, object] = {}
        self._cache_lock = threading.Lock()
        if checkpoint is not None:
            checkpoint.model.eval()

    def dump_stack(self, dump_id: str):
        with self._cache_lock:
            if dump_id in self._dump_cache:
                return self._dump_cache[dump_id]
        stack = self.store.load_dump(dump_id)
        if stack is not None:
            with self._cache_lock:
                if len(self._dump_cache) > 64:
                    self._dump_cache.clear()
                self._dump_cache[dump_id] = stack
        return stack


def _session_view(session: Session) -> SessionView:
    inf = session.inference
    return SessionView(
        case_id=session.case_id, question=session.question,
        payload_kind=session.payload_kind, image_ref=session.image_ref,
        created_at=session.created_at,
        answer=inf.answer if inf else None,
        attention_dump_id=inf.attention_dump_id if inf else None)


def _check_matrix(body: CaseCreate, checkpoint: Optional[Checkpoint]) -> None:
    matrix = body.matrix
    if not matrix or not matrix[0]:
        raise HTTPException(400, "image payload must be a non-empty 2-D array")
    width = len(matrix[0])
    if any(len(row) != width for row in matrix):
        raise HTTPException(400, "image payload rows have unequal lengths")
    if len(matrix) * width > MAX_MATRIX_CELLS:
        raise HTTPException(413, f"image payload exceeds {MAX_MATRIX_CELLS} cells")
    if checkpoint is None:
        return
    cfg = checkpoint.config
    if body.payload_kind == "features":
        if len(matrix) != cfg.num_patches:
            raise HTTPException(
                400, f"expected {cfg.num_patches} patches, got {len(matrix)}")
        if width != cfg.d_patch_in:
            raise HTTPException(
                400, f"expected patch width {cfg.d_patch_in}, got {width}")
    else:
        try:
            pixels_to_patches(np.asarray(matrix, dtype=np.float64), cfg)
        except DataError as err:
            raise HTTPException(400, str(err)) from err


def _token_spans(tokenizer: Tokenizer, token_ids: list[int]) -> tuple[str, list[TokenSpan]]:
    """Answer text plus per-token character offsets; positions align with
    the response rows of the attention dump."""
    spans = []
    cursor = 0
    parts = []
    for pos, tid in enumerate(token_ids):
        text = tokenizer.decode([tid])
        spans.append(TokenSpan(position=pos, token_id=tid, text=text,
                               start=cursor, end=cursor + len(text)))
        cursor += len(text)
        parts.append(text)
    return "".join(parts), spans


def create_app(data_dir: str | Path, checkpoint: Optional[Checkpoint] = None,
               checkpoint_path: Optional[str | Path] = None) -> FastAPI:
    if checkpoint is None and checkpoint_path is not None:
        checkpoint = load_checkpoint(checkpoint_path)
    state = _State(CaseStore(data_dir), checkpoint)
    app = FastAPI(title="case inspection service", version=SCHEMA_VERSION)
    app.state.service = state

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request, exc: RequestValidationError):
        detail = "; ".join(
            f"{'.'.join(str(p) for p in err.get('loc', ()))}: {err.get('msg', 'invalid')}"
            for err in exc.errors())
        return JSONResponse(status_code=400, content={"detail": detail or "malformed request"})

    def _get_case(case_id: str) -> Session:
        session = state.store.get(case_id)
        if session is None:
            raise HTTPException(404, f"unknown case {case_id!r}")
        return session

    @app.get("/health", response_model=HealthView)
    def health() -> HealthView:
        ckpt = state.checkpoint
        return HealthView(status="ok", checkpoint=state.checkpoint_hash,
                          stage=ckpt.stage if ckpt else None)

    @app.get("/schema", response_model=SchemaIndex)
    def schema_index() -> SchemaIndex:
        return SchemaIndex(
            version=SCHEMA_VERSION,
            schemas={name: model.model_json_schema()
                     for name, model in RESPONSE_MODELS.items()})

    @app.post("/cases", response_model=CaseCreated, status_code=201)
    def create_case(body: CaseCreate):
        _check_matrix(body, state.checkpoint)
        session, created = state.store.create_case(
            body.question, body.payload_kind, body.matrix)
        payload = CaseCreated(case_id=session.case_id, created=created)
        status = 201 if created else 200
        return JSONResponse(status_code=status,
                            content=payload.model_dump(mode="json"))

    @app.get("/cases", response_model=SessionList)
    def list_cases() -> SessionList:
        return SessionList(cases=[_session_view(s) for s in state.store.sessions()])

    @app.get("/cases/{case_id}", response_model=SessionView)
    def get_case(case_id: str) -> SessionView:
        return _session_view(_get_case(case_id))

    @app.post("/cases/{case_id}/infer", response_model=InferResponse)
    def infer(case_id: str, body: Optional[InferRequest] = None) -> InferResponse:
        session = _get_case(case_id)
        if state.checkpoint is None:
            raise HTTPException(409, "no checkpoint loaded")
        spec = body.sampling if body is not None else SamplingSpec()
        cfg = state.checkpoint.config
        arr = state.store.image_array(case_id)
        if session.payload_kind == "pixels":
            arr = pixels_to_patches(arr.astype(np.float64), cfg)
        if arr.shape != (cfg.num_patches, cfg.d_patch_in):
            raise HTTPException(
                400, f"stored image has shape {tuple(arr.shape)}, "
                     f"expected ({cfg.num_patches}, {cfg.d_patch_in})")
        prompt_ids = state.tokenizer.encode(session.question.lower())
        sampling = GenSampling(mode=spec.mode, temperature=spec.temperature,
                               seed=spec.seed, max_new_tokens=spec.max_new_tokens)
        with state.store.case_lock(case_id):
            result = generate(
                state.checkpoint.model,
                torch.from_numpy(np.asarray(arr, dtype=np.float32)),
                prompt_ids, sampling)
            dump_id = state.store.save_dump(result.lm_stack)
            answer, spans = _token_spans(state.tokenizer, result.token_ids)
            record = InferenceRecord(
                answer=answer, token_ids=list(result.token_ids),
                token_spans=[s.model_dump(mode="json") for s in spans],
                attention_dump_id=dump_id, sampling=spec.model_dump(mode="json"))
            state.store.set_inference(case_id, record)
        return InferResponse(case_id=case_id, answer=answer, token_spans=spans,
                             attention_dump_id=dump_id, sampling=spec)

    @app.get("/cases/{case_id}/saliency", response_model=SaliencyResponse)
    def saliency(case_id: str,
                 direction: Literal["token_to_image", "patch_to_tokens"] = Query(...),
                 index: int = Query(...),
                 method: Literal["raw", "rollout"] = Query("raw"),
                 layer: Optional[int] = Query(None),
                 head: Optional[int] = Query(None),
                 head_fusion: Literal["mean", "max", "min"] = Query("mean")) -> SaliencyResponse:
        session = _get_case(case_id)
        if session.inference is None:
            raise HTTPException(409, "no inference has been run for this case")
        stack = state.dump_stack(session.inference.attention_dump_id)
        if stack is None:
            raise HTTPException(409, "attention dump is missing; re-run inference")
        if direction == "token_to_image":
            n_response = stack.seq_len - stack.gen_start
            if not (0 <= index < n_response):
                raise HTTPException(
                    422, f"token index {index} out of range 0..{n_response - 1}")
            query = SaliencyQuery(direction=direction, method=method,
                                  token_index=stack.gen_start + index,
                                  layer=layer, head=head)
        else:
            if not (0 <= index < stack.image_token_count):
                raise HTTPException(
                    422, f"patch index {index} out of range 0..{stack.image_token_count - 1}")
            query = SaliencyQuery(direction=direction, method=method,
                                  patch_index=index, layer=layer, head=head)
        extra = {"case_id": case_id,
                 "dump_id": session.inference.attention_dump_id,
                 "checkpoint": state.checkpoint_hash,
                 "response_index": index if direction == "token_to_image" else None}
        try:
            smap = compute_map(stack, query, head_fusion=head_fusion,
                               extra_provenance=extra)
        except SaliencyError as err:
            raise HTTPException(422, str(err)) from err
        rows, cols = state.checkpoint.config.patch_grid if state.checkpoint else (1, len(smap.scores))
        return SaliencyResponse(
            case_id=case_id, direction=direction, method=method, index=index,
            scores=list(smap.scores), argmax=smap.argmax, flags=list(smap.flags),
            provenance=smap.provenance, grid=GridShape(rows=rows, cols=cols))

    @app.post("/cases/{case_id}/verdict", response_model=VerdictLogged)
    def log_verdict(case_id: str, body: VerdictRequest) -> VerdictLogged:
        _get_case(case_id)
        entry = state.store.append_verdict(case_id, body.verdict, body.organ, body.note)
        return VerdictLogged(**entry)

    @app.get("/reports/organs", response_model=OrganReportView)
    def organ_totals() -> OrganReportView:
        latest = state.store.latest_verdicts()
        tallies: dict[str, list[int]] = {}
        abstained = 0
        for entry in latest.values():
            t = tallies.setdefault(entry["organ"], [0, 0])
            t[1] += 1
            if entry["verdict"] == "correct":
                t[0] += 1
            elif entry["verdict"] == "abstain":
                abstained += 1
        report = OrganReport(rows=tuple(
            OrganRow(organ=o, correct=tallies[o][0], total=tallies[o][1])
            for o in ORGANS if o in tallies))
        footnote = (f"{abstained} abstained case(s) count toward totals "
                    f"but not correct tallies.")
        markdown = report.to_markdown() + footnote + "\n"
        return OrganReportView(
            rows=[OrganRowView(organ=r.organ, label=r.label, correct=r.correct,
                               total=r.total, cell=r.cell) for r in report.rows],
            total=report.total, abstained=abstained,
            footnote=footnote, markdown=markdown)

    return app
