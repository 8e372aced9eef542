"""File-backed persistence for the inspection service.

One directory holds everything: cases/ (session JSON + the stored image
array per case), dumps/ (attention stacks keyed by content hash), and
verdicts.jsonl, an append-only log. Reports are always rebuilt by
replaying the log, so the file is the single source of truth.
"""

from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from hashlib import sha256
from pathlib import Path
from typing import Optional

import numpy as np

from radvqa.toyvlm import AttentionStack


class StoreError(ValueError):
    pass


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def payload_case_id(question: str, kind: str, matrix: list[list[float]]) -> str:
    digest = sha256(_canonical({"question": question, kind: matrix}).encode()).hexdigest()
    return f"case-{digest[:16]}"


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class InferenceRecord:
    answer: str
    token_ids: list[int]
    token_spans: list[dict]
    attention_dump_id: str
    sampling: dict


@dataclass
class Session:
    case_id: str
    question: str
    payload_kind: str           # features | pixels
    image_ref: str              # path of the stored array, relative to data dir
    created_at: str
    inference: Optional[InferenceRecord] = None

    def to_json_obj(self) -> dict:
        obj = asdict(self)
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "Session":
        inf = obj.get("inference")
        return cls(case_id=obj["case_id"], question=obj["question"],
                   payload_kind=obj["payload_kind"], image_ref=obj["image_ref"],
                   created_at=obj["created_at"],
                   inference=InferenceRecord(**inf) if inf else None)


class CaseStore:
    def __init__(self, data_dir: str | Path):
        self.root = Path(data_dir)
        self.cases_dir = self.root / "cases"
        self.dumps_dir = self.root / "dumps"
        self.verdict_path = self.root / "verdicts.jsonl"
        self.cases_dir.mkdir(parents=True, exist_ok=True)
        self.dumps_dir.mkdir(parents=True, exist_ok=True)
        self._mutex = threading.Lock()
        self._append_lock = threading.Lock()
        self._case_locks: dict[str, threading.Lock] = {}
        self._sessions: dict[str, Session] = {}
        for path in sorted(self.cases_dir.glob("*.json")):
            session = Session.from_json_obj(json.loads(path.read_text(encoding="utf-8")))
            self._sessions[session.case_id] = session
        self._verdict_count = 0
        if self.verdict_path.exists():
            with self.verdict_path.open(encoding="utf-8") as fh:
                self._verdict_count = sum(1 for line in fh if line.strip())

    def _session_path(self, case_id: str) -> Path:
        return self.cases_dir / f"{case_id}.json"

    def _write_session(self, session: Session) -> None:
        tmp = self._session_path(session.case_id).with_suffix(".json.tmp")
        tmp.write_text(json.dumps(session.to_json_obj(), indent=1) + "\n", encoding="utf-8")
        tmp.replace(self._session_path(session.case_id))

    def create_case(self, question: str, kind: str,
                    matrix: list[list[float]]) -> tuple[Session, bool]:
        case_id = payload_case_id(question, kind, matrix)
        with self._mutex:
            existing = self._sessions.get(case_id)
            if existing is not None:
                return existing, False
            array_name = f"{case_id}.npy"
            np.save(self.cases_dir / array_name,
                    np.asarray(matrix, dtype=np.float32), allow_pickle=False)
            session = Session(case_id=case_id, question=question, payload_kind=kind,
                              image_ref=f"cases/{array_name}", created_at=_utcnow())
            self._write_session(session)
            self._sessions[case_id] = session
            return session, True

    def get(self, case_id: str) -> Optional[Session]:
        with self._mutex:
            return self._sessions.get(case_id)

    def sessions(self) -> list[Session]:
        with self._mutex:
            return sorted(self._sessions.values(), key=lambda s: (s.created_at, s.case_id))

    def image_array(self, case_id: str) -> np.ndarray:
        session = self.get(case_id)
        if session is None:
            raise StoreError(f"unknown case {case_id!r}")
        return np.load(self.root / session.image_ref, allow_pickle=False)

    def case_lock(self, case_id: str) -> threading.Lock:
        with self._mutex:
            return self._case_locks.setdefault(case_id, threading.Lock())

    def set_inference(self, case_id: str, record: InferenceRecord) -> Session:
        with self._mutex:
            session = self._sessions.get(case_id)
            if session is None:
                raise StoreError(f"unknown case {case_id!r}")
            session.inference = record
            self._write_session(session)
            return session

    def save_dump(self, stack: AttentionStack) -> str:
        obj = stack.to_json_obj()
        text = _canonical(obj)
        dump_id = sha256(text.encode()).hexdigest()[:16]
        path = self.dumps_dir / f"{dump_id}.json"
        if not path.exists():
            tmp = path.with_suffix(".json.tmp")
            tmp.write_text(text + "\n", encoding="utf-8")
            tmp.replace(path)
        return dump_id

    def load_dump(self, dump_id: str) -> Optional[AttentionStack]:
        path = self.dumps_dir / f"{dump_id}.json"
        if not path.exists():
            return None
        return AttentionStack.from_json_obj(json.loads(path.read_text(encoding="utf-8")))

    def append_verdict(self, case_id: str, verdict: str, organ: str, note: str) -> dict:
        with self._append_lock:
            entry = {
                "case_id": case_id,
                "verdict": verdict,
                "organ": organ,
                "note": note,
                "timestamp": _utcnow(),
                "entry_index": self._verdict_count,
            }
            with self.verdict_path.open("a", encoding="utf-8") as fh:
                fh.write(_canonical(entry) + "\n")
                fh.flush()
            self._verdict_count += 1
            return entry

    def verdict_entries(self) -> list[dict]:
        """Full log replay, oldest first."""
        if not self.verdict_path.exists():
            return []
        entries = []
        with self.verdict_path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    entries.append(json.loads(line))
        return entries

    def latest_verdicts(self) -> dict[str, dict]:
        """Latest entry per case; corrections appended later win."""
        latest: dict[str, dict] = {}
        for entry in self.verdict_entries():
            latest[entry["case_id"]] = entry
        return latest
