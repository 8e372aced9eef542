"""Caption manifest -> synthetic QA manifest via a text-generation client."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

from ..corpus import DatasetManifest, QARecord
from .clients import Sampling, TextGenClient
from .errors import QAForgeError
from .filters import FilterRules, filter_noisy
from .parse import parse_qa
from .templates import PromptTemplate, builtin_template, render_prompt

log = logging.getLogger(__name__)

SOURCE_BY_MODE = {"case_based": "synthetic_case", "literature_based": "synthetic_literature"}


@dataclass
class _RecordOutcome:
    records: list[QARecord] = field(default_factory=list)
    skip: Optional[dict] = None
    parse_rejects: int = 0
    filtered: dict[str, int] = field(default_factory=dict)


def generate_dataset(manifest: DatasetManifest, client: TextGenClient, template_mode: str,
                     sampling: Sampling, *, template: Optional[PromptTemplate] = None,
                     rules: Optional[FilterRules] = None, max_workers: int = 4,
                     retries: int = 1) -> DatasetManifest:
    """Fan generation out over a thread pool; outputs merge in input order.

    A record whose client calls keep failing, or whose pairs all get
    filtered, becomes a logged skip rather than a fatal error.
    """
    if template_mode not in SOURCE_BY_MODE:
        raise QAForgeError(f"template_mode must be one of {sorted(SOURCE_BY_MODE)}, got {template_mode!r}")
    non_caption = [r.id for r in manifest.records if r.kind != "caption"]
    if non_caption:
        raise QAForgeError(f"generation input must be caption records; offending ids: {non_caption[:5]}")
    if template is None:
        template = builtin_template(template_mode)
    if template.mode != template_mode:
        raise QAForgeError(f"template mode {template.mode!r} does not match requested {template_mode!r}")
    source = SOURCE_BY_MODE[template_mode]

    def run_one(record: QARecord) -> _RecordOutcome:
        out = _RecordOutcome()
        prompt = render_prompt(template, record)
        text = None
        for attempt in range(retries + 1):
            try:
                text = client.generate(prompt, sampling)
                break
            except Exception as exc:
                if attempt == retries:
                    out.skip = {"record_id": record.id, "reason": "client_error", "detail": str(exc)}
                    return out
        pairs, rejects = parse_qa(text)
        out.parse_rejects = len(rejects)
        if rules is not None:
            pairs, filtered = filter_noisy(pairs, rules, caption=record.answer)
            for f in filtered:
                out.filtered[f.rule] = out.filtered.get(f.rule, 0) + 1
        if not pairs:
            out.skip = {"record_id": record.id, "reason": "no_pairs"}
            return out
        for i, pair in enumerate(pairs):
            out.records.append(QARecord(
                id=f"{record.id}-q{i:02d}",
                image=record.image,
                kind=pair.kind,
                question=pair.question,
                answer=pair.answer,
                options=pair.options,
                source=source,
                quality_tier=record.quality_tier,
            ))
        return out

    if manifest.records:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(run_one, manifest.records))
    else:
        outcomes = []

    records: list[QARecord] = []
    skips: list[dict] = []
    parse_rejects = 0
    filtered: dict[str, int] = {}
    for outcome in outcomes:
        records.extend(outcome.records)
        if outcome.skip:
            skips.append(outcome.skip)
            log.warning("skipped record %s: %s", outcome.skip["record_id"], outcome.skip["reason"])
        parse_rejects += outcome.parse_rejects
        for rule, n in outcome.filtered.items():
            filtered[rule] = filtered.get(rule, 0) + n

    note = {
        "op": "generate_dataset",
        "template_mode": template_mode,
        "template_sha256": template.sha256(),
        "sampling": asdict(sampling),
        "client": client.identity(),
        "inputs": len(manifest.records),
        "records_out": len(records),
        "parse_rejects": parse_rejects,
        "filtered": {k: filtered[k] for k in sorted(filtered)},
        "skips": skips,
    }
    return DatasetManifest(
        name=f"{manifest.name}-{template_mode}",
        records=records,
        provenance=manifest.provenance + [note],
    )
