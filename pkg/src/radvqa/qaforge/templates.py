"""Prompt templates for QA generation and answer judging.

Default wordings ship as editable text files under ``prompts/`` inside this
package; every rendered prompt is attributable to a specific wording via the
template hash recorded in manifest provenance.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from ..corpus import QARecord
from .errors import QAForgeError

MODES = ("case_based", "literature_based", "judge")


@dataclass(frozen=True)
class PromptTemplate:
    mode: str
    template: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise QAForgeError(f"unknown template mode {self.mode!r}, expected one of {MODES}")
        if not self.template.strip():
            raise QAForgeError("template text is empty")

    def sha256(self) -> str:
        return hashlib.sha256(self.template.encode("utf-8")).hexdigest()


def load_template(path: str | Path, mode: str) -> PromptTemplate:
    return PromptTemplate(mode=mode, template=Path(path).read_text(encoding="utf-8"))


def builtin_template(mode: str) -> PromptTemplate:
    if mode not in MODES:
        raise QAForgeError(f"unknown template mode {mode!r}, expected one of {MODES}")
    text = resources.files("radvqa.qaforge").joinpath(f"prompts/{mode}.txt").read_text(encoding="utf-8")
    return PromptTemplate(mode=mode, template=text)


def _render(template_text: str, mode: str, values: dict[str, str]) -> str:
    try:
        return template_text.format(**values)
    except KeyError as exc:
        raise QAForgeError(f"unresolved placeholder {{{exc.args[0]}}} in {mode} template") from None
    except (IndexError, ValueError) as exc:
        raise QAForgeError(f"malformed placeholder in {mode} template: {exc}") from None


def render_prompt(template: PromptTemplate, record: QARecord) -> str:
    """Render a QA-generation prompt for one caption record.

    The caption is the record's answer text; image metadata becomes the
    {context} value.
    """
    if template.mode == "judge":
        raise QAForgeError("judge templates are rendered by the evaluation harness, not here")
    if record.kind != "caption":
        raise QAForgeError(f"record {record.id} has kind {record.kind!r}, expected caption")
    caption = record.answer.strip()
    if not caption:
        raise QAForgeError(f"record {record.id} has an empty caption")
    context = f"modality={record.image.modality}; organ={record.image.organ}"
    out = _render(template.template, template.mode, {"caption": caption, "context": context})
    if caption not in out:
        raise QAForgeError(f"{template.mode} template does not embed the caption")
    return out


def render_judge_prompt(template: PromptTemplate, question: str, gold: str,
                        generated: str) -> str:
    if template.mode != "judge":
        raise QAForgeError(f"expected a judge template, got mode {template.mode!r}")
    return _render(template.template, "judge",
                   {"question": question, "gold": gold, "generated": generated})
