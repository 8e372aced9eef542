"""Evaluation protocols: n-gram metrics, robustness-penalized accuracy,
judge-based scoring of open answers, and report rendering."""

from .judge import JudgeError, JudgeItem, JudgeVerdict, judge_open, parse_verdict
from .reports import (
    EvalReport,
    MetricValue,
    ORGAN_LABELS,
    OrganReport,
    OrganRow,
    ReportError,
    markdown_accuracy_table,
    organ_report,
    write_report_json,
)
from .robust import (
    GenerationSet,
    ItemOutcome,
    RobustAccuracy,
    RobustnessError,
    normalize_answer,
    robust_mcq_accuracy,
)
from .textmetrics import MetricError, RougeScore, bleu, bleu_report, rouge, tokenize

__all__ = [
    "MetricError", "tokenize", "bleu", "bleu_report", "RougeScore", "rouge",
    "RobustnessError", "normalize_answer", "GenerationSet", "ItemOutcome",
    "RobustAccuracy", "robust_mcq_accuracy",
    "JudgeError", "JudgeItem", "JudgeVerdict", "judge_open", "parse_verdict",
    "ReportError", "ORGAN_LABELS", "MetricValue", "OrganRow", "OrganReport",
    "organ_report", "EvalReport", "markdown_accuracy_table", "write_report_json",
]
