"""Declarative run configuration.

One TOML document drives every pipeline stage. Unknown keys are rejected
with their dotted path, relative paths resolve against the config file's
directory, and ${ENV:VAR} placeholders in string values pull from the
environment at load time. The resolved snapshot redacts secret-bearing
keys before hashing, so the config hash is stable across credential
changes and never leaks a secret into an artifact.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, get_args, get_origin, get_type_hints

try:
    import tomllib as _toml
except ImportError:                      # Python 3.10
    import tomli as _toml

__all__ = [
    "ConfigError",
    "RunSection", "DataSection", "CaptionsSection", "SplitSection",
    "QagenSection", "MixSection", "TrainStageSection", "LoraSection",
    "TrainSection", "EvaluateSection", "ScalingSection", "SaliencySection",
    "AblateSection", "ServeSection", "RunConfig",
    "load_config", "parse_config", "resolved_snapshot", "config_hash",
    "write_snapshot",
]


class ConfigError(ValueError):
    pass


_ENV = re.compile(r"\$\{ENV:([A-Za-z_][A-Za-z0-9_]*)\}")
# count-style names like max_tokens must not trip the redactor
_SECRET = re.compile(r"api_key|secret|password|credential|(?:^|_)token$",
                     re.IGNORECASE)


@dataclass(frozen=True)
class RunSection:
    name: str = "run"
    out_dir: str = "out"
    seed: int = 0


@dataclass(frozen=True)
class DataSection:
    root: str = ""
    adapter: str = "qa_pairs"
    check_images: bool = True
    taxonomy: str = ""


@dataclass(frozen=True)
class CaptionsSection:
    root: str = ""
    adapter: str = "caption_pairs"
    check_images: bool = True


@dataclass(frozen=True)
class SplitSection:
    ratios: tuple[float, ...] = (0.8, 0.1, 0.1)
    seed: int = 0


@dataclass(frozen=True)
class QagenSection:
    template_mode: str = "case_based"
    client: str = "local-echo"          # local-echo | replay | http
    cassette: str = ""
    endpoint: str = ""
    api_key_env: str = "RADVQA_TEXTGEN_API_KEY"
    temperature: float = 0.0
    max_tokens: int = 256
    seed: int = 0


@dataclass(frozen=True)
class MixSection:
    enrichment_fraction: float = 0.25
    top_k_pathologies: int = 5
    seed: int = 0


@dataclass(frozen=True)
class TrainStageSection:
    lr: float = 1e-5
    lr_schedule: str = "constant"
    label_smoothing: float = 0.0
    weight_decay: float = 0.0
    fp16: bool = False
    grad_accum: int = 16
    batch_size: int = 6
    epochs: int = 5
    seed: int = 0


@dataclass(frozen=True)
class LoraSection:
    r: int = 4
    alpha: float = 8.0


@dataclass(frozen=True)
class TrainSection:
    base_checkpoint: str = ""
    stage1: TrainStageSection = field(default_factory=TrainStageSection)
    stage2: TrainStageSection = field(default_factory=TrainStageSection)
    lora: LoraSection = field(default_factory=LoraSection)


@dataclass(frozen=True)
class EvaluateSection:
    temperature: float = 0.8
    seed: int = 0
    max_new_tokens: int = 16
    judge: str = "local-echo"           # local-echo | replay | http
    judge_cassette: str = ""
    judge_endpoint: str = ""
    judge_api_key_env: str = "RADVQA_TEXTGEN_API_KEY"


@dataclass(frozen=True)
class ScalingSection:
    points: str = ""


@dataclass(frozen=True)
class SaliencySection:
    record_id: str = ""
    direction: str = "token_to_image"
    index: int = 0
    method: str = "rollout"
    image_size: tuple[int, ...] = (256, 256)


@dataclass(frozen=True)
class AblateSection:
    datasets: tuple[str, ...] = ()
    arms: dict = field(default_factory=dict)    # arm name -> use_stage1 flag
    stage1_train: str = ""      # empty: reuse <out_dir>/ingest/train.jsonl
    stage2_train: str = ""      # empty: reuse <out_dir>/mix/train.jsonl


@dataclass(frozen=True)
class ServeSection:
    port: int = 8000
    data_dir: str = "service-data"
    checkpoint: str = ""


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    captions: CaptionsSection = field(default_factory=CaptionsSection)
    split: SplitSection = field(default_factory=SplitSection)
    qagen: QagenSection = field(default_factory=QagenSection)
    mix: MixSection = field(default_factory=MixSection)
    train: TrainSection = field(default_factory=TrainSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    scaling: ScalingSection = field(default_factory=ScalingSection)
    saliency: SaliencySection = field(default_factory=SaliencySection)
    ablate: AblateSection = field(default_factory=AblateSection)
    serve: ServeSection = field(default_factory=ServeSection)


# fields whose string values are filesystem paths, resolved against the
# config file's directory when relative
_PATH_FIELDS = {
    "run.out_dir", "data.root", "data.taxonomy", "captions.root",
    "qagen.cassette", "train.base_checkpoint", "scaling.points",
    "evaluate.judge_cassette", "serve.data_dir", "serve.checkpoint",
    "ablate.stage1_train", "ablate.stage2_train",
}
_PATH_LIST_FIELDS = {"ablate.datasets"}


def _interpolate(value: str, path: str) -> str:
    def repl(match: re.Match) -> str:
        var = match.group(1)
        if var not in os.environ:
            raise ConfigError(f"{path}: environment variable {var!r} is not set")
        return os.environ[var]
    return _ENV.sub(repl, value)


def _coerce(value, hint, path: str, base_dir: Optional[Path]):
    origin = get_origin(hint)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        value = _interpolate(value, path)
        if base_dir is not None and path in _PATH_FIELDS and value:
            p = Path(value)
            return str(p if p.is_absolute() else (base_dir / p).resolve())
        return value
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected an array, got {value!r}")
        item_hint = get_args(hint)[0]
        items = tuple(_coerce(v, item_hint, f"{path}[{i}]", None)
                      for i, v in enumerate(value))
        if base_dir is not None and path in _PATH_LIST_FIELDS:
            items = tuple(
                str(Path(v) if Path(v).is_absolute() else (base_dir / v).resolve())
                for v in items)
        return items
    if hint is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a table, got {value!r}")
        return dict(value)
    raise ConfigError(f"{path}: unsupported config field type {hint!r}")


def _build(dc_type, obj, path: str, base_dir: Optional[Path]):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path or 'config'}: expected a table, got {obj!r}")
    hints = get_type_hints(dc_type)
    names = {f.name for f in dataclasses.fields(dc_type)}
    unknown = sorted(set(obj) - names)
    if unknown:
        where = path or "top level"
        raise ConfigError(f"unknown config key(s) at {where}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in obj.items():
        sub = f"{path}.{key}" if path else key
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, sub, base_dir)
        else:
            kwargs[key] = _coerce(value, hint, sub, base_dir)
    try:
        return dc_type(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def parse_config(obj: dict, base_dir: Optional[str | Path] = None) -> RunConfig:
    return _build(RunConfig, obj, "", Path(base_dir) if base_dir else None)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        obj = _toml.loads(path.read_text(encoding="utf-8"))
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(obj, base_dir=path.resolve().parent)


def _redact(obj):
    if isinstance(obj, dict):
        return {k: ("***" if _SECRET.search(k) and not k.endswith("_env") and v
                    else _redact(v))
                for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_redact(v) for v in obj]
    return obj


def resolved_snapshot(cfg: RunConfig) -> dict:
    return _redact(dataclasses.asdict(cfg))


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(resolved_snapshot(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_snapshot(cfg: RunConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved-config.json"
    body = {"config_sha256": config_hash(cfg), "config": resolved_snapshot(cfg)}
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
