"""Single-file checkpoint container.

A checkpoint is a zip holding meta.json (format version, stage, config,
adapter config, trainer state, content hash) plus one .npy entry per named
tensor. Zip entries carry a fixed timestamp so identical weights produce
byte-identical files; the content hash covers tensor bytes and metadata,
never wall-clock state.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import VlmConfig
from .lora import LoraConfig, apply_lora
from .model import VLM

STAGES = ("base", "stage1", "stage2")
FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def tensor_hashes(model: torch.nn.Module) -> dict[str, str]:
    """Per-tensor sha256 over raw little-endian bytes; freeze-contract probe."""
    out = {}
    for name, param in sorted(model.state_dict().items()):
        arr = np.ascontiguousarray(param.detach().cpu().numpy())
        out[name] = hashlib.sha256(arr.tobytes()).hexdigest()
    return out


def content_hash(model: torch.nn.Module, config: VlmConfig, stage: str,
                 lora: Optional[LoraConfig] = None) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({
        "stage": stage,
        "config": config.to_json_obj(),
        "lora": lora.to_json_obj() if lora else None,
    }, sort_keys=True).encode("utf-8"))
    for name, digest in sorted(tensor_hashes(model).items()):
        h.update(name.encode("utf-8"))
        h.update(digest.encode("utf-8"))
    return h.hexdigest()


@dataclass
class Checkpoint:
    model: VLM
    config: VlmConfig
    stage: str
    lora: Optional[LoraConfig] = None
    trainer_state: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise CheckpointError(f"stage must be one of {STAGES}, got {self.stage!r}")

    @property
    def content_hash(self) -> str:
        return content_hash(self.model, self.config, self.stage, self.lora)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> str:
    """Writes the container; returns the content hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    digest = ckpt.content_hash
    meta = {
        "format_version": FORMAT_VERSION,
        "stage": ckpt.stage,
        "config": ckpt.config.to_json_obj(),
        "lora": ckpt.lora.to_json_obj() if ckpt.lora else None,
        "trainer_state": ckpt.trainer_state,
        "content_hash": digest,
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        def write_entry(name: str, data: bytes):
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)

        write_entry("meta.json", json.dumps(meta, sort_keys=True, indent=2).encode("utf-8"))
        for name, tensor in sorted(ckpt.model.state_dict().items()):
            buf = io.BytesIO()
            np.save(buf, tensor.detach().cpu().numpy(), allow_pickle=False)
            write_entry(f"tensors/{name}.npy", buf.getvalue())
    return digest


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    with zipfile.ZipFile(path) as zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError:
            raise CheckpointError(f"{path} is not a checkpoint (missing meta.json)") from None
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format {meta.get('format_version')}")
        config = VlmConfig.from_json_obj(meta["config"])
        lora = LoraConfig.from_json_obj(meta["lora"]) if meta.get("lora") else None
        model = VLM(config)
        if lora is not None:
            apply_lora(model, lora)
        state = {}
        for entry in zf.namelist():
            if entry.startswith("tensors/") and entry.endswith(".npy"):
                arr = np.load(io.BytesIO(zf.read(entry)), allow_pickle=False)
                state[entry[len("tensors/"):-len(".npy")]] = torch.from_numpy(arr)
        missing, unexpected = model.load_state_dict(state, strict=False)
        if missing or unexpected:
            raise CheckpointError(
                f"checkpoint tensors do not match model: missing {sorted(missing)[:3]}, "
                f"unexpected {sorted(unexpected)[:3]}")
    ckpt = Checkpoint(model=model, config=config, stage=meta["stage"], lora=lora,
                      trainer_state=meta.get("trainer_state", {}))
    if ckpt.content_hash != meta["content_hash"]:
        raise CheckpointError(f"checkpoint {path} content hash mismatch (corrupt or edited)")
    return ckpt
