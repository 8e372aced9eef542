"""Two-stage training: projection-head alignment, then adapter fine-tuning.

Stage 1 updates only the projection layer; stage 2 updates only adapter
factors. Both stages verify their freeze contract by construction (frozen
parameters never enter the optimizer and receive no gradient) and log per-
epoch train/eval loss. Loss supervises the response: answer tokens plus the
end marker during training, answer content only during evaluation.
"""

from __future__ import annotations

import copy
import random
from contextlib import nullcontext
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import torch
import torch.nn.functional as F

from ..corpus import DatasetManifest
from .checkpoint import Checkpoint
from .config import VlmConfig
from .data import Batch, Example, build_examples, collate
from .lora import LoraConfig, apply_lora, has_adapters
from .model import VLM
from .tokenizer import Tokenizer


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 1e-5
    lr_schedule: str = "constant"
    label_smoothing: float = 0.0
    weight_decay: float = 0.0
    fp16: bool = False
    grad_accum: int = 16
    batch_size: int = 6
    epochs: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.lr_schedule != "constant":
            raise TrainError(f"only the constant schedule is supported, got {self.lr_schedule!r}")
        if self.batch_size < 1 or self.grad_accum < 1 or self.epochs < 1:
            raise TrainError("batch_size, grad_accum, and epochs must be >= 1")


def batch_loss(model: VLM, batch: Batch, mask: torch.Tensor,
               label_smoothing: float = 0.0) -> torch.Tensor:
    """Mean cross-entropy over masked target positions (position t is
    predicted from logits at t-1)."""
    result = model(batch.patches, batch.assembled)
    pred = result.logits[:, :-1, :]
    targets = batch.ids[:, 1:]
    m = mask[:, 1:]
    if not m.any():
        raise TrainError("batch has no supervised positions")
    losses = F.cross_entropy(pred.reshape(-1, pred.shape[-1]), targets.reshape(-1),
                             reduction="none", label_smoothing=label_smoothing)
    flat = m.reshape(-1)
    return losses[flat].mean()


@torch.no_grad()
def eval_loss(model_or_ckpt, manifest: DatasetManifest, tokenizer: Tokenizer,
              root: str | Path, batch_size: int = 8) -> float:
    """Mean per-token NLL over answer content tokens across the manifest."""
    model = model_or_ckpt.model if isinstance(model_or_ckpt, Checkpoint) else model_or_ckpt
    config = model.config
    examples = build_examples(manifest, tokenizer, config, root)
    if not examples:
        raise TrainError("empty manifest")
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    for i in range(0, len(examples), batch_size):
        batch = collate(examples[i:i + batch_size], config, dtype=dtype)
        result = model(batch.patches, batch.assembled)
        pred = result.logits[:, :-1, :]
        targets = batch.ids[:, 1:]
        m = batch.eval_mask[:, 1:].reshape(-1)
        losses = F.cross_entropy(pred.reshape(-1, pred.shape[-1]), targets.reshape(-1),
                                 reduction="none")
        total += float(losses[m].sum())
        count += int(m.sum())
    if was_training:
        model.train()
    if count == 0:
        raise TrainError("manifest has no supervised answer tokens")
    return total / count


def _trainable_names(model: VLM, stage: str) -> set[str]:
    if stage == "stage1":
        return {n for n, _ in model.named_parameters() if n.startswith("projection.")}
    return {n for n, _ in model.named_parameters() if n.endswith((".down", ".up"))}


def _run_training(model: VLM, stage: str, train_manifest: DatasetManifest,
                  eval_manifest: Optional[DatasetManifest], hyper: TrainHyper,
                  tokenizer: Tokenizer, root: str | Path) -> list[dict]:
    config = model.config
    if not train_manifest.records:
        raise TrainError("training manifest is empty")
    trainable = _trainable_names(model, stage)
    if not trainable:
        raise TrainError(f"no trainable parameters for {stage}")
    for name, param in model.named_parameters():
        param.requires_grad = name in trainable
    params = [p for n, p in model.named_parameters() if n in trainable]
    optimizer = torch.optim.AdamW(params, lr=hyper.lr, weight_decay=hyper.weight_decay)

    examples = build_examples(train_manifest, tokenizer, config, root)
    eval_examples = (build_examples(eval_manifest, tokenizer, config, root)
                     if eval_manifest is not None and eval_manifest.records else None)

    def run_eval() -> Optional[float]:
        if eval_examples is None:
            return None
        with torch.no_grad():
            model.eval()
            total, count = 0.0, 0
            for i in range(0, len(eval_examples), 8):
                batch = collate(eval_examples[i:i + 8], config)
                result = model(batch.patches, batch.assembled)
                pred = result.logits[:, :-1, :]
                losses = F.cross_entropy(pred.reshape(-1, pred.shape[-1]),
                                         batch.ids[:, 1:].reshape(-1), reduction="none")
                m = batch.eval_mask[:, 1:].reshape(-1)
                total += float(losses[m].sum())
                count += int(m.sum())
            model.train()
            return total / count if count else None

    torch.manual_seed(hyper.seed)
    rng = random.Random(hyper.seed)
    model.train()
    history = [{"epoch": 0, "train_loss": None, "eval_loss": run_eval()}]
    if hyper.fp16:
        autocast = torch.autocast("cuda", dtype=torch.float16) if torch.cuda.is_available() \
            else torch.autocast("cpu", dtype=torch.bfloat16)
    else:
        autocast = nullcontext()

    order = list(range(len(examples)))
    for epoch in range(1, hyper.epochs + 1):
        rng.shuffle(order)
        epoch_losses = []
        optimizer.zero_grad()
        pending = 0
        for start in range(0, len(order), hyper.batch_size):
            chunk = [examples[i] for i in order[start:start + hyper.batch_size]]
            batch = collate(chunk, config)
            with autocast:
                loss = batch_loss(model, batch, batch.train_mask, hyper.label_smoothing)
            (loss / hyper.grad_accum).backward()
            epoch_losses.append(float(loss.detach()))
            pending += 1
            if pending == hyper.grad_accum:
                optimizer.step()
                optimizer.zero_grad()
                pending = 0
        if pending:
            optimizer.step()
            optimizer.zero_grad()
        history.append({
            "epoch": epoch,
            "train_loss": sum(epoch_losses) / len(epoch_losses),
            "eval_loss": run_eval(),
        })
    model.eval()
    return history


def train_stage1(ckpt: Checkpoint, train_manifest: DatasetManifest,
                 eval_manifest: Optional[DatasetManifest], hyper: TrainHyper,
                 tokenizer: Tokenizer, root: str | Path) -> tuple[Checkpoint, list[dict]]:
    """Projection-head-only training from a base checkpoint."""
    if ckpt.stage != "base":
        raise TrainError(f"stage 1 starts from a base checkpoint, got {ckpt.stage}")
    model = copy.deepcopy(ckpt.model)
    history = _run_training(model, "stage1", train_manifest, eval_manifest,
                            hyper, tokenizer, root)
    out = Checkpoint(model=model, config=ckpt.config, stage="stage1",
                     trainer_state={"hyper": asdict(hyper), "history": history})
    return out, history


def train_stage2(ckpt: Checkpoint, train_manifest: DatasetManifest,
                 eval_manifest: Optional[DatasetManifest], lora: LoraConfig,
                 hyper: TrainHyper, tokenizer: Tokenizer,
                 root: str | Path) -> tuple[Checkpoint, list[dict]]:
    """Adapter-only training from a stage-1 (or, for ablations, base) checkpoint."""
    if ckpt.stage not in ("stage1", "base"):
        raise TrainError(f"stage 2 starts from stage1 or base, got {ckpt.stage}")
    model = copy.deepcopy(ckpt.model)
    if has_adapters(model):
        raise TrainError("checkpoint already carries adapters")
    apply_lora(model, lora, seed=hyper.seed)
    history = _run_training(model, "stage2", train_manifest, eval_manifest,
                            hyper, tokenizer, root)
    out = Checkpoint(model=model, config=ckpt.config, stage="stage2", lora=lora,
                     trainer_state={"hyper": asdict(hyper), "history": history,
                                    "init_stage": ckpt.stage})
    return out, history
