"""Manifest records -> model-ready tensors.

Images load either as precomputed patch features (.npy of shape exactly
[P, d_patch_in]) or as raw grayscale pixels (.png/.jpg, or any other 2-D
array), which are block-mean pooled onto the patch grid. Prompt text is
lowercased before tokenization to keep sequences short.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib.image
import numpy as np
import torch

from ..corpus import ImageRef, QARecord
from .config import VlmConfig
from .model import Assembled, assemble_sequence
from .tokenizer import Tokenizer

CAPTION_PROMPT = "describe the image."


class DataError(ValueError):
    pass


def _patch_shape(d_patch_in: int) -> tuple[int, int]:
    """Factor the per-patch feature count into the squarest (rows, cols)."""
    r = int(np.sqrt(d_patch_in))
    while r > 1 and d_patch_in % r:
        r -= 1
    return r, d_patch_in // r


def _block_mean(cell: np.ndarray, out_rows: int, out_cols: int) -> np.ndarray:
    if cell.shape[0] < out_rows or cell.shape[1] < out_cols:
        raise DataError(f"patch cell {cell.shape} smaller than pooling grid {(out_rows, out_cols)}")
    rows = np.array_split(cell, out_rows, axis=0)
    return np.array([[chunk.mean() for chunk in np.array_split(row, out_cols, axis=1)]
                     for row in rows])


def pixels_to_patches(image: np.ndarray, config: VlmConfig) -> np.ndarray:
    """Grayscale [H, W] -> [P, d_patch_in] by gridding then block-mean pooling."""
    if image.ndim == 3:
        image = image[..., :3].mean(axis=-1)
    if image.ndim != 2:
        raise DataError(f"expected 2-D pixels, got shape {image.shape}")
    rows, cols = config.patch_grid
    pr, pc = _patch_shape(config.d_patch_in)
    patches = []
    for row_cells in np.array_split(image, rows, axis=0):
        for cell in np.array_split(row_cells, cols, axis=1):
            patches.append(_block_mean(cell, pr, pc).reshape(-1))
    return np.asarray(patches, dtype=np.float32)


def load_patch_features(image: ImageRef, root: str | Path, config: VlmConfig) -> np.ndarray:
    path = Path(root) / image.path
    if not path.exists():
        raise DataError(f"image file {path} does not exist")
    p = config.num_patches
    if path.suffix == ".npy":
        arr = np.load(path, allow_pickle=False)
        if arr.shape == (p, config.d_patch_in):
            return arr.astype(np.float32)
        if arr.ndim == 2:
            return pixels_to_patches(arr, config)
        raise DataError(f"{path} has shape {arr.shape}; expected [{p}, {config.d_patch_in}] features or 2-D pixels")
    if path.suffix in (".png", ".jpg", ".jpeg"):
        return pixels_to_patches(np.asarray(matplotlib.image.imread(path), dtype=np.float64), config)
    raise DataError(f"unsupported image format {path.suffix!r} for {path}")


def format_prompt(record: QARecord) -> str:
    if record.kind == "caption":
        return CAPTION_PROMPT
    prompt = record.question.lower()
    if record.kind == "mcq":
        prompt += " options: " + " | ".join(o.lower() for o in record.options)
    return prompt


def format_answer(record: QARecord) -> str:
    return record.answer.lower()


@dataclass
class Example:
    record_id: str
    assembled: Assembled
    patches: np.ndarray
    n_answer_tokens: int     # answer content tokens that survived truncation
    has_eos: bool


def encode_example(record: QARecord, tokenizer: Tokenizer, config: VlmConfig,
                   root: str | Path) -> Example:
    prompt_ids = tokenizer.encode(format_prompt(record))
    answer_ids = tokenizer.encode(format_answer(record))
    assembled = assemble_sequence(config, prompt_ids, answer_ids, append_eos=True)
    if assembled.ans_index < 0:
        raise DataError(f"record {record.id}: prompt alone overflows max_seq_len")
    content_start = assembled.ans_index + 1
    n_answer = min(len(answer_ids), assembled.valid_len - content_start)
    has_eos = assembled.valid_len > content_start + len(answer_ids)
    return Example(record_id=record.id, assembled=assembled,
                   patches=load_patch_features(record.image, root, config),
                   n_answer_tokens=n_answer, has_eos=has_eos)


def build_examples(manifest, tokenizer: Tokenizer, config: VlmConfig,
                   root: str | Path) -> list[Example]:
    return [encode_example(r, tokenizer, config, root) for r in manifest.records]


@dataclass
class Batch:
    patches: torch.Tensor        # [B, P, d_patch_in]
    assembled: list[Assembled]
    ids: torch.Tensor            # [B, S] with image slots mapped to pad id
    train_mask: torch.Tensor     # [B, S] answer content + EOS target positions
    eval_mask: torch.Tensor      # [B, S] answer content only


def collate(examples: list[Example], config: VlmConfig,
            dtype: torch.dtype = torch.float32) -> Batch:
    s = config.max_seq_len
    ids = torch.tensor([e.assembled.token_ids for e in examples], dtype=torch.long)
    ids = ids.masked_fill(ids < 0, config.pad_token_id)
    train_mask = torch.zeros(len(examples), s, dtype=torch.bool)
    eval_mask = torch.zeros(len(examples), s, dtype=torch.bool)
    for i, e in enumerate(examples):
        start = e.assembled.ans_index + 1
        eval_mask[i, start:start + e.n_answer_tokens] = True
        end = start + e.n_answer_tokens + (1 if e.has_eos else 0)
        train_mask[i, start:end] = True
    patches = torch.from_numpy(np.stack([e.patches for e in examples])).to(dtype)
    return Batch(patches=patches, assembled=[e.assembled for e in examples],
                 ids=ids, train_mask=train_mask, eval_mask=eval_mask)
