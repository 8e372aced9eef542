"""Cross-modal attention saliency.

Two directions over one captured LM attention stack: a generated
response token as the query against the image-patch keys (columns
[0, P)), or an image patch as the query against the response rows. Two
methods: raw attention (slice, average over the selected layers/heads,
renormalize) and attention rollout, which folds the residual path into
each layer (row-normalize A + I) and multiplies later layers onto the
accumulated product so early routing survives downstream mixing.

An all-zero slice (a head that never looks at the image, say) returns
the uniform map with a "degenerate_uniform" flag instead of NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .toyvlm import AttentionStack

__all__ = [
    "SaliencyError",
    "DIRECTIONS",
    "METHODS",
    "HEAD_FUSIONS",
    "SaliencyQuery",
    "SaliencyMap",
    "raw_map",
    "rollout_matrix",
    "rollout_map",
    "compute_map",
    "render_grid",
]

DIRECTIONS = ("token_to_image", "patch_to_tokens")
METHODS = ("raw", "rollout")
HEAD_FUSIONS = ("mean", "max", "min")

_EPS = 1e-12


class SaliencyError(ValueError):
    pass


@dataclass(frozen=True)
class SaliencyQuery:
    """layer/head of None means "average over all"; rollout ignores the
    layer selector entirely (it is a whole-stack method)."""

    direction: str
    method: str = "raw"
    token_index: int = -1        # absolute position in the trimmed stack
    patch_index: int = -1
    layer: Optional[int] = None
    head: Optional[int] = None

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise SaliencyError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.method not in METHODS:
            raise SaliencyError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.direction == "token_to_image" and self.token_index < 0:
            raise SaliencyError("token_to_image queries need token_index")
        if self.direction == "patch_to_tokens" and self.patch_index < 0:
            raise SaliencyError("patch_to_tokens queries need patch_index")


@dataclass(frozen=True)
class SaliencyMap:
    direction: str
    scores: tuple[float, ...]
    argmax: int
    flags: tuple[str, ...] = ()
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.size == 0:
            raise SaliencyError("saliency map cannot be empty")
        if np.any(arr < -1e-12):
            raise SaliencyError("saliency scores must be non-negative")
        if abs(float(arr.sum()) - 1.0) > 1e-6:
            raise SaliencyError(f"saliency scores must sum to 1, got {arr.sum():.9f}")
        if self.argmax != int(arr.argmax()):
            raise SaliencyError("argmax does not match scores")

    def to_json_obj(self) -> dict:
        return {
            "direction": self.direction,
            "method": self.provenance.get("method"),
            "scores": list(self.scores),
            "argmax": self.argmax,
            "flags": list(self.flags),
            "provenance": dict(self.provenance),
        }


def _check_lm_stack(stack: AttentionStack) -> None:
    if stack.component != "lm":
        raise SaliencyError("cross-modal saliency needs an lm attention stack")
    if stack.gen_start < 0:
        raise SaliencyError("stack has no generation boundary")
    if stack.image_token_count < 1 or stack.image_token_count > stack.seq_len:
        raise SaliencyError("stack image token count out of range")


def _normalize(slice_: np.ndarray, direction: str, provenance: dict,
               flags: tuple[str, ...] = ()) -> SaliencyMap:
    slice_ = np.clip(slice_, 0.0, None)   # softmax output, negatives are float fuzz
    total = float(slice_.sum())
    if total <= _EPS:
        scores = np.full(slice_.shape, 1.0 / slice_.size)
        flags = flags + ("degenerate_uniform",)
    else:
        scores = slice_ / total
    return SaliencyMap(direction=direction, scores=tuple(float(v) for v in scores),
                       argmax=int(scores.argmax()), flags=flags, provenance=provenance)


def _fuse(attn: np.ndarray, layer: Optional[int], head: Optional[int],
          n_layers: int, n_heads: int) -> np.ndarray:
    if layer is not None and not (0 <= layer < n_layers):
        raise SaliencyError(f"layer {layer} out of range 0..{n_layers - 1}")
    if head is not None and not (0 <= head < n_heads):
        raise SaliencyError(f"head {head} out of range 0..{n_heads - 1}")
    chosen = attn if layer is None else attn[layer: layer + 1]
    chosen = chosen if head is None else chosen[:, head: head + 1]
    return chosen.mean(axis=(0, 1))


def _slice_map(matrix: np.ndarray, stack: AttentionStack, query: SaliencyQuery,
               provenance: dict) -> SaliencyMap:
    p = stack.image_token_count
    s = stack.seq_len
    if query.direction == "token_to_image":
        if not (stack.gen_start <= query.token_index < s):
            raise SaliencyError(
                f"token_index {query.token_index} is not a response position "
                f"(valid range {stack.gen_start}..{s - 1})")
        return _normalize(matrix[query.token_index, :p].copy(),
                          query.direction, provenance)
    if not (0 <= query.patch_index < p):
        raise SaliencyError(f"patch_index {query.patch_index} out of range 0..{p - 1}")
    if stack.gen_start >= s:
        raise SaliencyError("stack has no response tokens to map onto")
    return _normalize(matrix[stack.gen_start:, query.patch_index].copy(),
                      query.direction, provenance)


def raw_map(stack: AttentionStack, query: SaliencyQuery,
            extra_provenance: Optional[dict] = None) -> SaliencyMap:
    _check_lm_stack(stack)
    fused = _fuse(stack.attn, query.layer, query.head, stack.n_layers, stack.n_heads)
    provenance = {
        "method": "raw",
        "layer": "mean_all" if query.layer is None else query.layer,
        "head": "mean_all" if query.head is None else query.head,
        "token_index": query.token_index if query.direction == "token_to_image" else None,
        "patch_index": query.patch_index if query.direction == "patch_to_tokens" else None,
        **(extra_provenance or {}),
    }
    return _slice_map(fused, stack, query, provenance)


def rollout_matrix(stack: AttentionStack, head_fusion: str = "mean") -> np.ndarray:
    """Accumulated attention [S, S]; rows stay stochastic."""
    if head_fusion not in HEAD_FUSIONS:
        raise SaliencyError(f"head_fusion must be one of {HEAD_FUSIONS}, got {head_fusion!r}")
    if stack.n_layers < 1:
        raise SaliencyError("rollout needs at least one layer")
    stack.validate()
    s = stack.seq_len
    rollout = np.eye(s)
    for layer in range(stack.n_layers):
        heads = stack.attn[layer]
        if head_fusion == "mean":
            fused = heads.mean(axis=0)
        elif head_fusion == "max":
            fused = heads.max(axis=0)
        else:
            fused = heads.min(axis=0)
        with_residual = fused + np.eye(s)
        with_residual /= with_residual.sum(axis=-1, keepdims=True)
        rollout = with_residual @ rollout
    return rollout


def rollout_map(stack: AttentionStack, query: SaliencyQuery,
                head_fusion: str = "mean",
                extra_provenance: Optional[dict] = None) -> SaliencyMap:
    _check_lm_stack(stack)
    matrix = rollout_matrix(stack, head_fusion=head_fusion)
    provenance = {
        "method": "rollout",
        "head_fusion": head_fusion,
        "layer": "whole_stack",
        "token_index": query.token_index if query.direction == "token_to_image" else None,
        "patch_index": query.patch_index if query.direction == "patch_to_tokens" else None,
        **(extra_provenance or {}),
    }
    return _slice_map(matrix, stack, query, provenance)


def compute_map(stack: AttentionStack, query: SaliencyQuery,
                head_fusion: str = "mean",
                extra_provenance: Optional[dict] = None) -> SaliencyMap:
    if query.method == "raw":
        return raw_map(stack, query, extra_provenance)
    return rollout_map(stack, query, head_fusion=head_fusion,
                       extra_provenance=extra_provenance)


def render_grid(saliency: SaliencyMap, grid: tuple[int, int],
                image_size: tuple[int, int] = (512, 512)) -> dict:
    """Overlay spec for a patch grid: per-cell rectangles with min-max
    normalized intensity. A flat map renders every cell at 0.5 and sets
    the flat_map flag."""
    if saliency.direction != "token_to_image":
        raise SaliencyError("render_grid applies to token_to_image maps")
    rows, cols = grid
    scores = np.asarray(saliency.scores)
    if rows < 1 or cols < 1 or rows * cols != scores.size:
        raise SaliencyError(f"grid {rows}x{cols} does not cover {scores.size} patches")
    width, height = image_size
    lo, hi = float(scores.min()), float(scores.max())
    flags = list(saliency.flags)
    if hi - lo <= _EPS:
        intensities = np.full(scores.shape, 0.5)
        if "flat_map" not in flags:
            flags.append("flat_map")
    else:
        intensities = (scores - lo) / (hi - lo)
    cell_w, cell_h = width / cols, height / rows
    cells = []
    for index in range(scores.size):
        r, c = divmod(index, cols)
        cells.append({
            "row": r, "col": c,
            "x": c * cell_w, "y": r * cell_h,
            "width": cell_w, "height": cell_h,
            "intensity": float(intensities[index]),
        })
    am_row, am_col = divmod(saliency.argmax, cols)
    return {
        "grid": {"rows": rows, "cols": cols},
        "image_size": {"width": width, "height": height},
        "cells": cells,
        "argmax_cell": {"row": am_row, "col": am_col, "index": saliency.argmax},
        "flags": flags,
    }
