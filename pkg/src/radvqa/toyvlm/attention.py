"""Captured attention probabilities, validated and serializable.

A stack covers only the valid (non-pad) region of one forward pass. For the
language-model component, token id -1 marks image slots, sep_index is the
separator position, and gen_start is the first response position; rows from
gen_start on must be causally supported. Vision stacks have no token ids or
separator and are unrestricted (non-causal).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

COMPONENTS = ("vision", "lm")


class AttentionError(ValueError):
    pass


@dataclass
class AttentionStack:
    component: str
    attn: np.ndarray                  # [layers][heads][seq][seq]
    token_ids: list[int]
    image_token_count: int
    sep_index: int = -1
    gen_start: int = -1

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise AttentionError(f"component must be one of {COMPONENTS}, got {self.component!r}")
        self.attn = np.asarray(self.attn, dtype=np.float64)
        if self.attn.ndim != 4 or self.attn.shape[2] != self.attn.shape[3]:
            raise AttentionError(f"attention tensor must be [L][H][S][S], got shape {self.attn.shape}")
        if self.component == "lm" and len(self.token_ids) != self.seq_len:
            raise AttentionError(
                f"token_ids length {len(self.token_ids)} != seq_len {self.seq_len}")

    @property
    def n_layers(self) -> int:
        return self.attn.shape[0]

    @property
    def n_heads(self) -> int:
        return self.attn.shape[1]

    @property
    def seq_len(self) -> int:
        return self.attn.shape[2]

    def validate(self, atol: float = 1e-5) -> None:
        """Row stochasticity everywhere; causal support for generated rows."""
        if np.any(self.attn < -atol):
            raise AttentionError("attention contains negative probabilities")
        sums = self.attn.sum(axis=-1)
        bad = np.abs(sums - 1.0) > atol
        if bad.any():
            l, h, r = (int(i[0]) for i in np.nonzero(bad))
            raise AttentionError(
                f"attention row does not sum to 1: layer {l} head {h} row {r} sum {sums[l, h, r]:.6f}")
        if self.component == "lm" and self.gen_start >= 0:
            s = self.seq_len
            for r in range(self.gen_start, s):
                future = self.attn[:, :, r, r + 1:]
                if future.size and np.abs(future).max() > atol:
                    raise AttentionError(f"generated row {r} attends to a future position")

    def to_json_obj(self) -> dict:
        return {
            "component": self.component,
            "layers": self.n_layers,
            "heads": self.n_heads,
            "seq_len": self.seq_len,
            "image_token_count": self.image_token_count,
            "sep_index": self.sep_index,
            "gen_start": self.gen_start,
            "token_ids": list(self.token_ids),
            "attn": self.attn.tolist(),
        }

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_obj()) + "\n", encoding="utf-8")

    @classmethod
    def from_json_obj(cls, obj: dict) -> "AttentionStack":
        stack = cls(
            component=obj["component"],
            attn=np.asarray(obj["attn"], dtype=np.float64),
            token_ids=[int(t) for t in obj["token_ids"]],
            image_token_count=int(obj["image_token_count"]),
            sep_index=int(obj["sep_index"]),
            gen_start=int(obj["gen_start"]),
        )
        expect = (obj["layers"], obj["heads"], obj["seq_len"], obj["seq_len"])
        if stack.attn.shape != expect:
            raise AttentionError(f"attn shape {stack.attn.shape} != declared {expect}")
        return stack

    @classmethod
    def load(cls, path: str | Path) -> "AttentionStack":
        return cls.from_json_obj(json.loads(Path(path).read_text(encoding="utf-8")))
