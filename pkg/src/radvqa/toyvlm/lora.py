"""Low-rank adapters over attention projections.

A wrapped projection computes base(x) + (alpha/r) * x @ down^T @ up^T, with
`up` zero-initialized so a fresh adapter changes nothing. Effective weight
after merging: W + (alpha/r) * up @ down.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .model import VLM, Block, SelfAttention

PROJ_NAMES = ("q", "k", "v", "o")
ALL_TARGETS = tuple(f"{comp}.{p}" for comp in ("vision", "lm") for p in PROJ_NAMES)


class LoraError(ValueError):
    pass


@dataclass(frozen=True)
class LoraConfig:
    r: int = 4
    alpha: float = 8.0
    targets: tuple[str, ...] = ALL_TARGETS

    def __post_init__(self):
        if self.r < 1:
            raise LoraError(f"rank must be >= 1, got {self.r}")
        unknown = [t for t in self.targets if t not in ALL_TARGETS]
        if unknown:
            raise LoraError(f"unknown adapter targets {unknown}; valid: {list(ALL_TARGETS)}")
        if not self.targets:
            raise LoraError("at least one adapter target required")

    def to_json_obj(self) -> dict:
        return {"r": self.r, "alpha": self.alpha, "targets": list(self.targets)}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "LoraConfig":
        return cls(r=obj["r"], alpha=obj["alpha"], targets=tuple(obj["targets"]))


class LoraLinear(nn.Module):
    def __init__(self, base: nn.Linear, r: int, alpha: float):
        super().__init__()
        self.base = base
        self.r = r
        self.alpha = alpha
        self.scale = alpha / r
        self.down = nn.Parameter(torch.randn(r, base.in_features,
                                             dtype=base.weight.dtype) * 0.02)
        self.up = nn.Parameter(torch.zeros(base.out_features, r,
                                           dtype=base.weight.dtype))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + (x @ self.down.T @ self.up.T) * self.scale

    def merged_linear(self) -> nn.Linear:
        out = nn.Linear(self.base.in_features, self.base.out_features,
                        bias=self.base.bias is not None, dtype=self.base.weight.dtype)
        with torch.no_grad():
            out.weight.copy_(self.base.weight + self.scale * (self.up @ self.down))
            if self.base.bias is not None:
                out.bias.copy_(self.base.bias)
        return out


def _attention_blocks(model: VLM, component: str) -> list[SelfAttention]:
    tower = model.vision if component == "vision" else model.lm
    return [block.attn for block in tower.blocks if isinstance(block, Block)]


def apply_lora(model: VLM, config: LoraConfig, seed: int = 0) -> VLM:
    """Wrap the targeted projections in place; returns the same model."""
    torch.manual_seed(seed)
    for target in config.targets:
        component, proj = target.split(".")
        attr = f"{proj}_proj"
        for attn in _attention_blocks(model, component):
            base = getattr(attn, attr)
            if isinstance(base, LoraLinear):
                raise LoraError(f"target {target} already has an adapter")
            setattr(attn, attr, LoraLinear(base, config.r, config.alpha))
    return model


def merge_lora(model: VLM) -> VLM:
    """Fold every adapter into its base weight; returns the same model."""
    for component in ("vision", "lm"):
        for attn in _attention_blocks(model, component):
            for proj in PROJ_NAMES:
                attr = f"{proj}_proj"
                layer = getattr(attn, attr)
                if isinstance(layer, LoraLinear):
                    setattr(attn, attr, layer.merged_linear())
    return model


def lora_parameters(model: VLM):
    for name, param in model.named_parameters():
        if name.endswith((".down", ".up")):
            yield name, param


def count_lora_parameters(model: VLM) -> int:
    return sum(p.numel() for _, p in lora_parameters(model))


def has_adapters(model: VLM) -> bool:
    return any(True for _ in lora_parameters(model))
