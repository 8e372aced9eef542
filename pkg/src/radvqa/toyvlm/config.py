"""Model topology configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .tokenizer import ANS_ID, EOS_ID, PAD_ID, SEP_ID


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class VlmConfig:
    patch_grid: tuple[int, int] = (8, 8)
    d_patch_in: int = 16
    d_vision: int = 48
    d_model: int = 64
    n_vision_layers: int = 2
    n_vision_heads: int = 4
    n_lm_layers: int = 4
    n_lm_heads: int = 4
    vocab_size: int = 512
    max_seq_len: int = 128
    sep_token_id: int = SEP_ID
    pad_token_id: int = PAD_ID
    ans_token_id: int = ANS_ID
    eos_token_id: int = EOS_ID

    def __post_init__(self):
        rows, cols = self.patch_grid
        if rows < 1 or cols < 1:
            raise ConfigError(f"patch_grid must be positive, got {self.patch_grid}")
        if self.d_vision % self.n_vision_heads:
            raise ConfigError(f"d_vision {self.d_vision} not divisible by n_vision_heads {self.n_vision_heads}")
        if self.d_model % self.n_lm_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_lm_heads {self.n_lm_heads}")
        if self.max_seq_len < self.num_patches + 2:
            raise ConfigError(
                f"max_seq_len {self.max_seq_len} leaves no room for text after "
                f"{self.num_patches} image tokens and the separator")
        ids = (self.sep_token_id, self.pad_token_id, self.ans_token_id, self.eos_token_id)
        if len(set(ids)) != 4 or any(not (0 <= i < self.vocab_size) for i in ids):
            raise ConfigError(f"special token ids must be distinct and in vocab: {ids}")

    @property
    def num_patches(self) -> int:
        return self.patch_grid[0] * self.patch_grid[1]

    def to_json_obj(self) -> dict:
        obj = asdict(self)
        obj["patch_grid"] = list(self.patch_grid)
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "VlmConfig":
        kwargs = dict(obj)
        kwargs["patch_grid"] = tuple(kwargs["patch_grid"])
        return cls(**kwargs)
