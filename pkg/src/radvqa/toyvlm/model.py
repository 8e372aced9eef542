"""Miniature vision-language model.

Topology: vision tower (non-causal self-attention over a fixed patch grid)
-> single linear projection into the LM width -> [image tokens][SEP][text]
sequence -> prefix LM (bidirectional over image+prompt, causal over the
response). Every attention head's probabilities are captured per forward
pass for saliency work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
from torch import nn

from .attention import AttentionStack
from .config import VlmConfig


class ModelError(ValueError):
    pass


class SelfAttention(nn.Module):
    def __init__(self, d: int, n_heads: int):
        super().__init__()
        if d % n_heads:
            raise ModelError(f"width {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.head_dim = d // n_heads
        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d)
        self.v_proj = nn.Linear(d, d)
        self.o_proj = nn.Linear(d, d)

    def forward(self, x: torch.Tensor, allowed: Optional[torch.Tensor]):
        """x: [B,S,D]; allowed: bool [B,S,S] or None for full visibility.

        Returns (output [B,S,D], probs [B,H,S,S])."""
        b, s, d = x.shape
        def split(t):
            return t.view(b, s, self.n_heads, self.head_dim).transpose(1, 2)
        q, k, v = split(self.q_proj(x)), split(self.k_proj(x)), split(self.v_proj(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if allowed is not None:
            scores = scores.masked_fill(~allowed[:, None, :, :], float("-inf"))
        probs = torch.softmax(scores, dim=-1)
        out = (probs @ v).transpose(1, 2).reshape(b, s, d)
        return self.o_proj(out), probs


class Block(nn.Module):
    def __init__(self, d: int, n_heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = SelfAttention(d, n_heads)
        self.ln2 = nn.LayerNorm(d)
        self.mlp = nn.Sequential(nn.Linear(d, 4 * d), nn.GELU(), nn.Linear(4 * d, d))

    def forward(self, x: torch.Tensor, allowed: Optional[torch.Tensor]):
        attn_out, probs = self.attn(self.ln1(x), allowed)
        x = x + attn_out
        x = x + self.mlp(self.ln2(x))
        return x, probs


class VisionTower(nn.Module):
    """Per-patch feature producer; sees no text by construction."""

    def __init__(self, config: VlmConfig):
        super().__init__()
        self.num_patches = config.num_patches
        self.patch_embed = nn.Linear(config.d_patch_in, config.d_vision)
        self.pos_embed = nn.Parameter(torch.randn(self.num_patches, config.d_vision) * 0.02)
        self.blocks = nn.ModuleList(
            Block(config.d_vision, config.n_vision_heads) for _ in range(config.n_vision_layers))
        self.ln_f = nn.LayerNorm(config.d_vision)

    def forward(self, patches: torch.Tensor):
        """patches: [B, P, d_patch_in] -> (features [B, P, d_vision], probs [L][B,H,P,P])."""
        if patches.ndim != 3 or patches.shape[1] != self.num_patches:
            raise ModelError(
                f"expected [batch, {self.num_patches}, d_patch_in] patches, got {tuple(patches.shape)}")
        x = self.patch_embed(patches) + self.pos_embed
        captured = []
        for block in self.blocks:
            x, probs = block(x, None)
            captured.append(probs)
        return self.ln_f(x), captured


class PrefixLM(nn.Module):
    def __init__(self, config: VlmConfig):
        super().__init__()
        self.tok_embed = nn.Embedding(config.vocab_size, config.d_model)
        self.pos_embed = nn.Parameter(torch.randn(config.max_seq_len, config.d_model) * 0.02)
        self.blocks = nn.ModuleList(
            Block(config.d_model, config.n_lm_heads) for _ in range(config.n_lm_layers))
        self.ln_f = nn.LayerNorm(config.d_model)
        self.lm_head = nn.Linear(config.d_model, config.vocab_size, bias=False)

    def forward(self, h: torch.Tensor, allowed: torch.Tensor):
        """h: [B,S,D] embedded sequence -> (logits [B,S,V], probs [L][B,H,S,S])."""
        x = h + self.pos_embed[: h.shape[1]]
        captured = []
        for block in self.blocks:
            x, probs = block(x, allowed)
            captured.append(probs)
        return self.lm_head(self.ln_f(x)), captured


@dataclass(frozen=True)
class Assembled:
    """Position bookkeeping for one [image][SEP][prompt][ANS][answer] sequence."""

    token_ids: tuple[int, ...]   # length max_seq_len; -1 marks image slots
    valid_len: int
    sep_index: int
    ans_index: int               # -1 if the answer marker was truncated away
    prefix_len: int              # first causally-masked (response) position
    truncated: bool


def assemble_sequence(config: VlmConfig, prompt_ids: Sequence[int],
                      answer_ids: Sequence[int] = (), append_eos: bool = False) -> Assembled:
    """Lay out [P image slots][SEP][prompt][ANS][answer][EOS?][pads].

    Text that overflows max_seq_len is tail-truncated and flagged, never an
    error; the image block and separator always fit by config validation.
    """
    p = config.num_patches
    text = [config.sep_token_id, *prompt_ids, config.ans_token_id, *answer_ids]
    if append_eos:
        text.append(config.eos_token_id)
    capacity = config.max_seq_len - p
    truncated = len(text) > capacity
    if truncated:
        text = text[:capacity]
    ans_rel = 1 + len(prompt_ids)
    ans_index = p + ans_rel if ans_rel < len(text) else -1
    valid_len = p + len(text)
    ids = [-1] * p + text + [config.pad_token_id] * (config.max_seq_len - valid_len)
    prefix_len = ans_index + 1 if ans_index >= 0 else valid_len
    return Assembled(token_ids=tuple(ids), valid_len=valid_len, sep_index=p,
                     ans_index=ans_index, prefix_len=prefix_len, truncated=truncated)


def build_allowed(config: VlmConfig, batch: Sequence[Assembled],
                  device=None) -> torch.Tensor:
    """Visibility mask [B,S,S]: prefix rows see the whole prefix, response
    rows see everything up to themselves, pads see only themselves."""
    s = config.max_seq_len
    r = torch.arange(s).view(1, s, 1)
    j = torch.arange(s).view(1, 1, s)
    v = torch.tensor([a.valid_len for a in batch]).view(-1, 1, 1)
    p = torch.tensor([a.prefix_len for a in batch]).view(-1, 1, 1)
    prefix_rows = (r < p) & (j < p)
    causal_rows = (r >= p) & (r < v) & (j <= r)
    allowed = prefix_rows | causal_rows | (r == j)
    return allowed.to(device) if device is not None else allowed


@dataclass
class ForwardResult:
    logits: torch.Tensor                  # [B, S, vocab]
    vision_probs: list[torch.Tensor]      # per layer [B, H, P, P]
    lm_probs: list[torch.Tensor]          # per layer [B, H, S, S]


class VLM(nn.Module):
    def __init__(self, config: VlmConfig):
        super().__init__()
        self.config = config
        self.vision = VisionTower(config)
        self.projection = nn.Linear(config.d_vision, config.d_model)
        self.lm = PrefixLM(config)

    def encode_image(self, patches: torch.Tensor) -> tuple[torch.Tensor, AttentionStack]:
        """One image's patch features -> (vision features [P, d_vision], stack)."""
        feats, probs = self.vision(patches.unsqueeze(0))
        stack = AttentionStack(
            component="vision",
            attn=torch.stack([pr[0] for pr in probs]).detach().cpu().numpy(),
            token_ids=[],
            image_token_count=self.config.num_patches)
        return feats[0], stack

    def project(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-1] != self.config.d_vision:
            raise ModelError(
                f"expected feature width {self.config.d_vision}, got {features.shape[-1]}")
        return self.projection(features)

    def forward(self, patches: torch.Tensor, batch: Sequence[Assembled]) -> ForwardResult:
        """patches: [B, P, d_patch_in]; batch: matching assembled sequences."""
        if len(batch) != patches.shape[0]:
            raise ModelError(f"{patches.shape[0]} images vs {len(batch)} sequences")
        cfg = self.config
        feats, vision_probs = self.vision(patches)
        image_tokens = self.projection(feats)              # [B, P, d_model]

        ids = torch.tensor([a.token_ids for a in batch], dtype=torch.long,
                           device=patches.device)
        safe_ids = ids.masked_fill(ids < 0, cfg.pad_token_id)
        h = self.lm.tok_embed(safe_ids)
        h = torch.cat([image_tokens, h[:, cfg.num_patches:]], dim=1)

        allowed = build_allowed(cfg, batch, device=patches.device)
        logits, lm_probs = self.lm(h, allowed)
        return ForwardResult(logits=logits, vision_probs=vision_probs, lm_probs=lm_probs)

    def lm_stack(self, result: ForwardResult, batch: Sequence[Assembled],
                 index: int = 0) -> AttentionStack:
        """Trim one batch element's LM attention to its valid region."""
        a = batch[index]
        v = a.valid_len
        attn = torch.stack([pr[index, :, :v, :v] for pr in result.lm_probs])
        return AttentionStack(
            component="lm",
            attn=attn.detach().cpu().numpy(),
            token_ids=list(a.token_ids[:v]),
            image_token_count=self.config.num_patches,
            sep_index=a.sep_index,
            gen_start=a.prefix_len)

    def vision_stack(self, result: ForwardResult, index: int = 0) -> AttentionStack:
        attn = torch.stack([pr[index] for pr in result.vision_probs])
        return AttentionStack(
            component="vision",
            attn=attn.detach().cpu().numpy(),
            token_ids=[],
            image_token_count=self.config.num_patches)


def build_model(config: VlmConfig, seed: int = 0) -> VLM:
    """Fresh base model with seeded initialization."""
    torch.manual_seed(seed)
    return VLM(config)


@dataclass(frozen=True)
class GenSampling:
    mode: str = "greedy"          # greedy | temperature
    temperature: float = 1.0
    seed: int = 0
    max_new_tokens: int = 16

    def __post_init__(self):
        if self.mode not in ("greedy", "temperature"):
            raise ModelError(f"sampling mode must be greedy or temperature, got {self.mode!r}")
        if self.max_new_tokens < 1:
            raise ModelError("max_new_tokens must be >= 1")
        if self.mode == "temperature" and self.temperature <= 0:
            raise ModelError("temperature must be positive")


@dataclass
class GenerationResult:
    token_ids: list[int]          # response tokens, EOS included when emitted
    assembled: Assembled
    lm_stack: AttentionStack
    vision_stack: AttentionStack


@torch.no_grad()
def generate(model: VLM, patches: torch.Tensor, prompt_ids: Sequence[int],
             sampling: GenSampling) -> GenerationResult:
    """Autoregressive decoding with a full forward per step.

    Greedy decoding is deterministic; temperature sampling is deterministic
    for a fixed seed. The returned stacks come from one final forward pass
    covering every generated position.
    """
    cfg = model.config
    gen = torch.Generator().manual_seed(sampling.seed)
    produced: list[int] = []
    for _ in range(sampling.max_new_tokens):
        assembled = assemble_sequence(cfg, prompt_ids, produced)
        if assembled.ans_index < 0:
            raise ModelError("prompt fills the sequence; no room to generate")
        if assembled.valid_len >= cfg.max_seq_len:
            break
        result = model(patches.unsqueeze(0), [assembled])
        next_logits = result.logits[0, assembled.valid_len - 1]
        if sampling.mode == "greedy":
            nxt = int(next_logits.argmax().item())
        else:
            probs = torch.softmax(next_logits / sampling.temperature, dim=-1)
            nxt = int(torch.multinomial(probs, 1, generator=gen).item())
        produced.append(nxt)
        if nxt == cfg.eos_token_id:
            break
    assembled = assemble_sequence(cfg, prompt_ids, produced)
    result = model(patches.unsqueeze(0), [assembled])
    return GenerationResult(
        token_ids=produced,
        assembled=assembled,
        lm_stack=model.lm_stack(result, [assembled]),
        vision_stack=model.vision_stack(result))
