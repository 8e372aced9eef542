"""Miniature vision-language model: topology, adapters, training, capture."""

from .attention import AttentionError, AttentionStack
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    STAGES,
    content_hash,
    load_checkpoint,
    save_checkpoint,
    tensor_hashes,
)
from .config import ConfigError, VlmConfig
from .data import (
    Batch,
    DataError,
    Example,
    build_examples,
    collate,
    encode_example,
    format_answer,
    format_prompt,
    load_patch_features,
    pixels_to_patches,
)
from .lora import (
    ALL_TARGETS,
    LoraConfig,
    LoraError,
    LoraLinear,
    apply_lora,
    count_lora_parameters,
    has_adapters,
    lora_parameters,
    merge_lora,
)
from .model import (
    Assembled,
    ForwardResult,
    GenerationResult,
    GenSampling,
    ModelError,
    VLM,
    assemble_sequence,
    build_allowed,
    build_model,
    generate,
)
from .tokenizer import ANS_ID, BOS_ID, EOS_ID, PAD_ID, SEP_ID, Tokenizer, WORD_LIST
from .train import TrainError, TrainHyper, batch_loss, eval_loss, train_stage1, train_stage2

__all__ = [
    "VlmConfig", "ConfigError",
    "Tokenizer", "WORD_LIST", "PAD_ID", "BOS_ID", "EOS_ID", "SEP_ID", "ANS_ID",
    "AttentionStack", "AttentionError",
    "VLM", "ModelError", "Assembled", "ForwardResult", "assemble_sequence",
    "build_allowed", "build_model", "generate", "GenSampling", "GenerationResult",
    "LoraConfig", "LoraError", "LoraLinear", "ALL_TARGETS", "apply_lora",
    "merge_lora", "lora_parameters", "count_lora_parameters", "has_adapters",
    "Checkpoint", "CheckpointError", "STAGES", "save_checkpoint",
    "load_checkpoint", "tensor_hashes", "content_hash",
    "DataError", "Example", "Batch", "pixels_to_patches", "load_patch_features",
    "format_prompt", "format_answer", "encode_example", "build_examples", "collate",
    "TrainError", "TrainHyper", "batch_loss", "eval_loss",
    "train_stage1", "train_stage2",
]
