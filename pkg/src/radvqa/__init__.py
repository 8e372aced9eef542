"""radvqa: a desk-scale radiological VQA toolkit.

Corpus tooling, synthetic QA generation, dataset annealing, two-stage
fine-tuning of a miniature vision-language model with LoRA adapters,
scaling-law fitting, robustness-penalized evaluation, and a cross-modal
attention-saliency inspector served over HTTP.
"""

__version__ = "0.1.0"
