"""Shared fixture world for pipeline and CLI tests.

Builds a small on-disk corpus (feature arrays, captions, taxonomy, loss
points, base checkpoint, run config) once per session, and exposes a
pipeline run over it. Everything is seeded, so the same world is rebuilt
bit for bit on every test run.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from radvqa.configio import load_config
from radvqa.corpus import ImageRef, QARecord, record_to_line
from radvqa.scaling import LossPoint, ScalingFit, predict, write_points_csv
from radvqa.toyvlm import Checkpoint, VlmConfig, build_model, save_checkpoint

TINY_VLM = VlmConfig(patch_grid=(2, 2), d_patch_in=4, d_vision=8, d_model=16,
                     n_vision_layers=1, n_vision_heads=2, n_lm_layers=2,
                     n_lm_heads=2, vocab_size=512, max_seq_len=96)

ACCEPTANCE_LINES: list[str] = []


def acceptance_line(name: str, ok: bool, detail: str) -> None:
    """One checklist line per acceptance criterion, echoed inline and again
    in the terminal summary so a plain pytest run ends with the full list."""
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance checklist")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

ORGAN_CYCLE = ("chest", "gastrointestinal", "musculoskeletal", "brain_neuro")
MODALITIES = ("xray", "ct", "mri")

E2E_TOML = """\
[run]
name = "tinyworld"
out_dir = "out"
seed = 0

[data]
root = "corpus"
adapter = "qa_pairs"
taxonomy = "taxonomy.json"

[captions]
root = "captions"

[split]
ratios = [0.8, 0.1, 0.1]
seed = 0

[qagen]
template_mode = "case_based"
client = "local-echo"

[mix]
enrichment_fraction = 0.25
top_k_pathologies = 1
seed = 0

[train]
base_checkpoint = "base.ckpt"

[train.stage1]
lr = 1e-2
grad_accum = 1
batch_size = 8
epochs = 1

[train.stage2]
lr = 3e-3
grad_accum = 1
batch_size = 8
epochs = 1

[train.lora]
r = 2
alpha = 4.0

[evaluate]
temperature = 0.8
seed = 0
max_new_tokens = 8

[scaling]
points = "points.csv"

[saliency]
direction = "token_to_image"
index = 0
method = "rollout"
image_size = [64, 64]

[ablate]
datasets = ["out/ingest/train.jsonl", "out/mix/train.jsonl"]

[ablate.arms]
two_stage = true
adapter_only = false
"""


def _write_features(path: Path, rng: np.random.Generator) -> None:
    np.save(path, rng.normal(size=(4, 4)).astype(np.float32))


def _qa_record(i: int) -> QARecord:
    organ = ORGAN_CYCLE[i % 4]
    modality = MODALITIES[i % 3]
    image = ImageRef(path=f"images/img{i:03d}.npy", width=8, height=8,
                     modality=modality, organ=organ)
    if i % 2 == 0:
        return QARecord(id=f"rec{i:03d}", image=image, kind="open",
                        question="What modality is shown?", answer=modality)
    return QARecord(id=f"rec{i:03d}", image=image, kind="short",
                    question="Is the study abnormal?",
                    answer="yes" if i % 4 == 1 else "no")


def _caption_record(i: int) -> QARecord:
    organ = ORGAN_CYCLE[i % 4]
    image = ImageRef(path=f"images/cap{i:02d}.npy", width=8, height=8,
                     modality="ct", organ=organ)
    text = f"ct scan {i} of the {organ} shows clear signs of pneumonia"
    return QARecord(id=f"cap{i:02d}", image=image, kind="caption",
                    question="", answer=text, quality_tier="enrichment")


def build_world(root: Path) -> Path:
    """Lay out corpus, captions, taxonomy, points, checkpoint, and config.

    Returns the path of the run config."""
    rng = np.random.default_rng(20260817)

    corpus = root / "corpus"
    (corpus / "images").mkdir(parents=True)
    with (corpus / "index.jsonl").open("w") as fh:
        for i in range(40):
            rec = _qa_record(i)
            _write_features(corpus / rec.image.path, rng)
            fh.write(record_to_line(rec) + "\n")

    captions = root / "captions"
    (captions / "images").mkdir(parents=True)
    with (captions / "index.jsonl").open("w") as fh:
        for i in range(4):
            rec = _caption_record(i)
            _write_features(captions / rec.image.path, rng)
            fh.write(record_to_line(rec) + "\n")

    (root / "taxonomy.json").write_text(json.dumps(
        {"pneumonia": ["pneumonias"], "fracture": [], "hemorrhage": []}))

    law = ScalingFit(A=2.0, alpha=0.3, beta=0.2, E=0.5)
    points = [LossPoint(X=x, D_f=d, L=predict(law, x, d))
              for x in (1e5, 1e6, 1e7) for d in (1e4, 1e5, 1e6)]
    write_points_csv(points, root / "points.csv")

    ckpt = Checkpoint(build_model(TINY_VLM, seed=3), TINY_VLM, stage="base")
    save_checkpoint(ckpt, root / "base.ckpt")

    cfg_path = root / "e2e.toml"
    cfg_path.write_text(E2E_TOML)
    return cfg_path


@pytest.fixture(scope="session")
def world(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("tinyworld")
    return build_world(root)


@pytest.fixture(scope="session")
def pipeline_run(world):
    """One full pipeline run over the tiny world; returns (config, out dir)."""
    from radvqa.pipeline import run_pipeline

    cfg = load_config(world)
    run_pipeline(cfg)
    return cfg, Path(cfg.run.out_dir)
