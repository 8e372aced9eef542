#!/usr/bin/env python3
"""Build every fixture shipped under fixtures/.

All content is seeded, so rebuilding on the same platform reproduces the
same files. The base checkpoint is the slow part (a short pretrain on a
disposable synthetic corpus); a cached copy is reused when present.

Layout produced:

    fixtures/
      corpus200/    200 mixed-kind QA records over synthetic feature arrays
      captions10/   10 enrichment-tier caption records
      taxonomy.json pathology term list used by the mixing stage
      points.csv    loss points sampled exactly from a known power law
      base.ckpt     pretrained-then-projection-reset starting checkpoint
      cassettes/    recorded text-generation responses for offline replay
      configs/      runnable TOML configs wired to the fixture paths
"""

from __future__ import annotations

import json
import random
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import torch

REPO = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

from radvqa.corpus import DatasetManifest, ImageRef, QARecord, ingest, record_to_line
from radvqa.qaforge import LocalEchoClient, RecordedReplayClient, Sampling, generate_dataset
from radvqa.scaling import LossPoint, ScalingFit, predict, write_points_csv
from radvqa.toyvlm import (
    Checkpoint,
    LoraConfig,
    Tokenizer,
    TrainHyper,
    VlmConfig,
    batch_loss,
    build_examples,
    build_model,
    collate,
    load_checkpoint,
    save_checkpoint,
)
from radvqa.toyvlm.train import eval_loss

FIXTURES = REPO / "fixtures"
CACHED_BASE = Path("/tmp/trainprobe/base.ckpt")

ORGANS = ["chest", "gastrointestinal", "musculoskeletal", "brain_neuro"]
ORGAN_WORD = dict(zip(ORGANS, ["chest", "gastrointestinal", "musculoskeletal", "brain"]))
MODS = ["xray", "ct", "mri", "ultrasound"]
FINDINGS = {
    "chest": ["pneumonia", "effusion", "nodule"],
    "gastrointestinal": ["obstruction", "ulcer", "mass"],
    "musculoskeletal": ["fracture", "arthritis", "dislocation"],
    "brain_neuro": ["hemorrhage", "lesion", "atrophy"],
}
ALL_FINDINGS = [f for fs in FINDINGS.values() for f in fs]

# the five findings the caption corpus cycles through; the mixing stage's
# top-5 term filter then keeps every generated record
CAPTION_FINDINGS = ["pneumonia", "effusion", "fracture", "hemorrhage", "mass"]
ORGAN_OF_FINDING = {f: o for o, fs in FINDINGS.items() for f in fs}


def make_image(rng: np.random.Generator, organ_i: int, mod_i: int,
               finding_i: int, abnormal: bool) -> np.ndarray:
    """Synthesize a 64x16 feature array with recoverable attribute bands.

    Rows 0:16 carry the organ channel, 16:32 the modality channel, 32:48 a
    4-bit signed code of the finding index, 48:64 the abnormality sign, all
    over small gaussian noise."""
    a = rng.normal(0, 0.05, size=(64, 16))
    a[0:16, organ_i] += 1.0
    a[16:32, 4 + mod_i] += 1.0
    for b in range(4):
        a[32:48, 8 + b] += 1.0 if (finding_i >> b) & 1 else -1.0
    a[48:64, 12] += 1.0 if abnormal else -1.0
    return a.astype(np.float32)


def make_record(i: int, rng: np.random.Generator, root: Path, prefix: str,
                organ_i: int | None = None) -> QARecord:
    organ_i = int(rng.integers(4)) if organ_i is None else organ_i
    organ = ORGANS[organ_i]
    mod_i = int(rng.integers(4))
    lf = int(rng.integers(3))
    finding = FINDINGS[organ][lf]
    finding_i = ALL_FINDINGS.index(finding)
    abnormal = bool(rng.integers(2))
    kind_i = int(rng.integers(4))
    img = make_image(rng, organ_i, mod_i, finding_i, abnormal)
    path = f"images/{prefix}{i:05d}.npy"
    np.save(root / path, img)
    image = ImageRef(path=path, width=16, height=64,
                     modality=MODS[mod_i], organ=organ)
    rid = f"{prefix}{i:05d}"
    if kind_i == 0:
        return QARecord(id=rid, image=image, kind="open",
                        question="which imaging modality is shown?",
                        answer=MODS[mod_i])
    if kind_i == 1:
        return QARecord(id=rid, image=image, kind="open",
                        question="which organ system is imaged?",
                        answer=ORGAN_WORD[organ])
    if kind_i == 2:
        return QARecord(id=rid, image=image, kind="short",
                        question="is an abnormality present?",
                        answer="yes" if abnormal else "no")
    opts = sorted(FINDINGS[organ] + ["normal"])
    return QARecord(id=rid, image=image, kind="mcq",
                    question="which finding is most apparent?",
                    answer=finding, options=tuple(opts))


def build_corpus200() -> list[QARecord]:
    root = FIXTURES / "corpus200"
    (root / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(777)
    records = [make_record(i, rng, root, "r", organ_i=i % 4) for i in range(200)]
    with (root / "index.jsonl").open("w") as fh:
        for rec in records:
            fh.write(record_to_line(rec) + "\n")

    hist: dict[str, dict[str, int]] = {"organ": {}, "modality": {}, "kind": {}}
    for rec in records:
        hist["organ"][rec.image.organ] = hist["organ"].get(rec.image.organ, 0) + 1
        hist["modality"][rec.image.modality] = hist["modality"].get(rec.image.modality, 0) + 1
        hist["kind"][rec.kind] = hist["kind"].get(rec.kind, 0) + 1
    (root / "HISTOGRAM.json").write_text(
        json.dumps({"size": len(records), **hist}, indent=2, sort_keys=True) + "\n")
    print(f"corpus200: {len(records)} records, organs {hist['organ']}")
    return records


def build_captions10() -> None:
    root = FIXTURES / "captions10"
    (root / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(778)
    with (root / "index.jsonl").open("w") as fh:
        for i in range(10):
            finding = CAPTION_FINDINGS[i % len(CAPTION_FINDINGS)]
            organ = ORGAN_OF_FINDING[finding]
            organ_i = ORGANS.index(organ)
            mod_i = i % 4
            img = make_image(rng, organ_i, mod_i, ALL_FINDINGS.index(finding),
                             abnormal=True)
            path = f"images/c{i:02d}.npy"
            np.save(root / path, img)
            image = ImageRef(path=path, width=16, height=64,
                             modality=MODS[mod_i], organ=organ)
            caption = (f"{MODS[mod_i]} image of the {ORGAN_WORD[organ]} "
                       f"shows {finding}")
            rec = QARecord(id=f"c{i:02d}", image=image, kind="caption",
                           question="", answer=caption,
                           quality_tier="enrichment")
            fh.write(record_to_line(rec) + "\n")
    print("captions10: 10 enrichment captions")


def build_taxonomy() -> None:
    taxonomy = {f: [] for f in sorted(ALL_FINDINGS)}
    (FIXTURES / "taxonomy.json").write_text(
        json.dumps(taxonomy, indent=2, sort_keys=True) + "\n")


def build_points() -> None:
    law = ScalingFit(A=2.0, alpha=0.3, beta=0.2, E=0.5)
    points = [LossPoint(X=x, D_f=d, L=predict(law, x, d))
              for x in (1e5, 3e5, 1e6, 3e6, 1e7)
              for d in (1e4, 1e5, 1e6)]
    write_points_csv(points, FIXTURES / "points.csv")
    print(f"points.csv: {len(points)} exact loss points")


def pretrain_base(out_path: Path) -> Checkpoint:
    """Short full-model pretrain on a disposable synthetic corpus, then the
    projection layer is re-randomized so the vision bridge starts cold."""
    cfg = VlmConfig()
    tok = Tokenizer()
    with tempfile.TemporaryDirectory() as tmp:
        proot = Path(tmp)
        (proot / "images").mkdir()
        rng = np.random.default_rng(31337)
        records = [make_record(i, rng, proot, "p") for i in range(2000)]
        train_m = DatasetManifest(name="pre", records=records[:1800], provenance=[])
        eval_m = DatasetManifest(name="pre-e", records=records[1800:], provenance=[])
        examples = build_examples(train_m, tok, cfg, proot)

        model = build_model(cfg, seed=0)
        opt = torch.optim.AdamW(model.parameters(), lr=3e-3)
        shuffler = random.Random(0)
        torch.manual_seed(0)
        order = list(range(len(examples)))
        model.train()
        t0 = time.time()
        for epoch in range(1, 11):
            shuffler.shuffle(order)
            for s in range(0, len(order), 8):
                batch = collate([examples[i] for i in order[s:s + 8]], cfg)
                loss = batch_loss(model, batch, batch.train_mask)
                opt.zero_grad()
                loss.backward()
                opt.step()
            ev = eval_loss(model, eval_m, tok, proot)
            model.train()
            print(f"  pretrain epoch {epoch}: eval {ev:.3f} "
                  f"({time.time() - t0:.0f}s)")
            if ev < 0.80:
                break
        model.eval()
    torch.manual_seed(123)
    model.projection.reset_parameters()
    ckpt = Checkpoint(model=model, config=cfg, stage="base")
    save_checkpoint(ckpt, out_path)
    return ckpt


def build_base_checkpoint() -> None:
    out = FIXTURES / "base.ckpt"
    if out.exists():
        print(f"base.ckpt: already present ({load_checkpoint(out).content_hash[:12]})")
        return
    if CACHED_BASE.exists():
        shutil.copyfile(CACHED_BASE, out)
        print(f"base.ckpt: copied cached build ({load_checkpoint(out).content_hash[:12]})")
        return
    ckpt = pretrain_base(out)
    print(f"base.ckpt: pretrained from scratch ({ckpt.content_hash[:12]})")


def build_cassette() -> None:
    (FIXTURES / "cassettes").mkdir(exist_ok=True)
    cassette = FIXTURES / "cassettes" / "qagen.jsonl"
    if cassette.exists():
        cassette.unlink()
    captions = ingest(FIXTURES / "captions10", "caption_pairs").manifest
    client = RecordedReplayClient(cassette, record_with=LocalEchoClient())
    generated = generate_dataset(captions, client, "case_based", Sampling())
    print(f"cassettes/qagen.jsonl: {len(generated)} records recorded")


E2E_COMMON = """\
[run]
name = "e2e"
out_dir = "${ENV:RADVQA_E2E_OUT}"
seed = 0

[data]
root = "../corpus200"
adapter = "qa_pairs"
taxonomy = "../taxonomy.json"

[captions]
root = "../captions10"

[split]
ratios = [0.8, 0.1, 0.1]
seed = 0

[qagen]
template_mode = "case_based"
client = "replay"
cassette = "../cassettes/qagen.jsonl"

[mix]
enrichment_fraction = 0.25
top_k_pathologies = 5
seed = 0

[train]
base_checkpoint = "../base.ckpt"

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
r = 4
alpha = 8.0

[evaluate]
temperature = 0.8
seed = 0
max_new_tokens = 12

[scaling]
points = "../points.csv"

[saliency]
direction = "token_to_image"
index = 0
method = "rollout"
image_size = [256, 256]
"""

ABLATE_EXTRA = """\

[ablate]
datasets = [
    "${ENV:RADVQA_E2E_OUT}/mix/test.jsonl",
    "${ENV:RADVQA_E2E_OUT}/ingest/test.jsonl",
]

[ablate.arms]
two_stage = true
adapter_only = false
"""


def build_configs() -> None:
    configs = FIXTURES / "configs"
    configs.mkdir(exist_ok=True)
    (configs / "e2e.toml").write_text(E2E_COMMON)
    (configs / "ablate.toml").write_text(E2E_COMMON + ABLATE_EXTRA)
    print("configs: e2e.toml, ablate.toml")


def main() -> None:
    FIXTURES.mkdir(exist_ok=True)
    build_corpus200()
    build_captions10()
    build_taxonomy()
    build_points()
    build_base_checkpoint()
    build_cassette()
    build_configs()
    print("fixtures complete")


if __name__ == "__main__":
    main()
