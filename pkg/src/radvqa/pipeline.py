"""End-to-end experiment pipeline driven by a single TOML config.

Each stage reads its inputs from the config (or from the outputs of earlier
stages under ``run.out_dir``), writes its products into ``<out_dir>/<stage>/``,
and drops an ``artifacts.json`` listing the sha256 of every file it produced.
Stages are deterministic for a fixed config, so rerunning a stage into a fresh
directory reproduces the same bytes.

Stage layout under ``out_dir``::

    resolved-config.json        redacted config snapshot + its hash
    ingest/     manifest, rejects, train/val/test splits, stats
    qagen/      generated QA manifest from the caption corpus
    mix/        annealed corpus and its splits
    stage1/     full-model finetune checkpoint + loss curve
    stage2/     low-rank adapter finetune checkpoint + loss curve
    evaluate/   metrics report, judge verdicts, organ table
    scaling/    loss-curve fit parameters
    saliency/   attention map export (json + png)
    ablate/     two-arm comparison table
"""

from __future__ import annotations

import csv
import hashlib
import json
import statistics
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .configio import RunConfig, config_hash, write_snapshot
from .corpus import (
    DatasetManifest,
    ingest,
    load_manifest,
    save_manifest,
    split,
    write_rejects,
)
from .evalkit import (
    EvalReport,
    GenerationSet,
    JudgeItem,
    MetricValue,
    bleu,
    judge_open,
    markdown_accuracy_table,
    normalize_answer,
    organ_report,
    robust_mcq_accuracy,
    rouge,
    write_report_json,
)
from .mixer import (
    MixSpec,
    anneal,
    filter_relevant,
    index_pathologies,
    load_taxonomy,
    stats_report,
    write_stats,
)
from .qaforge import (
    HttpClient,
    LocalEchoClient,
    RecordedReplayClient,
    Sampling,
    generate_dataset,
)
from .saliency import SaliencyQuery, compute_map, render_grid
from .scaling import fit, read_points_csv, write_fit_json
from .toyvlm import (
    Checkpoint,
    GenSampling,
    LoraConfig,
    Tokenizer,
    TrainHyper,
    format_prompt,
    generate,
    load_checkpoint,
    load_patch_features,
    save_checkpoint,
    train_stage1,
    train_stage2,
)

N_EVAL_RUNS = 5    # sampled generations per item for the robustness score

STAGES = ("ingest", "qagen", "mix", "train1", "train2",
          "evaluate", "scaling", "saliency")


class PipelineError(RuntimeError):
    """A stage could not run; `.stage` names the failing stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


@dataclass(frozen=True)
class StageResult:
    stage: str
    out_dir: Path
    files: dict = field(default_factory=dict)   # file name -> sha256


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _finish_stage(stage: str, stage_dir: Path, cfg_hash: str) -> StageResult:
    """Hash every file under the stage dir and write artifacts.json."""
    files = {}
    for p in sorted(stage_dir.rglob("*")):
        if p.is_file() and p.name != "artifacts.json":
            files[str(p.relative_to(stage_dir))] = _sha256_file(p)
    obj = {"stage": stage, "config_sha256": cfg_hash, "files": files}
    with open(stage_dir / "artifacts.json", "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
    return StageResult(stage=stage, out_dir=stage_dir, files=files)


def _stage_dir(cfg: RunConfig, stage: str) -> Path:
    d = Path(cfg.run.out_dir) / stage
    d.mkdir(parents=True, exist_ok=True)
    return d


def _absolutize(manifest: DatasetManifest, root: str | Path) -> DatasetManifest:
    """Rewrite relative image paths against `root` so downstream stages can
    load them regardless of their own working root."""
    root = Path(root).resolve()
    records = []
    for r in manifest.records:
        p = r.image.path
        if p.startswith(("http://", "https://")) or Path(p).is_absolute():
            records.append(r)
        else:
            records.append(replace(r, image=replace(r.image, path=str(root / p))))
    return replace(manifest, records=records)


def _run_note(cfg: RunConfig, stage: str) -> dict:
    return {"op": "run", "stage": stage, "config_sha256": config_hash(cfg)}


def _append_note(manifest: DatasetManifest, note: dict) -> DatasetManifest:
    return replace(manifest, provenance=manifest.provenance + [note])


def _save_splits(manifest: DatasetManifest, ratios, seed: int,
                 stage_dir: Path) -> None:
    train_m, val_m, test_m = split(manifest, ratios, seed)
    save_manifest(train_m, stage_dir / "train.jsonl")
    save_manifest(val_m, stage_dir / "val.jsonl")
    save_manifest(test_m, stage_dir / "test.jsonl")


def _load_required(path: Path, stage: str, what: str) -> DatasetManifest:
    if not path.exists():
        raise PipelineError(stage, f"{what} not found at {path}; "
                                   f"run the producing stage first")
    return load_manifest(path)


# ---------------------------------------------------------------------------
# corpus stages

def stage_ingest(cfg: RunConfig) -> StageResult:
    if not cfg.data.root:
        raise PipelineError("ingest", "data.root is not set in the config")
    stage_dir = _stage_dir(cfg, "ingest")
    try:
        result = ingest(cfg.data.root, cfg.data.adapter,
                        check_images=cfg.data.check_images)
    except Exception as e:
        raise PipelineError("ingest", str(e)) from e
    manifest = _absolutize(result.manifest, cfg.data.root)
    manifest = _append_note(manifest, _run_note(cfg, "ingest"))
    save_manifest(manifest, stage_dir / "manifest.jsonl")
    write_rejects(result.rejects, stage_dir / "rejects.jsonl")
    _save_splits(manifest, cfg.split.ratios, cfg.split.seed, stage_dir)

    index = None
    if cfg.data.taxonomy:
        index = index_pathologies(manifest, load_taxonomy(cfg.data.taxonomy))
    report = stats_report(manifest, index=index,
                          top_k=cfg.mix.top_k_pathologies)
    write_stats(report, stage_dir / "stats.json", stage_dir / "stats.csv")
    return _finish_stage("ingest", stage_dir, config_hash(cfg))


def _qagen_client(cfg: RunConfig):
    kind = cfg.qagen.client
    if kind == "local-echo":
        return LocalEchoClient()
    if kind == "replay":
        if not cfg.qagen.cassette:
            raise PipelineError("qagen", "qagen.client=replay needs qagen.cassette")
        return RecordedReplayClient(cfg.qagen.cassette)
    if kind == "http":
        if not cfg.qagen.endpoint:
            raise PipelineError("qagen", "qagen.client=http needs qagen.endpoint")
        return HttpClient(cfg.qagen.endpoint, api_key_env=cfg.qagen.api_key_env)
    raise PipelineError("qagen", f"unknown qagen.client {kind!r}")


def stage_qagen(cfg: RunConfig) -> StageResult:
    if not cfg.captions.root:
        raise PipelineError("qagen", "captions.root is not set in the config")
    stage_dir = _stage_dir(cfg, "qagen")
    try:
        result = ingest(cfg.captions.root, cfg.captions.adapter,
                        check_images=cfg.captions.check_images)
        captions = _absolutize(result.manifest, cfg.captions.root)
        sampling = Sampling(temperature=cfg.qagen.temperature,
                            max_tokens=cfg.qagen.max_tokens,
                            seed=cfg.qagen.seed)
        generated = generate_dataset(captions, _qagen_client(cfg),
                                     cfg.qagen.template_mode, sampling)
    except PipelineError:
        raise
    except Exception as e:
        raise PipelineError("qagen", str(e)) from e
    generated = _append_note(generated, _run_note(cfg, "qagen"))
    save_manifest(generated, stage_dir / "generated.jsonl")
    write_rejects(result.rejects, stage_dir / "caption-rejects.jsonl")
    return _finish_stage("qagen", stage_dir, config_hash(cfg))


def stage_mix(cfg: RunConfig) -> StageResult:
    stage_dir = _stage_dir(cfg, "mix")
    out = Path(cfg.run.out_dir)
    base = _load_required(out / "ingest" / "manifest.jsonl", "mix",
                          "ingested corpus")
    enrichment = _load_required(out / "qagen" / "generated.jsonl", "mix",
                                "generated QA corpus")
    if not cfg.data.taxonomy:
        raise PipelineError("mix", "data.taxonomy is not set in the config")
    try:
        taxonomy = load_taxonomy(cfg.data.taxonomy)
        index = index_pathologies(enrichment, taxonomy)
        relevant = filter_relevant(enrichment, index,
                                   top_k=cfg.mix.top_k_pathologies)
        spec = MixSpec(base=base.name, enrichment=relevant.name,
                       enrichment_fraction=cfg.mix.enrichment_fraction,
                       top_k_pathologies=cfg.mix.top_k_pathologies,
                       seed=cfg.mix.seed)
        mixed = anneal(base, relevant, spec)
    except PipelineError:
        raise
    except Exception as e:
        raise PipelineError("mix", str(e)) from e
    mixed = _append_note(mixed, _run_note(cfg, "mix"))
    save_manifest(mixed, stage_dir / "mixed.jsonl")
    _save_splits(mixed, cfg.split.ratios, cfg.split.seed, stage_dir)
    report = stats_report(mixed, index=index_pathologies(mixed, taxonomy),
                          top_k=cfg.mix.top_k_pathologies)
    write_stats(report, stage_dir / "stats.json", stage_dir / "stats.csv")
    return _finish_stage("mix", stage_dir, config_hash(cfg))


# ---------------------------------------------------------------------------
# training stages

def _load_ckpt(path: str | Path, stage: str, what: str) -> Checkpoint:
    p = Path(path)
    if not p.exists():
        raise PipelineError(stage, f"{what} not found at {p}")
    try:
        return load_checkpoint(p)
    except Exception as e:
        raise PipelineError(stage, f"could not load {what}: {e}") from e


def _write_loss_curve(history: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "eval_loss"])
        for row in history:
            w.writerow([row["epoch"],
                        "" if row["train_loss"] is None else repr(row["train_loss"]),
                        "" if row["eval_loss"] is None else repr(row["eval_loss"])])


def _hyper(section) -> TrainHyper:
    return TrainHyper(**asdict(section))


def _optional_manifest(path: Path) -> Optional[DatasetManifest]:
    return load_manifest(path) if path.exists() else None


def stage_train1(cfg: RunConfig, *, train_data: Optional[str] = None,
                 eval_data: Optional[str] = None) -> StageResult:
    stage_dir = _stage_dir(cfg, "stage1")
    out = Path(cfg.run.out_dir)
    if not cfg.train.base_checkpoint:
        raise PipelineError("train1", "train.base_checkpoint is not set")
    base = _load_ckpt(cfg.train.base_checkpoint, "train1", "base checkpoint")
    train_m = _load_required(Path(train_data) if train_data
                             else out / "ingest" / "train.jsonl",
                             "train1", "stage-1 training split")
    eval_m = (_load_required(Path(eval_data), "train1", "stage-1 eval split")
              if eval_data else _optional_manifest(out / "ingest" / "val.jsonl"))
    tokenizer = Tokenizer(base.config.vocab_size)
    try:
        ckpt, history = train_stage1(base, train_m, eval_m,
                                     _hyper(cfg.train.stage1), tokenizer,
                                     root=".")
    except Exception as e:
        raise PipelineError("train1", str(e)) from e
    save_checkpoint(ckpt, stage_dir / "checkpoint.ckpt")
    _write_loss_curve(history, stage_dir / "loss_curve.csv")
    return _finish_stage("train1", stage_dir, config_hash(cfg))


def stage_train2(cfg: RunConfig, *, from_checkpoint: Optional[str] = None,
                 train_data: Optional[str] = None,
                 eval_data: Optional[str] = None) -> StageResult:
    stage_dir = _stage_dir(cfg, "stage2")
    out = Path(cfg.run.out_dir)
    start_path = from_checkpoint or str(out / "stage1" / "checkpoint.ckpt")
    start = _load_ckpt(start_path, "train2", "starting checkpoint")
    train_m = _load_required(Path(train_data) if train_data
                             else out / "mix" / "train.jsonl",
                             "train2", "stage-2 training split")
    eval_m = (_load_required(Path(eval_data), "train2", "stage-2 eval split")
              if eval_data else _optional_manifest(out / "mix" / "val.jsonl"))
    tokenizer = Tokenizer(start.config.vocab_size)
    lora = LoraConfig(r=cfg.train.lora.r, alpha=cfg.train.lora.alpha)
    try:
        ckpt, history = train_stage2(start, train_m, eval_m, lora,
                                     _hyper(cfg.train.stage2), tokenizer,
                                     root=".")
    except Exception as e:
        raise PipelineError("train2", str(e)) from e
    save_checkpoint(ckpt, stage_dir / "checkpoint.ckpt")
    _write_loss_curve(history, stage_dir / "loss_curve.csv")
    return _finish_stage("train2", stage_dir, config_hash(cfg))


# ---------------------------------------------------------------------------
# evaluation

def _generate_text(model, tokenizer: Tokenizer, feats: np.ndarray,
                   prompt: str, sampling: GenSampling):
    result = generate(model, torch.from_numpy(np.asarray(feats, dtype=np.float32)),
                      tokenizer.encode(prompt), sampling)
    return tokenizer.decode(result.token_ids), result


def _closed_generation_sets(ckpt: Checkpoint, tokenizer: Tokenizer,
                            records, evaluate_cfg) -> list[GenerationSet]:
    sets = []
    for record in records:
        feats = load_patch_features(record.image, ".", ckpt.config)
        prompt = format_prompt(record)
        gens, seeds = [], []
        for k in range(N_EVAL_RUNS):
            seed = evaluate_cfg.seed + k
            sampling = GenSampling(mode="temperature",
                                   temperature=evaluate_cfg.temperature,
                                   seed=seed,
                                   max_new_tokens=evaluate_cfg.max_new_tokens)
            text, _ = _generate_text(ckpt.model, tokenizer, feats, prompt, sampling)
            gens.append(text)
            seeds.append(seed)
        sets.append(GenerationSet(item_id=record.id, gold=record.answer,
                                  generations=tuple(gens), seeds=tuple(seeds),
                                  options=record.options))
    return sets


def _per_run_accuracy(sets: Sequence[GenerationSet]) -> list[float]:
    runs = []
    for k in range(N_EVAL_RUNS):
        correct = sum(
            1 for s in sets
            if s.normalized[k] == normalize_answer(s.gold, s.options))
        runs.append(correct / len(sets))
    return runs


def _metric_over(values: Sequence[float]) -> MetricValue:
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return MetricValue(mean=mean, std=std)


def _judge_client(cfg: RunConfig):
    kind = cfg.evaluate.judge
    if kind == "local-echo":
        return LocalEchoClient()
    if kind == "replay":
        if not cfg.evaluate.judge_cassette:
            raise PipelineError("evaluate",
                                "evaluate.judge=replay needs evaluate.judge_cassette")
        return RecordedReplayClient(cfg.evaluate.judge_cassette)
    if kind == "http":
        if not cfg.evaluate.judge_endpoint:
            raise PipelineError("evaluate",
                                "evaluate.judge=http needs evaluate.judge_endpoint")
        return HttpClient(cfg.evaluate.judge_endpoint,
                          api_key_env=cfg.evaluate.judge_api_key_env)
    raise PipelineError("evaluate", f"unknown evaluate.judge {kind!r}")


def stage_evaluate(cfg: RunConfig, *, checkpoint: Optional[str] = None,
                   dataset: Optional[str] = None) -> StageResult:
    stage_dir = _stage_dir(cfg, "evaluate")
    out = Path(cfg.run.out_dir)
    ckpt_path = checkpoint or str(out / "stage2" / "checkpoint.ckpt")
    ckpt = _load_ckpt(ckpt_path, "evaluate", "checkpoint")
    data_path = Path(dataset) if dataset else out / "mix" / "test.jsonl"
    manifest = _load_required(data_path, "evaluate", "evaluation dataset")
    if not manifest.records:
        raise PipelineError("evaluate", f"evaluation dataset {data_path} is empty")
    tokenizer = Tokenizer(ckpt.config.vocab_size)
    ckpt.model.eval()

    closed = [r for r in manifest.records if r.kind in ("short", "mcq")]
    opens = [r for r in manifest.records if r.kind in ("open", "caption")]

    metrics: dict[str, MetricValue] = {}
    metadata: dict = {
        "checkpoint": ckpt.content_hash,
        "checkpoint_path": str(ckpt_path),
        "dataset_path": str(data_path),
        "config_sha256": config_hash(cfg),
        "n_items": len(manifest.records),
        "n_closed": len(closed),
        "n_open": len(opens),
        "sampling": {"temperature": cfg.evaluate.temperature,
                     "seed": cfg.evaluate.seed,
                     "runs": N_EVAL_RUNS,
                     "max_new_tokens": cfg.evaluate.max_new_tokens},
    }

    try:
        if closed:
            sets = _closed_generation_sets(ckpt, tokenizer, closed, cfg.evaluate)
            robust = robust_mcq_accuracy(sets)
            metrics["accuracy"] = _metric_over(_per_run_accuracy(sets))
            metrics["accuracy_robust"] = MetricValue(mean=robust.accuracy, std=0.0)
            metadata["n_penalized"] = robust.n_penalized

        organs = None
        if opens:
            bleu_vals, rn, rl, rs = [], [], [], []
            judge_items = []
            greedy = GenSampling(mode="greedy",
                                 max_new_tokens=cfg.evaluate.max_new_tokens)
            for record in opens:
                feats = load_patch_features(record.image, ".", ckpt.config)
                prompt = format_prompt(record)
                text, _ = _generate_text(ckpt.model, tokenizer, feats,
                                         prompt, greedy)
                bleu_vals.append(bleu(text, [record.answer]))
                rn.append(rouge(text, record.answer, "n", n=2).f1)
                rl.append(rouge(text, record.answer, "l").f1)
                rs.append(rouge(text, record.answer, "s").f1)
                judge_items.append(JudgeItem(item_id=record.id,
                                             question=prompt,
                                             gold=record.answer,
                                             generated=text))
            metrics["bleu"] = _metric_over(bleu_vals)
            metrics["rouge_n"] = _metric_over(rn)
            metrics["rouge_l"] = _metric_over(rl)
            metrics["rouge_s"] = _metric_over(rs)

            verdicts = judge_open(judge_items, _judge_client(cfg))
            with open(stage_dir / "verdicts.jsonl", "w") as f:
                for v in verdicts:
                    f.write(json.dumps(v.to_json_obj(), sort_keys=True) + "\n")
            n_correct = sum(v.verdict == "correct" for v in verdicts)
            metrics["judge_accuracy"] = MetricValue(
                mean=n_correct / len(verdicts), std=0.0)
            organs = organ_report(verdicts, manifest)
            with open(stage_dir / "organ-report.md", "w") as f:
                f.write(organs.to_markdown() + "\n")
    except PipelineError:
        raise
    except Exception as e:
        raise PipelineError("evaluate", str(e)) from e

    report = EvalReport(dataset=manifest.name, metrics=metrics,
                        organs=organs, metadata=metadata)
    write_report_json(report, stage_dir / "eval-report.json")
    return _finish_stage("evaluate", stage_dir, config_hash(cfg))


# ---------------------------------------------------------------------------
# analysis stages

def stage_scaling(cfg: RunConfig, *, points: Optional[str] = None) -> StageResult:
    stage_dir = _stage_dir(cfg, "scaling")
    path = points or cfg.scaling.points
    if not path:
        raise PipelineError("scaling", "scaling.points is not set in the config")
    if not Path(path).exists():
        raise PipelineError("scaling", f"points csv not found at {path}")
    try:
        result = fit(read_points_csv(path))
    except Exception as e:
        raise PipelineError("scaling", str(e)) from e
    write_fit_json(result, stage_dir / "fit.json")
    return _finish_stage("scaling", stage_dir, config_hash(cfg))


def stage_saliency(cfg: RunConfig, *, checkpoint: Optional[str] = None,
                   dataset: Optional[str] = None) -> StageResult:
    stage_dir = _stage_dir(cfg, "saliency")
    out = Path(cfg.run.out_dir)
    ckpt_path = checkpoint or str(out / "stage2" / "checkpoint.ckpt")
    ckpt = _load_ckpt(ckpt_path, "saliency", "checkpoint")
    data_path = Path(dataset) if dataset else out / "mix" / "test.jsonl"
    manifest = _load_required(data_path, "saliency", "dataset")
    if not manifest.records:
        raise PipelineError("saliency", f"dataset {data_path} is empty")

    if cfg.saliency.record_id:
        matches = [r for r in manifest.records if r.id == cfg.saliency.record_id]
        if not matches:
            raise PipelineError(
                "saliency", f"record {cfg.saliency.record_id!r} not in {data_path}")
        record = matches[0]
    else:
        record = manifest.records[0]

    tokenizer = Tokenizer(ckpt.config.vocab_size)
    ckpt.model.eval()
    try:
        feats = load_patch_features(record.image, ".", ckpt.config)
        sampling = GenSampling(mode="greedy",
                               max_new_tokens=cfg.evaluate.max_new_tokens)
        text, result = _generate_text(ckpt.model, tokenizer, feats,
                                      format_prompt(record), sampling)
        stack = result.lm_stack
        direction = cfg.saliency.direction
        if direction == "token_to_image":
            n_resp = stack.seq_len - stack.gen_start
            if not 0 <= cfg.saliency.index < n_resp:
                raise PipelineError(
                    "saliency",
                    f"saliency.index {cfg.saliency.index} outside the response "
                    f"(0..{n_resp - 1})")
            query = SaliencyQuery(direction=direction,
                                  method=cfg.saliency.method,
                                  token_index=stack.gen_start + cfg.saliency.index)
        else:
            query = SaliencyQuery(direction=direction,
                                  method=cfg.saliency.method,
                                  patch_index=cfg.saliency.index)
        smap = compute_map(stack, query, extra_provenance={
            "record_id": record.id,
            "checkpoint": ckpt.content_hash,
            "config_sha256": config_hash(cfg),
            "response_index": cfg.saliency.index,
        })
    except PipelineError:
        raise
    except Exception as e:
        raise PipelineError("saliency", str(e)) from e

    rows, cols = ckpt.config.patch_grid
    obj = {"record_id": record.id, "answer": text, "map": smap.to_json_obj()}
    if direction == "token_to_image":
        size = tuple(cfg.saliency.image_size)
        if len(size) != 2:
            raise PipelineError("saliency", "saliency.image_size needs 2 values")
        obj["grid"] = render_grid(smap, (rows, cols), image_size=size)
        png = np.asarray(smap.scores, dtype=np.float64).reshape(rows, cols)
    else:
        png = np.asarray(smap.scores, dtype=np.float64).reshape(1, -1)
    with open(stage_dir / "map.json", "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")

    import matplotlib
    matplotlib.use("Agg")
    from matplotlib import image as mpimg
    lo, hi = float(png.min()), float(png.max())
    norm = (png - lo) / (hi - lo) if hi - lo > 1e-12 else np.full_like(png, 0.5)
    mpimg.imsave(stage_dir / "map.png", norm, cmap="magma", vmin=0.0, vmax=1.0)
    return _finish_stage("saliency", stage_dir, config_hash(cfg))


# ---------------------------------------------------------------------------
# orchestration

def run_pipeline(cfg: RunConfig,
                 progress: Optional[Callable[[str], None]] = None,
                 ) -> list[StageResult]:
    """Run every stage in order, stopping at the first failure."""
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_snapshot(cfg, out)
    steps: list[tuple[str, Callable[[], StageResult]]] = [
        ("ingest", lambda: stage_ingest(cfg)),
        ("qagen", lambda: stage_qagen(cfg)),
        ("mix", lambda: stage_mix(cfg)),
        ("train1", lambda: stage_train1(cfg)),
        ("train2", lambda: stage_train2(cfg)),
        ("evaluate", lambda: stage_evaluate(cfg)),
    ]
    if cfg.scaling.points:
        steps.append(("scaling", lambda: stage_scaling(cfg)))
    steps.append(("saliency", lambda: stage_saliency(cfg)))

    results = []
    for name, step in steps:
        if progress:
            progress(name)
        results.append(step())
    return results


def run_ablate(cfg: RunConfig) -> StageResult:
    """Train both arms (with and without the full-model stage) from the same
    base checkpoint and tabulate closed-ended accuracy per dataset."""
    stage_dir = _stage_dir(cfg, "ablate")
    out = Path(cfg.run.out_dir)
    arms = dict(cfg.ablate.arms)
    if len(arms) != 2:
        raise PipelineError("ablate",
                            f"exactly two arms required, got {len(arms)}")
    for name, flag in arms.items():
        if not isinstance(flag, bool):
            raise PipelineError("ablate",
                                f"arm {name!r} must map to a boolean, got {flag!r}")
    if len(cfg.ablate.datasets) < 2:
        raise PipelineError("ablate", "at least two evaluation datasets required")
    if not cfg.train.base_checkpoint:
        raise PipelineError("ablate", "train.base_checkpoint is not set")

    base = _load_ckpt(cfg.train.base_checkpoint, "ablate", "base checkpoint")
    s1_path = Path(cfg.ablate.stage1_train) if cfg.ablate.stage1_train \
        else out / "ingest" / "train.jsonl"
    s2_path = Path(cfg.ablate.stage2_train) if cfg.ablate.stage2_train \
        else out / "mix" / "train.jsonl"
    s1_train = _load_required(s1_path, "ablate", "stage-1 training split")
    s2_train = _load_required(s2_path, "ablate", "stage-2 training split")
    datasets = [_load_required(Path(p), "ablate", f"dataset {p}")
                for p in cfg.ablate.datasets]
    for p, m in zip(cfg.ablate.datasets, datasets):
        if not any(r.kind in ("short", "mcq") for r in m.records):
            raise PipelineError("ablate",
                                f"dataset {p} has no closed-ended records")

    tokenizer = Tokenizer(base.config.vocab_size)
    lora = LoraConfig(r=cfg.train.lora.r, alpha=cfg.train.lora.alpha)

    def train_arm(use_stage1: bool) -> Checkpoint:
        start = base
        if use_stage1:
            start, _ = train_stage1(base, s1_train, None,
                                    _hyper(cfg.train.stage1), tokenizer,
                                    root=".")
        ckpt, _ = train_stage2(start, s2_train, None, lora,
                               _hyper(cfg.train.stage2), tokenizer, root=".")
        return ckpt

    try:
        arm_ckpts = {name: train_arm(flag) for name, flag in arms.items()}
        cells: dict[str, dict[str, MetricValue]] = {}
        for manifest in datasets:
            row: dict[str, MetricValue] = {}
            for name, ckpt in arm_ckpts.items():
                ckpt.model.eval()
                closed = [r for r in manifest.records
                          if r.kind in ("short", "mcq")]
                sets = _closed_generation_sets(ckpt, tokenizer, closed,
                                               cfg.evaluate)
                row[name] = _metric_over(_per_run_accuracy(sets))
            cells[manifest.name] = row
    except PipelineError:
        raise
    except Exception as e:
        raise PipelineError("ablate", str(e)) from e

    columns = list(arms)
    rows = [(name, cells[name]) for name in cells]
    table = markdown_accuracy_table(rows, columns)
    with open(stage_dir / "table.md", "w") as f:
        f.write(table)
    obj = {
        "config_sha256": config_hash(cfg),
        "arms": {name: {"use_stage1": flag,
                        "checkpoint": arm_ckpts[name].content_hash}
                 for name, flag in arms.items()},
        "cells": {ds: {arm: {"mean": mv.mean, "std": mv.std, "pct": mv.as_pct()}
                       for arm, mv in row.items()}
                  for ds, row in cells.items()},
    }
    with open(stage_dir / "table.json", "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
    return _finish_stage("ablate", stage_dir, config_hash(cfg))
