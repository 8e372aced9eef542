"""Deterministic train/val/test splitting with organ stratification."""

from __future__ import annotations

import math
import random

from .records import DatasetManifest, QARecord

SPLIT_NAMES = ("train", "val", "test")


class SplitError(ValueError):
    pass


def _largest_remainder(total: int, fractions: tuple[float, float, float]) -> list[int]:
    """Integer allocation of `total` across fractions, exact by construction."""
    raw = [f * total for f in fractions]
    base = [math.floor(x) for x in raw]
    leftover = total - sum(base)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def split(manifest: DatasetManifest, ratios: tuple[float, float, float],
          seed: int) -> tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    """Partition a manifest into train/val/test.

    Exact partition (no record lost or duplicated), deterministic for a fixed
    seed, and stratified by organ whenever every organ class present has at
    least 3 records.
    """
    if len(ratios) != 3:
        raise SplitError("ratios must be a (train, val, test) triple")
    if any(r <= 0 for r in ratios):
        raise SplitError(f"ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must sum to 1, got {sum(ratios)}")
    if not manifest.records:
        raise SplitError("cannot split an empty manifest")

    n = len(manifest.records)
    targets = _largest_remainder(n, tuple(ratios))
    rng = random.Random(seed)

    hist = manifest.organ_histogram()
    stratify = all(count >= 3 for count in hist.values())

    buckets: list[list[QARecord]] = [[], [], []]
    if stratify:
        groups: dict[str, list[QARecord]] = {}
        for rec in manifest.records:
            groups.setdefault(rec.image.organ, []).append(rec)
        for organ in sorted(groups):
            members = groups[organ][:]
            rng.shuffle(members)
            alloc = _largest_remainder(len(members), tuple(ratios))
            offset = 0
            for i, size in enumerate(alloc):
                buckets[i].extend(members[offset:offset + size])
                offset += size
        # per-group rounding can drift split totals off the global targets;
        # move tail records from over-full to under-full splits
        for i in range(3):
            while len(buckets[i]) > targets[i]:
                j = next(k for k in range(3) if len(buckets[k]) < targets[k])
                buckets[j].append(buckets[i].pop())
    else:
        shuffled = manifest.records[:]
        rng.shuffle(shuffled)
        offset = 0
        for i, size in enumerate(targets):
            buckets[i] = shuffled[offset:offset + size]
            offset += size

    out = []
    for split_name, bucket in zip(SPLIT_NAMES, buckets):
        note = {
            "op": "split", "split": split_name, "seed": seed,
            "ratios": list(ratios), "size": len(bucket), "stratified": stratify,
        }
        out.append(DatasetManifest(
            name=f"{manifest.name}-{split_name}",
            records=bucket,
            provenance=manifest.provenance + [note],
        ))
    return out[0], out[1], out[2]


__all__ = ["SPLIT_NAMES", "SplitError", "split"]
