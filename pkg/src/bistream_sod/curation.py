"""Semantically balanced training-set curation over category-labelled manifests.

Pipeline: drop dirty records, histogram scene categories, measure how much of
the pool the top-k categories cover, then sample a capped quota per category
(``quota_top`` for the k most populous, ``quota_rest`` for all others).
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MANIFEST_HEADER = ("image_id", "source", "category", "dirty")


class Source(str, Enum):
    MSRA10K = "MSRA10K"
    DUTS_TR = "DUTS_TR"
    OTHER = "OTHER"


@dataclass(frozen=True)
class ManifestRecord:
    image_id: str
    source: Source
    category: str
    dirty: bool = False


@dataclass(frozen=True)
class CategoryDistribution:
    counts: dict[str, int]
    order: tuple[str, ...]  # descending count, ties by name

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def sorted_counts(self) -> list[int]:
        return [self.counts[c] for c in self.order]


@dataclass(frozen=True)
class SamplingPlan:
    k_top: int = 50
    quota_top: int = 40
    quota_rest: int = 20
    seed: int = 0

    def __post_init__(self):
        for name in ("k_top", "quota_top", "quota_rest"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")


class ManifestError(ValueError):
    pass


def _parse_dirty(raw: str, lineno: int) -> bool:
    if raw == "0":
        return False
    if raw == "1":
        return True
    raise ManifestError(f"line {lineno}: dirty must be 0 or 1, got {raw!r}")


def parse_manifest(lines: Iterable[str]) -> list[ManifestRecord]:
    reader = csv.reader(lines)
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    header_seen = False
    for row in reader:
        lineno = reader.line_num
        if not row:
            continue
        if not header_seen:
            if tuple(h.strip() for h in row) != MANIFEST_HEADER:
                raise ManifestError(f"line {lineno}: expected header {','.join(MANIFEST_HEADER)}, got {','.join(row)}")
            header_seen = True
            continue
        if len(row) != 4:
            raise ManifestError(f"line {lineno}: expected 4 fields, got {len(row)}")
        image_id, source, category, dirty = row
        if not image_id:
            raise ManifestError(f"line {lineno}: empty image_id")
        if not category:
            raise ManifestError(f"line {lineno}: empty category for {image_id}")
        try:
            src = Source(source)
        except ValueError:
            raise ManifestError(f"line {lineno}: unknown source {source!r}") from None
        if image_id in seen:
            raise ManifestError(f"line {lineno}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        records.append(ManifestRecord(image_id, src, category, _parse_dirty(dirty, lineno)))
    return records


def load_manifest(path) -> list[ManifestRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_manifest(fh)


def format_manifest(records: Sequence[ManifestRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for r in records:
        writer.writerow([r.image_id, r.source.value, r.category, int(r.dirty)])
    return buf.getvalue()


def write_manifest(records: Sequence[ManifestRecord], path) -> None:
    Path(path).write_text(format_manifest(records), encoding="utf-8")


def clean(records: Iterable[ManifestRecord]) -> list[ManifestRecord]:
    return [r for r in records if not r.dirty]


def histogram(records: Iterable[ManifestRecord]) -> CategoryDistribution:
    counts = Counter(r.category for r in records)
    order = tuple(sorted(counts, key=lambda c: (-counts[c], c)))
    return CategoryDistribution(dict(counts), order)


def pareto_report(dist: CategoryDistribution, k: int) -> float:
    """Fraction of all records that fall in the ``k`` most populous categories."""
    if not 1 <= k <= len(dist.order):
        raise ValueError(f"k must be in [1, {len(dist.order)}], got {k}")
    return sum(dist.counts[c] for c in dist.order[:k]) / dist.total


def category_quotas(dist: CategoryDistribution, plan: SamplingPlan) -> dict[str, int]:
    """Number of records each category contributes: min(quota, available)."""
    if plan.k_top > len(dist.order):
        raise ValueError(f"k_top={plan.k_top} exceeds the {len(dist.order)} categories present")
    return {
        c: min(plan.quota_top if rank < plan.k_top else plan.quota_rest, dist.counts[c])
        for rank, c in enumerate(dist.order)
    }


def balanced_sample(records: Sequence[ManifestRecord], plan: SamplingPlan) -> list[ManifestRecord]:
    """Quota-capped uniform sampling without replacement, per category.

    Categories are visited in histogram order; within a category the records
    are sorted by image_id, shuffled with a PCG64 stream seeded by
    ``plan.seed`` and the first ``quota`` kept. The output depends only on the
    record set and the plan.
    """
    records = list(records)
    if not records:
        raise ValueError("balanced_sample needs a non-empty manifest")
    dist = histogram(records)
    quotas = category_quotas(dist, plan)
    by_cat: dict[str, list[ManifestRecord]] = {c: [] for c in dist.order}
    for r in records:
        by_cat[r.category].append(r)

    rng = np.random.Generator(np.random.PCG64(plan.seed))
    selected: list[ManifestRecord] = []
    for c in dist.order:
        pool = sorted(by_cat[c], key=lambda r: r.image_id)
        perm = rng.permutation(len(pool))
        selected.extend(pool[i] for i in perm[: quotas[c]])
    return selected


def synthetic_manifest(
    counts: Sequence[int],
    seed: int = 0,
    dirty_fraction: float = 0.0,
    sources: Sequence[Source] = (Source.MSRA10K, Source.DUTS_TR),
) -> list[ManifestRecord]:
    """Records for categories ``cat000, cat001, ...`` with the given sizes.

    A ``dirty_fraction`` share of each category is additionally flagged dirty
    (these extra records come on top of ``counts``).
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    records = []
    n = 0
    for ci, count in enumerate(counts):
        n_dirty = int(round(count * dirty_fraction))
        for j in range(count + n_dirty):
            src = sources[int(rng.integers(len(sources)))]
            records.append(ManifestRecord(f"img{n:06d}", src, f"cat{ci:03d}", j >= count))
            n += 1
    return records


def long_tail_counts() -> list[int]:
    """A fixed 267-category long-tail distribution over 18227 records.

    50 head categories hold 13200 records (72.4%), 100 mid categories have
    20..77 records each and 117 tail categories have 1 or 2. Under the
    default plan the capped quotas sum to 2000 + 2000 + 172 = 4172, while the
    uncapped quotas would give 50*40 + 217*20 = 6340.
    """
    head = list(range(362, 165, -4))
    mid = [int(v) for v in np.rint(np.linspace(77.1, 20, 100))]
    mid[0] += 4855 - sum(mid)
    tail = [2] * 55 + [1] * 62
    return head + mid + tail
