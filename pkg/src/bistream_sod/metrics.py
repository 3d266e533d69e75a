"""Salient-object-detection metrics: MAE, PR/F curves, weighted F, S-measure.

Saliency maps are float arrays in [0, 1]; ground-truth masks are {0, 1}.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from . import imageio

N_THRESHOLDS = 256
THRESHOLDS = np.arange(N_THRESHOLDS) / 255.0
F_BETA2 = 0.3
S_EPS = 1e-8
WF_EPS = np.finfo(np.float64).eps


def _check_pair(s: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=np.float64)
    gt = np.asarray(gt)
    if s.shape != gt.shape:
        raise ValueError(f"saliency map {s.shape} and ground truth {gt.shape} differ in shape")
    if s.size == 0:
        raise ValueError("empty saliency map")
    return s, gt.astype(bool)


def mae(s: np.ndarray, gt: np.ndarray) -> float:
    s, gt = _check_pair(s, gt)
    return float(np.mean(np.abs(s - gt)))


def f_measure(precision, recall, beta2: float = F_BETA2):
    """(1 + b2) P R / (b2 P + R), with 0 wherever the denominator is 0."""
    p = np.asarray(precision, dtype=np.float64)
    r = np.asarray(recall, dtype=np.float64)
    num = (1.0 + beta2) * p * r
    den = beta2 * p + r
    out = np.divide(num, den, out=np.zeros(np.broadcast(p, r).shape), where=den > 0)
    return float(out) if out.ndim == 0 else out


def precision_recall(s: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-threshold precision and recall of ``s >= t / 255`` for t = 0..255.

    No predicted positives gives precision 0; an empty mask gives recall 0.
    """
    s, gt = _check_pair(s, gt)
    all_sorted = np.sort(s, axis=None)
    fg_sorted = np.sort(s[gt])
    pred_pos = all_sorted.size - np.searchsorted(all_sorted, THRESHOLDS, side="left")
    tp = fg_sorted.size - np.searchsorted(fg_sorted, THRESHOLDS, side="left")
    precision = np.divide(tp, pred_pos, out=np.zeros(N_THRESHOLDS), where=pred_pos > 0)
    recall = tp / fg_sorted.size if fg_sorted.size else np.zeros(N_THRESHOLDS)
    return precision, recall


def pr_curve(pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    """Dataset-mean precision and recall, 256 points each."""
    if not pairs:
        raise ValueError("pr_curve needs at least one (saliency, ground truth) pair")
    p_sum = np.zeros(N_THRESHOLDS)
    r_sum = np.zeros(N_THRESHOLDS)
    for s, gt in pairs:
        p, r = precision_recall(s, gt)
        p_sum += p
        r_sum += r
    return p_sum / len(pairs), r_sum / len(pairs)


def max_avg_f(pairs: Sequence[tuple[np.ndarray, np.ndarray]], beta2: float = F_BETA2) -> tuple[float, float]:
    p, r = pr_curve(pairs)
    f = f_measure(p, r, beta2)
    return float(f.max()), float(f.mean())


def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    half = (size - 1) / 2.0
    y, x = np.mgrid[-half : half + 1, -half : half + 1]
    k = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    k[k < np.finfo(np.float64).eps * k.max()] = 0
    return k / k.sum()


def weighted_f(s: np.ndarray, gt: np.ndarray, beta2: float = 1.0) -> float:
    """Weighted F-measure of Margolin et al. (distance-weighted, smoothed errors)."""
    s, gt = _check_pair(s, gt)
    if not gt.any():
        return 1.0 if not s.any() else 0.0

    dist, idx = ndimage.distance_transform_edt(~gt, return_indices=True)
    err = np.abs(s - gt)
    # background errors take the error of their nearest foreground pixel
    err_t = err[idx[0], idx[1]]
    smoothed = ndimage.correlate(err_t, _gaussian_kernel(), mode="constant", cval=0.0)
    min_err = np.where(gt & (smoothed < err), smoothed, err)
    weight = np.where(gt, 1.0, 2.0 - np.exp(math.log(0.5) / 5.0 * dist))
    err_w = min_err * weight

    tp_w = gt.sum() - err_w[gt].sum()
    fp_w = err_w[~gt].sum()
    recall = 1.0 - err_w[gt].mean()
    precision = tp_w / (WF_EPS + tp_w + fp_w)
    q = (1.0 + beta2) * recall * precision / (WF_EPS + recall + beta2 * precision)
    return float(min(max(q, 0.0), 1.0))


def _object_score(values: np.ndarray) -> float:
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + S_EPS)


def _s_object(s: np.ndarray, gt: np.ndarray) -> float:
    u = gt.mean()
    return u * _object_score(s[gt]) + (1.0 - u) * _object_score(1.0 - s[~gt])


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def _centroid(gt: np.ndarray) -> tuple[int, int]:
    """1-based (column, row) of the mask centroid, rounded half up."""
    rows, cols = gt.shape
    total = gt.sum()
    if total == 0:
        return _round_half_up(cols / 2), _round_half_up(rows / 2)
    x = (gt.sum(axis=0) * np.arange(1, cols + 1)).sum() / total
    y = (gt.sum(axis=1) * np.arange(1, rows + 1)).sum() / total
    return _round_half_up(x), _round_half_up(y)


def _ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    x = p.mean()
    y = g.mean()
    sx2 = ((p - x) ** 2).sum() / (n - 1 + S_EPS)
    sy2 = ((g - y) ** 2).sum() / (n - 1 + S_EPS)
    sxy = ((p - x) * (g - y)).sum() / (n - 1 + S_EPS)
    a = 4.0 * x * y * sxy
    b = (x * x + y * y) * (sx2 + sy2)
    if a != 0:
        return a / (b + S_EPS)
    return 1.0 if b == 0 else 0.0


def _s_region(s: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    cx, cy = _centroid(gt)
    g = gt.astype(np.float64)
    area = h * w
    blocks = [
        (slice(0, cy), slice(0, cx), cx * cy / area),
        (slice(0, cy), slice(cx, w), (w - cx) * cy / area),
        (slice(cy, h), slice(0, cx), cx * (h - cy) / area),
    ]
    blocks.append((slice(cy, h), slice(cx, w), 1.0 - sum(b[2] for b in blocks)))
    q = 0.0
    for rs, cs, weight in blocks:
        ps = s[rs, cs]
        if ps.size:
            q += weight * _ssim(ps, g[rs, cs])
    return q


def s_measure(s: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> float:
    """Structure measure: alpha * object-aware + (1 - alpha) * region-aware."""
    s, gt = _check_pair(s, gt)
    y = gt.mean()
    if y == 0:
        q = 1.0 - s.mean()
    elif y == 1:
        q = s.mean()
    else:
        q = alpha * _s_object(s, gt) + (1.0 - alpha) * _s_region(s, gt)
    return float(min(max(q, 0.0), 1.0))


# -- dataset evaluation -------------------------------------------------------


@dataclass
class ImageMetrics:
    name: str
    mae: float
    max_f: float
    avg_f: float
    weighted_f: float
    s_measure: float


@dataclass
class MetricReport:
    mae: float
    max_f: float
    avg_f: float
    weighted_f: float
    s_measure: float
    precision: np.ndarray
    recall: np.ndarray
    per_image: list[ImageMetrics] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    @property
    def f_curve(self) -> np.ndarray:
        return f_measure(self.precision, self.recall)

    def to_dict(self) -> dict:
        return {
            "aggregate": {
                "n_images": len(self.per_image),
                "mae": self.mae,
                "max_f": self.max_f,
                "avg_f": self.avg_f,
                "weighted_f": self.weighted_f,
                "s_measure": self.s_measure,
            },
            "per_image": [asdict(m) for m in self.per_image],
            "errors": list(self.errors),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def curve_csv(self) -> str:
        return curve_csv(self.precision, self.recall)


def curve_csv(precision: np.ndarray, recall: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold", "precision", "recall", "f"])
    f = f_measure(precision, recall)
    for t in range(N_THRESHOLDS):
        writer.writerow([t, repr(float(precision[t])), repr(float(recall[t])), repr(float(f[t]))])
    return buf.getvalue()


def _image_files(directory: Path) -> dict[str, Path]:
    files: dict[str, Path] = {}
    for path in sorted(directory.iterdir()):
        if path.is_file() and path.suffix.lower() in imageio.SUPPORTED_SUFFIXES:
            files.setdefault(path.stem, path)
    return files


def _score_pair(name: str, s: np.ndarray, gt: np.ndarray):
    p, r = precision_recall(s, gt)
    f = f_measure(p, r)
    m = ImageMetrics(name, mae(s, gt), float(f.max()), float(f.mean()), weighted_f(s, gt), s_measure(s, gt))
    return m, p, r


def evaluate_pairs(named_pairs: Iterable[tuple[str, np.ndarray, np.ndarray]], workers: int = 1) -> MetricReport:
    """Aggregate metrics over ``(name, saliency, mask)`` triples in the given order."""
    named_pairs = list(named_pairs)
    if not named_pairs:
        raise ValueError("no valid prediction / ground-truth pairs to evaluate")

    def job(item):
        return _score_pair(*item)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, named_pairs))
    else:
        results = [job(item) for item in named_pairs]
    return _aggregate(results)


def _aggregate(results) -> MetricReport:
    n = len(results)
    per_image = [m for m, _, _ in results]
    precision = np.zeros(N_THRESHOLDS)
    recall = np.zeros(N_THRESHOLDS)
    for _, p, r in results:
        precision += p
        recall += r
    precision /= n
    recall /= n
    f = f_measure(precision, recall)
    return MetricReport(
        mae=math.fsum(m.mae for m in per_image) / n,
        max_f=float(f.max()),
        avg_f=float(f.mean()),
        weighted_f=math.fsum(m.weighted_f for m in per_image) / n,
        s_measure=math.fsum(m.s_measure for m in per_image) / n,
        precision=precision,
        recall=recall,
        per_image=per_image,
    )


def evaluate_dataset(pred_dir, gt_dir, workers: int = 1) -> MetricReport:
    """Score every prediction against the same-named mask, in sorted name order.

    Unmatched or unreadable files are listed in ``report.errors`` and skipped.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"not a directory: {d}")
    preds = _image_files(pred_dir)
    gts = _image_files(gt_dir)
    errors: list[str] = []
    pairs = []
    for stem in sorted(set(preds) | set(gts)):
        if stem not in gts:
            errors.append(f"{preds[stem].name}: no ground truth in {gt_dir}")
            continue
        if stem not in preds:
            errors.append(f"{gts[stem].name}: no prediction in {pred_dir}")
            continue
        try:
            s = imageio.to_saliency(imageio.read_gray(preds[stem]))
            gt = imageio.to_mask(imageio.read_gray(gts[stem]))
            if s.shape != gt.shape:
                raise ValueError(f"shape {s.shape} vs ground truth {gt.shape}")
        except (OSError, ValueError) as exc:
            errors.append(f"{preds[stem].name}: {exc}")
            continue
        pairs.append((stem, s, gt))
    if not pairs:
        raise ValueError("no valid prediction / ground-truth pairs: " + "; ".join(errors))
    report = evaluate_pairs(pairs, workers=workers)
    report.errors = errors
    return report
