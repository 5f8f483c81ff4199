"""Evaluation metrics: temporal IoU, temporal NMS, recall@K, accuracy, BLEU@4.

All functions are pure; the report writer emits JSON that records the exact
thresholds used.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, UsageError


@dataclass
class Moment:
    """One ranked prediction: a clip, a seconds interval, and its score."""

    clip_id: str
    span: tuple[float, float]
    score: float


def tiou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Temporal intersection over union of two [t0, t1] second intervals.

    Zero-length unions (two identical point spans) are defined as 0.
    """
    if a[0] > a[1] or b[0] > b[1]:
        raise UsageError(f"inverted interval: {a} vs {b}")
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def temporal_nms(moments: Sequence[Moment], threshold: float) -> list[Moment]:
    """Greedy suppression of a score-descending moment list.

    A candidate is dropped when its tIoU with an already-kept moment of the
    same clip exceeds the threshold.  Output preserves relative order.
    """
    scores = [m.score for m in moments]
    if any(a < b for a, b in zip(scores, scores[1:])):
        raise UsageError("temporal_nms expects the list sorted by score, descending")
    kept: list[Moment] = []
    for cand in moments:
        if all(
            k.clip_id != cand.clip_id or tiou(k.span, cand.span) <= threshold for k in kept
        ):
            kept.append(cand)
    return kept


def recall_at_k(
    predictions: Sequence[Sequence[Moment]],
    ground_truth: Sequence[tuple[str, tuple[float, float]]],
    k: int,
    tiou_threshold: float = 0.7,
    mode: str = "video_moment",
) -> float:
    """Fraction of queries answered in the top-K.

    Modes: ``video`` counts a clip-id match only, ``moment`` counts a span
    with tIoU strictly above the threshold, ``video_moment`` requires both.
    """
    if k < 1:
        raise ConfigError(f"k must be at least 1, got {k}")
    if mode not in ("video", "moment", "video_moment"):
        raise ConfigError(f"unknown recall mode {mode!r}")
    if len(predictions) != len(ground_truth):
        raise UsageError("predictions and ground truth differ in length")
    if not predictions:
        raise UsageError("recall over an empty query set")
    hits = 0
    for ranked, (gt_clip, gt_span) in zip(predictions, ground_truth):
        for m in list(ranked)[:k]:
            clip_ok = m.clip_id == gt_clip
            span_ok = tiou(m.span, gt_span) > tiou_threshold
            if mode == "video" and clip_ok:
                hits += 1
                break
            if mode == "moment" and span_ok:
                hits += 1
                break
            if mode == "video_moment" and clip_ok and span_ok:
                hits += 1
                break
    return hits / len(predictions)


def accuracy(pred_labels: Sequence[int], gold_labels: Sequence[int]) -> float:
    if len(pred_labels) != len(gold_labels):
        raise UsageError(
            f"label lists differ in length: {len(pred_labels)} vs {len(gold_labels)}"
        )
    if not gold_labels:
        raise UsageError("accuracy of an empty label set is undefined")
    return sum(p == g for p, g in zip(pred_labels, gold_labels)) / len(gold_labels)


def _ngram_counts(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: Sequence, reference: Sequence) -> float:
    """BLEU@4 against a single reference.

    Clipped n-gram precisions for n=1..4 under a geometric mean with the
    brevity penalty.  Zero unigram overlap scores 0; an empty count at
    higher orders gets add-one smoothing.
    """
    if not reference:
        raise UsageError("bleu4 needs a nonempty reference")
    if not candidate:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        cand = _ngram_counts(candidate, n)
        ref = _ngram_counts(reference, n)
        total = max(len(candidate) - n + 1, 0)
        matched = sum(min(c, ref[g]) for g, c in cand.items())
        if n == 1 and matched == 0:
            return 0.0
        if matched == 0:
            matched, total = matched + 1, total + 1
        log_sum += 0.25 * math.log(matched / total)
    bp = 1.0 if len(candidate) >= len(reference) else math.exp(1.0 - len(reference) / len(candidate))
    return bp * math.exp(log_sum)


def write_metrics_report(path: str | Path, task: str, metrics: dict, settings: dict) -> None:
    """Persist metric values alongside the exact thresholds that produced them."""
    payload = {"task": task, "settings": settings, "metrics": metrics}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_metrics_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
