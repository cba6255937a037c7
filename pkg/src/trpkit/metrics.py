"""Region-level evaluation metrics, including similarity-scored mAP.

``map_s`` replaces a classifier's confidence with text-embedding cosine
similarity: each predicted phrase is assigned the ground-truth class whose
name embedding is most similar, and that similarity is its score.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Hashable, Mapping, Protocol, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, EmptyDataset, LengthMismatch, ZeroNormEmbedding
from .geometry import BinaryMask, Box, box_iou, mask_intersection_union, mask_iou

__all__ = [
    "EmbeddingProvider",
    "HashedNgramEmbedder",
    "TableEmbeddingProvider",
    "ScoredDetection",
    "rec_accuracy",
    "ciou",
    "miou",
    "ap_at_iou",
    "mean_ap",
    "assign_classes",
    "map_s",
    "map_s_report",
    "COCO_THRESHOLDS",
]

Region = Union[Box, BinaryMask]
COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashedNgramEmbedder:
    """Deterministic character n-gram embedder (feature hashing).

    Uses blake2b rather than ``hash()`` so vectors are stable across
    processes.
    """

    def __init__(self, dim: int = 256, n: int = 3):
        self.dim = dim
        self.n = n

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        padded = f" {text.lower()} "
        for i in range(max(len(padded) - self.n + 1, 0)):
            digest = hashlib.blake2b(padded[i:i + self.n].encode(), digest_size=8).digest()
            h = int.from_bytes(digest, "little")
            vec[h % self.dim] += 1.0 if (h >> 63) & 1 else -1.0
        return vec


class TableEmbeddingProvider:
    """Precomputed string -> vector table.

    File format (UTF-8 JSON)::

        {"dim": 3, "vectors": {"person": [0.1, 0.2, 0.3], ...}}
    """

    def __init__(self, vectors: Mapping[str, Sequence[float]], dim: int | None = None):
        table = {k: np.asarray(v, dtype=float) for k, v in vectors.items()}
        dims = {v.shape for v in table.values()}
        if len(dims) > 1:
            raise DimensionMismatch(f"embedding table mixes shapes {sorted(dims)}")
        found = next(iter(dims))[0] if dims else (dim or 0)
        if dim is not None and dims and found != dim:
            raise DimensionMismatch(f"table declares dim {dim} but vectors have {found}")
        self.dim = found
        self._table = table

    @classmethod
    def from_file(cls, path) -> "TableEmbeddingProvider":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(obj["vectors"], obj.get("dim"))

    def embed(self, text: str) -> np.ndarray:
        try:
            return self._table[text]
        except KeyError:
            raise KeyError(f"no embedding for {text!r}") from None


@dataclass(frozen=True)
class ScoredDetection:
    phrase: str
    region: Region
    score: float
    assigned_class: int
    image_id: Hashable = None


# -- simple overlap metrics ------------------------------------------------------

def rec_accuracy(preds: Sequence[Box], gts: Sequence[Box], thresh: float = 0.5) -> float:
    if len(preds) != len(gts):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(gts)} ground truths")
    if not preds:
        raise EmptyDataset("no pairs to evaluate")
    hits = sum(box_iou(p, g) >= thresh for p, g in zip(preds, gts))
    return hits / len(preds)


def ciou(pairs: Sequence[tuple[BinaryMask, BinaryMask]]) -> float:
    """Cumulative IoU: total intersection over total union."""
    if not pairs:
        raise EmptyDataset("no pairs to evaluate")
    inter = union = 0
    for p, g in pairs:
        i, u = mask_intersection_union(p, g)
        inter += i
        union += u
    return 1.0 if union == 0 else inter / union


def miou(pairs: Sequence[tuple[BinaryMask, BinaryMask]]) -> float:
    if not pairs:
        raise EmptyDataset("no pairs to evaluate")
    return sum(mask_iou(p, g) for p, g in pairs) / len(pairs)


# -- average precision -------------------------------------------------------------

def _region_iou(a: Region, b: Region) -> float:
    if isinstance(a, Box) and isinstance(b, Box):
        return box_iou(a, b)
    if isinstance(a, BinaryMask) and isinstance(b, BinaryMask):
        return mask_iou(a, b)
    raise TypeError(f"cannot compare {type(a).__name__} with {type(b).__name__}")


def _gt_items(regions) -> list[tuple[Hashable, Region]]:
    # a GT entry is a region, or an (image_id, region) pair
    return [r if isinstance(r, tuple) else (None, r) for r in regions]


def _class_items(gts) -> dict[int, list]:
    if isinstance(gts, Mapping):
        return {int(k): _gt_items(v) for k, v in gts.items()}
    return {k: _gt_items(v) for k, v in enumerate(gts)}


def _average_precision(tp: list[bool], n_gt: int) -> float:
    """All-point interpolated AP from a ranked TP/FP list."""
    if not tp:
        return 0.0
    hits = np.cumsum(tp, dtype=float)
    precision = hits / np.arange(1, len(tp) + 1)
    recall = hits / n_gt
    # precision envelope, right to left
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev_recall) * envelope))


def _class_ap(dets: list[ScoredDetection], gt: list, thresh: float) -> float:
    # stable sort: equal scores keep input order
    ranked = sorted(dets, key=lambda d: -d.score)
    taken = [False] * len(gt)
    tp = []
    for d in ranked:
        best, best_iou = -1, thresh
        for j, (img, region) in enumerate(gt):
            if taken[j] or img != d.image_id:
                continue
            iou = _region_iou(d.region, region)
            if iou >= best_iou and (best < 0 or iou > best_iou):
                best, best_iou = j, iou
        if best >= 0:
            taken[best] = True
            tp.append(True)
        else:
            tp.append(False)
    return _average_precision(tp, len(gt))


def ap_at_iou(dets: Sequence[ScoredDetection], gts, iou_thresh: float = 0.5) -> float:
    """Class-averaged AP at one IoU threshold.

    ``gts`` maps class index -> regions (a mapping, or a sequence indexed by
    class).  Classes without ground truth are skipped.
    """
    per_class = _class_items(gts)
    aps = []
    for cls, gt in sorted(per_class.items()):
        if not gt:
            continue
        cls_dets = [d for d in dets if d.assigned_class == cls]
        aps.append(_class_ap(cls_dets, gt, iou_thresh))
    return float(np.mean(aps)) if aps else 0.0


def mean_ap(dets: Sequence[ScoredDetection], gts,
            thresholds: Sequence[float] = COCO_THRESHOLDS) -> float:
    return float(np.mean([ap_at_iou(dets, gts, t) for t in thresholds]))


# -- similarity-scored mAP ----------------------------------------------------------

def _unit(vec: np.ndarray, text: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    norm = float(np.linalg.norm(vec))
    if not np.isfinite(norm) or norm == 0.0:
        raise ZeroNormEmbedding(f"embedding of {text!r} has zero or non-finite norm")
    return vec / norm


def assign_classes(phrases: Sequence[str], gt_classes: Sequence[str],
                   ep: EmbeddingProvider) -> list[tuple[int, float]]:
    """``(class index, cosine similarity)`` of the best class for each phrase."""
    if not gt_classes:
        raise ValueError("gt_classes must be non-empty")
    classes = np.stack([_unit(ep.embed(c), c) for c in gt_classes])
    out = []
    for p in phrases:
        sims = classes @ _unit(ep.embed(p), p)
        idx = int(np.argmax(sims))
        out.append((idx, float(sims[idx])))
    return out


def _scored(predictions, gt_classes, ep) -> list[ScoredDetection]:
    items = [p if len(p) == 3 else (p[0], p[1], None) for p in predictions]
    assigned = assign_classes([p[0] for p in items], gt_classes, ep)
    return [ScoredDetection(phrase, region, score, cls, image_id)
            for (phrase, region, image_id), (cls, score) in zip(items, assigned)]


def map_s_report(predictions: Sequence[tuple], gt_classes: Sequence[str], gts,
                 ep: EmbeddingProvider, thresholds: Sequence[float] = COCO_THRESHOLDS) -> dict:
    dets = _scored(predictions, gt_classes, ep)
    per_threshold = {t: ap_at_iou(dets, gts, t) for t in thresholds}
    return {
        "map_s": float(np.mean(list(per_threshold.values()))),
        "ap50": ap_at_iou(dets, gts, 0.5),
        "per_threshold": per_threshold,
    }


def map_s(predictions: Sequence[tuple], gt_classes: Sequence[str], gts,
          ep: EmbeddingProvider, thresholds: Sequence[float] = COCO_THRESHOLDS) -> float:
    """Similarity-scored mAP.

    ``predictions`` holds ``(phrase, region)`` or ``(phrase, region, image_id)``
    tuples; ``gts`` is as for ``ap_at_iou`` with class indices into
    ``gt_classes``.
    """
    return map_s_report(predictions, gt_classes, gts, ep, thresholds)["map_s"]
