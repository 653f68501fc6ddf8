"""Instance-segmentation quality: max-IoU pairing, confusion, IoU, count accuracy, coverage."""
from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .scene import (
    BACKGROUND_ID,
    N_CLASSES,
    ClassTaxonomy,
    FormatError,
    FrameSegmentation,
    InstanceMask,
    SegmentationCorpus,
    bbox_overlap,
    frame_coverage,
    rle_intersect_count,
    rle_union_area,
)

IOU_GATE = 0.75


@dataclass(frozen=True)
class MaskPair:
    source: InstanceMask
    partner: InstanceMask | None
    iou: float


@dataclass(frozen=True)
class MaskPairing:
    gt_to_pred: tuple[MaskPair, ...]
    pred_to_gt: tuple[MaskPair, ...]


def iou_matrix(a: Sequence[InstanceMask], b: Sequence[InstanceMask]) -> np.ndarray:
    out = np.zeros((len(a), len(b)))
    areas_b = [m.area for m in b]
    for i, ma in enumerate(a):
        area_a = ma.area
        for j, mb in enumerate(b):
            if not bbox_overlap(ma.bbox, mb.bbox):
                continue
            inter = rle_intersect_count(ma.mask, mb.mask)
            if inter:
                out[i, j] = inter / (area_a + areas_b[j] - inter)
    return out


def _best(sources, targets, ious) -> tuple[MaskPair, ...]:
    pairs = []
    for i, src in enumerate(sources):
        if len(targets) == 0:
            pairs.append(MaskPair(src, None, 0.0))
            continue
        j = int(np.argmax(ious[i]))  # first max wins; targets are sorted by instance id
        iou = float(ious[i, j])
        pairs.append(MaskPair(src, targets[j] if iou > 0 else None, iou))
    return tuple(pairs)


def pair_masks(gt: FrameSegmentation, pred: FrameSegmentation) -> MaskPairing:
    """Pair each ground-truth mask with its highest-IoU prediction and vice versa."""
    g = sorted(gt.masks, key=lambda m: m.instance_id)
    p = sorted(pred.masks, key=lambda m: m.instance_id)
    ious = iou_matrix(g, p)
    return MaskPairing(_best(g, p, ious), _best(p, g, ious.T))


@dataclass
class ConfusionMatrix:
    """Rows are ground-truth classes, columns predicted; id 0 collects misses and false positives."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((N_CLASSES + 1, N_CLASSES + 1), dtype=np.int64))

    def __iadd__(self, other: "ConfusionMatrix"):
        self.counts = self.counts + other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def off_diagonal_fraction(self) -> float:
        t = self.total
        return float((t - np.trace(self.counts)) / t) if t else 0.0


def confusion_from_pairing(pairing: MaskPairing, n_classes: int = N_CLASSES) -> ConfusionMatrix:
    m = np.zeros((n_classes + 1, n_classes + 1), dtype=np.int64)
    for pr in pairing.gt_to_pred:
        col = pr.partner.class_id if pr.partner is not None else BACKGROUND_ID
        m[pr.source.class_id, col] += 1
    for pr in pairing.pred_to_gt:
        if pr.partner is None:
            m[BACKGROUND_ID, pr.source.class_id] += 1
    return ConfusionMatrix(m)


def per_class_iou(gt: FrameSegmentation, pred: FrameSegmentation, class_id: int) -> float:
    """Best IoU among same-class (gt, pred) mask pairs in one frame; 0 if either side lacks the class."""
    g = [m for m in gt.masks if m.class_id == class_id]
    p = [m for m in pred.masks if m.class_id == class_id]
    if not g or not p:
        return 0.0
    return float(iou_matrix(g, p).max())


def _class_counts(frame: FrameSegmentation, n_classes: int) -> np.ndarray:
    c = np.zeros(n_classes + 1, dtype=np.int64)
    for m in frame.masks:
        c[m.class_id] += 1
    return c


def class_count_accuracy(
    gt_frames: Sequence[FrameSegmentation], pred_frames: Sequence[FrameSegmentation], class_id: int
) -> float | None:
    """Mean over images of min(count)/max(count); None when the class never occurs on either side."""
    scores = []
    for g, p in zip(gt_frames, pred_frames):
        ng = sum(m.class_id == class_id for m in g.masks)
        npred = sum(m.class_id == class_id for m in p.masks)
        if ng + npred > 0:
            scores.append(min(ng, npred) / max(ng, npred))
    return float(np.mean(scores)) if scores else None


@dataclass(frozen=True)
class Rates:
    precision: np.ndarray
    recall: np.ndarray
    accuracy: float


def rates_from_confusion(m: ConfusionMatrix) -> Rates:
    c = m.counts.astype(float)
    diag = np.diag(c)
    rows, cols = c.sum(axis=1), c.sum(axis=0)
    recall = np.divide(diag, rows, out=np.zeros_like(diag), where=rows > 0)
    precision = np.divide(diag, cols, out=np.zeros_like(diag), where=cols > 0)
    total = c.sum()
    return Rates(precision, recall, float(diag.sum() / total) if total else 0.0)


@dataclass(frozen=True)
class CoverageGap:
    mean_gt: float
    mean_pred: float
    per_class_gap: np.ndarray


def aligned_frames(
    gt: SegmentationCorpus | Sequence[FrameSegmentation], pred: SegmentationCorpus | Sequence[FrameSegmentation]
) -> tuple[list[FrameSegmentation], list[FrameSegmentation]]:
    g = sorted(gt, key=lambda f: f.frame_index)
    p = sorted(pred, key=lambda f: f.frame_index)
    if [f.frame_index for f in g] != [f.frame_index for f in p]:
        raise FormatError("ground-truth and predicted corpora cover different frames")
    return g, p


def _class_area_fractions(frame: FrameSegmentation, n_classes: int) -> np.ndarray:
    out = np.zeros(n_classes + 1)
    by_class: dict[int, list] = {}
    for m in frame.masks:
        by_class.setdefault(m.class_id, []).append(m.mask)
    for cid, masks in by_class.items():
        out[cid] = rle_union_area(masks) / frame.n_pixels
    return out


def coverage_gap(gt_frames, pred_frames, n_classes: int = N_CLASSES) -> CoverageGap:
    g, p = aligned_frames(gt_frames, pred_frames)
    if not g:
        return CoverageGap(0.0, 0.0, np.zeros(n_classes + 1))
    cov_g = np.mean([frame_coverage(f) for f in g])
    cov_p = np.mean([frame_coverage(f) for f in p])
    gap = np.mean([_class_area_fractions(b, n_classes) - _class_area_fractions(a, n_classes) for a, b in zip(g, p)], axis=0)
    return CoverageGap(float(cov_g), float(cov_p), gap)


def loss_weight(confidence: float, pair_iou: float, class_match: bool, iou_threshold: float = IOU_GATE) -> float:
    """Loss coefficient (1 - C) on class-matched pairs at or above the IoU gate, else 1."""
    if not 0.0 <= confidence <= 1.0:
        raise ValueError(f"confidence {confidence} outside [0, 1]")
    if class_match and pair_iou >= iou_threshold:
        return 1.0 - confidence
    return 1.0


# --- corpus report ---------------------------------------------------------------


def _median(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(statistics.median(vals)) if vals else None


@dataclass
class MetricsReport:
    taxonomy: ClassTaxonomy
    n_frames: int
    class_iou: list[float | None]
    count_accuracy: list[float | None]
    precision: list[float | None]
    recall: list[float | None]
    mask_accuracy: float
    confusion: ConfusionMatrix
    coverage: CoverageGap
    loss_gate: dict

    def medians(self) -> dict:
        return {
            "iou": _median(self.class_iou[1:]),
            "class_count_accuracy": _median(self.count_accuracy[1:]),
            "precision": _median(self.precision[1:]),
            "recall": _median(self.recall[1:]),
        }

    def to_json(self) -> dict:
        names = self.taxonomy.names
        return {
            "n_frames": self.n_frames,
            "class_count_rule": "per-image min/max count ratio",
            "per_class": {
                names[c]: {
                    "iou": self.class_iou[c],
                    "class_count_accuracy": self.count_accuracy[c],
                    "precision": self.precision[c],
                    "recall": self.recall[c],
                    "coverage_gap": float(self.coverage.per_class_gap[c]),
                }
                for c in range(len(names))
            },
            "mask_accuracy": self.mask_accuracy,
            "medians": self.medians(),
            "coverage": {"mean_gt": self.coverage.mean_gt, "mean_pred": self.coverage.mean_pred},
            "confusion": {"labels": list(names), "counts": self.confusion.counts.tolist()},
            "loss_gate": self.loss_gate,
        }

    def to_text(self) -> str:
        def fmt(v):
            return "    -" if v is None else f"{100 * v:5.1f}"

        names = self.taxonomy.names
        w = max(len(n) for n in names)
        lines = [
            f"{'class':<{w}}  {'IoU':>5}  {'CntAc':>5}  {'Prec':>5}  {'Rec':>5}  {'CovGap':>6}",
        ]
        for c in range(len(names)):
            lines.append(
                f"{names[c]:<{w}}  {fmt(self.class_iou[c])}  {fmt(self.count_accuracy[c])}  "
                f"{fmt(self.precision[c])}  {fmt(self.recall[c])}  {100 * self.coverage.per_class_gap[c]:+6.2f}"
            )
        med = self.medians()
        lines.append(
            f"{'median':<{w}}  {fmt(med['iou'])}  {fmt(med['class_count_accuracy'])}  "
            f"{fmt(med['precision'])}  {fmt(med['recall'])}"
        )
        lines.append(f"mask-based accuracy: {100 * self.mask_accuracy:.1f}%")
        lines.append(
            f"coverage: ground truth {100 * self.coverage.mean_gt:.1f}%, predicted {100 * self.coverage.mean_pred:.1f}%"
        )
        lines.append("class-count accuracy uses the per-image min/max count ratio")
        return "\n".join(lines) + "\n"


def evaluate(gt: SegmentationCorpus, pred: SegmentationCorpus, iou_threshold: float = IOU_GATE) -> MetricsReport:
    g, p = aligned_frames(gt, pred)
    k = gt.taxonomy.n_classes
    conf = ConfusionMatrix(np.zeros((k + 1, k + 1), dtype=np.int64))
    iou_sum = np.zeros(k + 1)
    iou_n = np.zeros(k + 1, dtype=np.int64)
    n_pairs = n_gated = 0
    coeff_sum = 0.0
    for a, b in zip(g, p):
        pairing = pair_masks(a, b)
        conf += confusion_from_pairing(pairing, k)
        for pr in pairing.gt_to_pred:
            if pr.partner is None:
                continue
            n_pairs += 1
            match = pr.partner.class_id == pr.source.class_id
            n_gated += match and pr.iou >= iou_threshold
            coeff_sum += loss_weight(pr.partner.confidence, pr.iou, match, iou_threshold)
        present = {m.class_id for m in a.masks} | {m.class_id for m in b.masks}
        for c in present:
            iou_sum[c] += per_class_iou(a, b, c)
            iou_n[c] += 1
    rates = rates_from_confusion(conf)
    rows, cols = conf.counts.sum(axis=1), conf.counts.sum(axis=0)
    class_iou = [float(iou_sum[c] / iou_n[c]) if iou_n[c] else None for c in range(k + 1)]
    class_iou[0] = None
    count_acc = [None] + [class_count_accuracy(g, p, c) for c in range(1, k + 1)]
    precision = [float(rates.precision[c]) if cols[c] or rows[c] else None for c in range(k + 1)]
    recall = [float(rates.recall[c]) if rows[c] or cols[c] else None for c in range(k + 1)]
    gate = {
        "iou_threshold": iou_threshold,
        "pairs": n_pairs,
        "gated_pairs": int(n_gated),
        "mean_loss_coefficient": coeff_sum / n_pairs if n_pairs else None,
    }
    return MetricsReport(
        gt.taxonomy, len(g), class_iou, count_acc, precision, recall, rates.accuracy, conf,
        coverage_gap(g, p, k), gate,
    )
