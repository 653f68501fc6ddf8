"""Fixation regions, overlap-based class distributions, chi-square distance and goodness of fit."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .gaze import DogProfile, Fixation, SNIFFING_MAX_MASKS, align_to_frames, filter_sniffing
from .scene import (
    N_CLASSES,
    CameraModel,
    ClassTaxonomy,
    DimensionError,
    FrameSegmentation,
    RleMask,
    SegmentationCorpus,
    bbox_overlap,
    rasterize_disk,
    rasterize_rect,
    rle_intersect_count,
    rle_union,
)
from .special import chi2_isf

CHI_EPSILON = 1e-6
DEFAULT_ALPHA = 0.05
DEFAULT_DOF = N_CLASSES  # 15 classes + background - 1


class NullDistributionError(ValueError):
    """A chi-square comparison was asked of a null distribution."""


@dataclass(frozen=True)
class FixationRegion:
    center: tuple[float, float]
    radius_px: int
    disk: RleMask

    @property
    def area(self) -> int:
        return self.disk.area()


@dataclass(frozen=True, eq=False)
class ClassDistribution:
    """Probability over taxonomy ids (background at 0); ``null`` when nothing was hit."""

    probs: np.ndarray
    null: bool = False
    counts: np.ndarray | None = None

    @classmethod
    def from_counts(cls, counts) -> "ClassDistribution":
        counts = np.asarray(counts, dtype=np.int64)
        total = int(counts.sum())
        if total == 0:
            return cls.null_of(len(counts))
        return cls(counts / total, False, counts)

    @classmethod
    def null_of(cls, length: int = N_CLASSES + 1) -> "ClassDistribution":
        return cls(np.full(length, np.nan), True, np.zeros(length, dtype=np.int64))

    def __len__(self):
        return len(self.probs)

    def __eq__(self, other):
        if not isinstance(other, ClassDistribution):
            return NotImplemented
        if self.null or other.null:
            return self.null == other.null and len(self) == len(other)
        return np.array_equal(self.probs, other.probs)


@dataclass(frozen=True, eq=False)
class AttributionRecord:
    fixation: Fixation
    frame_index: int | None
    distribution: ClassDistribution
    occupancy: np.ndarray
    radius_px: int = 0
    error: str | None = None

    @property
    def dog_id(self) -> str:
        return self.fixation.dog_id

    @property
    def null(self) -> bool:
        return self.distribution.null


def make_region(f: Fixation, profile: DogProfile, camera: CameraModel) -> FixationRegion:
    w, h = camera.width_px, camera.height_px
    disk = rasterize_disk(f.point, profile.radius_px, w, h)
    x, y = f.point
    if disk.area() == 0 and 0 <= x < w and 0 <= y < h:
        # a sub-pixel disk between pixel centres keeps the nearest pixel
        px, py = min(int(round(x)), w - 1), min(int(round(y)), h - 1)
        disk = rasterize_rect(px, py, px, py, w, h)
    return FixationRegion(f.point, profile.radius_px, disk)


def _overlap(region: FixationRegion, frame: FrameSegmentation, n_classes: int, include_background: bool):
    disk = region.disk
    if disk.width != frame.camera.width_px or disk.height != frame.camera.height_px:
        raise DimensionError(
            f"region is {disk.width}x{disk.height}, frame {frame.frame_index} is "
            f"{frame.camera.width_px}x{frame.camera.height_px}"
        )
    counts = np.zeros(n_classes + 1, dtype=np.int64)
    occupancy = np.zeros(n_classes + 1)
    area = disk.area()
    if area == 0:
        return counts, occupancy, False
    dbox = disk.bbox()
    hits: dict[int, list[RleMask]] = {}
    for inst in frame.masks:
        if not bbox_overlap(dbox, inst.bbox):
            continue
        c = rle_intersect_count(inst.mask, disk)
        if c:
            counts[inst.class_id] += c
            hits.setdefault(inst.class_id, []).append(inst.mask)
    any_hit = bool(hits)
    for cid, masks in hits.items():
        covered = counts[cid] if len(masks) == 1 else rle_intersect_count(rle_union(masks), disk)
        occupancy[cid] = covered / area
    if include_background:
        all_hit = [m for ms in hits.values() for m in ms]
        covered = rle_intersect_count(rle_union(all_hit), disk) if all_hit else 0
        counts[0] = area - covered
        occupancy[0] = counts[0] / area
    return counts, occupancy, any_hit


def attribute(
    region: FixationRegion,
    frame: FrameSegmentation,
    include_background: bool = False,
    n_classes: int = N_CLASSES,
) -> ClassDistribution:
    """Per-class share of mask pixels falling inside the fixation region.

    Each instance contributes its own intersection, so a pixel under two
    overlapping instances counts twice. With ``include_background`` the
    region pixels under no mask are credited to id 0. A region touching no
    mask is null either way.
    """
    counts, _, any_hit = _overlap(region, frame, n_classes, include_background)
    if not any_hit:
        return ClassDistribution.null_of(n_classes + 1)
    return ClassDistribution.from_counts(counts)


def _as_vector(d) -> np.ndarray:
    if isinstance(d, ClassDistribution):
        if d.null:
            raise NullDistributionError("cannot compare a null distribution")
        return np.asarray(d.probs, dtype=float)
    v = np.asarray(d, dtype=float)
    if np.isnan(v).any():
        raise NullDistributionError("cannot compare a null distribution")
    return v


def chi_square_distance(p, q, mode: str = "pearson", eps: float = CHI_EPSILON) -> float:
    """Chi-square distance of ``p`` from reference ``q``.

    ``pearson`` treats q as the expected distribution; cells where q is zero
    but p is not are charged p^2 / eps. ``symmetric`` uses (p - q)^2 / (p + q).
    Inputs may be distributions or raw count vectors.
    """
    p, q = _as_vector(p), _as_vector(q)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    if mode == "pearson":
        pos = q > 0
        return float(((p[pos] - q[pos]) ** 2 / q[pos]).sum() + (p[~pos & (p > 0)] ** 2).sum() / eps)
    if mode == "symmetric":
        s = p + q
        pos = s > 0
        return float(((p[pos] - q[pos]) ** 2 / s[pos]).sum())
    raise ValueError(f"unknown chi-square mode {mode!r}")


def chi_square_critical(dof: int = DEFAULT_DOF, alpha: float = DEFAULT_ALPHA) -> float:
    if int(dof) != dof or dof < 1:
        raise ValueError(f"dof must be a positive integer, got {dof}")
    return chi2_isf(alpha, dof)


@dataclass(frozen=True)
class FitResult:
    accept: bool
    margin: float
    critical: float


def goodness_of_fit(dist: float, dof: int = DEFAULT_DOF, alpha: float = DEFAULT_ALPHA) -> FitResult:
    if dist < 0:
        raise ValueError("distance must be non-negative")
    crit = chi_square_critical(dof, alpha)
    return FitResult(dist < crit, crit - dist, crit)


# --- batch --------------------------------------------------------------------


def frame_for(f: Fixation, frames: Mapping[int, FrameSegmentation], fps: float) -> FrameSegmentation | None:
    """First available frame inside the fixation's frame span."""
    first, last = f.frame_span if f.frame_span is not None else align_to_frames(f, fps)
    for k in range(first, last + 1):
        fr = frames.get(k)
        if fr is not None:
            return fr
    return None


@dataclass
class BatchSummary:
    total: int = 0
    sniffing_removed: int = 0
    missing_frame: int = 0
    null: int = 0
    retained: int = 0

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _one(args) -> AttributionRecord:
    f, frame, profile, camera, include_background, n_classes = args
    region = make_region(f, profile, camera)
    counts, occupancy, any_hit = _overlap(region, frame, n_classes, include_background)
    dist = ClassDistribution.from_counts(counts) if any_hit else ClassDistribution.null_of(n_classes + 1)
    return AttributionRecord(f, frame.frame_index, dist, occupancy, profile.radius_px)


def batch_attribute(
    fixations: Sequence[Fixation],
    frames: SegmentationCorpus | Mapping[int, FrameSegmentation],
    profiles: Mapping[str, DogProfile],
    camera: CameraModel | None = None,
    include_background: bool = False,
    sniffing_max_masks: int | None = SNIFFING_MAX_MASKS,
    threads: int = 1,
) -> tuple[list[AttributionRecord], BatchSummary]:
    """Attribute every fixation to its frame.

    Fixations whose frame is missing yield an error record; sniffing frames
    are dropped before attribution when ``sniffing_max_masks`` is set.
    Output order follows input order regardless of ``threads``.
    """
    if isinstance(frames, SegmentationCorpus):
        camera = camera or frames.camera
        frames = frames.by_index()
    if camera is None:
        raise ValueError("camera required when frames are given as a mapping")
    for f in fixations:
        if f.dog_id not in profiles:
            raise KeyError(f"no profile for dog {f.dog_id!r}")
    n_classes = N_CLASSES
    summary = BatchSummary(total=len(fixations))

    # (fixation, frame or None) in input order
    pairs = [(f, frame_for(f, frames, camera.fps)) for f in fixations]
    if sniffing_max_masks is not None:
        with_frame = [(k, fr) for k, (f, fr) in enumerate(pairs) if fr is not None]
        kept, summary.sniffing_removed = filter_sniffing(with_frame, sniffing_max_masks)
        keep = {k for k, _ in kept}
        pairs = [p for k, p in enumerate(pairs) if p[1] is None or k in keep]

    jobs = [(f, fr, profiles[f.dog_id], camera, include_background, n_classes) for f, fr in pairs if fr is not None]
    if threads and threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            done = iter(list(ex.map(_one, jobs, chunksize=64)))
    else:
        done = map(_one, jobs)

    records = []
    for f, fr in pairs:
        if fr is None:
            summary.missing_frame += 1
            records.append(
                AttributionRecord(
                    f, None, ClassDistribution.null_of(n_classes + 1), np.zeros(n_classes + 1),
                    profiles[f.dog_id].radius_px, error="missing frame",
                )
            )
            continue
        rec = next(done)
        records.append(rec)
        if rec.null:
            summary.null += 1
        else:
            summary.retained += 1
    return records, summary


def aggregate_distribution(records: Iterable[AttributionRecord]) -> np.ndarray | None:
    """Mean class distribution over non-null, error-free records."""
    rows = [r.distribution.probs for r in records if r.error is None and not r.null]
    if not rows:
        return None
    return np.mean(rows, axis=0)


@dataclass
class ChiSquareComparison:
    distances: list[float]
    skipped_null: int
    critical: float
    mode: str

    def summary(self) -> dict:
        d = np.asarray(self.distances)
        if len(d) == 0:
            return {"n": 0, "skipped_null": self.skipped_null, "critical": self.critical, "mode": self.mode}
        q1, q2, q3, p90 = np.percentile(d, [25, 50, 75, 90])
        return {
            "n": int(len(d)),
            "skipped_null": self.skipped_null,
            "mode": self.mode,
            "critical": self.critical,
            "q1": float(q1),
            "median": float(q2),
            "q3": float(q3),
            "p90": float(p90),
            "fraction_below_critical": float((d < self.critical).mean()),
        }


def compare_attributions(
    fixations: Sequence[Fixation],
    gt: SegmentationCorpus,
    pred: SegmentationCorpus,
    profiles: Mapping[str, DogProfile],
    mode: str = "pearson",
    include_background: bool = False,
    dof: int = DEFAULT_DOF,
    alpha: float = DEFAULT_ALPHA,
    use_counts: bool = False,
) -> ChiSquareComparison:
    """Chi-square distance between predicted-mask and ground-truth attributions per fixation.

    ``use_counts`` feeds raw pixel counts instead of normalized probabilities.
    """
    camera = gt.camera
    gt_frames, pred_frames = gt.by_index(), pred.by_index()
    distances, skipped = [], 0
    for f in fixations:
        fg = frame_for(f, gt_frames, camera.fps)
        fp = frame_for(f, pred_frames, camera.fps)
        if fg is None or fp is None:
            continue
        region = make_region(f, profiles[f.dog_id], camera)
        dg = attribute(region, fg, include_background)
        dp = attribute(region, fp, include_background)
        if dg.null or dp.null:
            skipped += 1
            continue
        if use_counts:
            distances.append(chi_square_distance(dp.counts, dg.counts, mode))
        else:
            distances.append(chi_square_distance(dp, dg, mode))
    return ChiSquareComparison(distances, skipped, chi_square_critical(dof, alpha), mode)


# --- JSON-lines output ----------------------------------------------------------


def record_to_json(rec: AttributionRecord, taxonomy: ClassTaxonomy) -> dict:
    names = taxonomy.names
    f = rec.fixation
    doc = {
        "dog_id": rec.dog_id,
        "frame": rec.frame_index,
        "null": bool(rec.null),
        "probs": {} if rec.null else {names[i]: float(p) for i, p in enumerate(rec.distribution.probs) if p > 0},
        "occupancy": {names[i]: float(o) for i, o in enumerate(rec.occupancy) if o > 0},
        "start_ms": f.start_ms,
        "end_ms": f.end_ms,
        "x": f.point[0],
        "y": f.point[1],
        "radius_px": rec.radius_px,
    }
    if rec.error is not None:
        doc["error"] = rec.error
    return doc


def record_from_json(doc: dict, taxonomy: ClassTaxonomy) -> AttributionRecord:
    n = taxonomy.n_classes + 1
    f = Fixation(doc["dog_id"], float(doc.get("start_ms", 0.0)), float(doc.get("end_ms", 0.0)),
                 (float(doc.get("x", 0.0)), float(doc.get("y", 0.0))))
    occupancy = np.zeros(n)
    for name, v in doc.get("occupancy", {}).items():
        occupancy[taxonomy.id_of(name)] = v
    if doc["null"]:
        dist = ClassDistribution.null_of(n)
    else:
        probs = np.zeros(n)
        for name, v in doc["probs"].items():
            probs[taxonomy.id_of(name)] = v
        dist = ClassDistribution(probs, False, None)
    return AttributionRecord(f, doc["frame"], dist, occupancy, int(doc.get("radius_px", 0)), doc.get("error"))


def write_records(records: Iterable[AttributionRecord], taxonomy: ClassTaxonomy, path: str | Path):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(record_to_json(r, taxonomy), sort_keys=True) + "\n")


def read_records(path: str | Path, taxonomy: ClassTaxonomy) -> list[AttributionRecord]:
    with open(path) as fh:
        return [record_from_json(json.loads(line), taxonomy) for line in fh if line.strip()]
