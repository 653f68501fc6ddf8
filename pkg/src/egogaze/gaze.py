"""Gaze ingestion: calibration accuracy, I-DT fixation detection, frame alignment, sniffing filter."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .scene import CameraModel, FormatError, FrameSegmentation, deg_to_px_radius

MIN_FIXATION_MS = 100.0
DEFAULT_DISPERSION_DEG = 1.5
SNIFFING_MAX_MASKS = 2


@dataclass(frozen=True)
class GazeSample:
    t_ms: float
    x_px: float
    y_px: float
    valid: bool = True


@dataclass(frozen=True)
class CalibrationObservation:
    known_point: tuple[float, float]
    estimated_point: tuple[float, float]
    frame_index: int = 0


@dataclass(frozen=True)
class DogProfile:
    dog_id: str
    spatial_accuracy_deg: float
    radius_px: int

    def __post_init__(self):
        if not self.spatial_accuracy_deg > 0:
            raise ValueError(f"dog {self.dog_id}: spatial accuracy must be positive")

    @classmethod
    def from_accuracy(cls, dog_id: str, accuracy_deg: float, camera: CameraModel) -> "DogProfile":
        return cls(dog_id, accuracy_deg, deg_to_px_radius(accuracy_deg, camera))


@dataclass(frozen=True)
class Fixation:
    dog_id: str
    start_ms: float
    end_ms: float
    point: tuple[float, float]
    frame_span: tuple[int, int] | None = None

    @property
    def duration_ms(self) -> float:
        return self.end_ms - self.start_ms


def estimate_accuracy(observations: Sequence[CalibrationObservation], camera: CameraModel) -> float:
    """Mean angular error in degrees between known and estimated points of regard."""
    if len(observations) == 0:
        raise ValueError("need at least one calibration observation")
    known = np.array([o.known_point for o in observations], dtype=float)
    est = np.array([o.estimated_point for o in observations], dtype=float)
    dist = np.hypot(*(est - known).T)
    return float(dist.mean() * (camera.hfov_deg / camera.width_px))


def dispersion_deg_to_px(dispersion_deg: float, camera: CameraModel) -> float:
    return dispersion_deg * camera.px_per_deg_h


def detect_fixations(
    stream: Sequence[GazeSample],
    min_duration_ms: float = MIN_FIXATION_MS,
    dispersion_px: float = 9.45,
    dog_id: str = "",
    max_gap_ms: float | None = None,
) -> list[Fixation]:
    """Dispersion-threshold (I-DT) fixation detection.

    A window is stable while max(x range, y range) stays within
    ``dispersion_px``. Invalid samples and time gaps longer than
    ``max_gap_ms`` (default: three median sample intervals) end a window.
    Duration is last minus first sample time.
    """
    n = len(stream)
    if n == 0:
        return []
    t = np.fromiter((s.t_ms for s in stream), float, n)
    x = np.fromiter((s.x_px for s in stream), float, n)
    y = np.fromiter((s.y_px for s in stream), float, n)
    valid = np.fromiter((bool(s.valid) for s in stream), bool, n)
    dt = np.diff(t)
    if (dt < 0).any():
        i = int(np.flatnonzero(dt < 0)[0])
        raise FormatError(f"gaze timestamps decrease at sample {i + 1} ({t[i]} -> {t[i + 1]})")
    valid &= np.isfinite(x) & np.isfinite(y)
    if max_gap_ms is None:
        positive = dt[dt > 0]
        max_gap_ms = 3.0 * float(np.median(positive)) if len(positive) else math.inf
    # link[k]: samples k and k+1 may share a window
    link = valid[:-1] & valid[1:] & (dt <= max_gap_ms)

    out = []
    i = 0
    while i < n:
        if not valid[i]:
            i += 1
            continue
        j = i
        while t[j] - t[i] < min_duration_ms and j + 1 < n and link[j]:
            j += 1
        if t[j] - t[i] < min_duration_ms:
            # nothing starting in [i, j] can reach the duration before the break
            i = j + 1
            continue
        xmin, xmax = x[i : j + 1].min(), x[i : j + 1].max()
        ymin, ymax = y[i : j + 1].min(), y[i : j + 1].max()
        if max(xmax - xmin, ymax - ymin) > dispersion_px:
            i += 1
            continue
        while j + 1 < n and link[j]:
            nx, ny = x[j + 1], y[j + 1]
            if max(max(xmax, nx) - min(xmin, nx), max(ymax, ny) - min(ymin, ny)) > dispersion_px:
                break
            xmin, xmax = min(xmin, nx), max(xmax, nx)
            ymin, ymax = min(ymin, ny), max(ymax, ny)
            j += 1
        point = (float(x[i : j + 1].mean()), float(y[i : j + 1].mean()))
        out.append(Fixation(dog_id, float(t[i]), float(t[j]), point))
        i = j + 1
    return out


def align_to_frames(f: Fixation, fps: float) -> tuple[int, int]:
    """Frames exposed at fixation start and end; a degenerate span collapses to one frame."""
    if not fps > 0:
        raise ValueError("fps must be positive")
    first = math.floor(f.start_ms * fps / 1000.0)
    last = math.floor(f.end_ms * fps / 1000.0)
    return (first, max(first, last))


def with_frames(fixations: Iterable[Fixation], fps: float) -> list[Fixation]:
    return [replace(f, frame_span=align_to_frames(f, fps)) for f in fixations]


def filter_sniffing(
    pairs: Iterable[tuple[Fixation, FrameSegmentation]], max_masks: int = SNIFFING_MAX_MASKS
) -> tuple[list[tuple[Fixation, FrameSegmentation]], int]:
    """Drop fixation frames holding ``max_masks`` or fewer instance masks."""
    kept, removed = [], 0
    for fix, frame in pairs:
        if len(frame.masks) <= max_masks:
            removed += 1
        else:
            kept.append((fix, frame))
    return kept, removed


# --- CSV formats -------------------------------------------------------------

GAZE_HEADER = ["t_ms", "x_px", "y_px", "valid"]
CALIBRATION_HEADER = ["frame", "known_x", "known_y", "est_x", "est_y"]
FIXATION_HEADER = ["dog_id", "start_ms", "end_ms", "x", "y", "first_frame", "last_frame"]


def _reader(path, header):
    fh = open(path, newline="")
    reader = csv.DictReader(fh)
    if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != header:
        fh.close()
        raise FormatError(f"{path}: expected header {','.join(header)}, got {reader.fieldnames}")
    return fh, reader


def read_gaze_csv(path: str | Path) -> list[GazeSample]:
    fh, reader = _reader(path, GAZE_HEADER)
    with fh:
        try:
            return [
                GazeSample(float(r["t_ms"]), float(r["x_px"]), float(r["y_px"]), r["valid"].strip() in ("1", "true", "True"))
                for r in reader
            ]
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}: {exc}") from None


def write_gaze_csv(samples: Iterable[GazeSample], path: str | Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GAZE_HEADER)
        for s in samples:
            w.writerow([f"{s.t_ms:.3f}", f"{s.x_px:.3f}", f"{s.y_px:.3f}", int(bool(s.valid))])


def read_calibration_csv(path: str | Path) -> list[CalibrationObservation]:
    fh, reader = _reader(path, CALIBRATION_HEADER)
    with fh:
        try:
            return [
                CalibrationObservation(
                    (float(r["known_x"]), float(r["known_y"])),
                    (float(r["est_x"]), float(r["est_y"])),
                    int(r["frame"]),
                )
                for r in reader
            ]
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}: {exc}") from None


def write_calibration_csv(observations: Iterable[CalibrationObservation], path: str | Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CALIBRATION_HEADER)
        for o in observations:
            w.writerow([o.frame_index, *(f"{v:.3f}" for v in (*o.known_point, *o.estimated_point))])


def write_fixations_csv(fixations: Iterable[Fixation], path: str | Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIXATION_HEADER)
        for f in fixations:
            first, last = f.frame_span if f.frame_span is not None else ("", "")
            w.writerow([f.dog_id, f"{f.start_ms:.3f}", f"{f.end_ms:.3f}", f"{f.point[0]:.4f}", f"{f.point[1]:.4f}", first, last])


def read_fixations_csv(path: str | Path) -> list[Fixation]:
    fh, reader = _reader(path, FIXATION_HEADER)
    out = []
    with fh:
        try:
            for r in reader:
                span = None
                if r["first_frame"] != "":
                    span = (int(r["first_frame"]), int(r["last_frame"]))
                out.append(
                    Fixation(r["dog_id"], float(r["start_ms"]), float(r["end_ms"]), (float(r["x"]), float(r["y"])), span)
                )
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}: {exc}") from None
    return out
