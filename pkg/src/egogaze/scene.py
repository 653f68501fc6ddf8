"""Frame geometry: class taxonomy, camera model, run-length masks and pixel set algebra.

Masks are stored as sorted, disjoint, non-adjacent half-open intervals of
row-major pixel indices. All counts are exact integers; no operation here
touches floating point except disk rasterization and the angular radius.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BACKGROUND_ID = 0

DEFAULT_CLASSES = (
    "bench/chair",
    "bicycle",
    "building",
    "bus",
    "car",
    "construction",
    "pavement",
    "person",
    "plant horizontal",
    "plant vertical",
    "pole",
    "scooter",
    "sculpture",
    "sign",
    "sky",
)
N_CLASSES = len(DEFAULT_CLASSES)

DEFAULT_HFOV_DEG = 101.55
DEFAULT_VFOV_DEG = 73.60
DEFAULT_FPS = 29.96


class FormatError(ValueError):
    """Malformed mask, corpus or stream data."""


class DimensionError(ValueError):
    """Two masks or frames disagree on pixel dimensions."""


@dataclass(frozen=True)
class ClassTaxonomy:
    classes: tuple[str, ...] = DEFAULT_CLASSES
    background_id: int = BACKGROUND_ID

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if len(self.classes) != N_CLASSES:
            raise FormatError(f"taxonomy needs exactly {N_CLASSES} classes, got {len(self.classes)}")
        if len(set(self.classes)) != len(self.classes):
            raise FormatError("taxonomy class names must be unique")
        if self.background_id != BACKGROUND_ID:
            raise FormatError("background id is reserved as 0")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def names(self) -> tuple[str, ...]:
        """Names indexed by id, background first."""
        return ("background",) + self.classes

    def id_of(self, name: str) -> int:
        if name == "background":
            return BACKGROUND_ID
        try:
            return self.classes.index(name) + 1
        except ValueError:
            raise FormatError(f"unknown class {name!r}") from None

    def name_of(self, class_id: int) -> str:
        return self.names[class_id]

    def to_json(self) -> dict:
        return {"classes": list(self.classes), "background_id": self.background_id}

    @classmethod
    def from_json(cls, doc: dict) -> "ClassTaxonomy":
        return cls(tuple(doc["classes"]), int(doc.get("background_id", BACKGROUND_ID)))


@dataclass(frozen=True)
class CameraModel:
    width_px: int
    height_px: int
    hfov_deg: float = DEFAULT_HFOV_DEG
    vfov_deg: float = DEFAULT_VFOV_DEG
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        for name in ("width_px", "height_px", "hfov_deg", "vfov_deg", "fps"):
            if not getattr(self, name) > 0:
                raise FormatError(f"camera {name} must be positive")

    @property
    def px_per_deg_h(self) -> float:
        return self.width_px / self.hfov_deg

    @property
    def n_pixels(self) -> int:
        return self.width_px * self.height_px

    def to_json(self) -> dict:
        return {
            "width_px": self.width_px,
            "height_px": self.height_px,
            "hfov_deg": self.hfov_deg,
            "vfov_deg": self.vfov_deg,
            "fps": self.fps,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CameraModel":
        return cls(
            int(doc["width_px"]),
            int(doc["height_px"]),
            float(doc["hfov_deg"]),
            float(doc["vfov_deg"]),
            float(doc["fps"]),
        )


def _normalize_intervals(starts: np.ndarray, ends: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # input sorted and non-overlapping; drops empties and merges touching neighbours
    keep = ends > starts
    starts, ends = starts[keep], ends[keep]
    if len(starts) > 1:
        gap = starts[1:] != ends[:-1]
        starts = starts[np.concatenate(([True], gap))]
        ends = ends[np.concatenate((gap, [True]))]
    return starts, ends


def _frozen(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.flags.writeable = False
    return a


class RleMask:
    """Binary mask as foreground intervals over the row-major pixel index."""

    __slots__ = ("width", "height", "starts", "ends", "_prefix")

    def __init__(self, width: int, height: int, starts, ends):
        if width <= 0 or height <= 0:
            raise FormatError("mask dimensions must be positive")
        starts = np.asarray(starts, dtype=np.int64)
        ends = np.asarray(ends, dtype=np.int64)
        starts, ends = _normalize_intervals(starts, ends)
        self.width = int(width)
        self.height = int(height)
        self.starts = _frozen(starts)
        self.ends = _frozen(ends)
        self._prefix = None

    @classmethod
    def from_runs(cls, width: int, height: int, runs: Sequence[int]) -> "RleMask":
        runs = np.asarray(runs, dtype=np.int64)
        if runs.ndim != 1 or len(runs) == 0:
            raise FormatError("runs must be a non-empty flat sequence")
        if (runs < 0).any():
            raise FormatError("run lengths must be non-negative")
        if int(runs.sum()) != width * height:
            raise FormatError(f"runs sum to {int(runs.sum())}, expected {width * height}")
        cum = np.cumsum(runs)
        n_fg = len(runs) // 2
        return cls(width, height, cum[0 : 2 * n_fg : 2], cum[1 : 2 * n_fg : 2])

    @classmethod
    def empty(cls, width: int, height: int) -> "RleMask":
        return cls(width, height, [], [])

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def runs(self) -> list[int]:
        """Canonical run lengths, leading background run first."""
        n = self.n_pixels
        if len(self.starts) == 0:
            return [n]
        toggles = np.empty(2 * len(self.starts), dtype=np.int64)
        toggles[0::2] = self.starts
        toggles[1::2] = self.ends
        runs = np.diff(np.concatenate(([0], toggles, [n])))
        if runs[-1] == 0:
            runs = runs[:-1]
        return runs.tolist()

    @property
    def prefix(self) -> np.ndarray:
        # foreground pixels strictly before each interval
        if self._prefix is None:
            lengths = self.ends - self.starts
            self._prefix = _frozen(np.concatenate(([0], np.cumsum(lengths)[:-1])) if len(lengths) else lengths)
        return self._prefix

    def area(self) -> int:
        return int((self.ends - self.starts).sum())

    def is_empty(self) -> bool:
        return len(self.starts) == 0

    def bbox(self) -> tuple[int, int, int, int] | None:
        """Tight inclusive box (x0, y0, x1, y1); None for an empty mask."""
        if self.is_empty():
            return None
        w = self.width
        last = self.ends - 1
        r0 = self.starts // w
        r1 = last // w
        single = r0 == r1
        y0, y1 = int(r0[0]), int(r1[-1])
        if not single.all():
            # an interval wrapping a row boundary touches both frame edges
            return (0, y0, w - 1, y1)
        return (int((self.starts % w).min()), y0, int((last % w).max()), y1)

    def indices(self) -> np.ndarray:
        """Flat row-major indices of foreground pixels."""
        lengths = self.ends - self.starts
        total = int(lengths.sum())
        if total == 0:
            return np.empty(0, dtype=np.int64)
        offsets = np.repeat(self.starts - self.prefix, lengths)
        return np.arange(total, dtype=np.int64) + offsets

    def covered_before(self, x: np.ndarray) -> np.ndarray:
        """Number of foreground pixels with index < x, elementwise."""
        x = np.asarray(x, dtype=np.int64)
        if self.is_empty():
            return np.zeros_like(x)
        idx = np.searchsorted(self.starts, x, side="right") - 1
        safe = np.maximum(idx, 0)
        partial = np.minimum(x, self.ends[safe]) - self.starts[safe]
        return np.where(idx >= 0, self.prefix[safe] + partial, 0)

    def __eq__(self, other):
        if not isinstance(other, RleMask):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.starts, other.starts)
            and np.array_equal(self.ends, other.ends)
        )

    def __hash__(self):
        return hash((self.width, self.height, self.starts.tobytes(), self.ends.tobytes()))

    def __repr__(self):
        return f"RleMask({self.width}x{self.height}, area={self.area()}, intervals={len(self.starts)})"

    def to_json(self) -> dict:
        return {"width": self.width, "height": self.height, "runs": self.runs}

    @classmethod
    def from_json(cls, doc: dict) -> "RleMask":
        return cls.from_runs(int(doc["width"]), int(doc["height"]), doc["runs"])


def rle_encode(bitmap, width: int | None = None, height: int | None = None) -> RleMask:
    """Encode a row-major boolean grid.

    ``bitmap`` is a 2-D (height, width) grid, or a flat sequence when
    ``width`` and ``height`` are given.
    """
    try:
        arr = np.asarray(bitmap, dtype=bool)
    except ValueError as exc:
        raise FormatError(f"bitmap is not a rectangular grid: {exc}") from None
    if width is not None or height is not None:
        if width is None or height is None or arr.size != width * height:
            raise FormatError("bitmap size does not match the given dimensions")
        arr = arr.reshape(height, width)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise FormatError(f"bitmap must be a non-empty 2-D grid, got shape {arr.shape}")
    h, w = arr.shape
    padded = np.concatenate(([0], arr.ravel().view(np.int8), [0]))
    d = np.diff(padded)
    return RleMask(w, h, np.flatnonzero(d == 1), np.flatnonzero(d == -1))


def rle_decode(mask: RleMask) -> np.ndarray:
    out = np.zeros(mask.n_pixels, dtype=bool)
    out[mask.indices()] = True
    return out.reshape(mask.height, mask.width)


def rle_area(mask: RleMask) -> int:
    return mask.area()


def _check_dims(a: RleMask, b: RleMask):
    if a.width != b.width or a.height != b.height:
        raise DimensionError(f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}")


def rle_intersect_count(a: RleMask, b: RleMask) -> int:
    """Exact number of pixels set in both masks."""
    _check_dims(a, b)
    if a.is_empty() or b.is_empty():
        return 0
    if len(a.starts) > len(b.starts):
        a, b = b, a
    lo, hi = b.starts[0], b.ends[-1]
    if a.starts[0] >= hi or a.ends[-1] <= lo:
        return 0
    # only intervals of a that can touch b's span
    i0 = np.searchsorted(a.ends, lo, side="right")
    i1 = np.searchsorted(a.starts, hi, side="left")
    if i1 <= i0:
        return 0
    s, e = a.starts[i0:i1], a.ends[i0:i1]
    return int((b.covered_before(e) - b.covered_before(s)).sum())


def _sweep(masks: Sequence[RleMask], need: int) -> tuple[np.ndarray, np.ndarray]:
    # intervals covered by at least `need` of the (internally disjoint) masks
    starts = np.concatenate([m.starts for m in masks])
    ends = np.concatenate([m.ends for m in masks])
    if len(starts) == 0:
        return starts, ends
    pos = np.concatenate((starts, ends))
    delta = np.concatenate((np.ones(len(starts), np.int64), -np.ones(len(ends), np.int64)))
    order = np.argsort(pos, kind="stable")
    pos = pos[order]
    depth = np.cumsum(delta[order])
    active = depth[:-1] >= need
    return pos[:-1][active], pos[1:][active]


def rle_union(masks: Sequence[RleMask], width: int | None = None, height: int | None = None) -> RleMask:
    masks = list(masks)
    if not masks:
        if width is None or height is None:
            raise FormatError("union of no masks needs explicit dimensions")
        return RleMask.empty(width, height)
    for m in masks[1:]:
        _check_dims(masks[0], m)
    if len(masks) == 1:
        return masks[0]
    s, e = _sweep(masks, 1)
    return RleMask(masks[0].width, masks[0].height, s, e)


def rle_intersection(a: RleMask, b: RleMask) -> RleMask:
    _check_dims(a, b)
    s, e = _sweep([a, b], 2)
    return RleMask(a.width, a.height, s, e)


def rle_union_area(masks: Sequence[RleMask]) -> int:
    masks = list(masks)
    if not masks:
        return 0
    for m in masks[1:]:
        _check_dims(masks[0], m)
    s, e = _sweep(masks, 1)
    return int((e - s).sum())


def _rows_to_mask(rows: np.ndarray, lo: np.ndarray, hi: np.ndarray, width: int, height: int) -> RleMask:
    # one inclusive [lo, hi] column span per row, rows ascending
    keep = (rows >= 0) & (rows < height) & (hi >= lo) & (hi >= 0) & (lo < width)
    lo = np.clip(lo, 0, width - 1)
    hi = np.clip(hi, 0, width - 1)
    rows, lo, hi = rows[keep], lo[keep], hi[keep]
    base = rows.astype(np.int64) * width
    return RleMask(width, height, base + lo, base + hi + 1)


def rasterize_disk(center: tuple[float, float], radius: float, width: int, height: int) -> RleMask:
    """Pixels (i, j) with (i - x)^2 + (j - y)^2 <= r^2, clipped to the frame."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    x, y = float(center[0]), float(center[1])
    r2 = float(radius) * float(radius)
    rows = np.arange(math.ceil(y - radius), math.floor(y + radius) + 1, dtype=np.int64)
    rows = rows[(rows >= 0) & (rows < height)]
    if len(rows) == 0:
        return RleMask.empty(width, height)
    dy2 = (rows - y) ** 2
    half = np.sqrt(np.maximum(r2 - dy2, 0.0))
    lo = np.ceil(x - half).astype(np.int64)
    hi = np.floor(x + half).astype(np.int64)
    # correct sqrt rounding against the exact inclusion test
    lo -= ((lo - 1 - x) ** 2 + dy2 <= r2).astype(np.int64)
    lo += ((lo - x) ** 2 + dy2 > r2).astype(np.int64)
    hi += ((hi + 1 - x) ** 2 + dy2 <= r2).astype(np.int64)
    hi -= ((hi - x) ** 2 + dy2 > r2).astype(np.int64)
    inside = dy2 <= r2
    return _rows_to_mask(rows[inside], lo[inside], hi[inside], width, height)


def rasterize_rect(x0: int, y0: int, x1: int, y1: int, width: int, height: int) -> RleMask:
    """Inclusive axis-aligned rectangle, clipped to the frame."""
    rows = np.arange(max(y0, 0), min(y1, height - 1) + 1, dtype=np.int64)
    n = len(rows)
    return _rows_to_mask(rows, np.full(n, x0, np.int64), np.full(n, x1, np.int64), width, height)


def rasterize_ellipse(
    center: tuple[float, float], semi_x: float, semi_y: float, width: int, height: int
) -> RleMask:
    x, y = float(center[0]), float(center[1])
    rows = np.arange(math.ceil(y - semi_y), math.floor(y + semi_y) + 1, dtype=np.int64)
    rows = rows[(rows >= 0) & (rows < height)]
    if len(rows) == 0:
        return RleMask.empty(width, height)
    t = 1.0 - ((rows - y) / semi_y) ** 2
    inside = t >= 0
    rows, t = rows[inside], t[inside]
    half = semi_x * np.sqrt(t)
    lo = np.ceil(x - half).astype(np.int64)
    hi = np.floor(x + half).astype(np.int64)
    return _rows_to_mask(rows, lo, hi, width, height)


def deg_to_px_radius(accuracy_deg: float, camera: CameraModel) -> int:
    """Angular error to a pixel radius on the horizontal scale, rounded half up."""
    if not accuracy_deg > 0:
        raise ValueError(f"accuracy must be positive, got {accuracy_deg}")
    return int(math.floor(accuracy_deg * camera.px_per_deg_h + 0.5))


@dataclass(frozen=True)
class InstanceMask:
    instance_id: int
    class_id: int
    mask: RleMask
    bbox: tuple[int, int, int, int] | None
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise FormatError(f"confidence {self.confidence} outside [0, 1]")
        if self.bbox is not None:
            object.__setattr__(self, "bbox", tuple(int(v) for v in self.bbox))
        if self.bbox != self.mask.bbox():
            raise FormatError(f"instance {self.instance_id}: bbox {self.bbox} is not the tight box {self.mask.bbox()}")

    @classmethod
    def build(cls, instance_id: int, class_id: int, mask: RleMask, confidence: float = 1.0) -> "InstanceMask":
        return cls(instance_id, class_id, mask, mask.bbox(), confidence)

    @property
    def area(self) -> int:
        return self.mask.area()


def bbox_overlap(a, b) -> bool:
    if a is None or b is None:
        return False
    return a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]


@dataclass(frozen=True)
class FrameSegmentation:
    frame_index: int
    timestamp_ms: float
    camera: CameraModel
    masks: tuple[InstanceMask, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))
        if self.frame_index < 0:
            raise FormatError("frame_index must be non-negative")
        for m in self.masks:
            if m.mask.width != self.camera.width_px or m.mask.height != self.camera.height_px:
                raise DimensionError(
                    f"frame {self.frame_index}: mask {m.instance_id} is {m.mask.width}x{m.mask.height}, "
                    f"camera is {self.camera.width_px}x{self.camera.height_px}"
                )

    @property
    def n_pixels(self) -> int:
        return self.camera.n_pixels


def frame_coverage(frame: FrameSegmentation) -> float:
    """Fraction of the frame covered by the union of all instance masks."""
    if not frame.masks:
        return 0.0
    return rle_union_area([m.mask for m in frame.masks]) / frame.n_pixels


@dataclass
class SegmentationCorpus:
    """One recording's frames plus the header that every frame shares."""

    camera: CameraModel
    taxonomy: ClassTaxonomy = field(default_factory=ClassTaxonomy)
    frames: list[FrameSegmentation] = field(default_factory=list)

    def __post_init__(self):
        self._index = None

    def by_index(self) -> dict[int, FrameSegmentation]:
        if self._index is None or len(self._index) != len(self.frames):
            self._index = {f.frame_index: f for f in self.frames}
        return self._index

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)


def corpus_to_json(corpus: SegmentationCorpus) -> dict:
    names = corpus.taxonomy.names
    frames = []
    for fr in corpus.frames:
        frames.append(
            {
                "frame_index": fr.frame_index,
                "timestamp_ms": fr.timestamp_ms,
                "masks": [
                    {
                        "instance_id": m.instance_id,
                        "class": names[m.class_id],
                        "confidence": m.confidence,
                        "bbox": list(m.bbox) if m.bbox is not None else None,
                        "rle": m.mask.to_json(),
                    }
                    for m in fr.masks
                ],
            }
        )
    return {"camera": corpus.camera.to_json(), "taxonomy": corpus.taxonomy.to_json(), "frames": frames}


def corpus_from_json(doc: dict) -> SegmentationCorpus:
    try:
        camera = CameraModel.from_json(doc["camera"])
        taxonomy = ClassTaxonomy.from_json(doc["taxonomy"])
        frames = []
        for fd in doc["frames"]:
            masks = []
            for md in fd["masks"]:
                rle = RleMask.from_json(md["rle"])
                bbox = md.get("bbox")
                masks.append(
                    InstanceMask(
                        int(md["instance_id"]),
                        taxonomy.id_of(md["class"]),
                        rle,
                        tuple(bbox) if bbox is not None else None,
                        float(md.get("confidence", 1.0)),
                    )
                )
            frames.append(FrameSegmentation(int(fd["frame_index"]), float(fd.get("timestamp_ms", 0.0)), camera, masks))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed segmentation corpus: {exc!r}") from None
    return SegmentationCorpus(camera, taxonomy, frames)


def write_corpus(corpus: SegmentationCorpus, path: str | Path):
    with open(path, "w") as fh:
        json.dump(corpus_to_json(corpus), fh, separators=(",", ":"))


def read_corpus(path: str | Path) -> SegmentationCorpus:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from None
    return corpus_from_json(doc)


def check_compatible(a: SegmentationCorpus, b: SegmentationCorpus):
    """Raise unless two corpora share camera and taxonomy headers."""
    if a.camera != b.camera:
        raise FormatError(f"camera headers differ: {a.camera} vs {b.camera}")
    if a.taxonomy != b.taxonomy:
        raise FormatError("taxonomy headers differ")


def iter_class_masks(frame: FrameSegmentation, class_id: int) -> Iterable[InstanceMask]:
    return (m for m in frame.masks if m.class_id == class_id)
