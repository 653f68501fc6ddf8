"""Seeded synthetic walks: scenes with planted availability and sizes, a planted attention
policy driving gaze streams, calibration records and prediction corruption."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, optimize

from .gaze import (
    DEFAULT_DISPERSION_DEG,
    CalibrationObservation,
    Fixation,
    GazeSample,
    align_to_frames,
    write_calibration_csv,
    write_gaze_csv,
)
from .scene import (
    DEFAULT_CLASSES,
    N_CLASSES,
    CameraModel,
    ClassTaxonomy,
    FrameSegmentation,
    InstanceMask,
    SegmentationCorpus,
    deg_to_px_radius,
    rle_decode,
    rle_encode,
    write_corpus,
)

# Per-class defaults, in taxonomy order: fraction of fixation frames with the class
# in view, per-instance size (fraction of frame) mean and sd, and the conditional
# rate of fixating the class while it is in view.
TABLE_TIME_IN_VIEW = (0.033, 0.024, 0.878, 0.008, 0.299, 0.011, 0.885, 0.389, 0.616, 0.934, 0.168, 0.008, 0.037, 0.013, 0.838)
TABLE_SIZE_MEAN = (0.010, 0.031, 0.145, 0.187, 0.027, 0.044, 0.336, 0.131, 0.180, 0.212, 0.022, 0.012, 0.015, 0.028, 0.075)
TABLE_SIZE_SD = (0.003, 0.010, 0.051, 0.063, 0.010, 0.022, 0.091, 0.058, 0.064, 0.065, 0.011, 0.012, 0.013, 0.027, 0.033)
TABLE_TIME_FIXATED = (0.012, 0.099, 0.144, 0.348, 0.064, 0.145, 0.381, 0.157, 0.174, 0.269, 0.027, 0.077, 0.036, 0.049, 0.070)

OBJECTS_MEAN = 5.03
OBJECTS_SD = 1.14
OBJECTS_RANGE = (3, 12)
ACCURACY_MEAN_DEG = 5.32
MAX_SCENE_TRIES = 1000


class SynthError(ValueError):
    pass


@dataclass
class CorruptionConfig:
    label_swap_rate: float = 0.0
    erosion_keep: float = 1.0  # fraction of each mask's area kept
    spurious_rate: float = 0.0  # chance per frame of one extra false instance
    drop_rate: float = 0.0
    confidence_low: float = 1.0  # confidences drawn uniformly from [low, 1]

    def validate(self):
        for name in ("label_swap_rate", "spurious_rate", "drop_rate", "confidence_low"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SynthError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.erosion_keep <= 1.0:
            raise SynthError(f"erosion_keep must lie in (0, 1], got {self.erosion_keep}")

    @property
    def is_identity(self) -> bool:
        return (
            self.label_swap_rate == 0 and self.erosion_keep == 1 and self.spurious_rate == 0
            and self.drop_rate == 0 and self.confidence_low == 1
        )


@dataclass
class SynthConfig:
    seed: int = 0
    n_fixations: int = 5000
    n_dogs: int = 11
    width_px: int = 320
    height_px: int = 240
    hfov_deg: float = 101.55
    vfov_deg: float = 73.60
    fps: float = 29.96
    availability: tuple = TABLE_TIME_IN_VIEW
    size_mean: tuple = TABLE_SIZE_MEAN
    size_sd: tuple = TABLE_SIZE_SD
    attention: tuple | None = None  # defaults to TABLE_TIME_FIXATED, normalized
    # "conditional": weights over the classes in view; "marginal": exact target shares
    attention_mode: str = "conditional"
    null_rate: float = 0.015
    count_mode: bool = False  # draw the object count, then classes, instead of per-class coins
    count_mean: float = OBJECTS_MEAN
    count_sd: float = OBJECTS_SD
    min_objects: int = 3
    accuracy_mean_deg: float = ACCURACY_MEAN_DEG
    accuracy_sd_deg: float = 0.8
    dispersion_deg: float = DEFAULT_DISPERSION_DEG
    fixation_ms: tuple = (100.0, 600.0)
    invalid_saccade_rate: float = 0.2
    render_every: int = 0  # write an RGB image for every n-th frame (0 = none)
    corruption: CorruptionConfig | None = field(default_factory=CorruptionConfig)

    def __post_init__(self):
        if isinstance(self.corruption, dict):
            self.corruption = CorruptionConfig(**self.corruption)
        self.availability = tuple(float(v) for v in self.availability)
        self.size_mean = tuple(float(v) for v in self.size_mean)
        self.size_sd = tuple(float(v) for v in self.size_sd)
        self.fixation_ms = tuple(float(v) for v in self.fixation_ms)
        att = TABLE_TIME_FIXATED if self.attention is None else self.attention
        att = np.asarray(att, dtype=float)
        if self.attention is None:
            att = att / att.sum()
        self.attention = tuple(float(v) for v in att)

    @property
    def camera(self) -> CameraModel:
        return CameraModel(self.width_px, self.height_px, self.hfov_deg, self.vfov_deg, self.fps)

    def validate(self):
        k = N_CLASSES
        for name in ("availability", "size_mean", "size_sd", "attention"):
            if len(getattr(self, name)) != k:
                raise SynthError(f"{name} needs {k} values")
        if any(not 0.0 <= p <= 1.0 for p in self.availability):
            raise SynthError("availability probabilities must lie in [0, 1]")
        if any(not 0.0 <= p <= 1.0 for p in self.attention) or abs(sum(self.attention) - 1.0) > 1e-9:
            raise SynthError("attention must be a probability vector summing to 1")
        for c, (m, s) in enumerate(zip(self.size_mean, self.size_sd)):
            if not 0.0 < m <= 1.0 or s < 0:
                raise SynthError(f"size of {DEFAULT_CLASSES[c]} ({m}) must lie in (0, 1] of the frame")
        if self.attention_mode not in ("conditional", "marginal"):
            raise SynthError(f"attention_mode must be 'conditional' or 'marginal', got {self.attention_mode!r}")
        if not 0.0 <= self.null_rate < 1.0:
            raise SynthError("null_rate must lie in [0, 1)")
        if self.n_fixations < 1 or self.n_dogs < 1:
            raise SynthError("need at least one fixation and one dog")
        lo, hi = self.fixation_ms
        if not 100.0 <= lo <= hi:
            raise SynthError("fixation durations must be at least 100 ms")
        if not self.count_mode and sum(p > 0 for p in self.availability) < self.min_objects:
            raise SynthError(f"fewer than {self.min_objects} classes can appear; scenes are infeasible")
        if self.count_mode and not (OBJECTS_RANGE[0] <= self.count_mean <= OBJECTS_RANGE[1]):
            raise SynthError("count_mean outside the supported object-count range")
        if self.corruption is not None:
            self.corruption.validate()
        self.camera  # validates geometry

    def to_json(self) -> dict:
        d = asdict(self)
        d["corruption"] = None if self.corruption is None else asdict(self.corruption)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise SynthError(f"unknown synth config keys: {sorted(extra)}")
        return cls(**doc)


def count_distribution(mean: float = OBJECTS_MEAN, sd: float = OBJECTS_SD, support=OBJECTS_RANGE) -> tuple[np.ndarray, np.ndarray]:
    """Distribution on the integer support with the requested mean and sd (log-quadratic family)."""
    k = np.arange(support[0], support[1] + 1, dtype=float)
    z = (k - mean) / sd

    def probs(theta):
        logits = theta[0] * z + theta[1] * z * z
        p = np.exp(logits - logits.max())
        return p / p.sum()

    def moments(theta):
        p = probs(theta)
        m = (p * k).sum()
        return [m - mean, np.sqrt((p * (k - m) ** 2).sum()) - sd]

    sol = optimize.root(moments, [0.0, -0.5], method="hybr")
    if not sol.success or max(abs(v) for v in moments(sol.x)) > 1e-9:
        raise SynthError(f"no count distribution on {support} with mean {mean} and sd {sd}")
    return k.astype(np.int64), probs(sol.x)


# --- scene drawing ----------------------------------------------------------


@dataclass(frozen=True)
class Shape:
    class_id: int
    kind: str  # "rect" | "ellipse"
    cx: float
    cy: float
    half_w: float
    half_h: float

    @property
    def area(self) -> float:
        w, h = 2 * self.half_w, 2 * self.half_h
        return w * h if self.kind == "rect" else math.pi * self.half_w * self.half_h


def _draw(label: np.ndarray, shape: Shape, value: int):
    h, w = label.shape
    x0 = max(0, int(math.ceil(shape.cx - shape.half_w)))
    x1 = min(w - 1, int(math.floor(shape.cx + shape.half_w)))
    y0 = max(0, int(math.ceil(shape.cy - shape.half_h)))
    y1 = min(h - 1, int(math.floor(shape.cy + shape.half_h)))
    if x1 < x0 or y1 < y0:
        return
    if shape.kind == "rect":
        label[y0 : y1 + 1, x0 : x1 + 1] = value
        return
    yy, xx = np.ogrid[y0 : y1 + 1, x0 : x1 + 1]
    inside = ((xx - shape.cx) / shape.half_w) ** 2 + ((yy - shape.cy) / shape.half_h) ** 2 <= 1.0
    label[y0 : y1 + 1, x0 : x1 + 1][inside] = value


def _count_pmf(q: np.ndarray) -> np.ndarray:
    # distribution of the number of successes among independent coins q
    d = np.zeros(len(q) + 1)
    d[0] = 1.0
    for p in q:
        d[1:] = d[1:] * (1.0 - p) + d[:-1] * p
        d[0] *= 1.0 - p
    return d


def calibrated_coins(availability, min_objects: int, iters: int = 200) -> np.ndarray:
    """Per-class coin probabilities whose marginals, given at least ``min_objects`` heads, equal ``availability``."""
    a = np.asarray(availability, dtype=float)
    q = a.copy()
    for _ in range(iters):
        total = _count_pmf(q)[min_objects:].sum()
        cond = np.array([
            q[c] * _count_pmf(np.delete(q, c))[max(min_objects - 1, 0):].sum() / total for c in range(len(q))
        ])
        ratio = np.divide(a, cond, out=np.ones_like(a), where=cond > 0)
        q_new = np.clip(q * ratio, 0.0, 1.0)
        if np.max(np.abs(q_new - q)) < 1e-13:
            break
        q = q_new
    return q


class _SceneSampler:
    def __init__(self, cfg: SynthConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.w, self.h = cfg.width_px, cfg.height_px
        self.avail = np.asarray(cfg.availability)
        self.coins = calibrated_coins(self.avail, cfg.min_objects) if not cfg.count_mode else self.avail
        if cfg.count_mode:
            self.count_support, self.count_p = count_distribution(cfg.count_mean, cfg.count_sd)

    def _classes(self) -> list[int]:
        rng = self.rng
        if not self.cfg.count_mode:
            return [c + 1 for c in np.flatnonzero(rng.random(N_CLASSES) < self.coins)]
        n = int(rng.choice(self.count_support, p=self.count_p))
        weights = self.avail / self.avail.sum()
        if (weights > 0).sum() < n:
            raise SynthError(f"count mode needs {n} distinct classes with positive availability")
        return sorted(int(c) + 1 for c in rng.choice(N_CLASSES, size=n, replace=False, p=weights))

    def _shape(self, class_id: int, min_half: float = 0.0) -> Shape:
        """A shape of the class; with ``min_half`` both half-axes are at least that long."""
        if min_half <= 0:
            return self._draw_shape(class_id)
        for _ in range(200):
            s = self._draw_shape(class_id)
            if min(s.half_w, s.half_h) >= min_half:
                return s
        # far in the size tail: grow the last draw to the smallest admissible shape
        hw, hh = max(s.half_w, min_half), max(s.half_h, min_half)
        hw, hh = min(hw, self.w / 2), min(hh, self.h / 2)
        cx = float(np.clip(s.cx, hw - 0.5, self.w - hw - 0.5))
        cy = float(np.clip(s.cy, hh - 0.5, self.h - hh - 0.5))
        return Shape(class_id, s.kind, cx, cy, hw, hh)

    def _draw_shape(self, class_id: int) -> Shape:
        rng = self.rng
        c = class_id - 1
        m, s = self.cfg.size_mean[c], self.cfg.size_sd[c]
        frac = float(np.clip(rng.normal(m, s), 0.002, 0.9))
        area = frac * self.w * self.h
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        aspect = float(np.exp(rng.uniform(np.log(0.5), np.log(2.0))))
        if kind == "rect":
            hw = math.sqrt(area * aspect) / 2
            hh = area / (4 * hw)
        else:
            hw = math.sqrt(area * aspect / math.pi)
            hh = area / (math.pi * hw)
        # keep the shape inside the frame, stretching the other side to hold the area
        if hw > self.w / 2:
            hw = self.w / 2
            hh = area / (4 * hw) if kind == "rect" else area / (math.pi * hw)
        if hh > self.h / 2:
            hh = self.h / 2
            hw = min(self.w / 2, area / (4 * hh) if kind == "rect" else area / (math.pi * hh))
        cx = rng.uniform(hw - 0.5, self.w - hw - 0.5) if self.w > 2 * hw else (self.w - 1) / 2
        cy = rng.uniform(hh - 0.5, self.h - hh - 0.5) if self.h > 2 * hh else (self.h - 1) / 2
        return Shape(class_id, kind, cx, cy, hw, hh)

    def scene(self, require: int | None = None, min_half: float = 0.0) -> tuple[np.ndarray, list[Shape]]:
        """Label image (0 = uncovered, k = k-th shape) with every drawn shape still visible.

        ``require`` forces one instance of that class, drawn with half-axes of at least ``min_half``.
        """
        for _ in range(MAX_SCENE_TRIES):
            classes = self._classes()
            if require is not None:
                if require in classes:
                    classes.remove(require)
                classes = [require] + classes
            if len(classes) < self.cfg.min_objects:
                continue
            drawn = [self._shape(c, min_half if k == 0 and require is not None else 0.0) for k, c in enumerate(classes)]
            shapes = sorted(drawn, key=lambda s: -s.area)
            label = np.zeros((self.h, self.w), dtype=np.int16)
            for k, s in enumerate(shapes, start=1):
                _draw(label, s, k)
            visible = np.bincount(label.ravel(), minlength=len(shapes) + 1)[1:]
            if (visible > 0).all():
                return label, shapes
        raise SynthError("could not draw a scene satisfying the object constraints")


def _frame_from_label(label: np.ndarray, shapes: list[Shape], frame_index: int, camera: CameraModel) -> FrameSegmentation:
    masks = []
    for k, s in enumerate(shapes, start=1):
        masks.append(InstanceMask.build(k, s.class_id, rle_encode(label == k)))
    return FrameSegmentation(frame_index, frame_index * 1000.0 / camera.fps, camera, masks)


def _interior(mask: np.ndarray, margin: float) -> np.ndarray:
    # flat indices of pixels farther than `margin` from any pixel outside `mask`
    # (the frame border counts as outside)
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return np.empty(0, dtype=np.int64)
    y0, y1, x0, x1 = ys.min(), ys.max(), xs.min(), xs.max()
    crop = np.pad(mask[y0 : y1 + 1, x0 : x1 + 1], 1)
    dist = ndimage.distance_transform_edt(crop)[1:-1, 1:-1]
    iy, ix = np.nonzero(dist > margin)
    return (iy + y0) * mask.shape[1] + (ix + x0)


# --- gaze -------------------------------------------------------------------


@dataclass
class SynthResult:
    config: SynthConfig
    corpus: SegmentationCorpus
    predicted: SegmentationCorpus | None
    gaze: dict[str, list[GazeSample]]
    calibration: dict[str, list[CalibrationObservation]]
    manifest: dict
    images: dict[int, np.ndarray]


PALETTE = np.array(
    [
        (128, 128, 128), (150, 90, 40), (30, 30, 200), (170, 120, 110), (230, 200, 20),
        (200, 30, 30), (250, 140, 0), (90, 90, 90), (220, 170, 140), (60, 160, 60),
        (20, 110, 30), (200, 200, 200), (160, 40, 160), (240, 240, 240), (0, 200, 200), (130, 190, 250),
    ],
    dtype=np.uint8,
)


def render_image(label: np.ndarray, shapes: list[Shape]) -> np.ndarray:
    lut = np.zeros((len(shapes) + 1, 3), dtype=np.uint8)
    lut[0] = PALETTE[0]
    for k, s in enumerate(shapes, start=1):
        lut[k] = PALETTE[s.class_id]
    return lut[label]


def _calibration(rng, accuracy_deg: float, camera: CameraModel) -> list[CalibrationObservation]:
    # five anchors, 20 frames; every estimate sits exactly accuracy_deg away
    w, h = camera.width_px, camera.height_px
    anchors = [(w / 2, h / 2), (w / 4, h / 4), (3 * w / 4, h / 4), (w / 4, 3 * h / 4), (3 * w / 4, 3 * h / 4)]
    err_px = accuracy_deg * camera.px_per_deg_h
    out = []
    for i in range(20):
        kx, ky = anchors[i % 5]
        theta = rng.uniform(0, 2 * math.pi)
        out.append(CalibrationObservation((kx, ky), (kx + err_px * math.cos(theta), ky + err_px * math.sin(theta)), i))
    return out


def _saccade_point(rng, a, b, far: float, w: int, h: int) -> tuple[float, float]:
    for _ in range(1000):
        x, y = rng.uniform(0, w - 1), rng.uniform(0, h - 1)
        if all(p is None or max(abs(x - p[0]), abs(y - p[1])) > far for p in (a, b)):
            return x, y
    raise SynthError("frame too small to place saccade samples")


def synth_corpus(cfg: SynthConfig) -> SynthResult:
    cfg.validate()
    camera = cfg.camera
    rng = np.random.default_rng(cfg.seed)
    sampler = _SceneSampler(cfg, rng)
    w, h = camera.width_px, camera.height_px
    period = 1000.0 / cfg.fps
    n = cfg.n_fixations

    dogs = [f"dog{i + 1:02d}" for i in range(cfg.n_dogs)]
    accuracy = {
        d: float(np.clip(rng.normal(cfg.accuracy_mean_deg, cfg.accuracy_sd_deg), 3.6, 7.0)) if cfg.accuracy_sd_deg > 0 else cfg.accuracy_mean_deg
        for d in dogs
    }
    calibration = {d: _calibration(rng, accuracy[d], camera) for d in dogs}
    radius = {d: deg_to_px_radius(accuracy[d], camera) for d in dogs}
    # contiguous blocks of fixations per dog
    owner = [dogs[min(i * cfg.n_dogs // n, cfg.n_dogs - 1)] for i in range(n)]
    n_null = int(round(n * cfg.null_rate))
    null_slots = set(rng.choice(n, size=n_null, replace=False).tolist()) if n_null else set()
    attention = np.asarray(cfg.attention)
    planned = [None] * n
    if cfg.attention_mode == "marginal":
        slots = [i for i in range(n) if i not in null_slots]
        quota = _largest_remainder(attention, len(slots))
        order = rng.permutation(np.repeat(np.arange(1, N_CLASSES + 1), quota))
        for i, c in zip(slots, order):
            planned[i] = int(c)
    far = cfg.dispersion_deg * camera.px_per_deg_h + 2.0

    frames, targets, points, images = [], [], [], {}
    gaze = {d: [] for d in dogs}
    k = 0  # global sample clock
    prev_point = None
    for i in range(n):
        dog = owner[i]
        margin = radius[dog] + 1.5
        for _ in range(MAX_SCENE_TRIES):
            if planned[i] is not None:
                label, shapes = sampler.scene(require=planned[i], min_half=margin + 2.0)
                target = planned[i]
                cand = _interior(np.isin(label, [k for k, s in enumerate(shapes, start=1) if s.class_id == target]), margin)
                if len(cand):
                    break
                continue
            label, shapes = sampler.scene()
            if i in null_slots:
                cand = _interior(label == 0, margin)
                target = None
            else:
                by_class = {}
                for idx, s in enumerate(shapes, start=1):
                    by_class.setdefault(s.class_id, []).append(idx)
                options = [c for c in sorted(by_class) if attention[c - 1] > 0]
                areas = np.bincount(label.ravel(), minlength=len(shapes) + 1)
                min_area = math.pi * margin * margin
                options = [c for c in options if areas[by_class[c]].sum() > min_area]
                # draw from the attention weights, discarding classes with no room for the region;
                # this samples exactly the attention restricted to feasible classes
                target, cand = None, np.empty(0, dtype=np.int64)
                while options:
                    p = attention[np.array(options) - 1]
                    pick = int(options[rng.choice(len(options), p=p / p.sum())])
                    cand = _interior(np.isin(label, by_class[pick]), margin)
                    if len(cand):
                        target = pick
                        break
                    options.remove(pick)
            if len(cand):
                break
        else:
            raise SynthError(f"fixation {i}: no scene offers a valid gaze target")
        flat = int(cand[rng.integers(len(cand))])
        point = (float(flat % w), float(flat // w))

        # saccade between fixations of one dog
        if i > 0 and owner[i - 1] == dog:
            for _ in range(int(rng.integers(1, 3))):
                sx, sy = _saccade_point(rng, prev_point, point, far, w, h)
                valid = bool(rng.random() >= cfg.invalid_saccade_rate)
                gaze[dog].append(GazeSample(round(k * period, 3), round(sx, 3), round(sy, 3), valid))
                k += 1
        elif i > 0:
            k += 30  # a new recording session
        duration = rng.uniform(*cfg.fixation_ms)
        n_samples = int(math.ceil(duration / period)) + 1
        start = round(k * period, 3)
        for _ in range(n_samples):
            jx, jy = rng.uniform(-0.5, 0.5, 2)
            gaze[dog].append(GazeSample(round(k * period, 3), round(point[0] + jx, 3), round(point[1] + jy, 3), True))
            k += 1
        end = round((k - 1) * period, 3)
        frame_index = align_to_frames(Fixation(dog, start, end, point), cfg.fps)[0]
        frames.append(_frame_from_label(label, shapes, frame_index, camera))
        if cfg.render_every and i % cfg.render_every == 0:
            images[frame_index] = render_image(label, shapes)
        targets.append(target)
        points.append(point)
        prev_point = point

    corpus = SegmentationCorpus(camera, ClassTaxonomy(), frames)
    predicted = None
    if cfg.corruption is not None:
        predicted = corrupt_predictions(corpus, cfg.corruption, cfg.seed + 1)
    manifest = _manifest(cfg, corpus, targets, owner, accuracy, radius)
    return SynthResult(cfg, corpus, predicted, gaze, calibration, manifest, images)


def _largest_remainder(p: np.ndarray, total: int) -> np.ndarray:
    raw = np.asarray(p, dtype=float) * total
    out = np.floor(raw).astype(np.int64)
    short = total - int(out.sum())
    if short > 0:
        out[np.argsort(-(raw - out), kind="stable")[:short]] += 1
    return out


def _manifest(cfg, corpus, targets, owner, accuracy, radius) -> dict:
    names = ClassTaxonomy().names
    n = len(targets)
    hits = [t for t in targets if t is not None]
    hist = np.bincount(np.array(hits, dtype=np.int64), minlength=N_CLASSES + 1)[1:] / max(len(hits), 1)
    in_view = np.zeros(N_CLASSES)
    counts = []
    sizes = {c: [] for c in range(1, N_CLASSES + 1)}
    for fr in corpus.frames:
        present = set()
        for m in fr.masks:
            present.add(m.class_id)
            sizes[m.class_id].append(m.area / fr.n_pixels)
        for c in present:
            in_view[c - 1] += 1
        counts.append(len(fr.masks))
    return {
        "seed": cfg.seed,
        "config": cfg.to_json(),
        "n_fixations": n,
        "n_frames": len(corpus.frames),
        "null_fixations": n - len(hits),
        "null_rate": (n - len(hits)) / n,
        "attention": {names[c + 1]: cfg.attention[c] for c in range(N_CLASSES)},
        "attention_mode": cfg.attention_mode,
        "target_distribution": {names[c + 1]: float(hist[c]) for c in range(N_CLASSES)},
        "targets": [None if t is None else names[t] for t in targets],
        "fixation_dogs": owner,
        "time_in_view": {names[c + 1]: float(in_view[c] / len(corpus.frames)) for c in range(N_CLASSES)},
        "size_in_view": {names[c]: (float(np.mean(v)) if v else None) for c, v in sizes.items()},
        "objects_per_frame": {"mean": float(np.mean(counts)), "sd": float(np.std(counts, ddof=1)) if len(counts) > 1 else 0.0},
        "dogs": {d: {"accuracy_deg": accuracy[d], "radius_px": radius[d]} for d in sorted(accuracy)},
        "tolerances": {"distribution_l1": 0.02, "null_rate_abs": 0.003, "time_in_view_abs": 0.02},
    }


# --- corruption -------------------------------------------------------------


def erode_to(bitmap: np.ndarray, keep: int) -> np.ndarray:
    """Keep the ``keep`` pixels deepest inside the mask (ties by raster order)."""
    flat = np.flatnonzero(bitmap)
    if keep >= len(flat):
        return bitmap.copy()
    ys, xs = np.nonzero(bitmap)
    y0, x0 = ys.min(), xs.min()
    crop = np.pad(bitmap[y0 : ys.max() + 1, x0 : xs.max() + 1], 1)
    depth = ndimage.distance_transform_edt(crop)[1:-1, 1:-1][ys - y0, xs - x0]
    order = np.argsort(-depth, kind="stable")[:keep]
    out = np.zeros(bitmap.size, dtype=bool)
    out[flat[order]] = True
    return out.reshape(bitmap.shape)


def corrupt_predictions(gt: SegmentationCorpus, params: CorruptionConfig, seed: int = 0) -> SegmentationCorpus:
    """Predicted corpus derived from ground truth with planted error processes.

    Every mask consumes the same random draws whatever the rates, so
    changing one rate never reshuffles the others.
    """
    params.validate()
    rng = np.random.default_rng(seed)
    cam = gt.camera
    out = []
    for fr in gt.frames:
        masks = []
        next_id = max((m.instance_id for m in fr.masks), default=0) + 1
        for m in fr.masks:
            u_drop, u_swap, u_conf = rng.random(3)
            swap_to = int(rng.integers(1, N_CLASSES))  # offset to a different class
            if u_drop < params.drop_rate:
                continue
            cls = m.class_id
            if u_swap < params.label_swap_rate:
                cls = (m.class_id - 1 + swap_to) % N_CLASSES + 1
            mask = m.mask
            if params.erosion_keep < 1.0:
                keep = int(round(params.erosion_keep * m.area))
                if keep < 1:
                    continue
                mask = rle_encode(erode_to(rle_decode(mask), keep))
            conf = 1.0 if params.confidence_low >= 1.0 else float(params.confidence_low + (1.0 - params.confidence_low) * u_conf)
            masks.append(InstanceMask.build(m.instance_id, cls, mask, conf))
        u_spur = rng.random()
        spur_class = int(rng.integers(1, N_CLASSES + 1))
        fx, fy, fw, fh = rng.random(4)
        if u_spur < params.spurious_rate:
            bw, bh = max(1, int(cam.width_px * (0.03 + 0.07 * fw))), max(1, int(cam.height_px * (0.03 + 0.07 * fh)))
            x0, y0 = int(fx * (cam.width_px - bw)), int(fy * (cam.height_px - bh))
            bitmap = np.zeros((cam.height_px, cam.width_px), dtype=bool)
            bitmap[y0 : y0 + bh, x0 : x0 + bw] = True
            conf = 1.0 if params.confidence_low >= 1.0 else float(params.confidence_low + (1.0 - params.confidence_low) * fw)
            masks.append(InstanceMask.build(next_id, spur_class, rle_encode(bitmap), conf))
        out.append(FrameSegmentation(fr.frame_index, fr.timestamp_ms, cam, masks))
    return SegmentationCorpus(cam, gt.taxonomy, out)


# --- output -----------------------------------------------------------------


def write_synth(result: SynthResult, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    (out / "gaze").mkdir(parents=True, exist_ok=True)
    (out / "calibration").mkdir(exist_ok=True)
    paths = {"frames": out / "frames.json", "manifest": out / "manifest.json"}
    write_corpus(result.corpus, paths["frames"])
    if result.predicted is not None:
        paths["pred_frames"] = out / "pred_frames.json"
        write_corpus(result.predicted, paths["pred_frames"])
    for dog, samples in result.gaze.items():
        write_gaze_csv(samples, out / "gaze" / f"{dog}.csv")
        write_calibration_csv(result.calibration[dog], out / "calibration" / f"{dog}.csv")
    paths["gaze"] = out / "gaze"
    paths["calibration"] = out / "calibration"
    if result.images:
        from PIL import Image

        (out / "images").mkdir(exist_ok=True)
        for idx, img in sorted(result.images.items()):
            Image.fromarray(img).save(out / "images" / f"{idx:06d}.png")
        paths["images"] = out / "images"
    with open(paths["manifest"], "w") as fh:
        json.dump(result.manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return paths


def _ini_value(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", ""):
        return None
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        pass
    if "," in raw:
        return [float(v) for v in raw.split(",") if v.strip()]
    if raw.isidentifier():
        return raw
    raise SynthError(f"cannot parse synth config value {raw!r}")


def synth_config_from_ini(text: str) -> SynthConfig:
    """``[synth]`` keys of :class:`SynthConfig`; an optional ``[corruption]`` section."""
    import configparser

    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SynthError(str(exc)) from None
    doc = {k: _ini_value(v) for k, v in cp["synth"].items()} if cp.has_section("synth") else {}
    if cp.has_section("corruption"):
        doc["corruption"] = {k: _ini_value(v) for k, v in cp["corruption"].items()}
        unknown = set(doc["corruption"]) - set(CorruptionConfig.__dataclass_fields__)
        if unknown:
            raise SynthError(f"unknown corruption keys: {sorted(unknown)}")
    try:
        return SynthConfig.from_json(doc)
    except TypeError as exc:
        raise SynthError(str(exc)) from None
