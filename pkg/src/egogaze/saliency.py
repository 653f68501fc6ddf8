"""Simplified Itti-Koch saliency maps, fixation scoring and AUC-Judd."""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .scene import FormatError, RleMask, rasterize_disk

PYRAMID_LEVELS = 5
CENTER_SURROUND = ((0, 2), (1, 3), (2, 4))
ORIENTATIONS_DEG = (0.0, 45.0, 90.0, 135.0)
COMBINE_LEVEL = 2
JITTER = 1e-7


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray
    degenerate: bool = False

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_array(cls, values) -> "SaliencyMap":
        """Min-max normalize to [0, 1]; a constant input becomes all zeros and is flagged."""
        v = np.asarray(values, dtype=float)
        if v.ndim != 2:
            raise FormatError(f"saliency map must be 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise FormatError("saliency map has non-finite values")
        lo, hi = v.min(), v.max()
        if hi - lo <= 0:
            return cls(np.zeros_like(v), True)
        return cls((v - lo) / (hi - lo), False)


# --- map generation ---------------------------------------------------------


def _resize(a: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    # bilinear, pixel-center aligned
    h, w = a.shape
    ys = np.clip((np.arange(shape[0]) + 0.5) * h / shape[0] - 0.5, 0, h - 1)
    xs = np.clip((np.arange(shape[1]) + 0.5) * w / shape[1] - 0.5, 0, w - 1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(a, [yy, xx], order=1, mode="nearest")


def _pyramid(a: np.ndarray, levels: int) -> list[np.ndarray]:
    out = [a]
    for _ in range(levels - 1):
        out.append(ndimage.gaussian_filter(out[-1], sigma=1.0, mode="reflect")[::2, ::2])
    return out


def _normalize(m: np.ndarray) -> np.ndarray:
    # Itti's N(): scale to [0, 1], then weight by (1 - mean of the other local maxima)^2
    lo, hi = m.min(), m.max()
    if hi - lo <= 1e-12:
        return np.zeros_like(m)
    m = (m - lo) / (hi - lo)
    peaks = (m == ndimage.maximum_filter(m, size=3, mode="constant", cval=-1.0)) & (m > 0)
    vals = m[peaks]
    others = vals[vals < 1.0]
    mbar = float(others.mean()) if len(others) else 0.0
    return m * (1.0 - mbar) ** 2


def _center_surround(pyr: list[np.ndarray], target: tuple[int, int]) -> np.ndarray:
    acc = np.zeros(target)
    for c, s in CENTER_SURROUND:
        center = pyr[c]
        diff = np.abs(center - _resize(pyr[s], center.shape))
        acc += _resize(_normalize(diff), target)
    return acc


def _as_float_image(image) -> np.ndarray:
    img = np.asarray(image)
    if np.issubdtype(img.dtype, np.integer):
        return img.astype(float) / float(np.iinfo(img.dtype).max)
    return img.astype(float)


def luminance(image) -> np.ndarray:
    img = _as_float_image(image)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] >= 3:
        return img[..., :3].mean(axis=2)
    raise FormatError(f"unsupported image shape {img.shape}")


def saliency_map(image, mode: str = "color", channels: Sequence[str] | None = None) -> SaliencyMap:
    """Saliency from intensity, color opponency (color mode) and orientation channels.

    ``channels`` restricts the channel set, e.g. ``("intensity",)``.
    """
    if mode not in ("color", "gray"):
        raise ValueError(f"mode must be 'color' or 'gray', got {mode!r}")
    img = _as_float_image(image)
    if mode == "color" and (img.ndim != 3 or img.shape[2] < 3):
        raise FormatError(f"color mode needs an RGB image, got shape {img.shape}")
    if img.ndim == 3 and img.shape[2] < 3:
        img = img[..., 0]
    if min(img.shape[:2]) < 2 ** (PYRAMID_LEVELS - 1):
        raise FormatError(f"image {img.shape[:2]} too small for a {PYRAMID_LEVELS}-level pyramid")
    wanted = set(channels) if channels is not None else {"intensity", "color", "orientation"}
    if mode == "gray":
        wanted.discard("color")

    intensity = luminance(img)
    ipyr = _pyramid(intensity, PYRAMID_LEVELS)
    target = ipyr[COMBINE_LEVEL].shape
    conspicuity = []
    if "intensity" in wanted:
        conspicuity.append(_normalize(_center_surround(ipyr, target)))
    if "color" in wanted:
        r, g, b = (img[..., k] for k in range(3))
        # hue is only meaningful where the pixel is bright enough
        scale = np.where(intensity > 0.1 * intensity.max(), 1.0 / np.maximum(intensity, 1e-12), 0.0) if intensity.max() > 0 else np.zeros_like(intensity)
        r, g, b = r * scale, g * scale, b * scale
        R = r - (g + b) / 2
        G = g - (r + b) / 2
        B = b - (r + g) / 2
        Y = (r + g) / 2 - np.abs(r - g) / 2 - b
        acc = _center_surround(_pyramid(R - G, PYRAMID_LEVELS), target)
        acc += _center_surround(_pyramid(B - Y, PYRAMID_LEVELS), target)
        conspicuity.append(_normalize(acc))
    if "orientation" in wanted:
        acc = np.zeros(target)
        for level_maps in _orientation_pyramids(ipyr):
            acc += _normalize(_center_surround(level_maps, target))
        conspicuity.append(_normalize(acc))
    if not conspicuity:
        raise ValueError("no saliency channels selected")
    total = sum(conspicuity) / len(conspicuity)
    return SaliencyMap.from_array(_resize(total, intensity.shape))


def _orientation_pyramids(ipyr: list[np.ndarray]) -> list[list[np.ndarray]]:
    grads = [(ndimage.sobel(level, axis=1), ndimage.sobel(level, axis=0)) for level in ipyr]
    out = []
    for theta in np.deg2rad(ORIENTATIONS_DEG):
        c, s = np.cos(theta), np.sin(theta)
        out.append([np.abs(c * gx + s * gy) for gx, gy in grads])
    return out


# --- map files --------------------------------------------------------------


def load_map(path: str | Path) -> SaliencyMap:
    """Read an 8- or 16-bit grayscale PNG/PGM and rescale to [0, 1]."""
    from PIL import Image

    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "I;16", "I;16B", "I", "F"):
                im = im.convert("L")
            arr = np.asarray(im, dtype=float)
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return SaliencyMap.from_array(arr)


def save_map(m: SaliencyMap, path: str | Path, bits: int = 16):
    from PIL import Image

    if bits == 8:
        Image.fromarray(np.round(m.values * 255).astype(np.uint8)).save(path)
    else:
        Image.fromarray(np.round(m.values * 65535).astype(np.uint16)).save(path)


def map_files(directory: str | Path, suffixes=(".png", ".pgm")) -> dict[int, Path]:
    """Frame index -> file, taken from the integer in each file stem."""
    out = {}
    for p in sorted(Path(directory).iterdir()):
        if p.suffix.lower() not in suffixes:
            continue
        m = re.search(r"(\d+)$", p.stem)
        if m:
            out[int(m.group(1))] = p
    return out


def load_image(path: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


# --- scoring ----------------------------------------------------------------


def fixation_score(m: SaliencyMap, region) -> float:
    """Mean map value over the region's disk pixels."""
    disk: RleMask = getattr(region, "disk", region)
    if (disk.width, disk.height) != (m.width, m.height):
        raise FormatError(f"region {disk.width}x{disk.height} does not match map {m.width}x{m.height}")
    idx = disk.indices()
    if len(idx) == 0:
        raise ValueError("empty fixation region")
    return float(m.values.ravel()[idx].mean())


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def write_csv(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "fpr", "tpr"])
            for t, f, p in zip(self.thresholds, self.fpr, self.tpr):
                w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])


def auc_judd(
    scores,
    maps,
    map_index=None,
    seed: int = 0,
    jitter: float = JITTER,
    thresholds: str = "fixations",
    fpr_mode: str = "per-frame",
) -> RocCurve:
    """ROC area with fixation scores as positives and map pixels as negatives.

    ``maps`` is one map or a sequence; ``map_index[i]`` names the map of
    fixation i. ``thresholds="fixations"`` sweeps the fixation scores;
    ``"all"`` also sweeps every map value. ``fpr_mode="per-frame"`` averages
    each fixation's own-map false-positive rate; ``"pooled"`` uses all
    referenced map pixels at once.
    """
    s = np.asarray(scores, dtype=float).ravel()
    n = len(s)
    if n == 0:
        raise ValueError("no fixation scores")
    if isinstance(maps, (SaliencyMap, np.ndarray)):
        maps = [maps]
    arrays = [np.asarray(getattr(m, "values", m), dtype=float).ravel() for m in maps]
    idx = np.zeros(n, dtype=np.int64) if map_index is None else np.asarray(map_index, dtype=np.int64)
    if len(idx) != n:
        raise ValueError("map_index length differs from scores")
    if thresholds not in ("fixations", "all"):
        raise ValueError(f"unknown threshold mode {thresholds!r}")
    if fpr_mode not in ("per-frame", "pooled"):
        raise ValueError(f"unknown fpr mode {fpr_mode!r}")

    rng = np.random.default_rng(seed)
    s = s + rng.random(n) * jitter
    used = np.unique(idx)
    weights = np.bincount(idx, minlength=len(arrays))[used] / n
    negs = [np.sort(arrays[k] + rng.random(len(arrays[k])) * jitter) for k in used]
    if fpr_mode == "pooled":
        negs = [np.sort(np.concatenate(negs))]
        weights = np.ones(1)

    thr = s if thresholds == "fixations" else np.concatenate([s, *negs])
    thr = np.unique(thr)[::-1]
    s_sorted = np.sort(s)
    tpr = (n - np.searchsorted(s_sorted, thr, side="left")) / n
    fpr = np.zeros(len(thr))
    for w, neg in zip(weights, negs):
        fpr += w * (len(neg) - np.searchsorted(neg, thr, side="left")) / len(neg)
    fpr = np.concatenate(([0.0], fpr, [1.0]))
    tpr = np.concatenate(([0.0], tpr, [1.0]))
    thr = np.concatenate(([np.inf], thr, [-np.inf]))
    return RocCurve(thr, fpr, tpr, float(np.trapezoid(tpr, fpr)))


def score_fixations(records, maps: Mapping[int, SaliencyMap]) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Per-fixation region scores for records whose frame has a map.

    Returns (scores, map_index, frame_of_map) ready for :func:`auc_judd`.
    """
    frame_keys: dict[int, int] = {}
    scores, index = [], []
    for r in records:
        if r.error is not None or r.frame_index not in maps:
            continue
        m = maps[r.frame_index]
        disk = rasterize_disk(r.fixation.point, r.radius_px, m.width, m.height)
        if disk.is_empty():
            continue
        scores.append(fixation_score(m, disk))
        index.append(frame_keys.setdefault(r.frame_index, len(frame_keys)))
    return np.array(scores), np.array(index, dtype=np.int64), list(frame_keys)
