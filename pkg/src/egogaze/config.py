"""Pipeline configuration in a commented INI file."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .scene import DEFAULT_CLASSES, CameraModel, ClassTaxonomy, FormatError

DEFAULT_INI = """\
# Camera geometry (degrees, frames per second).
[camera]
hfov_deg = 101.55
vfov_deg = 73.60
fps = 29.96
# width_px / height_px default to the corpus header

[taxonomy]
classes = {classes}

[fixations]
min_duration_ms = 100
dispersion_deg = 1.5
# empty: three median sample intervals
max_gap_ms =

[attribution]
# frames with this many masks or fewer are sniffing bouts
sniffing_max_masks = 2
include_background = false
chi_mode = pearson
alpha = 0.05
dof = 15

[segeval]
iou_threshold = 0.75

[stats]
weighted_lr = true

[saliency]
mode = color
thresholds = fixations
fpr_mode = per-frame
jitter = 1e-7

[run]
seed = 0
threads = 1

# Spatial accuracy per dog in degrees; dogs without an entry are
# estimated from calibration/<dog>.csv.
[dogs]

# Paths are relative to this file.
[paths]
gaze = gaze
calibration = calibration
frames = frames.json
pred_frames = pred_frames.json
images = images
maps =
manifest = manifest.json
"""


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    hfov_deg: float = 101.55
    vfov_deg: float = 73.60
    fps: float = 29.96
    width_px: int | None = None
    height_px: int | None = None
    classes: tuple[str, ...] = DEFAULT_CLASSES
    min_duration_ms: float = 100.0
    dispersion_deg: float = 1.5
    max_gap_ms: float | None = None
    sniffing_max_masks: int = 2
    include_background: bool = False
    chi_mode: str = "pearson"
    alpha: float = 0.05
    dof: int = 15
    iou_threshold: float = 0.75
    weighted_lr: bool = True
    saliency_mode: str = "color"
    auc_thresholds: str = "fixations"
    fpr_mode: str = "per-frame"
    jitter: float = 1e-7
    seed: int = 0
    threads: int = 1
    dogs: dict[str, float] = field(default_factory=dict)
    paths: dict[str, Path | None] = field(default_factory=dict)

    def validate(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        for name in ("min_duration_ms", "dispersion_deg", "iou_threshold", "dof", "hfov_deg", "vfov_deg", "fps"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.sniffing_max_masks < 0:
            raise ConfigError("sniffing_max_masks must be non-negative")
        if self.chi_mode not in ("pearson", "symmetric"):
            raise ConfigError(f"unknown chi_mode {self.chi_mode!r}")
        if self.saliency_mode not in ("color", "gray"):
            raise ConfigError(f"unknown saliency mode {self.saliency_mode!r}")
        for dog, acc in self.dogs.items():
            if not acc > 0:
                raise ConfigError(f"dog {dog}: accuracy must be positive")
        ClassTaxonomy(self.classes)

    @property
    def taxonomy(self) -> ClassTaxonomy:
        return ClassTaxonomy(self.classes)

    def camera_for(self, corpus_camera: CameraModel) -> CameraModel:
        """Check the corpus camera header against configured geometry."""
        want = (self.hfov_deg, self.vfov_deg, self.fps)
        have = (corpus_camera.hfov_deg, corpus_camera.vfov_deg, corpus_camera.fps)
        if any(abs(a - b) > 1e-9 for a, b in zip(want, have)):
            raise FormatError(f"corpus camera {have} does not match configured {want}")
        for name in ("width_px", "height_px"):
            v = getattr(self, name)
            if v is not None and v != getattr(corpus_camera, name):
                raise FormatError(f"corpus {name} {getattr(corpus_camera, name)} does not match configured {v}")
        return corpus_camera

    def path(self, key: str) -> Path | None:
        return self.paths.get(key)


def default_ini(classes=DEFAULT_CLASSES) -> str:
    return DEFAULT_INI.format(classes=", ".join(classes))


def _opt(sec, key, conv, default):
    raw = sec.get(key, fallback=None) if sec is not None else None
    if raw is None or raw.strip() == "":
        return default
    try:
        return conv(raw.strip())
    except ValueError:
        raise ConfigError(f"[{sec.name}] {key}: cannot parse {raw!r}") from None


def _bool(raw: str) -> bool:
    v = raw.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def parse_config(text: str, base_dir: str | Path = ".") -> PipelineConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # dog ids are case-sensitive
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    g = lambda s: cp[s] if cp.has_section(s) else None  # noqa: E731
    d = PipelineConfig()
    cam, fx, at, se, st, sa, run = (g(s) for s in ("camera", "fixations", "attribution", "segeval", "stats", "saliency", "run"))
    cfg = PipelineConfig(
        hfov_deg=_opt(cam, "hfov_deg", float, d.hfov_deg),
        vfov_deg=_opt(cam, "vfov_deg", float, d.vfov_deg),
        fps=_opt(cam, "fps", float, d.fps),
        width_px=_opt(cam, "width_px", int, None),
        height_px=_opt(cam, "height_px", int, None),
        classes=_opt(g("taxonomy"), "classes", lambda s: tuple(c.strip() for c in s.split(",")), d.classes),
        min_duration_ms=_opt(fx, "min_duration_ms", float, d.min_duration_ms),
        dispersion_deg=_opt(fx, "dispersion_deg", float, d.dispersion_deg),
        max_gap_ms=_opt(fx, "max_gap_ms", float, None),
        sniffing_max_masks=_opt(at, "sniffing_max_masks", int, d.sniffing_max_masks),
        include_background=_opt(at, "include_background", _bool, d.include_background),
        chi_mode=_opt(at, "chi_mode", str, d.chi_mode),
        alpha=_opt(at, "alpha", float, d.alpha),
        dof=_opt(at, "dof", int, d.dof),
        iou_threshold=_opt(se, "iou_threshold", float, d.iou_threshold),
        weighted_lr=_opt(st, "weighted_lr", _bool, d.weighted_lr),
        saliency_mode=_opt(sa, "mode", str, d.saliency_mode),
        auc_thresholds=_opt(sa, "thresholds", str, d.auc_thresholds),
        fpr_mode=_opt(sa, "fpr_mode", str, d.fpr_mode),
        jitter=_opt(sa, "jitter", float, d.jitter),
        seed=_opt(run, "seed", int, d.seed),
        threads=_opt(run, "threads", int, d.threads),
    )
    if cp.has_section("dogs"):
        for dog, raw in cp["dogs"].items():
            try:
                cfg.dogs[dog] = float(raw)
            except ValueError:
                raise ConfigError(f"[dogs] {dog}: cannot parse {raw!r}") from None
    base = Path(base_dir)
    if cp.has_section("paths"):
        for key, raw in cp["paths"].items():
            cfg.paths[key] = (base / raw.strip()) if raw.strip() else None
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"{p}: {exc.strerror}") from None
    return parse_config(text, p.parent)
