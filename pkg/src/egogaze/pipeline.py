"""Stage wiring shared by the command line: profiles, fixations, attribution, statistics, saliency, report."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import attribution, behavior, saliency, segeval
from .config import PipelineConfig
from .gaze import (
    DogProfile,
    Fixation,
    detect_fixations,
    dispersion_deg_to_px,
    estimate_accuracy,
    read_calibration_csv,
    read_gaze_csv,
    with_frames,
)
from .scene import CameraModel, SegmentationCorpus, read_corpus

log = logging.getLogger("egogaze")


class ValidationError(ValueError):
    pass


def log_event(stage: str, level: int = logging.INFO, **fields):
    body = " ".join(f"{k}={v}" for k, v in fields.items())
    log.log(level, "stage=%s %s", stage, body)


def _require(path: Path | None, what: str) -> Path:
    if path is None:
        raise ValidationError(f"no {what} path configured")
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def load_corpus(cfg: PipelineConfig, path: Path) -> SegmentationCorpus:
    corpus = read_corpus(path)
    cfg.camera_for(corpus.camera)
    if corpus.taxonomy != cfg.taxonomy:
        raise ValidationError(f"{path}: taxonomy differs from the configured classes")
    log_event("load", path=path.name, frames=len(corpus))
    return corpus


def load_profiles(cfg: PipelineConfig, camera: CameraModel, dogs) -> dict[str, DogProfile]:
    """Profiles from configured accuracies, else from calibration files."""
    out = {}
    cal_dir = cfg.path("calibration")
    for dog in sorted(set(dogs)):
        if dog in cfg.dogs:
            acc = cfg.dogs[dog]
        else:
            cal = cal_dir / f"{dog}.csv" if cal_dir is not None else None
            if cal is None or not cal.exists():
                raise ValidationError(f"missing profile for dog {dog}: no accuracy configured and no calibration file")
            acc = estimate_accuracy(read_calibration_csv(cal), camera)
        out[dog] = DogProfile.from_accuracy(dog, acc, camera)
    return out


def run_fixations(cfg: PipelineConfig, camera: CameraModel, gaze_dir: Path | None = None) -> list[Fixation]:
    gaze_dir = _require(gaze_dir or cfg.path("gaze"), "gaze directory")
    files = sorted(gaze_dir.glob("*.csv"))
    if not files:
        raise ValidationError(f"no gaze CSV files in {gaze_dir}")
    disp = dispersion_deg_to_px(cfg.dispersion_deg, camera)
    out = []
    for p in files:
        samples = read_gaze_csv(p)
        found = detect_fixations(samples, cfg.min_duration_ms, disp, dog_id=p.stem, max_gap_ms=cfg.max_gap_ms)
        log_event("fixations", dog=p.stem, samples=len(samples), fixations=len(found))
        out.extend(with_frames(found, camera.fps))
    return out


def run_attribution(cfg: PipelineConfig, fixations, corpus: SegmentationCorpus, profiles, threads: int = 1):
    records, summary = attribution.batch_attribute(
        fixations, corpus, profiles, corpus.camera, cfg.include_background, cfg.sniffing_max_masks, threads
    )
    log_event("attribute", **summary.to_json())
    return records, summary


def _named(vec, taxonomy, skip_background=True) -> dict:
    names = taxonomy.names
    start = 1 if skip_background else 0
    return {names[i]: float(vec[i]) for i in range(start, len(names))}


def stats_report(records, corpus: SegmentationCorpus, weighted: bool) -> tuple[dict, str]:
    table = behavior.behavior_table(records, corpus, corpus.taxonomy)
    doc = {"table": table.to_json()}
    grid = table.grid("time_in_view")
    complete = ~np.isnan(grid).any(axis=1)
    if complete.sum() >= 2:
        doc["anova_time_in_view"] = behavior.two_way_anova(grid[complete]).to_json()
    else:
        doc["anova_time_in_view"] = None
    doc["regression"] = {
        "weighted": behavior.fixation_regressions(records, corpus, weighted=True),
        "unweighted": behavior.fixation_regressions(records, corpus, weighted=False),
        "default": "weighted" if weighted else "unweighted",
    }
    doc["spearman"] = behavior.size_correlations(table)
    doc["largest_object"] = behavior.largest_object_stats(records, corpus).to_json()
    log_event("stats", dogs=len(table.dogs), records=len(records))
    return doc, table.to_text()


def saliency_report(cfg: PipelineConfig, records, images_dir: Path | None, maps_dir: Path | None) -> dict | None:
    """AUC-Judd per map source; generated maps are scored in color and gray modes."""
    sources = {}
    if maps_dir is not None and maps_dir.exists():
        sources["maps"] = {k: saliency.load_map(p) for k, p in saliency.map_files(maps_dir).items()}
    if images_dir is not None and images_dir.exists():
        files = saliency.map_files(images_dir, suffixes=(".png",))
        images = {k: saliency.load_image(p) for k, p in files.items()}
        for mode in ("color", "gray"):
            sources[mode] = {k: saliency.saliency_map(img, mode) for k, img in images.items()}
    if not sources:
        return None
    out = {}
    for name, maps in sources.items():
        scores, idx, frames = saliency.score_fixations(records, maps)
        if len(scores) == 0:
            out[name] = {"n_fixations": 0}
            continue
        roc = saliency.auc_judd(
            scores, [maps[f] for f in frames], idx, seed=cfg.seed, jitter=cfg.jitter,
            thresholds=cfg.auc_thresholds, fpr_mode=cfg.fpr_mode,
        )
        pooled = saliency.auc_judd(
            scores, [maps[f] for f in frames], idx, seed=cfg.seed, jitter=cfg.jitter,
            thresholds=cfg.auc_thresholds, fpr_mode="pooled",
        )
        out[name] = {"n_fixations": int(len(scores)), "n_maps": len(frames), "auc": roc.auc, "auc_pooled_fpr": pooled.auc, "roc": roc}
        log_event("saliency", source=name, fixations=len(scores), auc=f"{roc.auc:.4f}")
    return out


@dataclass
class ManifestCheck:
    name: str
    value: float
    expected: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.value - self.expected) <= self.tolerance

    def to_json(self) -> dict:
        return {"value": self.value, "expected": self.expected, "tolerance": self.tolerance, "pass": self.passed}


def manifest_checks(manifest: dict, records, table_doc: dict | None, taxonomy) -> list[ManifestCheck]:
    tol = manifest.get("tolerances", {})
    agg = attribution.aggregate_distribution(records)
    planted = np.array([manifest["target_distribution"][n] for n in taxonomy.classes])
    checks = []
    if agg is not None:
        l1 = float(np.abs(agg[1:] - planted).sum())
        checks.append(ManifestCheck("distribution_l1", l1, 0.0, tol.get("distribution_l1", 0.02)))
    usable = [r for r in records if r.error is None]
    if usable:
        rate = sum(r.null for r in usable) / len(usable)
        checks.append(ManifestCheck("null_rate", rate, manifest["null_rate"], tol.get("null_rate_abs", 0.003)))
    if table_doc is not None:
        worst = 0.0
        for name in taxonomy.classes:
            got = table_doc["table"]["per_class"][name]["time_in_view"]["mean"]
            if got is not None:
                worst = max(worst, abs(got - manifest["time_in_view"][name]))
        checks.append(ManifestCheck("time_in_view_max_abs", worst, 0.0, tol.get("time_in_view_abs", 0.02)))
    return checks


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items() if not isinstance(v, saliency.RocCurve)}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return v if np.isfinite(v) else None
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def dump_json(doc, path: Path):
    with open(path, "w") as fh:
        json.dump(_jsonable(doc), fh, sort_keys=True, indent=1)
        fh.write("\n")


def run_report(cfg: PipelineConfig, out_dir: Path, threads: int = 1) -> dict:
    """Chain fixations, attribution, seg-eval, statistics and saliency into one document."""
    frames_path = _require(cfg.path("frames"), "frames corpus")
    corpus = load_corpus(cfg, frames_path)
    fixations = run_fixations(cfg, corpus.camera)
    profiles = load_profiles(cfg, corpus.camera, [f.dog_id for f in fixations])
    records, summary = run_attribution(cfg, fixations, corpus, profiles, threads)
    tax = corpus.taxonomy
    agg = attribution.aggregate_distribution(records)
    doc = {
        "camera": corpus.camera.to_json(),
        "profiles": {d: {"accuracy_deg": p.spatial_accuracy_deg, "radius_px": p.radius_px} for d, p in profiles.items()},
        "fixations": len(fixations),
        "attribution": summary.to_json(),
        "aggregate_distribution": None if agg is None else _named(agg, tax),
        "critical_value": attribution.chi_square_critical(cfg.dof, cfg.alpha),
    }
    text = [f"fixations: {len(fixations)}", f"attribution: {json.dumps(summary.to_json(), sort_keys=True)}"]

    pred_path = cfg.path("pred_frames")
    if pred_path is not None and pred_path.exists():
        pred = load_corpus(cfg, pred_path)
        metrics = segeval.evaluate(corpus, pred, cfg.iou_threshold)
        doc["seg_eval"] = metrics.to_json()
        cmp = attribution.compare_attributions(
            fixations, corpus, pred, profiles, cfg.chi_mode, cfg.include_background, cfg.dof, cfg.alpha
        )
        doc["chi_square"] = cmp.summary()
        text += ["", "segmentation metrics", metrics.to_text()]
        log_event("seg-eval", frames=metrics.n_frames)

    stats_doc, table_text = stats_report(records, corpus, cfg.weighted_lr)
    doc["stats"] = stats_doc
    text += ["", table_text]

    sal = saliency_report(cfg, records, cfg.path("images"), cfg.path("maps"))
    if sal is not None:
        doc["saliency"] = sal
        for name, s in sorted(sal.items()):
            if "roc" in s:
                s["roc"].write_csv(out_dir / f"roc_{name}.csv")
                text.append(f"AUC-Judd ({name}): {s['auc']:.4f}")

    man_path = cfg.path("manifest")
    if man_path is not None and man_path.exists():
        manifest = json.loads(man_path.read_text())
        checks = manifest_checks(manifest, records, stats_doc, tax)
        doc["manifest_checks"] = {c.name: c.to_json() for c in checks}
        doc["manifest_pass"] = all(c.passed for c in checks)
        text.append("")
        for c in checks:
            text.append(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.6f} (expected {c.expected:.6f} +/- {c.tolerance})")

    out_dir.mkdir(parents=True, exist_ok=True)
    attribution.write_records(records, tax, out_dir / "attribution.jsonl")
    dump_json(doc, out_dir / "report.json")
    (out_dir / "report.txt").write_text("\n".join(text) + "\n")
    return _jsonable(doc)
