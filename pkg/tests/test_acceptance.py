"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdicts are listed
in the "acceptance criteria" section of the terminal summary.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE, blob_bitmap
from egogaze import pipeline
from egogaze.attribution import FixationRegion, aggregate_distribution, attribute, batch_attribute, chi_square_critical, make_region
from egogaze.behavior import fit_firth_logistic, spearman, two_way_anova
from egogaze.cli import main
from egogaze.config import load_config
from egogaze.gaze import DogProfile, Fixation
from egogaze.saliency import auc_judd
from egogaze.scene import (
    CameraModel,
    FrameSegmentation,
    InstanceMask,
    frame_coverage,
    rasterize_disk,
    rle_area,
    rle_decode,
    rle_encode,
    rle_intersect_count,
    rle_union_area,
)
from egogaze.segeval import confusion_from_pairing, coverage_gap, evaluate, pair_masks
from egogaze.synth import CorruptionConfig, SynthConfig, corrupt_predictions, synth_corpus


def verdict(name: str, checks: dict[str, bool], detail: str):
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    ACCEPTANCE.append((name, ok, detail + (f" [failed: {', '.join(failed)}]" if failed else "")))
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, failed


def mann_whitney(pos, neg):
    pos, neg = np.asarray(pos, float), np.sort(np.asarray(neg, float))
    lo = np.searchsorted(neg, pos, side="left")
    hi = np.searchsorted(neg, pos, side="right")
    return float((lo + 0.5 * (hi - lo)).sum() / (len(pos) * len(neg)))


# 1 -----------------------------------------------------------------------------------------


def test_critical_value():
    crit = chi_square_critical(15, 0.05)
    times = []
    for _ in range(200):
        t0 = time.perf_counter()
        chi_square_critical(15, 0.05)
        times.append(time.perf_counter() - t0)
    ms = 1000 * float(np.median(times))
    verdict(
        "chi-square critical value",
        {"value": abs(crit - 24.996) <= 0.001, "runtime": ms < 1.0},
        f"chi2(15, 0.05) = {crit:.6f}, median {ms:.3f} ms",
    )


# 2 -----------------------------------------------------------------------------------------


def test_fixation_region_scale():
    fracs = {}
    for w, h in [(160, 120), (320, 240), (640, 480), (960, 720), (1280, 720), (1920, 1080), (3840, 2160), (4000, 3000)]:
        cam = CameraModel(w, h, 101.55, 73.60)
        prof = DogProfile.from_accuracy("d", 5.32, cam)
        reg = make_region(Fixation("d", 0, 100, (w / 2, h / 2)), prof, cam)
        fracs[(w, h)] = reg.area / (w * h)
    lo, hi = min(fracs.values()), max(fracs.values())
    verdict(
        "fixation-region scale",
        {"range": 0.008 <= lo and hi <= 0.016},
        f"area fraction {100 * lo:.3f}% .. {100 * hi:.3f}% over {len(fracs)} resolutions",
    )


# 3 -----------------------------------------------------------------------------------------


def test_attribution_matches_brute_force():
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    count_mismatch = prob_err = 0.0
    nulls = 0
    for _ in range(1000):
        w, h = int(rng.integers(8, 257)), int(rng.integers(8, 257))
        cam = CameraModel(w, h)
        bitmaps, masks = [], []
        for i in range(int(rng.integers(0, 13))):
            bm = blob_bitmap(rng, h, w)
            if bm.any():
                cid = int(rng.integers(1, 16))
                bitmaps.append((cid, bm))
                masks.append(InstanceMask.build(i + 1, cid, rle_encode(bm)))
        frame = FrameSegmentation(0, 0.0, cam, masks)
        cx, cy = rng.uniform(-10, w + 10), rng.uniform(-10, h + 10)
        r = int(rng.integers(0, max(w, h) // 3 + 1))
        got = attribute(FixationRegion((cx, cy), r, rasterize_disk((cx, cy), r, w, h)), frame)
        # brute force: test every pixel against the disk and every mask
        yy, xx = np.mgrid[:h, :w]
        disk = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        counts = np.zeros(16, dtype=np.int64)
        for cid, bm in bitmaps:
            counts[cid] += int(np.count_nonzero(bm & disk))
        if counts.sum() == 0:
            nulls += 1
            count_mismatch += not got.null
            continue
        count_mismatch += int(got.null or not np.array_equal(got.counts, counts))
        prob_err = max(prob_err, float(np.abs(got.probs - counts / counts.sum()).max()))
    secs = time.perf_counter() - t0
    verdict(
        "attribution oracle equivalence",
        {"counts": count_mismatch == 0, "probs": prob_err <= 1e-12, "runtime": secs < 60},
        f"1000 frames ({nulls} null), {int(count_mismatch)} count mismatches, max prob error {prob_err:.1e}, {secs:.1f} s",
    )


# 4 -----------------------------------------------------------------------------------------


def test_end_to_end_planted_recovery(tmp_path):
    t0 = time.perf_counter()
    ini = tmp_path / "synth.ini"
    ini.write_text("[synth]\nseed = 2024\nn_fixations = 5000\nattention_mode = marginal\n")
    assert main(["synth", "--config", str(ini), "--out-dir", str(tmp_path / "data")]) == 0
    cfg = load_config(tmp_path / "data" / "pipeline.ini")
    corpus = pipeline.load_corpus(cfg, cfg.path("frames"))
    fixations = pipeline.run_fixations(cfg, corpus.camera)
    profiles = pipeline.load_profiles(cfg, corpus.camera, [f.dog_id for f in fixations])
    records, summary = pipeline.run_attribution(cfg, fixations, corpus, profiles)
    secs = time.perf_counter() - t0
    planted = np.array(SynthConfig().attention)
    recovered = aggregate_distribution(records)[1:]
    l1 = float(np.abs(recovered - planted).sum())
    null_rate = summary.null / summary.total
    verdict(
        "end-to-end planted recovery",
        {
            "fixations": len(fixations) == 5000,
            "l1": l1 <= 0.02,
            "null rate": abs(null_rate - 0.015) <= 0.003,
            "runtime": secs < 120,
        },
        f"{len(fixations)} fixations, L1 {l1:.4f}, null rate {100 * null_rate:.2f}%, {secs:.1f} s",
    )


# 5 -----------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def seg_corpus():
    return synth_corpus(SynthConfig(seed=77, n_fixations=3000, n_dogs=2, width_px=160, height_px=120)).corpus


def test_segeval_under_planted_corruption(seg_corpus):
    swapped = corrupt_predictions(seg_corpus, CorruptionConfig(label_swap_rate=0.1), seed=5)
    total = off = 0
    for a, b in zip(seg_corpus.frames, swapped.frames):
        m = confusion_from_pairing(pair_masks(a, b)).counts
        total += int(m.sum())
        off += int(m.sum() - np.trace(m))
    swap_mass = off / total

    eroded = corrupt_predictions(seg_corpus, CorruptionConfig(erosion_keep=0.9), seed=5)
    rep = evaluate(seg_corpus, eroded)
    present = [c for c in range(1, 16) if any(m.class_id == c for f in seg_corpus.frames for m in f.masks)]
    ious = np.array([rep.class_iou[c] for c in present])
    gap = coverage_gap(seg_corpus, eroded)
    # every mask keeps round(0.9 * area) pixels and masks are disjoint, so coverage drops by 10%
    # up to half a pixel of rounding per mask
    w, h = seg_corpus.camera.width_px, seg_corpus.camera.height_px
    expected = -0.1 * gap.mean_gt
    slack = 0.5 * max(len(f.masks) for f in seg_corpus.frames) / (w * h)
    diff = gap.mean_pred - gap.mean_gt
    verdict(
        "seg-eval under planted corruption",
        {
            "swap mass": abs(swap_mass - 0.10) <= 0.01,
            "iou": bool(np.all(np.abs(ious - 0.9) <= 0.02)),
            "coverage sign": diff < 0,
            "coverage magnitude": abs(diff - expected) <= slack,
        },
        f"off-diagonal {100 * swap_mass:.2f}% of {total}, per-class IoU {ious.min():.4f}..{ious.max():.4f}, "
        f"coverage gap {diff:+.5f} (analytic {expected:+.5f})",
    )


# 6 -----------------------------------------------------------------------------------------


def test_anova_oracle():
    grid = np.array([[1.0, 2.0, 6.0], [2.0, 4.0, 7.0], [4.0, 5.0, 11.0]])
    # by hand: grand mean 42/9, row means 3, 13/3, 20/3, column means 7/3, 11/3, 8
    g = 42 / 9
    ss_dog = 3 * sum((m - g) ** 2 for m in (3, 13 / 3, 20 / 3))
    ss_class = 3 * sum((m - g) ** 2 for m in (7 / 3, 11 / 3, 8))
    ss_total = sum((v - g) ** 2 for v in grid.ravel())
    ss_err = ss_total - ss_dog - ss_class
    f_class, f_dog = (ss_class / 2) / (ss_err / 4), (ss_dog / 2) / (ss_err / 4)
    a = two_way_anova(grid)

    def rel(x, y):
        return abs(x - y) / abs(y)

    worst = max(
        rel(a.ss_dog, ss_dog), rel(a.ss_class, ss_class), rel(a.ss_total, ss_total),
        rel(a.ss_error, ss_err), rel(a.f_class, f_class), rel(a.f_dog, f_dog),
    )
    decomposition = abs(a.ss_class + a.ss_dog + a.ss_error - a.ss_total) / a.ss_total
    big = two_way_anova(np.random.default_rng(3).random((11, 15)))
    verdict(
        "ANOVA oracle",
        {
            "hand grid": worst <= 1e-9,
            "decomposition": decomposition <= 1e-12,
            "class dofs": (big.df_class, big.df_error) == (14, 140),
            "dog dofs": (big.df_dog, big.df_error) == (10, 140),
        },
        f"max relative error {worst:.1e}, decomposition residual {decomposition:.1e}, "
        f"F({big.df_class},{big.df_error}) and F({big.df_dog},{big.df_error})",
    )


# 7 -----------------------------------------------------------------------------------------


def test_firth_solver():
    worst = 0.0
    for k, n in [(0, 5), (1, 1), (3, 10), (7, 7), (12, 30), (40, 100), (99, 100)]:
        y = np.r_[np.ones(k), np.zeros(n - k)]
        fit = fit_firth_logistic(np.ones((n, 1)), y)
        worst = max(worst, abs(1 / (1 + math.exp(-fit.coef[0])) - (k + 0.5) / (n + 1)))
    sep = fit_firth_logistic(np.array([[1.0, -1.0], [1.0, 1.0]]), np.array([0.0, 1.0]))
    rng = np.random.default_rng(9)
    monotone = True
    for _ in range(50):
        n = int(rng.integers(5, 80))
        X = np.c_[np.ones(n), rng.normal(size=(n, 2))]
        h = fit_firth_logistic(X, (rng.random(n) < 0.3).astype(float)).history
        monotone &= all(b >= a for a, b in zip(h, h[1:]))
    verdict(
        "Firth solver",
        {"closed form": worst <= 1e-8, "separable finite": bool(np.all(np.isfinite(sep.coef))), "monotone": monotone},
        f"intercept-only error {worst:.1e}, separable coef {np.round(sep.coef, 4).tolist()}, 50 monotone histories",
    )


# 8 -----------------------------------------------------------------------------------------


def _naive_spearman(x, y):
    def ranks(v):
        return [sum(b < a for b in v) + (sum(b == a for b in v) + 1) / 2 for a in v]

    rx, ry = ranks(list(x)), ranks(list(y))
    n = len(rx)
    mx, my = sum(rx) / n, sum(ry) / n
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    return num / math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))


def test_spearman():
    rng = np.random.default_rng(8)
    worst = 0.0
    invariant = True
    done = 0
    while done < 1000:
        n = int(rng.integers(3, 40))
        x = rng.integers(0, 8, n).astype(float)
        y = rng.integers(0, 8, n).astype(float)
        r = spearman(x, y)
        if r.degenerate:
            continue
        done += 1
        worst = max(worst, abs(r.rho - _naive_spearman(x, y)))
        t = spearman(np.exp(x / 2), y ** 3 + y)
        invariant &= t.rho == r.rho
    verdict(
        "Spearman",
        {"oracle": worst <= 1e-12, "monotone invariance": invariant},
        f"1000 tied samples, max |rho - naive| = {worst:.1e}",
    )


# 9 -----------------------------------------------------------------------------------------


def _fixation_sweep_excess(pos, neg):
    # a chord between neighbouring fixation scores credits each negative strictly inside
    # the gap with half the multiplicity of the score just below it; ties and the tail agree
    vals, mult = np.unique(pos, return_counts=True)
    extra = 0
    for v in neg:
        if v in vals or v < vals[0]:
            continue
        extra += mult[np.searchsorted(vals, v) - 1]
    return extra / (2 * len(pos) * len(neg))


def test_auc_judd():
    rng = np.random.default_rng(10)
    sal = rng.random((120, 160))
    random_auc = auc_judd(rng.choice(sal.ravel(), 10_000), sal, seed=1).auc
    perfect = auc_judd(rng.uniform(0.95, 1.0, 500), rng.random((120, 160)) * 0.9, seed=1).auc
    worst = 0.0
    offset_ok = True
    for _ in range(200):
        m = rng.random((int(rng.integers(2, 30)), int(rng.integers(2, 30))))
        m = np.round(m, 2)  # ties between map values and fixation scores
        scores = np.round(rng.beta(2, 1.5, int(rng.integers(1, 80))), 2)
        mw = mann_whitney(scores, m.ravel())
        worst = max(worst, abs(auc_judd(scores, m, jitter=0.0, thresholds="all").auc - mw))
        # sweeping only the fixation scores differs by an exactly known chord term
        fix = auc_judd(scores, m, jitter=0.0).auc
        offset = _fixation_sweep_excess(scores, m.ravel())
        offset_ok &= abs(fix - (mw + offset)) <= 1e-12
    verdict(
        "AUC-Judd",
        {"random": abs(random_auc - 0.5) <= 0.02, "perfect": perfect >= 0.99, "Mann-Whitney": worst <= 1e-6, "chord term": offset_ok},
        f"random {random_auc:.4f}, perfect {perfect:.4f}, max |AUC - U/(n1 n0)| = {worst:.1e} over 200 inputs",
    )


# 10 ----------------------------------------------------------------------------------------


def test_rle_algebra_and_throughput():
    rng = np.random.default_rng(11)
    bad = 0
    for _ in range(10_000):
        w, h = int(rng.integers(1, 48)), int(rng.integers(1, 48))
        bms = [blob_bitmap(rng, h, w) if rng.random() < 0.8 else rng.random((h, w)) < rng.random() for _ in range(3)]
        rles = [rle_encode(b) for b in bms]
        bad += rle_area(rles[0]) != int(bms[0].sum())
        bad += rle_intersect_count(rles[0], rles[1]) != int((bms[0] & bms[1]).sum())
        bad += rle_union_area(rles) != int((bms[0] | bms[1] | bms[2]).sum())
        masks = [InstanceMask.build(i + 1, 1, r) for i, r in enumerate(rles) if r.area() > 0]
        cov = frame_coverage(FrameSegmentation(0, 0.0, CameraModel(w, h), masks))
        bad += cov != (bms[0] | bms[1] | bms[2]).sum() / (w * h)
        bad += not np.array_equal(rle_decode(rles[2]), bms[2])

    # 100k frames at 320x240: a pool of 500 distinct segmentations tiled over the frame indices
    cam = CameraModel(320, 240)
    pool = []
    for _ in range(500):
        masks = []
        for i in range(int(rng.integers(3, 13))):
            x0, y0 = rng.integers(0, 300), rng.integers(0, 220)
            bm = np.zeros((240, 320), bool)
            bm[y0:y0 + rng.integers(5, 120), x0:x0 + rng.integers(5, 160)] = True
            masks.append(InstanceMask.build(i + 1, int(rng.integers(1, 16)), rle_encode(bm)))
        pool.append(masks)
    n = 100_000
    frames = {k: FrameSegmentation(k, k * 1000 / cam.fps, cam, pool[k % len(pool)]) for k in range(n)}
    pts = rng.uniform((0, 0), (320, 240), (n, 2))
    fixes = [
        Fixation("d", k * 1000 / cam.fps, k * 1000 / cam.fps + 100, (float(pts[k, 0]), float(pts[k, 1])), (k, k))
        for k in range(n)
    ]
    prof = {"d": DogProfile.from_accuracy("d", 5.32, cam)}
    t0 = time.perf_counter()
    recs, summary = batch_attribute(fixes, frames, prof, camera=cam)
    secs = time.perf_counter() - t0
    verdict(
        "RLE algebra and throughput",
        {"oracle": bad == 0, "attributed": summary.total == n and len(recs) == n, "runtime": secs < 300},
        f"10000 cases, {bad} mismatches; {n} frames attributed in {secs:.1f} s",
    )


# 11 ----------------------------------------------------------------------------------------


def test_report_is_deterministic(tmp_path):
    ini = tmp_path / "synth.ini"
    ini.write_text(
        "[synth]\nseed = 31\nn_fixations = 300\nn_dogs = 3\nwidth_px = 160\nheight_px = 120\nrender_every = 10\n"
        "\n[corruption]\nlabel_swap_rate = 0.1\nerosion_keep = 0.9\n"
    )
    assert main(["synth", "--config", str(ini), "--out-dir", str(tmp_path / "data")]) == 0
    cfg = str(tmp_path / "data" / "pipeline.ini")
    assert main(["report", "--config", cfg, "--out-dir", str(tmp_path / "a")]) == 0
    assert main(["report", "--config", cfg, "--out-dir", str(tmp_path / "b"), "--threads", "2"]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = names == sorted(p.name for p in (tmp_path / "b").iterdir()) and all(
        (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in names
    )
    verdict("report determinism", {"byte-identical": same and "report.json" in names}, f"{len(names)} files compared: {', '.join(names)}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([str(Path(__file__)), "-v"]))
