import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import blob_bitmap
from egogaze.attribution import (
    ClassDistribution,
    FixationRegion,
    NullDistributionError,
    aggregate_distribution,
    attribute,
    batch_attribute,
    chi_square_critical,
    chi_square_distance,
    goodness_of_fit,
    make_region,
    read_records,
    write_records,
)
from egogaze.gaze import DogProfile, Fixation
from egogaze.scene import (
    CameraModel,
    ClassTaxonomy,
    DimensionError,
    FrameSegmentation,
    InstanceMask,
    SegmentationCorpus,
    rasterize_disk,
    rasterize_rect,
    rle_decode,
    rle_encode,
)

CAM = CameraModel(64, 48)


def rect_region(x0, y0, x1, y1, cam=CAM):
    disk = rasterize_rect(x0, y0, x1, y1, cam.width_px, cam.height_px)
    return FixationRegion(((x0 + x1) / 2, (y0 + y1) / 2), 0, disk)


def mask(iid, cid, bitmap_or_rle):
    m = bitmap_or_rle if not isinstance(bitmap_or_rle, np.ndarray) else rle_encode(bitmap_or_rle)
    return InstanceMask.build(iid, cid, m)


def oracle_counts(region_bitmap, bitmaps_by_class, n=16):
    counts = np.zeros(n, dtype=np.int64)
    for cid, bm in bitmaps_by_class:
        for j in range(bm.shape[0]):
            for i in range(bm.shape[1]):
                if bm[j, i] and region_bitmap[j, i]:
                    counts[cid] += 1
    return counts


# --- regions -------------------------------------------------------------------


def test_radius_zero_region_is_one_pixel():
    r = make_region(Fixation("d", 0, 100, (10, 10)), DogProfile("d", 0.01, 0), CAM)
    assert r.area == 1
    off = make_region(Fixation("d", 0, 100, (0.0, 0.5)), DogProfile("d", 0.01, 0), CAM)
    assert off.area == 1


def test_default_accuracy_region_near_one_percent():
    cam = CameraModel(960, 720)
    prof = DogProfile.from_accuracy("d", 5.32, cam)
    r = make_region(Fixation("d", 0, 100, (480, 360)), prof, cam)
    assert 0.008 <= r.area / cam.n_pixels <= 0.016


@pytest.mark.parametrize("acc", [1.0, 2.0, 3.0, 4.0])
def test_doubled_accuracy_quadruples_area(acc):
    cam = CameraModel(1920, 1440)
    a = make_region(Fixation("d", 0, 100, (960, 720)), DogProfile.from_accuracy("d", acc, cam), cam)
    b = make_region(Fixation("d", 0, 100, (960, 720)), DogProfile.from_accuracy("d", 2 * acc, cam), cam)
    assert b.area / a.area == pytest.approx(4.0, rel=0.03)


@given(st.floats(-5, 70), st.floats(-5, 55), st.integers(0, 20))
def test_region_area_bound(x, y, r):
    reg = make_region(Fixation("d", 0, 100, (x, y)), DogProfile("d", 1.0, r), CAM)
    assert reg.area <= math.pi * (r + 1) ** 2
    if 0 <= x < CAM.width_px and 0 <= y < CAM.height_px:
        assert reg.area > 0


# --- attribute -----------------------------------------------------------------------


def test_region_inside_single_mask():
    cam = CameraModel(64, 48)
    frame = FrameSegmentation(0, 0.0, cam, [mask(1, 7, rasterize_rect(0, 0, 63, 47, 64, 48))])
    d = attribute(rect_region(10, 10, 20, 20), frame)
    assert d.probs[7] == 1.0 and d.probs.sum() == 1.0


def test_three_class_construction():
    # region: 30 x 10 = 300 px; A covers 150 of them, B 100, C 50
    reg = rect_region(10, 10, 39, 19)
    masks = [
        mask(1, 1, rasterize_rect(0, 0, 24, 47, 64, 48)),   # x 10..24 -> 15 cols
        mask(2, 2, rasterize_rect(25, 0, 34, 47, 64, 48)),  # x 25..34 -> 10 cols
        mask(3, 3, rasterize_rect(35, 0, 60, 47, 64, 48)),  # x 35..39 -> 5 cols
    ]
    frame = FrameSegmentation(0, 0.0, CAM, masks)
    d = attribute(reg, frame)
    assert reg.area == 300
    assert d.probs[1] == pytest.approx(0.5, abs=1e-12)
    assert d.probs[2] == pytest.approx(1 / 3, abs=1e-12)
    assert d.probs[3] == pytest.approx(1 / 6, abs=1e-12)
    oracle = oracle_counts(rle_decode(reg.disk), [(m.class_id, rle_decode(m.mask)) for m in masks])
    assert np.array_equal(d.counts, oracle)


def test_no_overlap_is_null():
    frame = FrameSegmentation(0, 0.0, CAM, [mask(1, 4, rasterize_rect(50, 40, 60, 45, 64, 48))])
    d = attribute(rect_region(0, 0, 5, 5), frame)
    assert d.null and np.isnan(d.probs).all()
    # still null with background on: nothing but background was hit
    assert attribute(rect_region(0, 0, 5, 5), frame, include_background=True).null


def test_overlapping_instances_count_twice():
    a = mask(1, 2, rasterize_rect(0, 0, 9, 9, 64, 48))
    b = mask(2, 2, rasterize_rect(0, 0, 9, 9, 64, 48))
    c = mask(3, 5, rasterize_rect(10, 0, 19, 9, 64, 48))
    d = attribute(rect_region(0, 0, 19, 9), FrameSegmentation(0, 0.0, CAM, [a, b, c]))
    assert d.counts[2] == 200 and d.counts[5] == 100
    assert d.probs[2] == pytest.approx(2 / 3)


def test_include_background():
    m = mask(1, 3, rasterize_rect(0, 0, 4, 9, 64, 48))
    d = attribute(rect_region(0, 0, 9, 9), FrameSegmentation(0, 0.0, CAM, [m]), include_background=True)
    assert d.probs[0] == pytest.approx(0.5) and d.probs[3] == pytest.approx(0.5)


def test_dimension_mismatch():
    frame = FrameSegmentation(0, 0.0, CameraModel(32, 32), [])
    with pytest.raises(DimensionError):
        attribute(rect_region(0, 0, 3, 3), frame)


def _random_frame(rng, cam, n_masks):
    masks = []
    for i in range(n_masks):
        bm = blob_bitmap(rng, cam.height_px, cam.width_px)
        if bm.any():
            masks.append(mask(i + 1, int(rng.integers(1, 16)), bm))
    return FrameSegmentation(0, 0.0, cam, masks)


def test_random_frames_match_pixel_oracle(rng):
    cam = CameraModel(24, 18)
    yy, xx = np.mgrid[:18, :24]
    for _ in range(150):
        frame = _random_frame(rng, cam, int(rng.integers(0, 6)))
        cx, cy, r = rng.uniform(-3, 27), rng.uniform(-3, 21), int(rng.integers(0, 9))
        reg = FixationRegion((cx, cy), r, rasterize_disk((cx, cy), r, 24, 18))
        region_bm = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        counts = oracle_counts(region_bm, [(m.class_id, rle_decode(m.mask)) for m in frame.masks])
        d = attribute(reg, frame)
        if counts.sum() == 0:
            assert d.null
        else:
            assert np.allclose(d.probs, counts / counts.sum(), atol=1e-12)
            assert d.probs.sum() == pytest.approx(1.0, abs=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_relabeling_is_equivariant(seed):
    rng = np.random.default_rng(seed)
    cam = CameraModel(20, 16)
    frame = _random_frame(rng, cam, 4)
    reg = FixationRegion((10, 8), 5, rasterize_disk((10, 8), 5, 20, 16))
    perm = np.r_[0, rng.permutation(15) + 1]
    relabeled = FrameSegmentation(0, 0.0, cam, [mask(m.instance_id, int(perm[m.class_id]), m.mask) for m in frame.masks])
    a, b = attribute(reg, frame), attribute(reg, relabeled)
    assert a.null == b.null
    if not a.null:
        assert np.allclose(b.probs[perm], a.probs)


def test_scale_consistency():
    small = CameraModel(80, 60)
    big = CameraModel(160, 120)
    rects = [(2, 5, 30, 40, 3), (25, 10, 60, 25, 8), (40, 30, 79, 59, 11)]
    fs = FrameSegmentation(0, 0.0, small, [mask(i + 1, c, rasterize_rect(a, b, x, y, 80, 60)) for i, (a, b, x, y, c) in enumerate(rects)])
    fb = FrameSegmentation(0, 0.0, big, [
        mask(i + 1, c, rasterize_rect(2 * a, 2 * b, 2 * x + 1, 2 * y + 1, 160, 120)) for i, (a, b, x, y, c) in enumerate(rects)
    ])
    ds = attribute(FixationRegion((35, 28), 15, rasterize_disk((35, 28), 15, 80, 60)), fs)
    db = attribute(FixationRegion((70.5, 56.5), 30, rasterize_disk((70.5, 56.5), 30, 160, 120)), fb)
    assert np.abs(ds.probs - db.probs).max() <= 0.02


# --- chi-square ------------------------------------------------------------------------


def test_chi_square_examples():
    assert chi_square_distance([1, 0], [0.5, 0.5]) == pytest.approx(1.0)
    p = ClassDistribution.from_counts([0, 2, 3])
    assert chi_square_distance(p, p) == 0.0
    assert chi_square_distance([0.5, 0.5], [1.0, 0.0]) == pytest.approx(0.25 + 0.25 / 1e-6)
    assert chi_square_distance([1, 0], [0, 1], mode="symmetric") == pytest.approx(2.0)


def test_chi_square_errors():
    with pytest.raises(NullDistributionError):
        chi_square_distance(ClassDistribution.null_of(3), [1, 0, 0])
    with pytest.raises(ValueError):
        chi_square_distance([1, 0], [1, 0, 0])
    with pytest.raises(ValueError):
        chi_square_distance([1, 0], [1, 0], mode="other")


def test_chi_square_vs_second_implementation(rng):
    q = np.full(16, 1 / 16)
    for _ in range(1000):
        p = rng.dirichlet(np.ones(16) * rng.uniform(0.1, 3))
        expected = 0.0
        for pi, qi in zip(p, q):
            expected += (pi - qi) * (pi - qi) / qi
        assert chi_square_distance(p, q) == pytest.approx(expected, rel=1e-12)


_cells = st.lists(st.integers(0, 1000).map(lambda k: k / 1000), min_size=4, max_size=4)


@given(_cells, _cells)
def test_chi_square_nonnegative_and_zero_iff_equal_on_support(a, b):
    p, q = np.array(a), np.array(b)
    d = chi_square_distance(p, q)
    assert d >= 0
    if d == 0:
        assert np.array_equal(p[q > 0], q[q > 0])
    assert chi_square_distance(p, q, "symmetric") == pytest.approx(chi_square_distance(q, p, "symmetric"))


def test_critical_values():
    assert chi_square_critical(15, 0.05) == pytest.approx(24.996, abs=1e-3)
    assert chi_square_critical(1, 0.05) == pytest.approx(3.841, abs=1e-3)
    assert chi_square_critical(1, 1 - 1e-9) < 1e-12
    seq = [chi_square_critical(15, a) for a in (0.5, 0.9, 0.99, 0.999999)]
    assert all(a > b for a, b in zip(seq, seq[1:]))
    for bad in [(0, 0.05), (1.5, 0.05), (3, 0.0), (3, 1.0)]:
        with pytest.raises(ValueError):
            chi_square_critical(*bad)


def test_goodness_of_fit_boundary():
    assert goodness_of_fit(1.0).accept
    crit = chi_square_critical(15, 0.05)
    at = goodness_of_fit(crit)
    assert not at.accept and at.margin == 0.0
    assert not goodness_of_fit(30).accept
    with pytest.raises(ValueError):
        goodness_of_fit(-1)


@given(st.integers(1, 60), st.floats(0.001, 0.999))
def test_zero_distance_always_accepts(dof, alpha):
    assert goodness_of_fit(0.0, dof, alpha).accept


# --- batch ------------------------------------------------------------------------------


def _corpus(rng, n_frames, cam=CAM):
    frames = []
    for k in range(n_frames):
        n = int(rng.integers(0, 7))
        masks = []
        for i in range(n):
            x0, x1 = sorted(int(v) for v in rng.integers(0, 64, 2))
            masks.append(mask(i + 1, int(rng.integers(1, 16)), rasterize_rect(x0, 0, x1, 47, 64, 48)))
        frames.append(FrameSegmentation(k, k * 1000 / cam.fps, cam, masks))
    return SegmentationCorpus(cam, ClassTaxonomy(), frames)


def _fixations(rng, n, n_frames):
    out = []
    for _ in range(n):
        k = int(rng.integers(0, n_frames + 5))
        t = (k + 0.5) * 1000 / CAM.fps
        out.append(Fixation(str(rng.choice(["a", "b"])), t, t + 120, tuple(rng.uniform(0, 64, 2) * [1, 0.75])))
    return out


def test_batch_accounting_and_threads(rng):
    corpus = _corpus(rng, 40)
    fx = _fixations(rng, 300, 40)
    profiles = {"a": DogProfile("a", 3.0, 4), "b": DogProfile("b", 5.0, 7)}
    recs, s = batch_attribute(fx, corpus, profiles)
    recs4, s4 = batch_attribute(fx, corpus, profiles, threads=4)
    assert s.to_json() == s4.to_json()
    assert s.total == 300 and s.missing_frame > 0 and s.sniffing_removed > 0
    assert s.null + s.retained + s.missing_frame + s.sniffing_removed == s.total
    assert len(recs) == s.total - s.sniffing_removed
    for r, r4 in zip(recs, recs4):
        assert r.fixation == r4.fixation and r.distribution == r4.distribution
        assert np.array_equal(r.occupancy, r4.occupancy)
        assert ((r.occupancy >= 0) & (r.occupancy <= 1)).all()
    assert all(r.error == "missing frame" for r in recs if r.frame_index is None)


def test_batch_all_inside_gives_no_nulls():
    masks = [mask(1, 9, rasterize_rect(0, 0, 63, 47, 64, 48)), mask(2, 1, rasterize_rect(0, 0, 5, 5, 64, 48)),
             mask(3, 2, rasterize_rect(60, 0, 63, 5, 64, 48))]
    corpus = SegmentationCorpus(CAM, ClassTaxonomy(), [FrameSegmentation(0, 0.0, CAM, masks)])
    fx = [Fixation("a", 0, 100, (float(x), 20.0)) for x in range(0, 64, 4)]
    _, s = batch_attribute(fx, corpus, {"a": DogProfile("a", 2.0, 3)})
    assert s.null == 0 and s.retained == len(fx)


def test_batch_unknown_dog():
    corpus = _corpus(np.random.default_rng(0), 2)
    with pytest.raises(KeyError):
        batch_attribute([Fixation("zz", 0, 100, (1, 1))], corpus, {})


def test_aggregate_skips_nulls_and_errors():
    assert aggregate_distribution([]) is None


def test_records_roundtrip(tmp_path, rng):
    corpus = _corpus(rng, 10)
    fx = _fixations(rng, 40, 10)
    profiles = {"a": DogProfile("a", 3.0, 4), "b": DogProfile("b", 5.0, 7)}
    recs, _ = batch_attribute(fx, corpus, profiles, sniffing_max_masks=None)
    path = tmp_path / "r.jsonl"
    write_records(recs, corpus.taxonomy, path)
    back = read_records(path, corpus.taxonomy)
    assert len(back) == len(recs)
    for a, b in zip(recs, back):
        assert a.null == b.null and a.frame_index == b.frame_index and a.error == b.error
        if not a.null:
            assert np.allclose(a.distribution.probs, b.distribution.probs)
        assert np.allclose(a.occupancy, b.occupancy)
    agg_a, agg_b = aggregate_distribution(recs), aggregate_distribution(back)
    assert np.allclose(agg_a, agg_b)
    assert agg_a.sum() == pytest.approx(1.0)
