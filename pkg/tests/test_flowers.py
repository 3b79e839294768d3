import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vineseg import flowers as F
from vineseg.synthetic import disk_scene, render_disks
from oracles import select_reference


def ring_edges(r=10, c=(50, 50), shape=(101, 101), keep=None):
    dy, dx, ang = F.arc_offsets(r)
    if keep is not None:
        sel = keep(ang)
        dy, dx, ang = dy[sel], dx[sel], ang[sel]
    return F.EdgeMap.from_points(shape, c[0] + dx, c[1] + dy, ang)


def one_radius(r, gamma=math.pi / 8):
    return F.DetectorParams(r_min=r, r_max=r, gamma=gamma)


# -- local contrast normalization ----------------------------------------------------

def test_lcn_constant_image_is_mid_gray():
    np.testing.assert_array_equal(F.local_contrast_normalize(np.full((20, 30), 77.0)), 127.5)


def test_lcn_ignores_brightness_offset(rng):
    img = rng.uniform(0, 200, (40, 40))
    np.testing.assert_allclose(F.local_contrast_normalize(img), F.local_contrast_normalize(img + 50), atol=1e-9)


def test_lcn_ignores_contrast_scaling():
    yy, xx = np.mgrid[0:48, 0:48]
    board = np.where((yy // 6 + xx // 6) % 2 == 0, 100.0, 140.0)
    stretched = 2 * (board - board.mean()) + board.mean()
    diff = F.local_contrast_normalize(board) - F.local_contrast_normalize(stretched)
    assert np.max(np.abs(diff)) <= 1.0


def test_lcn_output_range(rng):
    out = F.local_contrast_normalize(rng.uniform(0, 255, (30, 30)))
    assert out.min() == pytest.approx(0) and out.max() == pytest.approx(255)


# -- canny --------------------------------------------------------------------------

def test_canny_constant_image_has_no_edges():
    assert F.canny_edges(np.full((20, 20), 9.0), 10, 20).count == 0


def test_canny_vertical_step_gives_single_line():
    img = np.zeros((30, 30))
    img[:, 15:] = 200.0
    e = F.canny_edges(img, 120, 300)
    cols = np.unique(np.nonzero(e.edge)[1])
    assert len(cols) == 1
    assert e.edge[:, cols[0]].all()
    d = e.direction[e.edge]
    assert np.all(np.abs(np.angle(np.exp(1j * d))) <= 0.1)


def test_canny_disk_edges_lie_on_its_circle():
    img = render_disks(np.array([[40.0, 40.0, 10.0]]), 80, 80)
    e = F.canny_edges(img, 120, 300)
    ys, xs = np.nonzero(e.edge)
    assert len(ys) > 40
    assert np.all(np.abs(np.hypot(xs - 40, ys - 40) - 10) <= 1.5)


def test_canny_directions_in_half_open_range(rng):
    e = F.canny_edges(rng.uniform(0, 255, (40, 40)), 50, 200)
    d = e.direction[e.edge]
    assert np.all((d > -np.pi) & (d <= np.pi))
    assert np.all(np.isnan(e.direction[~e.edge]))


def test_canny_hysteresis_keeps_weak_pixels_connected_to_strong():
    img = np.zeros((20, 40))
    img[:, 20:] = (200 - 8 * np.arange(20))[:, None]  # step fades from strong to weak
    img[:, 32:] += 40  # an isolated weak step
    e = F.canny_edges(img, 100, 500)
    cols = np.nonzero(e.edge)[1]
    assert e.edge.sum(axis=0).max() == 20  # the fading step survives whole
    assert np.all(cols < 25)
    assert F.canny_edges(img, 100, 10_000).count == 0


# -- ROI -----------------------------------------------------------------------------

def test_mask_edges_roi_cases():
    e = ring_edges()
    assert F.mask_edges(e, np.ones_like(e.edge)).edge.tobytes() == e.edge.tobytes()
    assert F.mask_edges(e, np.zeros_like(e.edge)).count == 0
    half = np.zeros_like(e.edge)
    half[:, :50] = True
    assert F.mask_edges(e, half).count == e.edge[:, :50].sum()
    with pytest.raises(ValueError):
        F.mask_edges(e, np.ones((3, 3), bool))


# -- voting --------------------------------------------------------------------------

@pytest.mark.parametrize("r", [1, 5, 10, 25])
def test_arc_offsets_unique_ring(r):
    dy, dx, _ = F.arc_offsets(r)
    assert len(set(zip(dy.tolist(), dx.tolist()))) == len(dy)
    d = np.hypot(dx, dy)
    assert np.all((d >= r - 0.5) & (d < r + 0.5))


def test_empty_edges_give_zero_accumulator():
    e = F.EdgeMap(np.zeros((30, 30), bool), np.full((30, 30), np.nan))
    acc = F.cht_vote(e, F.DetectorParams(r_min=3, r_max=5))
    assert acc.planes.shape == (3, 30, 30) and not acc.planes.any()
    assert not F.normalize_votes(acc).planes.any()


def test_full_circle_peaks_at_center():
    acc = F.cht_vote(ring_edges(), F.DetectorParams(r_min=8, r_max=12))
    k, y, x = np.unravel_index(np.argmax(acc.planes), acc.planes.shape)
    assert (acc.radii[k], y, x) == (10, 50, 50)


def test_full_window_center_count_equals_edge_count():
    e = ring_edges()
    acc = F.cht_vote(e, one_radius(10, gamma=math.pi))
    assert acc.planes[0, 50, 50] == e.count


def test_full_circle_scores_near_one():
    acc = F.normalize_votes(F.cht_vote(ring_edges(), one_radius(10)))
    assert acc.planes[0, 50, 50] >= 0.85


def test_half_circle_scores_near_half():
    e = ring_edges(keep=lambda a: a >= 0)
    acc = F.normalize_votes(F.cht_vote(e, one_radius(10)))
    assert acc.planes[0, 50, 50] == pytest.approx(0.5, abs=0.1)


def test_opposite_gradient_votes_the_same():
    e = ring_edges()
    flipped = F.EdgeMap(e.edge, np.where(e.edge, np.angle(np.exp(1j * (e.direction + np.pi))), np.nan))
    a = F.cht_vote(e, one_radius(10)).planes
    b = F.cht_vote(flipped, one_radius(10)).planes
    np.testing.assert_array_equal(a, b)


# -- candidates and selection ---------------------------------------------------------

def _acc(cells, shape=(20, 20), radii=(8, 9)):
    planes = np.zeros((len(radii),) + shape)
    for k, y, x, v in cells:
        planes[k, y, x] = v
    return F.HoughAccumulator(radii, planes)


def test_extract_candidates_threshold():
    assert F.extract_candidates(_acc([]), 0.5) == []
    assert F.extract_candidates(_acc([(1, 3, 4, 0.9)]), 0.5) == [F.Circle(4, 3, 9, 0.9)]
    out = F.extract_candidates(_acc([(0, 1, 1, 0.9), (1, 5, 5, 0.6)]), 0.7)
    assert len(out) == 1 and out[0].score == 0.9


def test_extract_candidates_order_is_score_then_radius_row_col():
    out = F.extract_candidates(_acc([(1, 2, 2, 0.5), (0, 3, 1, 0.5), (0, 2, 9, 0.5), (0, 2, 3, 0.8)]), 0.4)
    assert [(c.cx, c.cy, c.r) for c in out] == [(3, 2, 8), (9, 2, 8), (1, 3, 8), (2, 2, 9)]


def test_select_concentric_keeps_best():
    out = F.select_circles([F.Circle(30, 30, 10, 0.9), F.Circle(30, 30, 12, 0.8)], 60, 60)
    assert out == [F.Circle(30, 30, 10, 0.9)]


def test_select_distant_keeps_both():
    c = [F.Circle(20, 30, 10, 0.9), F.Circle(60, 30, 10, 0.8)]
    assert F.select_circles(c, 100, 60) == c


def _random_candidates(rng, n, w, h):
    cx = rng.integers(0, w, n)
    cy = rng.integers(0, h, n)
    r = rng.integers(3, 15, n)
    s = np.round(rng.random(n), 2)
    order = np.lexsort((cx, cy, r, -s))
    return [F.Circle(int(cx[i]), int(cy[i]), int(r[i]), float(s[i])) for i in order]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 60), st.floats(1.0, 2.5))
def test_select_matches_reference(seed, n, a):
    rng = np.random.default_rng(seed)
    cands = _random_candidates(rng, n, 80, 70)
    out = F.select_circles(cands, 80, 70, a)
    assert out == select_reference(cands, 80, 70, a)
    for i, ci in enumerate(out):
        for cj in out[i + 1:]:
            assert math.hypot(cj.cx - ci.cx, cj.cy - ci.cy) > a * ci.r


# -- end to end -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def scene():
    return disk_scene(3, n=12, width=240, height=240)


def test_detect_recovers_synthetic_disks(scene):
    img, gt = scene
    found = F.detect_flowers(img, np.ones(img.shape, bool))
    assert abs(len(found) - len(gt)) <= 1
    for cx, cy, r in gt:
        d = [math.hypot(c.cx - cx, c.cy - cy) for c in found]
        j = int(np.argmin(d))
        assert d[j] <= 2 and abs(found[j].r - r) <= 2
    assert all(0 <= c.score <= 1 and 8 <= c.r <= 25 for c in found)


def test_detect_all_false_roi(scene):
    img, _ = scene
    assert F.detect_flowers(img, np.zeros(img.shape, bool)) == []


def test_detect_matches_staged_pipeline(scene):
    img, _ = scene
    p = F.DetectorParams()
    roi = np.ones(img.shape, bool)
    roi[:, 150:] = False
    edges = F.mask_edges(F.canny_edges(F.local_contrast_normalize(img, p.lcn_window), p.canny_low, p.canny_high), roi)
    acc = F.normalize_votes(F.cht_vote(edges, p))
    cands = F.restrict_to_roi(F.extract_candidates(acc, p.vote_threshold), roi)
    staged = F.select_circles(cands, 240, 240, p.occupancy_factor)
    assert F.detect_flowers(img, roi, p) == staged


def test_detections_stay_inside_roi():
    img, _ = disk_scene(0, n=25, width=400, height=400)
    roi = np.zeros(img.shape, bool)
    roi[:, :200] = True
    found = F.detect_flowers(img, roi)
    assert found and all(c.cx < 200 for c in found)


def test_restrict_to_roi():
    roi = np.zeros((10, 10), bool)
    roi[2:5, 2:5] = True
    cs = [F.Circle(3, 3, 2, 0.9), F.Circle(7, 3, 2, 0.8), F.Circle(-1, 3, 2, 0.7)]
    assert F.restrict_to_roi(cs, roi) == cs[:1]


def test_raising_threshold_never_adds(scene):
    img, _ = scene
    roi = np.ones(img.shape, bool)
    prev = None
    for t in (0.25, 0.33, 0.5, 0.7):
        out = set(F.detect_flowers(img, roi, F.DetectorParams(vote_threshold=t)))
        if prev is not None:
            assert out <= prev
        prev = out


def test_translation_equivariance(scene):
    img, _ = scene
    p = F.DetectorParams()
    edges = F.canny_edges(F.local_contrast_normalize(img), p.canny_low, p.canny_high)

    def run(e):
        acc = F.normalize_votes(F.cht_vote(e, p))
        return F.select_circles(F.extract_candidates(acc, p.vote_threshold), 300, 300)

    big = np.zeros((300, 300), bool)
    big_dir = np.full((300, 300), np.nan)
    big[:240, :240], big_dir[:240, :240] = edges.edge, edges.direction
    base = run(F.EdgeMap(big, big_dir))
    moved = run(F.EdgeMap(np.roll(big, (17, 23), (0, 1)), np.roll(big_dir, (17, 23), (0, 1))))
    assert [(c.cx + 23, c.cy + 17, c.r, c.score) for c in base] == [tuple(c) for c in moved]


def test_params_validation():
    with pytest.raises(ValueError):
        F.DetectorParams(r_min=10, r_max=5)
    with pytest.raises(ValueError):
        F.DetectorParams(gamma=0)
    with pytest.raises(ValueError):
        F.DetectorParams(vote_threshold=1.5)
    with pytest.raises(ValueError):
        F.DetectorParams(lcn_window=4)


def test_circles_csv_roundtrip(tmp_path):
    cs = [F.Circle(10, 12, 9, 0.75), F.Circle(3, 4, 25, 1.0)]
    F.write_circles(tmp_path / "c.csv", cs)
    assert F.read_circles(tmp_path / "c.csv") == cs
    (tmp_path / "bad.csv").write_text("cx,cy,r,score\n1,2,3,0.5\n1,2,x,0.5\n")
    with pytest.raises(ValueError, match=r"bad\.csv:3"):
        F.read_circles(tmp_path / "bad.csv")


def test_draw_circles_marks_outline():
    img = np.zeros((40, 40, 3), np.uint8)
    out = F.draw_circles(img, [F.Circle(20, 20, 10, 1.0)])
    assert out[20, 10].tolist() == [255, 255, 0] and not out[20, 20].any()
    assert not img.any()
