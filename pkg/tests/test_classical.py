import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from efs_depth.classical import (
    ReversalConfig,
    SparseDepth,
    detect_reversal_time,
    estimate_sparse_depth,
    majority_smooth,
    polarity_runs,
)
from efs_depth.events import EventSimConfig, EventStream, FocalSweep, simulate_events
from efs_depth.optics import LensConfig, Scene, render_focal_sweep
from efs_depth.scenes import plane_scene

SWEEP = FocalSweep(1.0, 10.0, 1.0, 64)
LENS = LensConfig()


def _plane_stream(depth, size=32, seed=0):
    frames = render_focal_sweep(plane_scene(depth, size, size, seed=seed), LENS, SWEEP)
    return simulate_events(frames, EventSimConfig(), SWEEP)


def test_monotone_sequence_has_no_reversal():
    assert detect_reversal_time(np.linspace(0.1, 0.5, 5), np.ones(5, dtype=np.int8)) is None
    assert detect_reversal_time(np.array([]), np.array([], dtype=np.int8)) is None


def test_reversal_is_midpoint_of_opposite_events():
    t = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    p = np.array([1, 1, 1, -1, -1, -1])
    assert detect_reversal_time(t, p) == pytest.approx(0.35)
    assert detect_reversal_time(t, -p) == pytest.approx(0.35)


def test_short_runs_are_not_reversals():
    t = np.array([0.1, 0.2, 0.3, 0.4])
    assert detect_reversal_time(t, np.array([1, 1, 1, -1])) is None


def test_largest_pair_wins_and_ties_go_early():
    t = np.arange(1, 13) / 10.0
    p = np.array([1, 1, -1, -1, 1, 1, 1, 1, -1, -1, -1, -1])
    # pairs: (2,2), (2,4), (4,4); the last pair is largest -> boundary between 0.8 and 0.9
    assert detect_reversal_time(t, p) == pytest.approx(0.85)
    t2 = np.arange(1, 7) / 10.0
    p2 = np.array([1, 1, -1, -1, 1, 1])
    assert detect_reversal_time(t2, p2) == pytest.approx(0.25)


def test_majority_smoothing_removes_isolated_flips():
    p = np.array([1, 1, -1, 1, 1, -1, -1, 1, -1, -1])
    np.testing.assert_array_equal(majority_smooth(p, 3), [1, 1, 1, 1, 1, -1, -1, -1, -1, -1])
    assert polarity_runs(np.array([1, 1, -1, 1])) == [(0, 2), (2, 3), (3, 4)]


@given(st.lists(st.sampled_from([-1, 1]), min_size=0, max_size=30))
def test_reversal_time_lies_between_events(pols):
    t = np.arange(len(pols), dtype=float) * 0.01 + 0.2
    r = detect_reversal_time(t, np.array(pols, dtype=np.int8))
    if r is not None:
        assert t[0] < r < t[-1]


def test_plane_at_three_metres():
    stream = _plane_stream(3.0)
    est = estimate_sparse_depth(stream)
    m = est.mask.values > 0
    assert m.sum() > 50
    err = np.abs(est.depth_map[m] - 3.0)
    assert np.mean(err <= SWEEP.step_m) >= 0.95
    # reversal time close to the focus instant 2/9 s
    assert np.median(est.depth_map[m]) == pytest.approx(3.0, abs=SWEEP.step_m)


def test_simulated_pixel_reversal_near_focus_time():
    stream = _plane_stream(5.0, size=16)
    true_t = (5.0 - 1.0) / 9.0
    frame_dt = SWEEP.duration_s / (SWEEP.num_samples - 1)
    checked = 0
    for y in range(16):
        for x in range(16):
            t, p = stream.pixel_events(x, y)
            r = detect_reversal_time(t, p)
            if r is not None:
                checked += 1
                assert abs(r - true_t) <= frame_dt
    assert checked > 10


def test_two_planes_region_medians():
    size = 32
    left = plane_scene(2.0, size, size, seed=1)
    depth = np.full((size, size), 2.0)
    depth[:, size // 2:] = 7.0
    scene = Scene(left.aif_image, depth)
    stream = simulate_events(render_focal_sweep(scene, LENS, SWEEP), EventSimConfig(), SWEEP)
    est = estimate_sparse_depth(stream)
    m = est.mask.values > 0
    # skip the columns next to the depth edge
    for cols, truth in ((slice(0, size // 2 - 4), 2.0), (slice(size // 2 + 4, size), 7.0)):
        vals = est.depth_map[:, cols][m[:, cols]]
        assert vals.size > 10
        assert np.median(vals) == pytest.approx(truth, abs=SWEEP.step_m)


def test_estimates_inside_sweep_and_shift_equivariant():
    stream = _plane_stream(6.0, size=16)
    est = estimate_sparse_depth(stream)
    vals = est.depth_map[est.mask.values > 0]
    assert np.all((vals >= 1.0) & (vals <= 10.0))
    shifted = estimate_sparse_depth(stream.shifted(3.25))
    np.testing.assert_array_equal(shifted.mask.values, est.mask.values)
    np.testing.assert_allclose(shifted.depth_map, est.depth_map, atol=1e-9)


def test_empty_stream_gives_empty_depth():
    est = estimate_sparse_depth(EventStream.empty(6, 4, SWEEP))
    assert est.depth_map.shape == (4, 6)
    assert not est.depth_map.any() and est.mask.count == 0


def test_sparse_depth_save_load(tmp_path, rng):
    d = SparseDepth.from_dense(rng.uniform(1, 10, (5, 6)), rng.random((5, 6)) < 0.5)
    d.save(tmp_path / "d.ten1", tmp_path / "m.ten1")
    back = SparseDepth.load(tmp_path / "d.ten1", tmp_path / "m.ten1")
    np.testing.assert_allclose(back.depth_map, d.depth_map, rtol=1e-6)
    np.testing.assert_array_equal(back.mask.values, d.mask.values)


def test_reversal_config_validation():
    with pytest.raises(ValueError):
        ReversalConfig(min_events_per_side=0)
    with pytest.raises(ValueError):
        ReversalConfig(smoothing_window=0)
