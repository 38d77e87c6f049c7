import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from efs_depth import kernels
from efs_depth.events import (
    EventSimConfig,
    EventStream,
    FocalSweep,
    SweepRangeError,
    focal_distance_to_time,
    inject_noise,
    read_efs1,
    simulate_events,
    time_to_focal_distance,
    write_efs1,
)
from efs_depth.optics import LuminanceImage
from efs_depth.reference import reconstruction_residual, scan_events
from efs_depth.selfcheck import compare_with_scanner, event_fixture

CFG = EventSimConfig()


def _frames_from_log(log_values, times, eps=CFG.log_eps):
    """Frames whose log(J + eps) equals ``log_values`` (K, H, W)."""
    return [LuminanceImage(np.exp(v) - eps, float(t), 1.0 + i) for i, (v, t) in enumerate(zip(log_values, times))]


def test_constant_frames_give_empty_stream(backend):
    times = np.linspace(0, 1, 8)
    frames = [LuminanceImage(np.full((4, 5), 0.3), t, 1 + t) for t in times]
    assert simulate_events(frames, CFG).count == 0


def test_ramp_of_three_and_a_half_thresholds(backend):
    c = CFG.threshold_c
    times = np.linspace(0.0, 1.0, 11)
    logs = (math.log(0.2) + 3.5 * c * times)[:, None, None]
    stream = simulate_events(_frames_from_log(logs, times), CFG)
    assert stream.count == 3
    np.testing.assert_array_equal(stream.p, [1, 1, 1])
    np.testing.assert_allclose(stream.t, [1 / 3.5, 2 / 3.5, 3 / 3.5], atol=1e-12)


def test_peak_gives_positive_then_negative(backend):
    c = CFG.threshold_c
    times = np.linspace(0.0, 1.0, 21)
    # peak exactly on a level; slope of 2c per frame interval
    logs = (math.log(0.05) + 20 * c * (1 - np.abs(times - 0.5) / 0.5))[:, None, None]
    stream = simulate_events(_frames_from_log(logs, times), CFG)
    p = stream.p
    first_neg = int(np.argmax(p < 0))
    assert np.all(p[:first_neg] == 1) and np.all(p[first_neg:] == -1)
    assert 0.5 < stream.t[first_neg] <= 0.5 + (times[1] - times[0])


def test_matches_dense_scanner_on_micro_scene(backend):
    frames, _ = event_fixture(size=8, frames=16)
    same, gap, resid, stream = compare_with_scanner(frames, CFG)
    assert stream.count > 50
    assert same
    assert gap <= 1.0
    assert resid < 1.0


@settings(max_examples=30)
@given(st.lists(st.floats(-2.0, 2.0), min_size=3, max_size=12), st.floats(0.05, 0.5))
def test_random_signal_agrees_with_scanner(values, c):
    times = np.linspace(0.0, 1.0, len(values))
    cfg = EventSimConfig(threshold_c=c, log_eps=1e-9)
    frames = [LuminanceImage(np.full((1, 1), math.exp(v)), float(t), 1.0 + i)
              for i, (v, t) in enumerate(zip(values, times))]
    stream = simulate_events(frames, cfg)
    logs = np.log(np.array([f.values[0, 0] for f in frames]) + cfg.log_eps)[:, None]
    ot, op = scan_events(logs, times, c, oversample=100)[0]
    np.testing.assert_array_equal(stream.p, op)
    step = (times[1] - times[0]) / 100
    assert np.all(np.abs(stream.t - ot) <= step * (1 + 1e-9))
    assert reconstruction_residual(logs, times, c, [(stream.t, stream.p)]) < c


def test_backends_produce_identical_events(rng):
    if len(kernels.available_backends()) < 2:
        pytest.skip("compiled kernels not built")
    logs = rng.normal(0, 0.6, size=(12, 30))
    times = np.linspace(0, 1, 12)
    out = {}
    for name in kernels.available_backends():
        prev = kernels.use_backend(name)
        pix, t, p = kernels.simulate_pixels(logs, times, 0.15)
        order = np.lexsort((t, pix))
        out[name] = (pix[order], t[order], p[order])
        kernels.use_backend(prev)
    for a, b in zip(out["compiled"], out["python"]):
        np.testing.assert_array_equal(a, b)


def test_stream_sorted_in_bounds_and_deterministic():
    frames, sweep = event_fixture(size=8, frames=16)
    a = simulate_events(frames, CFG, sweep)
    b = simulate_events(frames, CFG, sweep)
    assert a == b
    assert np.all(np.diff(a.t) >= 0)
    assert a.x.min() >= 0 and a.x.max() < 8 and a.y.max() < 8
    assert sweep.t_start_s <= a.t.min() and a.t.max() <= sweep.t_end_s


def test_simulate_rejects_bad_frames():
    good = [LuminanceImage(np.ones((3, 3)), t, 1.0 + t) for t in (0.0, 0.5, 1.0)]
    with pytest.raises(ValueError):
        simulate_events(good[:2] + [LuminanceImage(np.ones((3, 4)), 1.0, 2.0)], CFG)
    with pytest.raises(ValueError):
        simulate_events([good[1], good[0], good[2]], CFG)
    with pytest.raises(ValueError):
        simulate_events(good[:1], CFG)


def test_sweep_mapping_examples():
    sweep = FocalSweep(1.0, 10.0, 1.0)
    assert time_to_focal_distance(sweep, 0.5) == pytest.approx(5.5)
    assert time_to_focal_distance(sweep, 0.0) == 1.0
    with pytest.raises(SweepRangeError):
        time_to_focal_distance(sweep, 1.5)
    with pytest.raises(SweepRangeError):
        focal_distance_to_time(sweep, 0.5)


@given(st.floats(0.0, 1.0), st.floats(-5, 5), st.floats(0.1, 3.0))
def test_sweep_mapping_round_trip(frac, t0, duration):
    sweep = FocalSweep(1.0, 10.0, duration, t_start_s=t0)
    t = t0 + frac * duration
    d = time_to_focal_distance(sweep, t)
    assert focal_distance_to_time(sweep, d) == pytest.approx(t, rel=1e-12, abs=1e-12)


def test_sweep_samples():
    sweep = FocalSweep(1.0, 10.0, 1.0, 480)
    d = sweep.sample_distances()
    assert d.shape == (480,)
    np.testing.assert_allclose(d, 1 + 9 * np.arange(480) / 479, rtol=1e-15)


def _random_stream(rng, n=300, w=7, h=5, sweep=FocalSweep()):
    t = np.sort(rng.uniform(sweep.t_start_s, sweep.t_end_s, n))
    return EventStream(rng.integers(0, w, n), rng.integers(0, h, n), t,
                       np.where(rng.random(n) < 0.5, 1, -1), w, h, sweep)


def test_noise_zero_rate_is_identity(rng):
    s = _random_stream(rng)
    assert inject_noise(s, EventSimConfig(noise_rate_hz_per_px=0.0)) is s


def test_noise_deterministic_and_count_within_poisson_bound(rng):
    s = EventStream.empty(40, 30, FocalSweep(duration_s=2.0))
    cfg = EventSimConfig(noise_rate_hz_per_px=10.0, seed=7)
    a, b = inject_noise(s, cfg), inject_noise(s, cfg)
    assert a == b
    expected = 10.0 * 2.0 * 40 * 30
    assert abs(a.count - expected) < 5 * math.sqrt(expected)
    a.validate()


def test_efs1_round_trip(tmp_path, rng):
    s = _random_stream(rng, sweep=FocalSweep(2.0, 9.0, 0.5, 2, 1.25))
    path = tmp_path / "ev.efs1"
    write_efs1(path, s)
    assert path.stat().st_size == 52 + 14 * s.count
    assert read_efs1(path) == s


def test_efs1_rejects_garbage(tmp_path):
    path = tmp_path / "bad.efs1"
    path.write_bytes(b"NOPE" + bytes(60))
    with pytest.raises(ValueError):
        read_efs1(path)


def test_stream_validation():
    sweep = FocalSweep()
    with pytest.raises(ValueError):
        EventStream([0, 0], [0, 0], [0.5, 0.1], [1, 1], 2, 2, sweep)
    with pytest.raises(ValueError):
        EventStream([2], [0], [0.5], [1], 2, 2, sweep)
    with pytest.raises(ValueError):
        EventStream([0], [0], [0.5], [0], 2, 2, sweep)
    with pytest.raises(ValueError):
        EventStream([0], [0], [1.5], [1], 2, 2, sweep)
