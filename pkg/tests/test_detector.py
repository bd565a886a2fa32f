import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikestage import detector as det
from spikestage.errors import ValidationError


def test_iir_hand_example():
    # alpha 0.5, zero start: y0 = 0.5*4 = 2, y1 = 0.5*0 + 0.5*2 = 1
    assert det.smooth([4.0, 0.0], 0.5).tolist() == [2.0, 1.0]
    y = det.iir_step(0.0, 4.0, 0.5)
    assert y == 2.0
    assert det.iir_step(y, 0.0, 0.5) == 1.0


def test_smooth_matches_streaming_loop_bitexact():
    rng = np.random.default_rng(0)
    for alpha in (0.5, 0.125, 1.0 / 1024.0, 1.0):
        x = rng.normal(size=500)
        expected = np.empty_like(x)
        y = 0.0
        for i, v in enumerate(x):
            y = det.iir_step(y, v, alpha)
            expected[i] = y
        assert np.array_equal(det.smooth(x, alpha), expected)


def test_neo_impulse():
    out = det.neo_stream([0.0, 0.0, 1.0, 0.0, 0.0])
    assert out.tolist() == [0.0, 0.0, 0.0, 1.0, 0.0]


def test_neo_hand_values():
    assert det.neo(1.0, 2.0, 3.0) == 1.0  # 4 - 3
    assert det.neo(0.0, 5.0, 0.0) == 25.0


def test_neo_sine_identity():
    # For y[n] = A*sin(omega*n + phi) the energy is the constant A^2 sin^2(omega)
    rng = np.random.default_rng(1)
    for _ in range(20):
        amp = rng.uniform(0.5, 50.0)
        omega = rng.uniform(0.05, 2.5)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        y = amp * np.sin(omega * np.arange(300) + phi)
        out = det.neo_stream(y)
        expected = amp * amp * math.sin(omega) ** 2
        assert np.max(np.abs(out[2:] - expected)) < 1e-9 * amp * amp


def test_streaming_neo_equals_batch():
    # alpha_signal = 1 makes the smoother an identity, exposing the raw
    # energy recurrence of detector_step
    cfg = det.DetectorConfig(alpha_signal=1.0)
    rng = np.random.default_rng(2)
    for _ in range(50):
        x = rng.normal(size=200)
        state = det.DetectorState()
        streamed = np.empty_like(x)
        for i, v in enumerate(x):
            det.detector_step(state, cfg, v)
            streamed[i] = state.neo_raw
        assert np.array_equal(streamed, det.neo_stream(x))


def test_trace_matches_step_loop_bitexact(recording):
    samples, _, _ = recording
    x = samples[:60000].astype(np.float64)
    cfg = det.DetectorConfig()
    trace = det.detector_trace(x, cfg)

    state = det.DetectorState()
    y_neo = np.empty_like(x)
    converged_tick = None
    frozen = 0.0
    for i, v in enumerate(x):
        det.detector_step(state, cfg, v, update_threshold_enabled=converged_tick is None)
        y_neo[i] = state.y_neo
        if converged_tick is None and state.converged:
            converged_tick = i
            frozen = state.threshold

    assert np.array_equal(y_neo, trace.y_neo)
    assert converged_tick == trace.converged_tick
    assert frozen == trace.threshold


def test_scale_covariance(recording):
    samples, _, _ = recording
    x = samples[:40000].astype(np.float64)
    s = 7.3
    cfg = det.DetectorConfig()
    t1 = det.detector_trace(x, cfg)
    t2 = det.detector_trace(s * x, cfg)
    assert np.max(np.abs(t2.y - s * t1.y)) < 1e-9 * s * np.max(np.abs(t1.y))
    scale = s * s
    assert np.max(np.abs(t2.y_neo - scale * t1.y_neo)) < 1e-9 * scale * np.max(np.abs(t1.y_neo))
    assert t2.converged_tick == t1.converged_tick
    assert abs(t2.threshold - scale * t1.threshold) < 1e-9 * scale * t1.threshold


def test_constant_energy_threshold_fixed_point():
    # a constant energy stream k drives the threshold to gain * k
    cfg = det.DetectorConfig()
    state = det.DetectorState()
    k = 42.0
    state.y_neo = k
    for _ in range(60000):
        det.threshold_update(state, cfg)
    assert state.converged
    assert abs(state.threshold - cfg.threshold_gain * k) < 1e-6 * cfg.threshold_gain * k


def test_convergence_on_noise():
    rng = np.random.default_rng(3)
    x = rng.normal(0.0, 10.0, size=30000)
    trace = det.detector_trace(x, det.DetectorConfig())
    assert trace.converged_tick is not None
    assert 4096 <= trace.converged_tick <= 20000
    assert trace.threshold > 0.0


def test_reconvergence_tracks_scale_change():
    # doubling the input scale quadruples the energy; once both phases have
    # settled, the re-converged threshold is within 10% of 4x the old one
    cfg = det.DetectorConfig()
    rng = np.random.default_rng(4)
    state = det.DetectorState()
    for v in rng.normal(0.0, 10.0, size=40000):
        det.detector_step(state, cfg, v)
    assert state.converged
    t1 = state.threshold

    det.request_reconvergence(state)
    assert not state.converged
    relatched = None
    for i, v in enumerate(rng.normal(0.0, 20.0, size=40000)):
        det.detector_step(state, cfg, v)
        if relatched is None and state.converged:
            relatched = i
    assert state.converged
    ratio = state.threshold / t1
    assert 3.6 <= ratio <= 4.4
    assert relatched + 1 >= cfg.convergence_window  # took a full quiet window


def test_detection_candidates_are_post_convergence(recording):
    samples, _, _ = recording
    trace = det.detector_trace(samples[:200000].astype(np.float64), det.DetectorConfig())
    cands = det.detection_candidates(trace)
    assert len(cands) > 0
    assert cands.min() > trace.converged_tick
    assert np.all(trace.y_neo[cands] > trace.threshold)


def test_no_candidates_without_convergence():
    trace = det.detector_trace(np.zeros(100), det.DetectorConfig())
    assert trace.converged_tick is None
    assert trace.threshold == 0.0
    assert len(det.detection_candidates(trace)) == 0


def test_config_validation():
    with pytest.raises(ValidationError):
        det.DetectorConfig(alpha_signal=0.0)
    with pytest.raises(ValidationError):
        det.DetectorConfig(alpha_neo=1.5)
    with pytest.raises(ValidationError):
        det.DetectorConfig(threshold_gain=0.0)
    with pytest.raises(ValidationError):
        det.DetectorConfig(convergence_window=0)
    with pytest.raises(ValidationError):
        det.DetectorConfig(neo_clip_ratio=1.0)
    det.DetectorConfig(neo_clip_ratio=None)  # disabled is allowed


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(min_value=-1e6, max_value=1e6), min_size=1, max_size=100),
    st.floats(min_value=0.01, max_value=1.0),
)
def test_smooth_is_bounded(xs, alpha):
    # with zero initial state the output is a convex combination of 0 and
    # the inputs, so it never exceeds the input magnitude
    y = det.smooth(np.array(xs), alpha)
    bound = max(abs(v) for v in xs) * (1.0 + 1e-12) + 1e-12
    assert np.all(np.abs(y) <= bound)
