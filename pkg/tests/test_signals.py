import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dqadmit import (
    DqSignal,
    FrequencyResponse,
    TimeSeries,
    extract_phasor,
    inverse_park,
    nrmse_fit_percent,
    nrmse_percent,
    park,
    remove_dc_offset,
)
from dqadmit.errors import (
    AboveNyquist,
    DegenerateReference,
    EmptyBaselineWindow,
    InvalidParameters,
    NonCoherentWindow,
)

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)
angle = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)


def test_park_balanced_set_extracts_amplitude_and_phase():
    # a balanced cosine set of amplitude A and phase phi maps to A*(cos, sin)
    A, phi = 7.3, 0.41
    shift = 2.0 * np.pi / 3.0
    theta = np.linspace(0.0, 12.0, 400)
    a = A * np.cos(theta + phi)
    b = A * np.cos(theta - shift + phi)
    c = A * np.cos(theta + shift + phi)
    d, q = park(a, b, c, theta)
    assert np.allclose(d, A * np.cos(phi), atol=1e-12)
    assert np.allclose(q, A * np.sin(phi), atol=1e-12)


@given(finite, finite, angle)
def test_park_round_trip_scalar(d, q, theta):
    a, b, c = inverse_park(d, q, theta)
    d2, q2 = park(a, b, c, theta)
    scale = max(1.0, abs(d), abs(q))
    assert abs(d2 - d) <= 1e-12 * scale
    assert abs(q2 - q) <= 1e-12 * scale


@settings(max_examples=50)
@given(st.integers(min_value=1, max_value=64), st.integers(min_value=0, max_value=2**31 - 1))
def test_park_round_trip_arrays(n, seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(-1e3, 1e3, n)
    q = rng.uniform(-1e3, 1e3, n)
    theta = rng.uniform(-20.0, 20.0, n)
    a, b, c = inverse_park(d, q, theta)
    d2, q2 = park(a, b, c, theta)
    scale = max(1.0, float(np.max(np.abs(d))), float(np.max(np.abs(q))))
    assert np.max(np.abs(d2 - d)) <= 1e-12 * scale
    assert np.max(np.abs(q2 - q)) <= 1e-12 * scale


def test_park_scalar_inputs_return_floats():
    d, q = park(1.0, -0.5, -0.5, 0.0)
    assert isinstance(d, float) and isinstance(q, float)
    assert abs(d - 1.0) < 1e-15 and abs(q) < 1e-15


def test_phasor_extraction_rejects_dc_and_coherent_harmonic():
    fs, f, n = 2500.0, 10.0, 2500
    t = np.arange(n) / fs
    s = (
        3.7 * np.cos(2 * np.pi * f * t + 0.6)
        + 1.25
        + 0.8 * np.cos(2 * np.pi * 30.0 * t - 1.0)
    )
    ph = extract_phasor(TimeSeries(s, 1.0 / fs), f)
    assert abs(ph.value - 3.7 * np.exp(0.6j)) < 1e-9
    assert abs(ph.magnitude - 3.7) < 1e-9
    assert abs(ph.phase_rad - 0.6) < 1e-9


def test_phasor_sine_convention():
    # A*sin maps to -1j*A: phase referenced to a cosine at the window start
    fs, f, n = 2500.0, 50.0, 500
    t = np.arange(n) / fs
    ph = extract_phasor(TimeSeries(2.0 * np.sin(2 * np.pi * f * t), 1.0 / fs), f)
    assert abs(ph.value - (-2.0j)) < 1e-9


def test_phasor_window_start_sets_phase_reference():
    # shifting t0 must not change the result: phase is relative to sample 0
    fs, f, n = 2500.0, 25.0, 400
    t = np.arange(n) / fs
    s = np.cos(2 * np.pi * f * t + 1.1)
    for t0 in (0.0, 3.7):
        ph = extract_phasor(TimeSeries(s, 1.0 / fs, t0), f)
        assert abs(ph.value - np.exp(1.1j)) < 1e-9


def test_phasor_non_coherent_window_raises():
    series = TimeSeries(np.ones(1000), 1.0 / 2500.0)
    with pytest.raises(NonCoherentWindow):
        extract_phasor(series, 10.3)


def test_phasor_above_nyquist_raises():
    series = TimeSeries(np.ones(1000), 1.0 / 2500.0)
    with pytest.raises(AboveNyquist):
        extract_phasor(series, 1250.0)


def test_phasor_rejects_nonpositive_frequency():
    series = TimeSeries(np.ones(100), 0.001)
    with pytest.raises(InvalidParameters):
        extract_phasor(series, 0.0)


def test_remove_dc_offset_uses_only_the_window():
    s = np.concatenate([np.full(50, 2.5), np.full(50, 9.0)])
    out = remove_dc_offset(TimeSeries(s, 0.01), (0, 50))
    assert np.allclose(out.samples[:50], 0.0)
    assert np.allclose(out.samples[50:], 6.5)


def test_remove_dc_offset_empty_window_raises():
    series = TimeSeries(np.arange(10.0), 0.1)
    with pytest.raises(EmptyBaselineWindow):
        remove_dc_offset(series, (5, 5))
    with pytest.raises(InvalidParameters):
        remove_dc_offset(series, (0, 11))


def test_nrmse_frozen_example():
    measured = np.array([1.0, 2.0, 3.0, 4.0])
    model = np.array([1.1, 2.1, 2.9, 4.2])
    assert abs(nrmse_percent(measured, model) - 88.16784043380076) < 1e-9


def test_nrmse_exact_fit_and_mean_model():
    measured = np.array([1.0, 2.0, 3.0])
    assert nrmse_percent(measured, measured) == 100.0
    # predicting the mean scores exactly zero
    assert abs(nrmse_percent(measured, np.full(3, 2.0))) < 1e-12


def test_nrmse_constant_reference_raises():
    with pytest.raises(DegenerateReference):
        nrmse_percent(np.full(5, 3.0), np.zeros(5))


@settings(max_examples=50)
@given(st.integers(min_value=2, max_value=40), st.integers(min_value=0, max_value=2**31 - 1))
def test_nrmse_self_fit_is_always_100(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    if np.all(x == x[0]):
        x[0] += 1.0
    assert nrmse_percent(x, x) == 100.0


def test_nrmse_fit_percent_checks_grid():
    a = TimeSeries(np.array([1.0, 2.0, 1.0]), 0.1)
    b = TimeSeries(np.array([1.0, 2.0, 1.0]), 0.2)
    with pytest.raises(InvalidParameters):
        nrmse_fit_percent(a, b)


def test_timeseries_slice_and_last():
    ts = TimeSeries(np.arange(10.0), 0.5, t0=1.0)
    part = ts.slice(2, 6)
    assert np.array_equal(part.samples, [2.0, 3.0, 4.0, 5.0])
    assert part.t0 == 2.0
    tail = ts.last(3)
    assert np.array_equal(tail.samples, [7.0, 8.0, 9.0])
    assert abs(ts.duration - 4.5) < 1e-15
    assert np.allclose(ts.times, 1.0 + 0.5 * np.arange(10))
    with pytest.raises(InvalidParameters):
        ts.slice(5, 3)


def test_timeseries_validation():
    with pytest.raises(InvalidParameters):
        TimeSeries(np.array([]), 0.1)
    with pytest.raises(InvalidParameters):
        TimeSeries(np.array([1.0, np.nan]), 0.1)
    with pytest.raises(InvalidParameters):
        TimeSeries(np.array([1.0]), 0.0)


def test_dq_signal_requires_shared_grid():
    d = TimeSeries(np.zeros(5), 0.1)
    with pytest.raises(InvalidParameters):
        DqSignal(d, TimeSeries(np.zeros(4), 0.1))
    with pytest.raises(InvalidParameters):
        DqSignal(d, TimeSeries(np.zeros(5), 0.2))
    sig = DqSignal(d, TimeSeries(np.ones(5), 0.1))
    assert len(sig) == 5 and sig.dt == 0.1


def test_frequency_response_validation():
    with pytest.raises(InvalidParameters):
        FrequencyResponse(np.array([1.0, 1.0]), np.array([1j, 2j]))
    with pytest.raises(InvalidParameters):
        FrequencyResponse(np.array([0.0, 1.0]), np.array([1j, 2j]))
    fr = FrequencyResponse(np.array([1.0, 2.0]), np.array([1j, 2j]))
    assert len(fr) == 2
