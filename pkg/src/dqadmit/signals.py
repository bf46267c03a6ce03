"""Signal containers and dq-frame signal processing primitives.

This module owns the small value types the rest of the package passes
around (:class:`TimeSeries`, :class:`DqSignal`, :class:`Phasor`,
:class:`FrequencyResponse`) and the measurement primitives built on them:
the amplitude-invariant Park transform pair, baseline removal, coherent
single-bin phasor extraction, and the normalized-RMSE fit metric.

Conventions
-----------
* Park transform is amplitude invariant and cosine aligned: a balanced
  three-phase set ``a = A*cos(theta + phi)`` maps to a dq vector of
  magnitude ``A`` (d-axis aligned with the cosine at ``phi = 0``).
* Phasors are peak-valued: ``A*cos(2*pi*f*t + phi)`` over a coherent
  window extracts to ``A*exp(1j*phi)``, phase referenced to a cosine
  starting at the window's first sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AboveNyquist,
    DegenerateReference,
    EmptyBaselineWindow,
    InvalidParameters,
    NonCoherentWindow,
)

_TWO_THIRDS = 2.0 / 3.0
_SHIFT = 2.0 * np.pi / 3.0


@dataclass(eq=False)
class TimeSeries:
    """Uniformly sampled real signal.

    Sample ``k`` is taken at ``t0 + k*dt``. Samples are stored as a 1-D
    float64 array and are required to be finite.
    """

    samples: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise InvalidParameters("samples", "must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidParameters("samples", "must be finite")
        if not (np.isfinite(self.dt) and self.dt > 0.0):
            raise InvalidParameters("dt", "must be finite and > 0")
        if not np.isfinite(self.t0):
            raise InvalidParameters("t0", "must be finite")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    @property
    def duration(self) -> float:
        """Time spanned from the first to the last sample."""
        return self.dt * (self.samples.size - 1)

    def slice(self, start: int, stop: int) -> "TimeSeries":
        """Return samples ``[start, stop)`` as a new series with shifted t0."""
        if not (0 <= start < stop <= self.samples.size):
            raise InvalidParameters("window", f"[{start}, {stop}) outside 0..{self.samples.size}")
        return TimeSeries(self.samples[start:stop].copy(), self.dt, self.t0 + start * self.dt)

    def last(self, n: int) -> "TimeSeries":
        """Return the trailing ``n`` samples."""
        return self.slice(self.samples.size - n, self.samples.size)


@dataclass(eq=False)
class DqSignal:
    """A pair of d/q time series sharing one sampling grid."""

    d: TimeSeries
    q: TimeSeries

    def __post_init__(self):
        if len(self.d) != len(self.q) or self.d.dt != self.q.dt or self.d.t0 != self.q.t0:
            raise InvalidParameters("q", "d and q series must share length, dt and t0")

    def __len__(self) -> int:
        return len(self.d)

    @property
    def dt(self) -> float:
        return self.d.dt


@dataclass(frozen=True)
class Phasor:
    """Peak-valued complex phasor at a single frequency."""

    frequency: float
    value: complex

    @property
    def magnitude(self) -> float:
        return abs(self.value)

    @property
    def phase_rad(self) -> float:
        return float(np.angle(self.value))


@dataclass(eq=False)
class FrequencyResponse:
    """Ordered complex response samples on a strictly increasing grid."""

    frequencies_hz: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.frequencies_hz = np.asarray(self.frequencies_hz, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.frequencies_hz.ndim != 1 or self.frequencies_hz.size == 0:
            raise InvalidParameters("frequencies_hz", "must be a non-empty 1-D array")
        if self.values.shape != self.frequencies_hz.shape:
            raise InvalidParameters("values", "must match the frequency grid shape")
        if np.any(np.diff(self.frequencies_hz) <= 0.0) or self.frequencies_hz[0] <= 0.0:
            raise InvalidParameters("frequencies_hz", "must be strictly increasing and > 0")
        if not (np.all(np.isfinite(self.frequencies_hz)) and np.all(np.isfinite(self.values))):
            raise InvalidParameters("values", "grid and values must be finite")

    def __len__(self) -> int:
        return self.frequencies_hz.size


def park(a, b, c, theta):
    """Three-phase quantities to the rotating dq frame (amplitude invariant).

    Parameters
    ----------
    a, b, c : float or ndarray
        Instantaneous phase quantities.
    theta : float or ndarray
        Rotating-frame angle in radians.

    Returns
    -------
    (d, q) : tuple of float or ndarray
        ``d = (2/3)*(a*cos(theta) + b*cos(theta - 2pi/3) + c*cos(theta + 2pi/3))``
        and the matching negated-sine projection for ``q``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    theta = np.asarray(theta, dtype=float)
    d = _TWO_THIRDS * (
        a * np.cos(theta) + b * np.cos(theta - _SHIFT) + c * np.cos(theta + _SHIFT)
    )
    q = -_TWO_THIRDS * (
        a * np.sin(theta) + b * np.sin(theta - _SHIFT) + c * np.sin(theta + _SHIFT)
    )
    if d.ndim == 0:
        return float(d), float(q)
    return d, q


def inverse_park(d, q, theta):
    """Rotating dq frame back to three-phase quantities.

    Exact right inverse of :func:`park` for any (d, q): projecting the
    result back recovers the inputs to rounding error.
    """
    d = np.asarray(d, dtype=float)
    q = np.asarray(q, dtype=float)
    theta = np.asarray(theta, dtype=float)
    a = d * np.cos(theta) - q * np.sin(theta)
    b = d * np.cos(theta - _SHIFT) - q * np.sin(theta - _SHIFT)
    c = d * np.cos(theta + _SHIFT) - q * np.sin(theta + _SHIFT)
    if a.ndim == 0:
        return float(a), float(b), float(c)
    return a, b, c


def remove_dc_offset(series: TimeSeries, window: tuple[int, int]) -> TimeSeries:
    """Subtract the mean of the baseline sample range ``[start, stop)``.

    The window is given in sample indices over ``series``. Raises
    :class:`EmptyBaselineWindow` when it selects no samples.
    """
    start, stop = int(window[0]), int(window[1])
    if start < 0 or stop > len(series):
        raise InvalidParameters("window", f"[{start}, {stop}) outside 0..{len(series)}")
    if stop <= start:
        raise EmptyBaselineWindow(f"baseline window [{start}, {stop}) is empty")
    offset = float(np.mean(series.samples[start:stop]))
    return TimeSeries(series.samples - offset, series.dt, series.t0)


def extract_phasor(series: TimeSeries, f: float) -> Phasor:
    """Single-bin coherent phasor of ``series`` at frequency ``f``.

    The whole series is the analysis window and must span an integer
    number of periods of ``f`` (callers slice the coherent region first).
    A tone ``A*cos(2*pi*f*(t - t_win) + phi)``, with ``t_win`` the window's
    first sample time, extracts to ``A*exp(1j*phi)``; any DC component and
    any other tone coherent with the window are rejected exactly.

    Raises
    ------
    AboveNyquist
        If ``f`` is at or above half the sampling rate.
    NonCoherentWindow
        If the window does not hold an integer period count.
    """
    if not (np.isfinite(f) and f > 0.0):
        raise InvalidParameters("f", "must be finite and > 0")
    n = len(series)
    nyquist = 0.5 / series.dt
    if f >= nyquist:
        raise AboveNyquist(f"f={f:.6g} Hz >= Nyquist {nyquist:.6g} Hz")
    periods = f * n * series.dt
    if abs(periods - round(periods)) > 1e-9 * max(1.0, periods) or round(periods) < 1:
        raise NonCoherentWindow(
            f"window of {n} samples spans {periods:.12g} periods of {f:.6g} Hz"
        )
    phase = -2j * np.pi * f * series.dt * np.arange(n)
    value = (2.0 / n) * np.sum(series.samples * np.exp(phase))
    return Phasor(frequency=f, value=complex(value))


def nrmse_percent(measured: np.ndarray, model: np.ndarray) -> float:
    """NRMSE fit percentage between two equal-length real sequences.

    ``100*(1 - ||measured - model|| / ||measured - mean(measured)||)``,
    vector 2-norms. 100 is a perfect fit; the value is unbounded below.
    Raises :class:`DegenerateReference` when the measured sequence is
    constant.
    """
    measured = np.asarray(measured, dtype=float)
    model = np.asarray(model, dtype=float)
    if measured.shape != model.shape or measured.ndim != 1:
        raise InvalidParameters("model", "sequences must be 1-D and equal length")
    ref = np.linalg.norm(measured - np.mean(measured))
    if ref == 0.0:
        raise DegenerateReference("measured sequence is constant")
    return float(100.0 * (1.0 - np.linalg.norm(measured - model) / ref))


def nrmse_fit_percent(measured: TimeSeries, model: TimeSeries) -> float:
    """NRMSE fit percentage between two time series on the same grid."""
    if len(measured) != len(model) or measured.dt != model.dt:
        raise InvalidParameters("model", "series must share length and dt")
    return nrmse_percent(measured.samples, model.samples)
