"""Continuous-time rational transfer-function estimation.

One fitter serves both identification paths: frequency-response points
are fitted directly, and time-domain step records enter through an
empirical frequency response computed at log-spaced probe frequencies.
The core is a Sanathanan-Koerner iteration: repeated weighted linear
least squares where each pass reweights by the previous denominator,
with frequencies normalized by their geometric mean for conditioning.
Pole stability is reported, not enforced; flipping poles would corrupt
the identified phase.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._linalg import zoh_discretize
from .errors import (
    DegenerateReference,
    EvaluationAtPole,
    IllConditionedFit,
    ImproperTransferFunction,
    InputNotExciting,
    InvalidParameters,
    NotEnoughData,
)
from .signals import FrequencyResponse, TimeSeries, nrmse_fit_percent, nrmse_percent


@dataclass(frozen=True)
class RationalTransferFunction:
    """Ratio of real polynomials in s, stored in a scaled variable.

    num/den hold descending-power coefficients of N and D in the variable
    s/scale_frequency; den is normalized monic at construction. Fits
    always produce degree(num) <= degree(den); direct construction may be
    improper for evaluation purposes (an improper tf cannot be simulated
    and simulate_step_response rejects it).
    """

    num: np.ndarray
    den: np.ndarray
    scale_frequency: float = 1.0

    def __post_init__(self) -> None:
        num = np.atleast_1d(np.asarray(self.num, dtype=float))
        den = np.atleast_1d(np.asarray(self.den, dtype=float))
        if num.ndim != 1 or den.ndim != 1 or num.size == 0 or den.size == 0:
            raise InvalidParameters("num", "num and den must be non-empty 1-D arrays")
        if not (np.all(np.isfinite(num)) and np.all(np.isfinite(den))):
            raise InvalidParameters("num", "coefficients must be finite")
        den = np.trim_zeros(den, "f")
        if den.size == 0:
            raise InvalidParameters("den", "denominator must not be identically zero")
        num = num / den[0]
        den = den / den[0]
        trimmed = np.trim_zeros(num, "f")
        if trimmed.size == 0:
            trimmed = np.zeros(1)
        if not (math.isfinite(self.scale_frequency) and self.scale_frequency > 0.0):
            raise InvalidParameters("scale_frequency", "must be finite and > 0")
        object.__setattr__(self, "num", trimmed)
        object.__setattr__(self, "den", den)

    @property
    def n_poles(self) -> int:
        return self.den.size - 1

    @property
    def n_zeros(self) -> int:
        return self.num.size - 1

    @property
    def is_proper(self) -> bool:
        return self.num.size <= self.den.size

    def poles(self) -> np.ndarray:
        """Denominator roots in plain rad/s."""
        if self.den.size == 1:
            return np.empty(0, dtype=complex)
        return np.roots(self.den) * self.scale_frequency

    def as_plain_coefficients(self) -> tuple[np.ndarray, np.ndarray]:
        """Equivalent descending coefficients in unscaled s, monic den."""
        w = self.scale_frequency
        num = self.num * w ** -np.arange(self.num.size - 1, -1, -1, dtype=float)
        den = self.den * w ** -np.arange(self.den.size - 1, -1, -1, dtype=float)
        return num / den[0], den / den[0]


def zero_transfer_function() -> RationalTransferFunction:
    return RationalTransferFunction(np.zeros(1), np.ones(1))


def _default_probe_grid() -> np.ndarray:
    return np.logspace(math.log10(0.1), math.log10(1000.0), 200)


@dataclass(frozen=True)
class FitOptions:
    """Model order, iteration limits, and the time-domain probe grid."""

    n_poles: int = 4
    n_zeros: int | None = None
    max_iterations: int = 30
    rel_tolerance: float = 1e-8
    frequency_grid: np.ndarray = field(default_factory=_default_probe_grid)

    def __post_init__(self) -> None:
        if int(self.n_poles) != self.n_poles or self.n_poles < 0:
            raise InvalidParameters("n_poles", "must be an integer >= 0")
        object.__setattr__(self, "n_poles", int(self.n_poles))
        nz = self.n_zeros
        if nz is None:
            nz = max(self.n_poles - 1, 0)
        if int(nz) != nz or nz < 0:
            raise InvalidParameters("n_zeros", "must be an integer >= 0")
        if nz > self.n_poles:
            raise InvalidParameters("n_zeros", "must be <= n_poles")
        object.__setattr__(self, "n_zeros", int(nz))
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise InvalidParameters("max_iterations", "must be an integer >= 1")
        object.__setattr__(self, "max_iterations", int(self.max_iterations))
        if not (math.isfinite(self.rel_tolerance) and self.rel_tolerance > 0.0):
            raise InvalidParameters("rel_tolerance", "must be > 0")
        grid = np.asarray(self.frequency_grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0 or grid[0] <= 0.0 or not np.all(np.isfinite(grid)):
            raise InvalidParameters("frequency_grid", "must be positive and finite")
        if np.any(np.diff(grid) <= 0.0):
            raise InvalidParameters("frequency_grid", "must be strictly increasing")
        object.__setattr__(self, "frequency_grid", grid)


@dataclass(frozen=True)
class FitResult:
    tf: RationalTransferFunction
    nrmse_percent: float
    iterations_used: int
    converged: bool


def _sk_design_matrix(
    x: np.ndarray, g: np.ndarray, weight: np.ndarray, n_zeros: int, n_poles: int
) -> tuple[np.ndarray, np.ndarray]:
    """Rows of N(x_k) - G_k*D(x_k) = G_k*x_k^n over real/imag parts."""
    cols = []
    for p in range(n_zeros, -1, -1):
        cols.append(x**p)
    for p in range(n_poles - 1, -1, -1):
        cols.append(-g * x**p)
    m = np.stack(cols, axis=1) * weight[:, None]
    rhs = (g * x**n_poles) * weight
    return (
        np.concatenate([m.real, m.imag], axis=0),
        np.concatenate([rhs.real, rhs.imag], axis=0),
    )


def fit_frequency_domain(points: FrequencyResponse, opts: FitOptions) -> FitResult:
    """Fit N(s)/D(s) to complex response points by SK iteration.

    Needs at least n_poles + n_zeros + 1 points. The returned nrmse
    scores the magnitudes of the fitted points. Non-convergence within
    max_iterations returns the lowest-residual iterate with
    converged=False; a rank-deficient least-squares step raises
    IllConditionedFit.
    """
    f = points.frequencies_hz
    g = points.values
    n_par = opts.n_poles + opts.n_zeros + 1
    if f.size < n_par:
        raise NotEnoughData(f"need >= {n_par} points for this order, have {f.size}")
    omega = 2.0 * np.pi * f
    w_scale = float(np.exp(np.mean(np.log(omega))))
    x = 1j * omega / w_scale

    weight = np.ones(f.size)
    best: tuple[float, np.ndarray] | None = None
    coeffs_prev: np.ndarray | None = None
    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iterations + 1):
        m, rhs = _sk_design_matrix(x, g, weight, opts.n_zeros, opts.n_poles)
        sol, _, rank, _ = np.linalg.lstsq(m, rhs, rcond=None)
        if rank < n_par:
            raise IllConditionedFit(
                f"normal equations rank {rank} < {n_par} unknowns; lower the order"
            )
        num = sol[: opts.n_zeros + 1]
        den = np.concatenate([[1.0], sol[opts.n_zeros + 1 :]])
        d_val = np.polyval(den, x)
        n_val = np.polyval(num, x)
        resid = float(np.linalg.norm((n_val - g * d_val) / np.maximum(np.abs(d_val), 1e-300)))
        if best is None or resid < best[0]:
            best = (resid, sol.copy())
        if coeffs_prev is not None:
            delta = np.linalg.norm(sol - coeffs_prev) / max(np.linalg.norm(coeffs_prev), 1e-300)
            if delta < opts.rel_tolerance:
                converged = True
                break
        coeffs_prev = sol
        weight = 1.0 / np.maximum(np.abs(d_val), 1e-300)

    sol = best[1] if not converged and best is not None else sol
    num = sol[: opts.n_zeros + 1]
    den = np.concatenate([[1.0], sol[opts.n_zeros + 1 :]])
    tf = RationalTransferFunction(num, den, scale_frequency=w_scale)
    poles = tf.poles()
    if np.any(poles.real > 0.0):
        warnings.warn(
            f"fit produced {int(np.sum(poles.real > 0.0))} right-half-plane pole(s); "
            "reported as-is",
            stacklevel=2,
        )
    fit_vals = np.polyval(tf.num, x) / np.polyval(tf.den, x)
    try:
        score = nrmse_percent(np.abs(g), np.abs(fit_vals))
    except DegenerateReference:
        score = 100.0 if np.allclose(np.abs(fit_vals), np.abs(g)) else float("-inf")
    return FitResult(tf=tf, nrmse_percent=score, iterations_used=iterations, converged=converged)


def _truncated_dtft(samples: np.ndarray, dt: float, omega: np.ndarray) -> np.ndarray:
    k = np.arange(samples.size)
    return np.exp(-1j * np.outer(omega, k * dt)) @ samples


def fit_time_domain(input: TimeSeries, output: TimeSeries, opts: FitOptions) -> FitResult:
    """Fit a transfer function to a step-driven record.

    The empirical response is the ratio of truncated transforms of output
    and input over the probe grid, corrected for the sample-and-hold
    phase bias so a settled record yields the continuous-time response
    (the input must be constant between samples, which a sampled step
    is). Probe points at or above Nyquist are discarded; points where the
    input transform is below 1e-12 are dropped, and losing more than half
    of them raises InputNotExciting. The returned nrmse is computed in
    the time domain by simulating the fitted model against the input.
    """
    if len(input) != len(output) or input.dt != output.dt:
        raise InvalidParameters("output", "input and output must share length and dt")
    dt = input.dt
    if float(np.max(np.abs(output.samples))) == 0.0:
        return FitResult(tf=zero_transfer_function(), nrmse_percent=100.0, iterations_used=0, converged=True)

    grid = opts.frequency_grid
    grid = grid[grid < 0.5 / dt]
    if grid.size == 0:
        raise InvalidParameters("frequency_grid", "no probe frequencies below Nyquist")
    omega = 2.0 * np.pi * grid
    # the transform ratio is evaluated on first differences (prior history
    # is the removed baseline, i.e. zero): a differenced step is an
    # impulse, so the input transform has no truncation nulls and the
    # differenced output decays, keeping the truncation error bounded
    du = np.diff(input.samples, prepend=0.0)
    dy = np.diff(output.samples, prepend=0.0)
    u_hat = _truncated_dtft(du, dt, omega)
    y_hat = _truncated_dtft(dy, dt, omega)
    keep = np.abs(u_hat) >= 1e-12
    if np.count_nonzero(keep) < 0.5 * keep.size:
        raise InputNotExciting(
            f"input transform below 1e-12 at {keep.size - np.count_nonzero(keep)} of {keep.size} probes"
        )
    # ratio of sampled transforms is the hold-equivalent response; undo
    # the hold to land on the continuous-time value at each probe
    wdt = omega[keep] * dt
    hold = (1j * wdt) / (1.0 - np.exp(-1j * wdt))
    g_emp = (y_hat[keep] / u_hat[keep]) * hold
    fit = fit_frequency_domain(FrequencyResponse(grid[keep], g_emp), opts)

    model = simulate_forced_response(fit.tf, input)
    score = nrmse_fit_percent(output, model)
    return FitResult(
        tf=fit.tf,
        nrmse_percent=score,
        iterations_used=fit.iterations_used,
        converged=fit.converged,
    )


def evaluate(tf: RationalTransferFunction, frequencies_hz: np.ndarray) -> FrequencyResponse:
    """Pointwise N(jw)/D(jw) on a positive frequency grid."""
    f = np.atleast_1d(np.asarray(frequencies_hz, dtype=float))
    x = 1j * 2.0 * np.pi * f / tf.scale_frequency
    d_val = np.polyval(tf.den, x)
    hit = np.abs(d_val) == 0.0
    if np.any(hit):
        f_bad = f[hit][0]
        raise EvaluationAtPole(f"denominator vanishes at {f_bad:.9g} Hz")
    return FrequencyResponse(f, np.polyval(tf.num, x) / d_val)


def _companion_state_space(tf: RationalTransferFunction) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Controllable-companion (A, B, C, D) in the scaled variable."""
    den = tf.den
    n = den.size - 1
    num = np.concatenate([np.zeros(den.size - tf.num.size), tf.num])
    d = num[0]
    if n == 0:
        return np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), float(d)
    a = np.zeros((n, n))
    a[0, :] = -den[1:]
    a[1:, :-1] = np.eye(n - 1)
    b = np.zeros((n, 1))
    b[0, 0] = 1.0
    c = (num[1:] - d * den[1:])[None, :]
    return a, b, c, float(d)


def simulate_forced_response(tf: RationalTransferFunction, input: TimeSeries) -> TimeSeries:
    """Hold-equivalent response of tf to the sampled input signal.

    Exact for inputs that are constant between samples. Requires a proper
    transfer function.
    """
    if not tf.is_proper:
        raise ImproperTransferFunction(
            f"degree(num)={tf.n_zeros} exceeds degree(den)={tf.n_poles}"
        )
    a, b, c, d = _companion_state_space(tf)
    n = a.shape[0]
    u = input.samples
    if n == 0:
        return TimeSeries(d * u, input.dt, input.t0)
    # scaled variable means scaled time: one sample advances tau by w*dt
    a_d, b_d = zoh_discretize(a, b, input.dt * tf.scale_frequency)
    c_row = c[0, :]
    x = np.zeros(n)
    y = np.empty(u.size)
    for k in range(u.size):
        y[k] = c_row @ x + d * u[k]
        x = a_d @ x + b_d[:, 0] * u[k]
    return TimeSeries(y, input.dt, input.t0)


def simulate_step_response(
    tf: RationalTransferFunction, g_abs: float, duration: float, fs: float
) -> TimeSeries:
    """Response to a step of g_abs volts applied at t=0, sampled at fs."""
    if not (math.isfinite(g_abs)):
        raise InvalidParameters("g_abs", "must be finite")
    if not (math.isfinite(duration) and duration > 0.0):
        raise InvalidParameters("duration", "must be > 0")
    if not (math.isfinite(fs) and fs > 0.0):
        raise InvalidParameters("fs", "must be > 0")
    n = int(round(duration * fs)) + 1
    u = TimeSeries(np.full(n, float(g_abs)), 1.0 / fs)
    return simulate_forced_response(tf, u)
