"""2x2 dq admittance assembly, Bode tables, and cross-method agreement.

A channel can be backed by a continuous state space (realization path),
a rational transfer function (fitting paths), raw measured points
(sweep path), or several of these at once. Raw sweep points are
first-class: Bode listing and comparisons use them directly, without
interpolation, and any rational fit rides alongside.

Sign convention, recorded on every assembled admittance: output current
is counted from the device into the source node, and the admittance is
the negated current-over-voltage ratio, which makes the identified
matrix of a passive branch equal its physical branch admittance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BandOutOfRange, EvaluationAtPole, InvalidParameters
from .experiments import StepExperimentPair, SweepDataset
from .ratfit import (
    FitOptions,
    FitResult,
    RationalTransferFunction,
    evaluate as evaluate_tf,
    fit_frequency_domain,
    fit_time_domain,
)
from .signals import FrequencyResponse, TimeSeries

CHANNEL_NAMES = ("Ydd", "Ydq", "Yqd", "Yqq")
SIGN_CONVENTION = "device-to-source current, admittance = -I/V"

_MAG_FLOOR = 1e-300


@dataclass(frozen=True)
class StateSpaceEvaluator:
    """Pointwise frequency evaluation of gain * (jw)^k * C (jwI-A)^-1 B."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    gain: float = 1.0
    multiply_by_s: bool = False

    def evaluate(self, frequencies_hz: np.ndarray) -> np.ndarray:
        f = np.asarray(frequencies_hz, dtype=float)
        n = self.a.shape[0]
        eye = np.eye(n)
        out = np.empty(f.size, dtype=complex)
        b = self.b[:, 0]
        c = self.c[0]
        for i, fi in enumerate(f):
            s = 2j * math.pi * fi
            w = c @ np.linalg.solve(s * eye - self.a, b)
            out[i] = self.gain * (s * w if self.multiply_by_s else w)
        return out


@dataclass(frozen=True)
class AdmittanceChannel:
    """One matrix entry with whichever backings the method produced.

    Evaluation prefers the state space, then raw points (exact frequency
    matches only), then the rational form. `fit` retains the full fit
    result where a fit produced the rational form; `rational_is_exact`
    marks whether `tf` is algebraically equivalent to the state space.
    """

    state_space: StateSpaceEvaluator | None = None
    tf: RationalTransferFunction | None = None
    points: FrequencyResponse | None = None
    fit: FitResult | None = None
    rational_is_exact: bool = True

    def __post_init__(self) -> None:
        if self.state_space is None and self.tf is None and self.points is None:
            raise InvalidParameters("channel", "needs at least one backing")

    def match_points(self, frequencies_hz: np.ndarray, rel_tol: float = 1e-9) -> np.ndarray:
        """Boolean mask of grid entries that coincide with raw points."""
        if self.points is None:
            raise InvalidParameters("channel", "no raw points on this channel")
        f = np.asarray(frequencies_hz, dtype=float)
        pf = self.points.frequencies_hz
        idx = np.searchsorted(pf, f)
        mask = np.zeros(f.size, dtype=bool)
        for i, fi in enumerate(f):
            for j in (idx[i] - 1, idx[i]):
                if 0 <= j < pf.size and abs(pf[j] - fi) <= rel_tol * max(fi, pf[j]):
                    mask[i] = True
        return mask

    def evaluate(self, frequencies_hz: np.ndarray) -> np.ndarray:
        f = np.asarray(frequencies_hz, dtype=float)
        if self.state_space is not None:
            return self.state_space.evaluate(f)
        if self.points is not None:
            pf = self.points.frequencies_hz
            idx = np.searchsorted(pf, f)
            out = np.empty(f.size, dtype=complex)
            for i, fi in enumerate(f):
                found = False
                for j in (idx[i] - 1, idx[i]):
                    if 0 <= j < pf.size and abs(pf[j] - fi) <= 1e-9 * max(fi, pf[j]):
                        out[i] = self.points.values[j]
                        found = True
                        break
                if not found:
                    if self.tf is not None:
                        out[i] = evaluate_tf(self.tf, np.array([fi])).values[0]
                    else:
                        raise InvalidParameters(
                            "frequencies_hz",
                            f"{fi:.9g} Hz is not a measured point and no fit is attached",
                        )
            return out
        return evaluate_tf(self.tf, f).values

    def evaluate_fit(self, frequencies_hz: np.ndarray) -> np.ndarray:
        """Force evaluation through the rational form."""
        if self.tf is None:
            raise InvalidParameters("channel", "no rational form on this channel")
        return evaluate_tf(self.tf, np.asarray(frequencies_hz, dtype=float)).values


@dataclass(frozen=True)
class DqAdmittance:
    """Four channels identified by one method, plus method metadata."""

    method: str
    Ydd: AdmittanceChannel
    Ydq: AdmittanceChannel
    Yqd: AdmittanceChannel
    Yqq: AdmittanceChannel
    sign_convention: str = SIGN_CONVENTION
    nyquist_hz: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.method not in ("ERA", "SEM", "SFRA"):
            raise InvalidParameters("method", "must be ERA, SEM, or SFRA")
        if self.method == "SFRA":
            for name in CHANNEL_NAMES:
                if self.channel(name).points is None:
                    raise InvalidParameters(name, "SFRA channels must carry raw points")

    def channel(self, name: str) -> AdmittanceChannel:
        if name not in CHANNEL_NAMES:
            raise InvalidParameters("name", f"must be one of {CHANNEL_NAMES}")
        return getattr(self, name)

    @property
    def is_points_backed(self) -> bool:
        return all(self.channel(n).points is not None for n in CHANNEL_NAMES)

    def valid_band(self) -> tuple[float, float]:
        """Frequency range over which evaluation is meaningful."""
        if self.is_points_backed:
            f = self.Ydd.points.frequencies_hz
            return float(f[0]), float(f[-1])
        hi = self.nyquist_hz if self.nyquist_hz is not None else math.inf
        return 0.0, float(hi)


@dataclass(frozen=True)
class BodeTable:
    """Per-channel magnitude/phase rows for one method.

    Rows iterate as (f_hz, channel, method, mag_db, phase_deg) with
    phase unwrapped within each channel, starting in (-180, 180].
    """

    method: str
    channels: dict

    def rows(self):
        for name in CHANNEL_NAMES:
            if name not in self.channels:
                continue
            f, mag, ph = self.channels[name]
            for i in range(f.size):
                yield (float(f[i]), name, self.method, float(mag[i]), float(ph[i]))

    def channel_arrays(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if name not in self.channels:
            raise InvalidParameters("name", f"no rows for channel {name}")
        return self.channels[name]


def _mag_db(values: np.ndarray) -> np.ndarray:
    return 20.0 * np.log10(np.maximum(np.abs(values), _MAG_FLOOR))


def _unwrapped_phase_deg(values: np.ndarray) -> np.ndarray:
    return np.degrees(np.unwrap(np.angle(values)))


def bode(y: DqAdmittance, grid_hz: np.ndarray) -> BodeTable:
    """Evaluate all four channels over a grid into table form.

    Point-backed channels list their raw measurements restricted to grid
    entries that match a measured frequency; no interpolation happens.
    Rational and state-space channels evaluate pointwise on the grid.
    """
    f = np.asarray(grid_hz, dtype=float)
    if f.ndim != 1 or f.size == 0 or f[0] <= 0.0 or np.any(np.diff(f) <= 0.0):
        raise InvalidParameters("grid_hz", "must be positive and strictly increasing")
    if y.nyquist_hz is not None and f[-1] >= y.nyquist_hz:
        raise InvalidParameters("grid_hz", f"reaches past Nyquist {y.nyquist_hz:.6g} Hz")
    channels: dict = {}
    for name in CHANNEL_NAMES:
        ch = y.channel(name)
        if ch.points is not None:
            mask = ch.match_points(f)
            f_ch = f[mask]
            vals = ch.evaluate(f_ch) if f_ch.size else np.empty(0, dtype=complex)
        else:
            f_ch = f
            try:
                vals = ch.evaluate(f_ch)
            except EvaluationAtPole as exc:
                raise EvaluationAtPole(f"{name}: {exc}") from exc
        channels[name] = (f_ch, _mag_db(vals), _unwrapped_phase_deg(vals))
    return BodeTable(method=y.method, channels=channels)


@dataclass(frozen=True)
class ChannelAgreement:
    max_dmag_db: float
    max_dphase_deg: float
    mean_dmag_db: float
    mean_dphase_deg: float


@dataclass(frozen=True)
class AgreementReport:
    band_hz: tuple[float, float]
    channels: dict
    grid_hz: np.ndarray

    def channel(self, name: str) -> ChannelAgreement:
        return self.channels[name]

    def worst(self) -> ChannelAgreement:
        return ChannelAgreement(
            max_dmag_db=max(c.max_dmag_db for c in self.channels.values()),
            max_dphase_deg=max(c.max_dphase_deg for c in self.channels.values()),
            mean_dmag_db=max(c.mean_dmag_db for c in self.channels.values()),
            mean_dphase_deg=max(c.mean_dphase_deg for c in self.channels.values()),
        )


def _comparison_grid(
    a: DqAdmittance, b: DqAdmittance, band: tuple[float, float], grid_points: int
) -> np.ndarray:
    f_lo, f_hi = band
    if a.is_points_backed and b.is_points_backed:
        fa = a.Ydd.points.frequencies_hz
        fb = b.Ydd.points.frequencies_hz
        common = np.intersect1d(fa, fb)
        grid = common[(common >= f_lo) & (common <= f_hi)]
        if grid.size == 0:
            raise BandOutOfRange("no shared measured frequencies inside the band")
        return grid
    for side in (a, b):
        if side.is_points_backed:
            pf = side.Ydd.points.frequencies_hz
            grid = pf[(pf >= f_lo) & (pf <= f_hi)]
            if grid.size == 0:
                raise BandOutOfRange("no measured frequencies inside the band")
            return grid
    return np.logspace(math.log10(f_lo), math.log10(f_hi), grid_points)


def compare(
    a: DqAdmittance,
    b: DqAdmittance,
    band: tuple[float, float] = (1.0, 100.0),
    grid_points: int = 30,
) -> AgreementReport:
    """Per-channel magnitude/phase deviations over a common grid.

    When either side is point-backed, its measured frequencies inside
    the band form the grid (grid_points is ignored); otherwise a
    log-spaced grid of grid_points is used. Phase deviations are
    principal-value differences, so a shared 360-degree branch offset
    does not register. Symmetric in its arguments.
    """
    f_lo, f_hi = float(band[0]), float(band[1])
    if not (math.isfinite(f_lo) and math.isfinite(f_hi) and 0.0 < f_lo < f_hi):
        raise InvalidParameters("band", "need 0 < f_lo < f_hi")
    if grid_points < 10:
        raise InvalidParameters("grid_points", "must be >= 10")
    for side, label in ((a, "a"), (b, "b")):
        lo, hi = side.valid_band()
        if f_lo < lo or f_hi > hi:
            raise BandOutOfRange(
                f"band [{f_lo:.6g}, {f_hi:.6g}] Hz outside {label}'s valid range "
                f"[{lo:.6g}, {hi:.6g}] Hz"
            )
    grid = _comparison_grid(a, b, (f_lo, f_hi), grid_points)
    channels: dict = {}
    for name in CHANNEL_NAMES:
        va = a.channel(name).evaluate(grid)
        vb = b.channel(name).evaluate(grid)
        dmag = np.abs(_mag_db(va) - _mag_db(vb))
        dphase_raw = np.degrees(np.angle(va) - np.angle(vb))
        dphase = np.abs((dphase_raw + 180.0) % 360.0 - 180.0)
        channels[name] = ChannelAgreement(
            max_dmag_db=float(np.max(dmag)),
            max_dphase_deg=float(np.max(dphase)),
            mean_dmag_db=float(np.mean(dmag)),
            mean_dphase_deg=float(np.mean(dphase)),
        )
    return AgreementReport(band_hz=(f_lo, f_hi), channels=channels, grid_hz=grid)


def assemble_sem(pair: StepExperimentPair, opts: FitOptions) -> DqAdmittance:
    """Fit the four channels from the step pair's time records.

    Each record's output deviation is negated (source-directed current
    convention) and fitted against its constant step input; the fitted
    transfer function therefore IS the channel admittance and the
    retained fit carries the time-domain agreement score.
    """
    resp_d = pair.response("d")
    resp_q = pair.response("q")
    jobs = {
        "Ydd": (resp_d.d, pair.g_abs_d),
        "Yqd": (resp_d.q, pair.g_abs_d),
        "Ydq": (resp_q.d, pair.g_abs_q),
        "Yqq": (resp_q.q, pair.g_abs_q),
    }
    channels: dict[str, AdmittanceChannel] = {}
    for name, (out_series, g_abs) in jobs.items():
        u = TimeSeries(np.full(len(out_series), g_abs), out_series.dt, out_series.t0)
        negated = TimeSeries(-out_series.samples, out_series.dt, out_series.t0)
        fit = fit_time_domain(u, negated, opts)
        channels[name] = AdmittanceChannel(tf=fit.tf, fit=fit)
    return DqAdmittance(
        method="SEM",
        Ydd=channels["Ydd"],
        Ydq=channels["Ydq"],
        Yqd=channels["Yqd"],
        Yqq=channels["Yqq"],
        nyquist_hz=0.5 / pair.dt,
    )


def assemble_sfra(ds: SweepDataset, opts: FitOptions) -> DqAdmittance:
    """Wrap sweep measurements as the admittance, with rational fits alongside.

    The sweep ratios already carry the sign convention; raw points stay
    first-class and the per-channel fit is retained for overlay plots.
    """
    channels: dict[str, AdmittanceChannel] = {}
    for name in CHANNEL_NAMES:
        pts = ds.channel(name)
        fit = fit_frequency_domain(pts, opts)
        channels[name] = AdmittanceChannel(points=pts, tf=fit.tf, fit=fit, rational_is_exact=False)
    return DqAdmittance(
        method="SFRA",
        Ydd=channels["Ydd"],
        Ydq=channels["Ydq"],
        Yqd=channels["Yqd"],
        Yqq=channels["Yqq"],
    )
