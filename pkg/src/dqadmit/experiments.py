"""Perturbation protocols: paired voltage steps and a discrete-frequency sweep.

Both protocols start from a solved operating point and perturb one source
voltage axis at a time. Step experiments feed the realization and
step-spectrum fitting paths; the sweep feeds the phasor-ratio path. Axis
bookkeeping is structural: the d-axis injection and the q-axis injection
live in separate records and are never mixed.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AboveNyquist, InvalidParameters, NotAtEquilibrium
from .plant import MIN_SAMPLE_RATE_HZ, Plant, SimulationRecord, find_equilibrium, simulate
from .signals import DqSignal, FrequencyResponse, TimeSeries, extract_phasor, remove_dc_offset

WORKERS_ENV = "DQADMIT_WORKERS"


def _check_axis(axis: str) -> str:
    a = str(axis).lower()
    if a not in ("d", "q"):
        raise InvalidParameters("axis", "must be 'd' or 'q'")
    return a


@dataclass(frozen=True)
class StepInjection:
    """One-axis voltage step: relative size, onset time, record length.

    g is a fraction of the steady source voltage on the stepped axis;
    an axis whose steady value is zero falls back to the d-axis voltage
    so the absolute step never degenerates to zero.
    """

    axis: str = "d"
    g: float = 0.01
    t_step: float = 0.1
    record_length: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "axis", _check_axis(self.axis))
        if not (math.isfinite(self.g) and self.g > 0.0):
            raise InvalidParameters("g", "must be finite and > 0")
        if self.g > 0.05:
            warnings.warn(
                f"step fraction g={self.g:.3g} exceeds 0.05; response may leave the linear range",
                stacklevel=2,
            )
        if not (math.isfinite(self.t_step) and self.t_step >= 0.1):
            raise InvalidParameters("t_step", "must leave >= 0.1 s of pre-step baseline")
        if not (math.isfinite(self.record_length) and self.record_length > self.t_step):
            raise InvalidParameters("record_length", "must exceed t_step")


@dataclass(frozen=True)
class SineInjection:
    """One-axis sinusoidal voltage ride-along for the sweep."""

    axis: str = "d"
    amplitude_pp: float = 0.1
    frequency: float = 10.0
    cycles: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "axis", _check_axis(self.axis))
        if not (math.isfinite(self.amplitude_pp) and self.amplitude_pp > 0.0):
            raise InvalidParameters("amplitude_pp", "must be > 0")
        if not (math.isfinite(self.frequency) and self.frequency > 0.0):
            raise InvalidParameters("frequency", "must be > 0")
        if int(self.cycles) != self.cycles or self.cycles < 1:
            raise InvalidParameters("cycles", "must be an integer >= 1")
        object.__setattr__(self, "cycles", int(self.cycles))


def default_sweep_frequencies(
    n_points: int = 100, f_lo: float = 0.1, f_hi: float = 1000.0
) -> np.ndarray:
    return np.logspace(math.log10(f_lo), math.log10(f_hi), n_points)


@dataclass(frozen=True)
class SweepPlan:
    """Requested sweep frequencies plus the per-point injection template.

    The template's axis is ignored: every frequency is run once per axis.
    Frequencies must be strictly increasing; they are snapped to the
    nearest window-coherent values at run time, so the measured grid can
    differ slightly from the request (exactly integer injection periods
    per analysis window).
    """

    frequencies_hz: np.ndarray = field(default_factory=default_sweep_frequencies)
    template: SineInjection = field(default_factory=SineInjection)

    def __post_init__(self) -> None:
        f = np.asarray(self.frequencies_hz, dtype=float)
        if f.ndim != 1 or f.size == 0:
            raise InvalidParameters("frequencies_hz", "must be a non-empty 1-D array")
        if not np.all(np.isfinite(f)) or f[0] <= 0.0:
            raise InvalidParameters("frequencies_hz", "must be finite and positive")
        if np.any(np.diff(f) <= 0.0):
            raise InvalidParameters("frequencies_hz", "must be strictly increasing")
        object.__setattr__(self, "frequencies_hz", f)

    def __len__(self) -> int:
        return int(self.frequencies_hz.size)


@dataclass(frozen=True)
class StepExperimentPair:
    """Two step records from one equilibrium, one per injection axis.

    record_d / record_q hold the raw source voltage and the
    baseline-removed output current deviation for the d-axis and q-axis
    injections. g is the common step fraction; g_abs_d / g_abs_q are the
    applied step sizes in volts; onset_index is the first sample at which
    the step is active in both records.
    """

    record_d: SimulationRecord
    record_q: SimulationRecord
    g: float
    dt: float
    g_abs_d: float
    g_abs_q: float
    onset_index: int

    def response(self, input_axis: str) -> DqSignal:
        """Output-current deviation from the step onset onward, t0 = 0."""
        axis = _check_axis(input_axis)
        rec = self.record_d if axis == "d" else self.record_q
        n = len(rec.i_o.d)
        d = rec.i_o.d.slice(self.onset_index, n)
        q = rec.i_o.q.slice(self.onset_index, n)
        return DqSignal(
            TimeSeries(d.samples, d.dt, 0.0),
            TimeSeries(q.samples, q.dt, 0.0),
        )

    def step_volts(self, input_axis: str) -> float:
        return self.g_abs_d if _check_axis(input_axis) == "d" else self.g_abs_q


@dataclass(frozen=True)
class SweepDataset:
    """Phasor-ratio admittance points on a shared frequency grid."""

    Ydd: FrequencyResponse
    Ydq: FrequencyResponse
    Yqd: FrequencyResponse
    Yqq: FrequencyResponse

    def __post_init__(self) -> None:
        f0 = self.Ydd.frequencies_hz
        for name in ("Ydq", "Yqd", "Yqq"):
            fr: FrequencyResponse = getattr(self, name)
            if fr.frequencies_hz.size != f0.size or not np.array_equal(fr.frequencies_hz, f0):
                raise InvalidParameters(name, "all four channels must share one frequency grid")

    @property
    def frequencies_hz(self) -> np.ndarray:
        return self.Ydd.frequencies_hz

    def channel(self, name: str) -> FrequencyResponse:
        if name not in ("Ydd", "Ydq", "Yqd", "Yqq"):
            raise InvalidParameters("name", "must be one of Ydd, Ydq, Yqd, Yqq")
        return getattr(self, name)


def _axis_step_volts(plant: Plant, axis: str, g: float) -> float:
    if plant.kind_code == 0:
        vgd, vgq = plant.par[17], plant.par[18]
    else:
        vgd, vgq = plant.par[3], plant.par[4]
    base = vgd if axis == "d" else vgq
    if base == 0.0:
        base = vgd if vgd != 0.0 else math.hypot(vgd, vgq)
    if base == 0.0:
        raise InvalidParameters("g", "cannot scale a relative step on a zero source voltage")
    return g * abs(base)


def _equilibrium_drift_check(rec: SimulationRecord, onset: int, i_ref: float) -> None:
    span_d = float(np.ptp(rec.i_o.d.samples[:onset]))
    span_q = float(np.ptp(rec.i_o.q.samples[:onset]))
    base = max(
        abs(float(np.mean(rec.i_o.d.samples[:onset]))),
        abs(float(np.mean(rec.i_o.q.samples[:onset]))),
        i_ref,
    )
    if max(span_d, span_q) > 1e-6 * base:
        raise NotAtEquilibrium(
            f"pre-step output drift {max(span_d, span_q):.3e} exceeds 1e-6 of {base:.3e}"
        )


def run_step_pair(
    plant: Plant,
    injection: StepInjection | None = None,
    x_eq: np.ndarray | None = None,
    fs: float = MIN_SAMPLE_RATE_HZ,
    substeps: int = 10,
) -> StepExperimentPair:
    """Run one step per axis from the same equilibrium.

    The template's axis is ignored; g, t_step and record_length apply to
    both runs. Output currents are returned as deviations (pre-step
    baseline mean removed); a visible drift in the pre-step window means
    the supplied state was not an equilibrium and raises NotAtEquilibrium.
    """
    inj = injection if injection is not None else StepInjection()
    if x_eq is None:
        x_eq = find_equilibrium(plant)
    onset = int(round(inj.t_step * fs))
    records: dict[str, SimulationRecord] = {}
    g_abs: dict[str, float] = {}
    for axis in ("d", "q"):
        mag = _axis_step_volts(plant, axis, inj.g)
        rec = simulate(
            plant,
            {"kind": "step", "axis": axis, "magnitude": mag, "t_start": inj.t_step},
            duration=inj.record_length,
            fs=fs,
            initial_state=x_eq,
            substeps=substeps,
        )
        _equilibrium_drift_check(rec, onset, i_ref=float(plant.state_scale[-1]))
        i_d = remove_dc_offset(rec.i_o.d, (0, onset))
        i_q = remove_dc_offset(rec.i_o.q, (0, onset))
        records[axis] = SimulationRecord(
            v_g=rec.v_g,
            i_o=DqSignal(i_d, i_q),
            final_state=rec.final_state,
            steady_state_reached=rec.steady_state_reached,
        )
        g_abs[axis] = mag
    return StepExperimentPair(
        record_d=records["d"],
        record_q=records["q"],
        g=inj.g,
        dt=1.0 / float(fs),
        g_abs_d=g_abs["d"],
        g_abs_q=g_abs["q"],
        onset_index=onset,
    )


def snap_to_coherent_grid(
    frequencies_hz: np.ndarray, fs: float, cycles: int
) -> tuple[np.ndarray, np.ndarray]:
    """Snap each frequency to cycles*fs/N for integer window length N.

    Window lengths are forced strictly decreasing so snapped frequencies
    stay strictly increasing even where the requested grid is finer than
    the coherent one; every window keeps the tone strictly below Nyquist
    (N > 2*cycles). Returns (snapped frequencies, window lengths).
    """
    f = np.asarray(frequencies_hz, dtype=float)
    n_min = 2 * cycles + 1  # N <= 2*cycles puts the tone at/above Nyquist
    windows = np.empty(f.size, dtype=np.int64)
    prev = 0
    # assign from the highest frequency down: the scarce short windows go
    # to the top of the grid and longer ones are forced strictly longer
    for i in range(f.size - 1, -1, -1):
        n_i = int(round(cycles * fs / f[i]))
        n_i = max(n_i, n_min, prev + 1)
        windows[i] = n_i
        prev = n_i
    snapped = cycles * fs / windows
    return snapped, windows


def _sweep_worker_count(n_tasks: int, workers: int | None) -> int:
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        if env is not None:
            try:
                workers = int(env)
            except ValueError as exc:
                raise InvalidParameters(WORKERS_ENV, "must be an integer") from exc
        else:
            workers = os.cpu_count() or 1
    if workers < 1:
        raise InvalidParameters("workers", "must be >= 1")
    return max(1, min(workers, n_tasks))


def run_sweep(
    plant: Plant,
    plan: SweepPlan | None = None,
    x_eq: np.ndarray | None = None,
    fs: float = MIN_SAMPLE_RATE_HZ,
    substeps: int = 10,
    workers: int | None = None,
) -> SweepDataset:
    """Measure the four admittance channels one frequency at a time.

    Each snapped frequency is excited twice (d axis then q axis). A
    settling prelude of max(2 injection cycles, the plant's dominant
    settle hint) is simulated and discarded; the phasor ratio is taken
    over the final `cycles` periods, whose length is an exact integer
    sample count by construction. Work is spread over a thread pool
    (DQADMIT_WORKERS or the CPU count) and merged by frequency index, so
    results do not depend on scheduling.
    """
    if plan is None:
        plan = SweepPlan()
    if x_eq is None:
        x_eq = find_equilibrium(plant)
    fs = float(fs)
    template = plan.template
    nyq = 0.5 * fs
    if plan.frequencies_hz[-1] >= nyq:
        raise AboveNyquist(
            f"plan reaches {plan.frequencies_hz[-1]:.6g} Hz, at or above Nyquist {nyq:.6g} Hz"
        )
    snapped, windows = snap_to_coherent_grid(plan.frequencies_hz, fs, template.cycles)
    amp = 0.5 * template.amplitude_pp
    settle_hint = plant.settle_time_s
    n_f = snapped.size
    cols = np.empty((n_f, 2, 2), dtype=complex)  # [freq, output (d,q), input (d,q)]

    def measure(idx: int) -> None:
        f_i = float(snapped[idx])
        n_win = int(windows[idx])
        prelude_s = max(2.0 * template.cycles / f_i, settle_hint)
        n_pre = int(math.ceil(prelude_s * fs))
        n_total = n_pre + n_win
        duration = n_total / fs
        for j, axis in enumerate(("d", "q")):
            rec = simulate(
                plant,
                {"kind": "sine", "axis": axis, "amplitude": amp, "frequency_hz": f_i},
                duration=duration,
                fs=fs,
                initial_state=x_eq,
                substeps=substeps,
            )
            u_series = rec.v_g.d if axis == "d" else rec.v_g.q
            u = extract_phasor(u_series.last(n_win), f_i)
            i_d = extract_phasor(rec.i_o.d.last(n_win), f_i)
            i_q = extract_phasor(rec.i_o.q.last(n_win), f_i)
            cols[idx, 0, j] = -i_d.value / u.value
            cols[idx, 1, j] = -i_q.value / u.value

    n_workers = _sweep_worker_count(n_f, workers)
    if n_workers == 1:
        for idx in range(n_f):
            measure(idx)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(measure, idx) for idx in range(n_f)]
            for fut in futures:
                fut.result()

    return SweepDataset(
        Ydd=FrequencyResponse(snapped, cols[:, 0, 0].copy()),
        Ydq=FrequencyResponse(snapped, cols[:, 0, 1].copy()),
        Yqd=FrequencyResponse(snapped, cols[:, 1, 0].copy()),
        Yqq=FrequencyResponse(snapped, cols[:, 1, 1].copy()),
    )
