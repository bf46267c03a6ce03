"""Grid-forming inverter testbed and RL reference plant.

Two simulated devices share one interface: a droop-controlled
grid-forming inverter connected through an LC filter and a coupling
branch to a stiff source behind an RL branch (with a constant-impedance
local load), and a plain series RL branch used as an analytically
solvable reference. Both are integrated with a fixed-step RK4 kernel and
expose the same measurement: the dq current injected into the source
node, in the source frame, while the source voltage is perturbed.

Sign convention: positive output current flows from the device toward
the source, so the small-signal quantity identified downstream is minus
the current response over the voltage perturbation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import _kernels
from .errors import (
    EquilibriumNotFound,
    InvalidParameters,
    SimulationDiverged,
)
from .signals import DqSignal, TimeSeries

MIN_SAMPLE_RATE_HZ = 2500.0

GFM_STATE_NAMES = (
    "delta",
    "P",
    "Q",
    "phi_d",
    "phi_q",
    "gam_d",
    "gam_q",
    "i_ld",
    "i_lq",
    "v_od",
    "v_oq",
    "i_od",
    "i_oq",
)

RL_STATE_NAMES = ("i_d", "i_q")


def _require(cond: bool, name: str, message: str) -> None:
    if not cond:
        raise InvalidParameters(name, message)


def _finite(value: float, name: str) -> float:
    v = float(value)
    if not math.isfinite(v):
        raise InvalidParameters(name, "must be finite")
    return v


@dataclass(frozen=True)
class GfmParameters:
    """Inverter-side constants: droop targets, control gains, filter.

    Defaults reproduce the reference operating point used by the
    acceptance suite. All passive elements must be positive, gains
    non-negative, and the power-filter corner must sit below the
    angle-integrator base frequency.
    """

    V_ni: float = 381.0
    omega_ni: float = 377.0
    V_DC: float = 1000.0
    m_P: float = 9.4e-5
    n_Q: float = 1.3e-3
    R_c: float = 0.03
    L_c: float = 1.0e-3
    R_f: float = 0.001
    L_f: float = 0.3e-3
    C_f: float = 10.0e-6
    K_PV: float = 0.1
    K_IV: float = 420.0
    K_PC: float = 15.0
    K_IC: float = 20000.0
    omega_b: float = 377.0
    F: float = 0.75
    omega_c: float = 37.7

    def __post_init__(self) -> None:
        for name in ("R_c", "L_c", "R_f", "L_f", "C_f"):
            _require(_finite(getattr(self, name), name) > 0.0, name, "must be > 0")
        for name in ("m_P", "n_Q", "K_PV", "K_IV", "K_PC", "K_IC", "F"):
            _require(_finite(getattr(self, name), name) >= 0.0, name, "must be >= 0")
        _require(_finite(self.V_ni, "V_ni") > 0.0, "V_ni", "must be > 0")
        _require(_finite(self.V_DC, "V_DC") > 0.0, "V_DC", "must be > 0")
        _require(_finite(self.omega_ni, "omega_ni") > 0.0, "omega_ni", "must be > 0")
        _require(_finite(self.omega_b, "omega_b") > 0.0, "omega_b", "must be > 0")
        _require(_finite(self.omega_c, "omega_c") > 0.0, "omega_c", "must be > 0")
        _require(self.omega_c < self.omega_b, "omega_c", "must be < omega_b")


@dataclass(frozen=True)
class GridParameters:
    """Source, branch impedance, and local constant-impedance load."""

    omega_g: float = 377.0
    R_grid: float = 0.23
    L_grid: float = 318.0e-6
    V_gd: float = 380.0
    V_gq: float = 0.0
    P_load: float = 12.0e3
    Q_load: float = 12.0e3

    def __post_init__(self) -> None:
        _require(_finite(self.R_grid, "R_grid") > 0.0, "R_grid", "must be > 0")
        _require(_finite(self.L_grid, "L_grid") > 0.0, "L_grid", "must be > 0")
        _require(_finite(self.omega_g, "omega_g") > 0.0, "omega_g", "must be > 0")
        _finite(self.V_gd, "V_gd")
        _finite(self.V_gq, "V_gq")
        _require(_finite(self.P_load, "P_load") >= 0.0, "P_load", "must be >= 0")
        _require(_finite(self.Q_load, "Q_load") >= 0.0, "Q_load", "must be >= 0")
        if (self.P_load > 0.0 or self.Q_load > 0.0) and self.v_nominal == 0.0:
            raise InvalidParameters("V_gd", "load sizing needs a nonzero source voltage")

    @property
    def v_nominal(self) -> float:
        return math.hypot(self.V_gd, self.V_gq)

    def load_admittance(self) -> complex:
        """Constant shunt admittance absorbing (P_load, Q_load) at nominal voltage.

        Peak-valued dq phasors carry 1.5*V*conj(I) of complex power, hence
        the 1.5 in the sizing.
        """
        if self.P_load == 0.0 and self.Q_load == 0.0:
            return 0j
        vsq = 1.5 * self.v_nominal**2
        return complex(self.P_load / vsq, -self.Q_load / vsq)

    def branch_admittance(self) -> complex:
        return 1.0 / complex(self.R_grid, self.omega_g * self.L_grid)


@dataclass(frozen=True)
class RlParameters:
    """Series RL branch tied to the same stiff source."""

    R: float
    L: float
    omega0: float
    V_gd: float = 380.0
    V_gq: float = 0.0

    def __post_init__(self) -> None:
        _require(_finite(self.R, "R") > 0.0, "R", "must be > 0")
        _require(_finite(self.L, "L") > 0.0, "L", "must be > 0")
        _finite(self.omega0, "omega0")
        _finite(self.V_gd, "V_gd")
        _finite(self.V_gq, "V_gq")


@dataclass(frozen=True)
class Plant:
    """A simulatable device: state metadata plus a packed parameter vector.

    Instances are built by :func:`build_gfm_plant` or
    :func:`build_rl_reference_plant`; fields are implementation plumbing
    for :func:`simulate` and :func:`find_equilibrium`.
    """

    kind: str
    kind_code: int
    par: np.ndarray
    state_names: tuple[str, ...]
    state_scale: np.ndarray
    rate_scale: np.ndarray
    settle_time_s: float
    divergence_bound: float
    gfm: GfmParameters | None = None
    grid: GridParameters | None = None
    rl: RlParameters | None = None
    _default_state: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    def default_initial_state(self) -> np.ndarray:
        return self._default_state.copy()

    def rhs(self, state: np.ndarray, u_d: float = 0.0, u_q: float = 0.0) -> np.ndarray:
        """State derivative at (state, source-voltage perturbation)."""
        x = np.asarray(state, dtype=float)
        if x.shape != (self.n_states,):
            raise InvalidParameters("state", f"expected shape ({self.n_states},)")
        return _kernels.eval_rhs(self.kind_code, x, float(u_d), float(u_q), self.par)

    def closed_form_admittance(self, frequencies_hz: np.ndarray) -> dict[str, np.ndarray]:
        """Exact source-frame admittance of the RL reference.

        Returns the four channel arrays keyed 'Ydd', 'Ydq', 'Yqd', 'Yqq'
        over the given frequencies (Hz). Only the RL plant has a closed
        form; asking the inverter for one is an error.
        """
        if self.rl is None:
            raise InvalidParameters("kind", "closed form exists only for the RL reference")
        f = np.asarray(frequencies_hz, dtype=float)
        s = 2j * np.pi * f
        r, el, w0 = self.rl.R, self.rl.L, self.rl.omega0
        a = r + s * el
        b = w0 * el
        den = a * a + b * b
        return {
            "Ydd": a / den,
            "Ydq": b / den,
            "Yqd": -b / den,
            "Yqq": a / den,
        }


def build_gfm_plant(
    inverter: GfmParameters | None = None,
    grid: GridParameters | None = None,
) -> Plant:
    """Assemble the 13-state inverter testbed."""
    inv = inverter if inverter is not None else GfmParameters()
    grd = grid if grid is not None else GridParameters()
    y_l = grd.load_admittance()
    y_g = grd.branch_admittance()
    par = np.array(
        [
            inv.V_ni,
            inv.omega_ni,
            0.5 * inv.V_DC,
            inv.m_P,
            inv.n_Q,
            inv.R_c,
            inv.L_c,
            inv.R_f,
            inv.L_f,
            inv.C_f,
            inv.K_PV,
            inv.K_IV,
            inv.K_PC,
            inv.K_IC,
            inv.F,
            inv.omega_c,
            grd.omega_g,
            grd.V_gd,
            grd.V_gq,
            y_l.real,
            y_l.imag,
            y_g.real,
            y_g.imag,
        ]
    )
    v_nom = max(grd.v_nominal, inv.V_ni)
    z_c = math.hypot(inv.R_c, grd.omega_g * inv.L_c)
    i_nom = max(v_nom / max(z_c, 1e-9), 1.0)
    s_nom = 1.5 * v_nom * i_nom
    # slowest closed-loop dynamics are the droop power filter
    settle = 5.0 / inv.omega_c
    state_scale = np.array(
        [1.0, s_nom, s_nom, i_nom / max(inv.K_IV, 1.0), i_nom / max(inv.K_IV, 1.0),
         v_nom / max(inv.K_IC, 1.0), v_nom / max(inv.K_IC, 1.0),
         i_nom, i_nom, v_nom, v_nom, i_nom, i_nom]
    )
    rate_scale = np.array(
        [inv.omega_c, s_nom * inv.omega_c, s_nom * inv.omega_c,
         v_nom, v_nom, i_nom, i_nom,
         v_nom / inv.L_f, v_nom / inv.L_f,
         i_nom / inv.C_f, i_nom / inv.C_f,
         v_nom / inv.L_c, v_nom / inv.L_c]
    )
    x0 = np.zeros(13)
    x0[9] = v_nom
    return Plant(
        kind="gfm",
        kind_code=_kernels.GFM_KIND,
        par=par,
        state_names=GFM_STATE_NAMES,
        state_scale=state_scale,
        rate_scale=rate_scale,
        settle_time_s=settle,
        divergence_bound=1e6 * max(v_nom, s_nom),
        gfm=inv,
        grid=grd,
        _default_state=x0,
    )


def build_rl_reference_plant(
    R: float,
    L: float,
    omega0: float,
    V_gd: float = 380.0,
    V_gq: float = 0.0,
) -> Plant:
    """Assemble the 2-state series-RL reference."""
    rl = RlParameters(R=float(R), L=float(L), omega0=float(omega0), V_gd=float(V_gd), V_gq=float(V_gq))
    par = np.array([rl.R, rl.L, rl.omega0, rl.V_gd, rl.V_gq])
    v_nom = max(math.hypot(rl.V_gd, rl.V_gq), 1.0)
    i_nom = v_nom / math.hypot(rl.R, rl.omega0 * rl.L)
    tau = rl.L / rl.R
    return Plant(
        kind="rl",
        kind_code=_kernels.RL_KIND,
        par=par,
        state_names=RL_STATE_NAMES,
        state_scale=np.array([i_nom, i_nom]),
        rate_scale=np.array([v_nom / rl.L, v_nom / rl.L]),
        settle_time_s=10.0 * tau,
        divergence_bound=1e6 * max(v_nom, i_nom),
        rl=rl,
        _default_state=np.zeros(2),
    )


@dataclass(frozen=True)
class SimulationRecord:
    """Uniformly sampled source-voltage input and injected-current output."""

    v_g: DqSignal
    i_o: DqSignal
    final_state: np.ndarray
    steady_state_reached: bool

    @property
    def dt(self) -> float:
        return self.i_o.dt


Perturbation = Mapping[str, object] | None


def _descriptor(perturbation: Perturbation, substeps: int, fs: float, h: float):
    """Translate a perturbation mapping into kernel (itype, p1, p2).

    Returns None when the perturbation is a generic callable and must go
    through the pre-sampled array path.
    """
    if perturbation is None:
        return 0, 0.0, 0.0
    kind = perturbation.get("kind")
    axis = perturbation.get("axis")
    if axis not in ("d", "q"):
        raise InvalidParameters("axis", "must be 'd' or 'q'")
    if kind == "step":
        mag = float(perturbation["magnitude"])  # type: ignore[arg-type]
        t_on = float(perturbation.get("t_start", 0.0))  # type: ignore[arg-type]
        if not math.isfinite(mag):
            raise InvalidParameters("magnitude", "must be finite")
        if t_on < 0.0:
            raise InvalidParameters("t_start", "must be >= 0")
        # place the edge on the nearest internal grid point
        j0 = round(t_on * fs) * substeps
        itype = _kernels.STEP_D if axis == "d" else _kernels.STEP_Q
        return itype, mag, float(j0)
    if kind == "sine":
        amp = float(perturbation["amplitude"])  # type: ignore[arg-type]
        f = float(perturbation["frequency_hz"])  # type: ignore[arg-type]
        if not (math.isfinite(amp) and math.isfinite(f) and f > 0.0):
            raise InvalidParameters("frequency_hz", "must be finite and > 0")
        itype = _kernels.SINE_D if axis == "d" else _kernels.SINE_Q
        return itype, amp, f
    if kind == "callable":
        return None
    raise InvalidParameters("kind", "must be 'step', 'sine', or 'callable'")


def simulate(
    plant: Plant,
    perturbation: Perturbation = None,
    duration: float = 1.0,
    fs: float = MIN_SAMPLE_RATE_HZ,
    initial_state: np.ndarray | None = None,
    substeps: int = 10,
) -> SimulationRecord:
    """Integrate the plant and record source voltage and injected current.

    The perturbation rides on top of the constant source voltage:
    ``{'kind': 'step', 'axis': 'd'|'q', 'magnitude': V, 't_start': s}``,
    ``{'kind': 'sine', 'axis': ..., 'amplitude': V, 'frequency_hz': f}``,
    ``{'kind': 'callable', 'axis': ..., 'fn': t -> V}``, or None.
    Samples land on t = k/fs for k in 0..round(duration*fs); fs below
    2.5 kHz is rejected rather than silently aliased.
    """
    fs = float(fs)
    duration = float(duration)
    if fs < MIN_SAMPLE_RATE_HZ:
        raise InvalidParameters("fs", f"must be >= {MIN_SAMPLE_RATE_HZ} Hz")
    if not (math.isfinite(duration) and duration > 0.0):
        raise InvalidParameters("duration", "must be finite and > 0")
    substeps = int(substeps)
    if substeps < 1:
        raise InvalidParameters("substeps", "must be >= 1")
    n_out = int(round(duration * fs))
    if n_out < 1:
        raise InvalidParameters("duration", "shorter than one sample")
    dt = 1.0 / fs
    h = dt / substeps
    if initial_state is None:
        x0 = plant.default_initial_state()
    else:
        x0 = np.asarray(initial_state, dtype=float).copy()
        if x0.shape != (plant.n_states,):
            raise InvalidParameters("initial_state", f"expected shape ({plant.n_states},)")
        if not np.all(np.isfinite(x0)):
            raise InvalidParameters("initial_state", "must be finite")

    desc = _descriptor(perturbation, substeps, fs, h)
    if desc is not None:
        itype, p1, p2 = desc
        out, xf, fail = _kernels.run_fixed(
            plant.kind_code, x0, itype, p1, p2, n_out, substeps, h, plant.par, plant.divergence_bound
        )
        k = np.arange(n_out + 1)
        if itype == 0:
            u = np.zeros(n_out + 1)
        elif itype in (_kernels.STEP_D, _kernels.STEP_Q):
            u = np.where(k * substeps >= p2, p1, 0.0)
        else:
            u = p1 * np.sin(2.0 * np.pi * p2 * (k * dt))
        axis_d = itype in (_kernels.STEP_D, _kernels.SINE_D)
    else:
        fn: Callable[[float], float] = perturbation["fn"]  # type: ignore[index,assignment]
        axis = perturbation["axis"]  # type: ignore[index]
        t_half = np.arange(2 * n_out * substeps + 1) * (0.5 * h)
        u_half = np.asarray([float(fn(t)) for t in t_half])
        if not np.all(np.isfinite(u_half)):
            raise InvalidParameters("fn", "perturbation samples must be finite")
        zeros = np.zeros_like(u_half)
        ud_half, uq_half = (u_half, zeros) if axis == "d" else (zeros, u_half)
        out, xf, fail = _kernels.run_fixed_arrays(
            plant.kind_code, x0, ud_half, uq_half, n_out, substeps, h, plant.par, plant.divergence_bound
        )
        u = u_half[:: 2 * substeps]
        axis_d = axis == "d"

    if fail >= 0:
        raise SimulationDiverged(fail * dt)

    vg_base_d = plant.par[17] if plant.kind_code == _kernels.GFM_KIND else plant.par[3]
    vg_base_q = plant.par[18] if plant.kind_code == _kernels.GFM_KIND else plant.par[4]
    vgd = np.full(n_out + 1, vg_base_d)
    vgq = np.full(n_out + 1, vg_base_q)
    if axis_d:
        vgd = vgd + u
    else:
        vgq = vgq + u

    i_d = out[:, 0].copy()
    i_q = out[:, 1].copy()

    tail = min(n_out + 1, int(round(0.1 * fs)) + 1)
    i_nom = plant.state_scale[plant.n_states - 1]
    ref = max(abs(i_d[-1]), abs(i_q[-1]), i_nom)
    span_d = float(np.ptp(i_d[-tail:]))
    span_q = float(np.ptp(i_q[-tail:]))
    steady = max(span_d, span_q) < 1e-6 * ref

    return SimulationRecord(
        v_g=DqSignal(TimeSeries(vgd, dt), TimeSeries(vgq, dt)),
        i_o=DqSignal(TimeSeries(i_d, dt), TimeSeries(i_q, dt)),
        final_state=xf,
        steady_state_reached=bool(steady),
    )


def find_equilibrium(plant: Plant, initial_guess: np.ndarray | None = None) -> np.ndarray:
    """Locate the unforced operating point: simulate to near-rest, then polish.

    A quiescent simulation rides out the nonlinear transient; damped
    Newton iterations on the per-unitized state derivative then drive the
    residual toward round-off. Raises EquilibriumNotFound with the best
    residual when the polish cannot reach at least 1e-9 per unit.
    """
    if initial_guess is None:
        x = plant.default_initial_state()
    else:
        x = np.asarray(initial_guess, dtype=float).copy()
        if x.shape != (plant.n_states,):
            raise InvalidParameters("initial_guess", f"expected shape ({plant.n_states},)")

    horizon = max(20.0 * plant.settle_time_s, 1.0)
    rec = simulate(plant, None, duration=horizon, fs=MIN_SAMPLE_RATE_HZ, initial_state=x)
    x = rec.final_state.copy()

    def residual_pu(xv: np.ndarray) -> tuple[np.ndarray, float]:
        f = _kernels.eval_rhs(plant.kind_code, xv, 0.0, 0.0, plant.par)
        return f, float(np.max(np.abs(f / plant.rate_scale)))

    n = plant.n_states
    f, err = residual_pu(x)
    best_err = err
    for _ in range(60):
        if err < 1e-13:
            break
        jac = np.empty((n, n))
        for i in range(n):
            step = 1e-7 * plant.state_scale[i]
            xp = x.copy()
            xm = x.copy()
            xp[i] += step
            xm[i] -= step
            fp = _kernels.eval_rhs(plant.kind_code, xp, 0.0, 0.0, plant.par)
            fm = _kernels.eval_rhs(plant.kind_code, xm, 0.0, 0.0, plant.par)
            jac[:, i] = (fp - fm) / (2.0 * step)
        try:
            delta = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise EquilibriumNotFound(best_err) from exc
        lam = 1.0
        improved = False
        for _ in range(15):
            xn = x + lam * delta
            fn, en = residual_pu(xn)
            if en < err:
                x, f, err = xn, fn, en
                improved = True
                break
            lam *= 0.5
        if not improved:
            break
        best_err = min(best_err, err)
    if err > 1e-9:
        raise EquilibriumNotFound(err)
    return x
