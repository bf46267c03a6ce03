"""Command-line front end: run identification, compare tables, self-check.

Verbs:
  run      build the configured plant, run the requested methods, write artifacts
  compare  diff two bode CSVs over a band, write an agreement report
  oracle   full pipeline on the closed-form RL reference, assert tolerances

Exit codes: 0 ok, 1 threshold or oracle failure, 2 input error, 3 runtime error.

Config files are flat INI text (sections in square brackets, key = value,
'#' or ';' comments). Unknown sections or keys are rejected so typos fail
loudly instead of silently keeping a default. The effective config, with
every default resolved, is echoed into the output directory; re-running
from the echo reproduces the run bit for bit. Data artifacts contain no
timestamps; the manifest carries the only one, plus a sha256 per file.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .admittance import (
    CHANNEL_NAMES,
    BodeTable,
    DqAdmittance,
    assemble_sem,
    assemble_sfra,
    bode,
)
from .era import era_admittance
from .errors import DqadmitError, InvalidParameters
from .experiments import (
    SineInjection,
    StepExperimentPair,
    StepInjection,
    SweepDataset,
    SweepPlan,
    default_sweep_frequencies,
    run_step_pair,
    run_sweep,
    snap_to_coherent_grid,
)
from .plant import (
    MIN_SAMPLE_RATE_HZ,
    GfmParameters,
    GridParameters,
    Plant,
    build_gfm_plant,
    build_rl_reference_plant,
    find_equilibrium,
)
from .ratfit import FitOptions

METHOD_NAMES = ("era", "sem", "sfra")

_GFM_KEYS = tuple(f.name for f in dataclasses.fields(GfmParameters))
_GRID_KEYS = tuple(f.name for f in dataclasses.fields(GridParameters))
_RL_KEYS = ("R", "L", "omega0")

_SECTIONS = {
    "plant": None,  # keys depend on plant kind, resolved in the loader
    "sampling": ("fs", "record_length"),
    "era": ("order", "g"),
    "sem": ("n_poles", "g"),
    "sfra": ("f_min", "f_max", "points", "cycles", "amplitude_pp", "n_poles"),
    "output": ("directory", "emit_timeseries"),
}


def _fmt(x: float) -> str:
    # One fixed wire format for every float artifact: round-trip exact.
    return f"{float(x):.17e}"


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """Every knob of one run, defaults resolved, validated at load."""

    plant_kind: str = "gfm"
    gfm: GfmParameters | None = None
    grid: GridParameters | None = None
    rl_R: float | None = None
    rl_L: float | None = None
    rl_omega0: float | None = None
    fs: float = 2500.0
    record_length: float = 1.0
    era_order: int | str = 6
    era_g: float = 0.01
    sem_n_poles: int = 4
    sem_g: float = 0.01
    sfra_f_min: float = 0.1
    sfra_f_max: float = 1000.0
    sfra_points: int = 100
    sfra_cycles: int = 2
    sfra_amplitude_pp: float = 0.1
    sfra_n_poles: int = 4
    out_directory: str = "dqadmit_out"
    emit_timeseries: bool = False


def _parse_float(section: str, key: str, raw: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise InvalidParameters(key, f"[{section}] expects a number, got {raw!r}") from None
    if not math.isfinite(value):
        raise InvalidParameters(key, f"[{section}] must be finite")
    return value


def _parse_int(section: str, key: str, raw: str) -> int:
    value = _parse_float(section, key, raw)
    if int(value) != value:
        raise InvalidParameters(key, f"[{section}] expects an integer, got {raw!r}")
    return int(value)


def _parse_bool(section: str, key: str, raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise InvalidParameters(key, f"[{section}] expects true/false, got {raw!r}")


def parse_run_config(text: str) -> RunConfig:
    """Parse and validate config text; raise InvalidParameters on any flaw."""
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), strict=True
    )
    parser.optionxform = str  # keys are case sensitive (V_ni vs v_ni)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InvalidParameters("config", str(exc)) from None
    if parser.defaults():
        raise InvalidParameters("DEFAULT", "a DEFAULT section is not allowed")
    for section in parser.sections():
        if section not in _SECTIONS:
            raise InvalidParameters(section, "unknown section")

    def section_items(name: str) -> dict[str, str]:
        return dict(parser.items(name)) if parser.has_section(name) else {}

    def reject_unknown(name: str, items: dict[str, str], allowed: tuple[str, ...]) -> None:
        for key in items:
            if key not in allowed:
                raise InvalidParameters(key, f"unknown key in [{name}]")

    resolved: dict[str, object] = {}

    plant_items = section_items("plant")
    kind = plant_items.get("kind", "gfm")
    if kind not in ("gfm", "rl_reference"):
        raise InvalidParameters("kind", "must be 'gfm' or 'rl_reference'")
    resolved["plant_kind"] = kind
    if kind == "gfm":
        reject_unknown("plant", plant_items, ("kind",) + _GFM_KEYS + _GRID_KEYS)
        gfm_kwargs = {
            k: _parse_float("plant", k, plant_items[k]) for k in _GFM_KEYS if k in plant_items
        }
        grid_kwargs = {
            k: _parse_float("plant", k, plant_items[k]) for k in _GRID_KEYS if k in plant_items
        }
        resolved["gfm"] = GfmParameters(**gfm_kwargs)
        resolved["grid"] = GridParameters(**grid_kwargs)
    else:
        reject_unknown("plant", plant_items, ("kind",) + _RL_KEYS)
        for key in _RL_KEYS:
            if key not in plant_items:
                raise InvalidParameters(key, "required for kind=rl_reference")
        resolved["rl_R"] = _parse_float("plant", "R", plant_items["R"])
        resolved["rl_L"] = _parse_float("plant", "L", plant_items["L"])
        resolved["rl_omega0"] = _parse_float("plant", "omega0", plant_items["omega0"])

    sampling = section_items("sampling")
    reject_unknown("sampling", sampling, _SECTIONS["sampling"])
    if "fs" in sampling:
        resolved["fs"] = _parse_float("sampling", "fs", sampling["fs"])
    if "record_length" in sampling:
        resolved["record_length"] = _parse_float(
            "sampling", "record_length", sampling["record_length"]
        )

    era_items = section_items("era")
    reject_unknown("era", era_items, _SECTIONS["era"])
    if "order" in era_items:
        raw = era_items["order"].strip()
        resolved["era_order"] = "auto" if raw == "auto" else _parse_int("era", "order", raw)
    if "g" in era_items:
        resolved["era_g"] = _parse_float("era", "g", era_items["g"])

    sem_items = section_items("sem")
    reject_unknown("sem", sem_items, _SECTIONS["sem"])
    if "n_poles" in sem_items:
        resolved["sem_n_poles"] = _parse_int("sem", "n_poles", sem_items["n_poles"])
    if "g" in sem_items:
        resolved["sem_g"] = _parse_float("sem", "g", sem_items["g"])

    sfra_items = section_items("sfra")
    reject_unknown("sfra", sfra_items, _SECTIONS["sfra"])
    if "f_min" in sfra_items:
        resolved["sfra_f_min"] = _parse_float("sfra", "f_min", sfra_items["f_min"])
    if "f_max" in sfra_items:
        resolved["sfra_f_max"] = _parse_float("sfra", "f_max", sfra_items["f_max"])
    if "points" in sfra_items:
        resolved["sfra_points"] = _parse_int("sfra", "points", sfra_items["points"])
    if "cycles" in sfra_items:
        resolved["sfra_cycles"] = _parse_int("sfra", "cycles", sfra_items["cycles"])
    if "amplitude_pp" in sfra_items:
        resolved["sfra_amplitude_pp"] = _parse_float(
            "sfra", "amplitude_pp", sfra_items["amplitude_pp"]
        )
    if "n_poles" in sfra_items:
        resolved["sfra_n_poles"] = _parse_int("sfra", "n_poles", sfra_items["n_poles"])

    output_items = section_items("output")
    reject_unknown("output", output_items, _SECTIONS["output"])
    if "directory" in output_items:
        resolved["out_directory"] = output_items["directory"].strip()
    if "emit_timeseries" in output_items:
        resolved["emit_timeseries"] = _parse_bool(
            "output", "emit_timeseries", output_items["emit_timeseries"]
        )

    cfg = RunConfig(**resolved)
    _validate_run_config(cfg)
    return cfg


def _validate_run_config(cfg: RunConfig) -> None:
    if cfg.fs < MIN_SAMPLE_RATE_HZ:
        raise InvalidParameters("fs", f"must be >= {MIN_SAMPLE_RATE_HZ:g} Hz")
    if cfg.record_length <= 0.1:
        raise InvalidParameters("record_length", "must exceed the 0.1 s pre-step baseline")
    if isinstance(cfg.era_order, int) and cfg.era_order < 1:
        raise InvalidParameters("order", "must be >= 1 or 'auto'")
    for key, value in (("g", cfg.era_g), ("g", cfg.sem_g)):
        if not (math.isfinite(value) and value > 0.0):
            raise InvalidParameters(key, "must be > 0")
    if cfg.sem_n_poles < 1 or cfg.sfra_n_poles < 1:
        raise InvalidParameters("n_poles", "must be >= 1")
    if not (0.0 < cfg.sfra_f_min < cfg.sfra_f_max):
        raise InvalidParameters("f_min", "need 0 < f_min < f_max")
    if cfg.sfra_f_max >= 0.5 * cfg.fs:
        raise InvalidParameters("f_max", "must be below the Nyquist frequency fs/2")
    if cfg.sfra_points < 2:
        raise InvalidParameters("points", "must be >= 2")
    if cfg.sfra_cycles < 1:
        raise InvalidParameters("cycles", "must be >= 1")
    if not (math.isfinite(cfg.sfra_amplitude_pp) and cfg.sfra_amplitude_pp > 0.0):
        raise InvalidParameters("amplitude_pp", "must be > 0")
    if not cfg.out_directory:
        raise InvalidParameters("directory", "must be a non-empty path")


def load_run_config(path: str | Path) -> RunConfig:
    return parse_run_config(Path(path).read_text())


def render_effective_config(cfg: RunConfig) -> str:
    """Echo the fully resolved config; re-loading it reproduces the run."""
    lines = ["[plant]", f"kind = {cfg.plant_kind}"]
    if cfg.plant_kind == "gfm":
        for key in _GFM_KEYS:
            lines.append(f"{key} = {_fmt(getattr(cfg.gfm, key))}")
        for key in _GRID_KEYS:
            lines.append(f"{key} = {_fmt(getattr(cfg.grid, key))}")
    else:
        lines.append(f"R = {_fmt(cfg.rl_R)}")
        lines.append(f"L = {_fmt(cfg.rl_L)}")
        lines.append(f"omega0 = {_fmt(cfg.rl_omega0)}")
    lines += [
        "",
        "[sampling]",
        f"fs = {_fmt(cfg.fs)}",
        f"record_length = {_fmt(cfg.record_length)}",
        "",
        "[era]",
        f"order = {cfg.era_order}",
        f"g = {_fmt(cfg.era_g)}",
        "",
        "[sem]",
        f"n_poles = {cfg.sem_n_poles}",
        f"g = {_fmt(cfg.sem_g)}",
        "",
        "[sfra]",
        f"f_min = {_fmt(cfg.sfra_f_min)}",
        f"f_max = {_fmt(cfg.sfra_f_max)}",
        f"points = {cfg.sfra_points}",
        f"cycles = {cfg.sfra_cycles}",
        f"amplitude_pp = {_fmt(cfg.sfra_amplitude_pp)}",
        f"n_poles = {cfg.sfra_n_poles}",
        "",
        "[output]",
        f"directory = {cfg.out_directory}",
        f"emit_timeseries = {'true' if cfg.emit_timeseries else 'false'}",
        "",
    ]
    return "\n".join(lines)


def build_plant_from_config(cfg: RunConfig) -> Plant:
    if cfg.plant_kind == "gfm":
        return build_gfm_plant(inverter=cfg.gfm, grid=cfg.grid)
    return build_rl_reference_plant(R=cfg.rl_R, L=cfg.rl_L, omega0=cfg.rl_omega0)


def _parse_methods(arg: str) -> tuple[str, ...]:
    if arg.strip().lower() == "all":
        return METHOD_NAMES
    requested = [token.strip().lower() for token in arg.split(",") if token.strip()]
    if not requested:
        raise InvalidParameters("methods", "need at least one of era, sem, sfra")
    for token in requested:
        if token not in METHOD_NAMES:
            raise InvalidParameters("methods", f"unknown method {token!r}")
    return tuple(m for m in METHOD_NAMES if m in requested)


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineResult:
    plant: Plant
    x_eq: np.ndarray
    eq_residual_pu: float
    pairs: dict[str, StepExperimentPair]  # keyed by method needing one
    sweep: SweepDataset | None
    admittances: dict[str, DqAdmittance]
    grid_hz: np.ndarray
    n_step_experiments: int
    n_sweep_simulations: int


def run_pipeline(cfg: RunConfig, methods: tuple[str, ...]) -> PipelineResult:
    """Execute the experiments and assemble each requested method."""
    plant = build_plant_from_config(cfg)
    x_eq = find_equilibrium(plant)
    residual = float(np.max(np.abs(plant.rhs(x_eq) / plant.rate_scale)))

    pairs: dict[str, StepExperimentPair] = {}
    pair_by_g: dict[float, StepExperimentPair] = {}
    n_steps = 0
    for method, g in (("era", cfg.era_g), ("sem", cfg.sem_g)):
        if method not in methods:
            continue
        if g not in pair_by_g:
            injection = StepInjection(g=g, t_step=0.1, record_length=cfg.record_length)
            pair_by_g[g] = run_step_pair(plant, injection, x_eq, fs=cfg.fs)
            n_steps += 2
        pairs[method] = pair_by_g[g]

    requested_hz = default_sweep_frequencies(cfg.sfra_points, cfg.sfra_f_min, cfg.sfra_f_max)
    sweep: SweepDataset | None = None
    n_sweeps = 0
    if "sfra" in methods:
        template = SineInjection(amplitude_pp=cfg.sfra_amplitude_pp, cycles=cfg.sfra_cycles)
        plan = SweepPlan(frequencies_hz=requested_hz, template=template)
        sweep = run_sweep(plant, plan, x_eq, fs=cfg.fs)
        n_sweeps = 2 * len(plan)
        grid_hz = sweep.frequencies_hz
    else:
        grid_hz, _ = snap_to_coherent_grid(requested_hz, cfg.fs, cfg.sfra_cycles)

    admittances: dict[str, DqAdmittance] = {}
    if "era" in methods:
        admittances["era"] = era_admittance(pairs["era"], order=cfg.era_order)
    if "sem" in methods:
        admittances["sem"] = assemble_sem(pairs["sem"], FitOptions(n_poles=cfg.sem_n_poles))
    if "sfra" in methods:
        admittances["sfra"] = assemble_sfra(sweep, FitOptions(n_poles=cfg.sfra_n_poles))

    return PipelineResult(
        plant=plant,
        x_eq=x_eq,
        eq_residual_pu=residual,
        pairs=pairs,
        sweep=sweep,
        admittances=admittances,
        grid_hz=np.asarray(grid_hz, dtype=float),
        n_step_experiments=n_steps,
        n_sweep_simulations=n_sweeps,
    )


# ---------------------------------------------------------------------------
# artifact rendering


def _bode_csv(table: BodeTable) -> bytes:
    lines = ["f_hz,channel,method,mag_db,phase_deg"]
    for f, channel, method, mag_db, phase_deg in table.rows():
        lines.append(f"{_fmt(f)},{channel},{method},{_fmt(mag_db)},{_fmt(phase_deg)}")
    return ("\n".join(lines) + "\n").encode()


def _mag_phase(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Same floor and unwrap convention as the bode table builder.
    mag_db = 20.0 * np.log10(np.maximum(np.abs(values), 1e-300))
    phase = np.degrees(np.unwrap(np.angle(values)))
    if phase.size and phase[0] <= -180.0:
        phase = phase + 360.0 * math.ceil((-180.0 - phase[0]) / 360.0 + 0.5)
    return mag_db, phase


def _fit_bode_csv(y: DqAdmittance, grid_hz: np.ndarray, label: str) -> bytes:
    lines = ["f_hz,channel,method,mag_db,phase_deg"]
    for name in CHANNEL_NAMES:
        values = y.channel(name).evaluate_fit(grid_hz)
        mag_db, phase = _mag_phase(values)
        for f, m, p in zip(grid_hz, mag_db, phase):
            lines.append(f"{_fmt(f)},{name},{label},{_fmt(m)},{_fmt(p)}")
    return ("\n".join(lines) + "\n").encode()


def _timeseries_csv(pair: StepExperimentPair, axis: str) -> bytes:
    record = pair.record_d if axis == "d" else pair.record_q
    t = record.v_g.d.times
    lines = ["t,v_gd,v_gq,i_od,i_oq"]
    for k in range(len(record.v_g.d)):
        lines.append(
            f"{_fmt(t[k])},{_fmt(record.v_g.d.samples[k])},{_fmt(record.v_g.q.samples[k])},"
            f"{_fmt(record.i_o.d.samples[k])},{_fmt(record.i_o.q.samples[k])}"
        )
    return ("\n".join(lines) + "\n").encode()


def _diagnostics_payload(result: PipelineResult, cfg: RunConfig) -> bytes:
    diag: dict[str, object] = {
        "equilibrium": {
            "residual_pu": result.eq_residual_pu,
            "n_states": int(result.x_eq.size),
        },
        "grid": {
            "n_points": int(result.grid_hz.size),
            "f_lo_hz": float(result.grid_hz[0]),
            "f_hi_hz": float(result.grid_hz[-1]),
        },
    }
    if "era" in result.admittances:
        y = result.admittances["era"]
        per_channel = {}
        for name in CHANNEL_NAMES:
            entry: dict[str, object] = {
                "rational_is_exact": bool(y.channel(name).rational_is_exact)
            }
            info = y.diagnostics.get(name)
            if info is not None:
                entry["chosen_order"] = int(info.chosen_order)
                entry["hankel_shape"] = [int(v) for v in info.hankel_shape]
                entry["singular_values"] = [float(v) for v in info.singular_values[:16]]
            per_channel[name] = entry
        diag["era"] = {"order": cfg.era_order, "channels": per_channel}
    for method in ("sem", "sfra"):
        if method not in result.admittances:
            continue
        y = result.admittances[method]
        per_channel = {}
        for name in CHANNEL_NAMES:
            fit = y.channel(name).fit
            per_channel[name] = {
                "nrmse_percent": float(fit.nrmse_percent),
                "iterations_used": int(fit.iterations_used),
                "converged": bool(fit.converged),
                "n_poles": int(fit.tf.n_poles),
            }
        diag[method] = {"channels": per_channel}
    if result.sweep is not None:
        diag["sfra"]["n_frequencies"] = int(result.sweep.frequencies_hz.size)
    return (json.dumps(diag, indent=2, sort_keys=True) + "\n").encode()


_GP_PREAMBLE = (
    "set grid\nset logscale x\nset xlabel 'frequency (Hz)'\n"
    "set datafile commentschars '#'\n"
)


def _figure_step(pair: StepExperimentPair) -> tuple[bytes, bytes]:
    t = pair.record_d.v_g.d.times
    cols = [
        t,
        pair.record_d.v_g.d.samples,
        pair.record_d.v_g.q.samples,
        pair.record_d.i_o.d.samples,
        pair.record_d.i_o.q.samples,
        pair.record_q.v_g.d.samples,
        pair.record_q.v_g.q.samples,
        pair.record_q.i_o.d.samples,
        pair.record_q.i_o.q.samples,
    ]
    header = "# t vgd_dstep vgq_dstep iod_dstep ioq_dstep vgd_qstep vgq_qstep iod_qstep ioq_qstep"
    lines = [header]
    for k in range(t.size):
        lines.append(" ".join(_fmt(col[k]) for col in cols))
    dat = ("\n".join(lines) + "\n").encode()
    gp = (
        "set grid\nset xlabel 'time (s)'\n"
        "set multiplot layout 2,1 title 'step experiments, output current deviation'\n"
        "set ylabel 'A'\n"
        "plot 'fig_step_timeseries.dat' using 1:4 with lines title 'i_od (d step)', \\\n"
        "     '' using 1:5 with lines title 'i_oq (d step)'\n"
        "plot 'fig_step_timeseries.dat' using 1:8 with lines title 'i_od (q step)', \\\n"
        "     '' using 1:9 with lines title 'i_oq (q step)'\n"
        "unset multiplot\n"
    ).encode()
    return dat, gp


def _figure_bode(
    result: PipelineResult, channels: tuple[str, str], stem: str
) -> tuple[bytes, bytes]:
    grid = result.grid_hz
    methods = [m for m in METHOD_NAMES if m in result.admittances]
    names = ["f_hz"]
    cols: list[np.ndarray] = [grid]
    for channel in channels:
        for method in methods:
            ch = result.admittances[method].channel(channel)
            values = ch.evaluate(grid) if method != "sfra" else ch.points.values
            mag_db, phase = _mag_phase(values)
            names += [f"{channel}_{method}_mag_db", f"{channel}_{method}_phase_deg"]
            cols += [mag_db, phase]
    lines = ["# " + " ".join(names)]
    for k in range(grid.size):
        lines.append(" ".join(_fmt(col[k]) for col in cols))
    dat = ("\n".join(lines) + "\n").encode()
    plots = []
    for j, channel in enumerate(channels):
        terms = []
        for i, method in enumerate(methods):
            col = 2 + 2 * (j * len(methods) + i)
            terms.append(f"'{stem}.dat' using 1:{col} with lines title '{channel} {method}'")
        plots.append("plot " + ", ".join(terms) + "\n")
    gp = (
        _GP_PREAMBLE
        + "set ylabel 'magnitude (dB)'\n"
        + f"set multiplot layout 2,1 title 'admittance magnitude: {channels[0]}, {channels[1]}'\n"
        + "".join(plots)
        + "unset multiplot\n"
    ).encode()
    return dat, gp


def _figure_sfra_fit(result: PipelineResult) -> tuple[bytes, bytes]:
    y = result.admittances["sfra"]
    grid = result.sweep.frequencies_hz
    names = ["f_hz"]
    cols: list[np.ndarray] = [grid]
    for channel in CHANNEL_NAMES:
        ch = y.channel(channel)
        meas_mag, meas_ph = _mag_phase(ch.points.values)
        fit_mag, fit_ph = _mag_phase(ch.evaluate_fit(grid))
        names += [
            f"{channel}_meas_mag_db",
            f"{channel}_meas_phase_deg",
            f"{channel}_fit_mag_db",
            f"{channel}_fit_phase_deg",
        ]
        cols += [meas_mag, meas_ph, fit_mag, fit_ph]
    lines = ["# " + " ".join(names)]
    for k in range(grid.size):
        lines.append(" ".join(_fmt(col[k]) for col in cols))
    dat = ("\n".join(lines) + "\n").encode()
    plots = []
    for j, channel in enumerate(CHANNEL_NAMES):
        meas_col = 2 + 4 * j
        fit_col = meas_col + 2
        plots.append(
            f"plot 'fig_sfra_fit.dat' using 1:{meas_col} with points title '{channel} measured', "
            f"'' using 1:{fit_col} with lines title '{channel} fit'\n"
        )
    gp = (
        _GP_PREAMBLE
        + "set ylabel 'magnitude (dB)'\n"
        + "set multiplot layout 2,2 title 'swept-sine points and rational fit'\n"
        + "".join(plots)
        + "unset multiplot\n"
    ).encode()
    return dat, gp


def _figure_deviation(result: PipelineResult) -> tuple[bytes, bytes]:
    grid = result.grid_hz
    methods = [m for m in METHOD_NAMES if m in result.admittances]
    pairs = [(a, b) for i, a in enumerate(methods) for b in methods[i + 1 :]]
    names = ["f_hz"]
    cols: list[np.ndarray] = [grid]

    def channel_values(method: str, channel: str) -> np.ndarray:
        ch = result.admittances[method].channel(channel)
        return ch.points.values if method == "sfra" else ch.evaluate(grid)

    for a, b in pairs:
        for channel in CHANNEL_NAMES:
            va = channel_values(a, channel)
            vb = channel_values(b, channel)
            mag_a, ph_a = _mag_phase(va)
            mag_b, ph_b = _mag_phase(vb)
            dmag = np.abs(mag_a - mag_b)
            dph = np.abs((ph_a - ph_b + 180.0) % 360.0 - 180.0)
            names += [f"{channel}_{a}_vs_{b}_dmag_db", f"{channel}_{a}_vs_{b}_dphase_deg"]
            cols += [dmag, dph]
    lines = ["# " + " ".join(names)]
    for k in range(grid.size):
        lines.append(" ".join(_fmt(col[k]) for col in cols))
    dat = ("\n".join(lines) + "\n").encode()
    terms = []
    for i in range(len(pairs) * len(CHANNEL_NAMES)):
        col = 2 + 2 * i
        terms.append(f"'fig_method_deviation.dat' using 1:{col} with lines title '{names[col - 1]}'")
    gp = (
        _GP_PREAMBLE
        + "set ylabel 'magnitude deviation (dB)'\n"
        + "plot " + ", \\\n     ".join(terms) + "\n"
    ).encode()
    return dat, gp


def render_artifacts(cfg: RunConfig, result: PipelineResult) -> dict[str, bytes]:
    """Build every data artifact in memory; nothing touches disk here."""
    payloads: dict[str, bytes] = {}
    payloads["effective.cfg"] = render_effective_config(cfg).encode()

    if cfg.emit_timeseries and result.pairs:
        first = next(iter(result.pairs.values()))
        payloads["step_d.csv"] = _timeseries_csv(first, "d")
        payloads["step_q.csv"] = _timeseries_csv(first, "q")
        for method, pair in result.pairs.items():
            if pair is not first:
                payloads[f"step_d_{method}.csv"] = _timeseries_csv(pair, "d")
                payloads[f"step_q_{method}.csv"] = _timeseries_csv(pair, "q")

    for method, y in result.admittances.items():
        payloads[f"{method}.csv"] = _bode_csv(bode(y, result.grid_hz))
    if "sfra" in result.admittances:
        payloads["sfra_fit.csv"] = _fit_bode_csv(
            result.admittances["sfra"], result.grid_hz, "SFRA-fit"
        )

    payloads["diagnostics.json"] = _diagnostics_payload(result, cfg)

    if result.pairs:
        dat, gp = _figure_step(next(iter(result.pairs.values())))
        payloads["figures/fig_step_timeseries.dat"] = dat
        payloads["figures/fig_step_timeseries.gp"] = gp
    if result.admittances:
        dat, gp = _figure_bode(result, ("Ydd", "Yqq"), "fig_bode_direct")
        payloads["figures/fig_bode_direct.dat"] = dat
        payloads["figures/fig_bode_direct.gp"] = gp
        dat, gp = _figure_bode(result, ("Ydq", "Yqd"), "fig_bode_cross")
        payloads["figures/fig_bode_cross.dat"] = dat
        payloads["figures/fig_bode_cross.gp"] = gp
    if "sfra" in result.admittances and result.sweep is not None:
        dat, gp = _figure_sfra_fit(result)
        payloads["figures/fig_sfra_fit.dat"] = dat
        payloads["figures/fig_sfra_fit.gp"] = gp
    if len(result.admittances) >= 2:
        dat, gp = _figure_deviation(result)
        payloads["figures/fig_method_deviation.dat"] = dat
        payloads["figures/fig_method_deviation.gp"] = gp
    return payloads


@dataclass(frozen=True)
class ArtifactSet:
    """Paths written by one run; the manifest is always last."""

    directory: Path
    files: tuple[str, ...]
    manifest_path: Path


def write_artifacts(
    out_dir: str | Path,
    payloads: dict[str, bytes],
    manifest_extra: dict[str, object],
) -> ArtifactSet:
    """Single writer: flush payloads, then the manifest with their hashes.

    Any failure removes everything written by this call, so a run never
    leaves a partial artifact set behind.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        for rel, data in payloads.items():
            path = out / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
            written.append(path)
        manifest = dict(manifest_extra)
        manifest["package"] = "dqadmit"
        manifest["version"] = __version__
        manifest["created_utc"] = datetime.now(timezone.utc).isoformat()
        manifest["files"] = {rel: _sha256(data) for rel, data in sorted(payloads.items())}
        manifest_path = out / "manifest.json"
        manifest_path.write_bytes((json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
        written.append(manifest_path)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return ArtifactSet(
        directory=out,
        files=tuple(payloads) + ("manifest.json",),
        manifest_path=out / "manifest.json",
    )


def cmd_run(config_path: str, methods_arg: str = "all", out_dir: str | None = None) -> int:
    try:
        cfg = load_run_config(config_path)
        methods = _parse_methods(methods_arg)
    except (InvalidParameters, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        result = run_pipeline(cfg, methods)
        payloads = render_artifacts(cfg, result)
        manifest_extra = {
            "config_sha256": _sha256(payloads["effective.cfg"]),
            "methods": list(methods),
            "counts": {
                "step_experiments": result.n_step_experiments,
                "sweep_simulations": result.n_sweep_simulations,
            },
            "settings": {
                "fs_hz": cfg.fs,
                "step_fraction_g": {"era": cfg.era_g, "sem": cfg.sem_g},
                "sine_amplitude_pp": cfg.sfra_amplitude_pp,
                "sine_cycles": cfg.sfra_cycles,
            },
        }
        artifacts = write_artifacts(out_dir or cfg.out_directory, payloads, manifest_extra)
    except (DqadmitError, OSError) as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return 3
    except np.linalg.LinAlgError as exc:
        print(f"run error: linear algebra failure: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {len(artifacts.files)} artifacts to {artifacts.directory}")
    for rel in artifacts.files:
        print(f"  {rel}")
    return 0


# ---------------------------------------------------------------------------
# compare


def _read_bode_csv(path: str | Path) -> tuple[dict[str, dict[float, tuple[float, float]]], set[str]]:
    """Parse a bode CSV into {channel: {f: (mag_db, phase_deg)}}.

    Raises InvalidParameters naming the file and 1-based line number on
    any malformed content, including duplicate (channel, f) rows.
    """
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0].strip() != "f_hz,channel,method,mag_db,phase_deg":
        raise InvalidParameters(str(path), "line 1: expected header f_hz,channel,method,mag_db,phase_deg")
    table: dict[str, dict[float, tuple[float, float]]] = {}
    methods: set[str] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise InvalidParameters(str(path), f"line {lineno}: expected 5 fields")
        try:
            f = float(parts[0])
            mag_db = float(parts[3])
            phase_deg = float(parts[4])
        except ValueError:
            raise InvalidParameters(str(path), f"line {lineno}: non-numeric field") from None
        channel = parts[1]
        if channel not in CHANNEL_NAMES:
            raise InvalidParameters(str(path), f"line {lineno}: unknown channel {channel!r}")
        methods.add(parts[2])
        per = table.setdefault(channel, {})
        if f in per:
            raise InvalidParameters(str(path), f"line {lineno}: duplicate frequency for {channel}")
        per[f] = (mag_db, phase_deg)
    if not table:
        raise InvalidParameters(str(path), "no data rows")
    return table, methods


def _parse_pair_flag(raw: str, flag: str) -> tuple[float, float]:
    parts = raw.split(":")
    if len(parts) != 2:
        raise InvalidParameters(flag, f"expected LO:HI, got {raw!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise InvalidParameters(flag, f"expected numbers, got {raw!r}") from None
    return lo, hi


def cmd_compare(
    bode_a: str,
    bode_b: str,
    band: str = "1:100",
    thresholds: str = "1:5",
    out: str = "report.csv",
) -> int:
    try:
        f_lo, f_hi = _parse_pair_flag(band, "band")
        if not (0.0 < f_lo < f_hi):
            raise InvalidParameters("band", "need 0 < LO < HI")
        thr_mag, thr_phase = _parse_pair_flag(thresholds, "thresholds")
        table_a, methods_a = _read_bode_csv(bode_a)
        table_b, methods_b = _read_bode_csv(bode_b)
    except (InvalidParameters, OSError) as exc:
        print(f"compare error: {exc}", file=sys.stderr)
        return 2

    label_a = "+".join(sorted(methods_a))
    label_b = "+".join(sorted(methods_b))
    rows: list[tuple[str, float, float, float, float, float, float]] = []
    for channel in CHANNEL_NAMES:
        if channel not in table_a or channel not in table_b:
            continue
        common = sorted(
            f for f in set(table_a[channel]) & set(table_b[channel]) if f_lo <= f <= f_hi
        )
        if not common:
            print(
                f"compare error: no overlapping frequencies for {channel} in band "
                f"{f_lo:g}:{f_hi:g}",
                file=sys.stderr,
            )
            return 2
        dmag = np.array([abs(table_a[channel][f][0] - table_b[channel][f][0]) for f in common])
        raw = np.array([table_a[channel][f][1] - table_b[channel][f][1] for f in common])
        dphase = np.abs((raw + 180.0) % 360.0 - 180.0)
        rows.append(
            (
                channel,
                common[0],
                common[-1],
                float(dmag.max()),
                float(dphase.max()),
                float(dmag.mean()),
                float(dphase.mean()),
            )
        )
    if not rows:
        print("compare error: no overlapping channels", file=sys.stderr)
        return 2

    lines = ["channel,f_lo,f_hi,max_dmag_db,max_dphase_deg,mean_dmag_db,mean_dphase_deg"]
    for row in rows:
        lines.append(row[0] + "," + ",".join(_fmt(v) for v in row[1:]))
    Path(out).write_text("\n".join(lines) + "\n")

    print(f"compare {label_a} vs {label_b}, band {f_lo:g}..{f_hi:g} Hz")
    print(f"{'channel':8s} {'n':>4s} {'max dmag dB':>12s} {'max dphase deg':>15s}")
    failed = False
    for channel, lo, hi, max_dmag, max_dphase, _, _ in rows:
        n = len(
            [f for f in set(table_a[channel]) & set(table_b[channel]) if f_lo <= f <= f_hi]
        )
        verdict = "ok"
        if max_dmag > thr_mag or max_dphase > thr_phase:
            verdict = "FAIL"
            failed = True
        print(f"{channel:8s} {n:4d} {max_dmag:12.4f} {max_dphase:15.4f}  {verdict}")
    print(f"report written to {out}")
    if failed:
        print(f"thresholds exceeded ({thr_mag:g} dB / {thr_phase:g} deg)", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# oracle


ORACLE_R = 0.23
ORACLE_L = 318.0e-6
ORACLE_OMEGA0 = 377.0
ORACLE_GRID_HZ = np.logspace(0.0, 2.0, 30)


def _principal_phase_err_deg(values: np.ndarray, ref: np.ndarray) -> np.ndarray:
    raw = np.degrees(np.angle(values) - np.angle(ref))
    return np.abs((raw + 180.0) % 360.0 - 180.0)


def run_oracle_pipeline(
    fs: float = 2500.0,
) -> tuple[Plant, StepExperimentPair, SweepDataset, dict[str, DqAdmittance]]:
    """RL-reference experiments and all three assemblies, no checking."""
    plant = build_rl_reference_plant(R=ORACLE_R, L=ORACLE_L, omega0=ORACLE_OMEGA0)
    x_eq = find_equilibrium(plant)
    pair = run_step_pair(
        plant, StepInjection(g=0.01, t_step=0.1, record_length=0.6), x_eq, fs=fs
    )
    plan = SweepPlan(
        frequencies_hz=ORACLE_GRID_HZ,
        template=SineInjection(amplitude_pp=0.1, cycles=2),
    )
    sweep = run_sweep(plant, plan, x_eq, fs=fs)
    admittances = {
        # Each RL channel is order 2; the step integrator adds one state.
        "era": era_admittance(pair, order=3),
        "sem": assemble_sem(pair, FitOptions(n_poles=2)),
        "sfra": assemble_sfra(sweep, FitOptions(n_poles=2)),
    }
    return plant, pair, sweep, admittances


def cmd_oracle(out_dir: str = "oracle_out", thresholds: str = "2:2", sign_flip: str | None = None) -> int:
    try:
        thr_mag_pct, thr_phase_deg = _parse_pair_flag(thresholds, "thresholds")
        if sign_flip is not None and sign_flip not in CHANNEL_NAMES:
            raise InvalidParameters("sign-flip", f"unknown channel {sign_flip!r}")
    except InvalidParameters as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return 2
    try:
        plant, pair, sweep, admittances = run_oracle_pipeline()
    except DqadmitError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return 3

    report_rows: list[tuple] = []
    failures: list[str] = []
    for method in METHOD_NAMES:
        y = admittances[method]
        grid = sweep.frequencies_hz if method == "sfra" else ORACLE_GRID_HZ
        reference = plant.closed_form_admittance(grid)
        for channel in CHANNEL_NAMES:
            ch = y.channel(channel)
            values = ch.points.values if method == "sfra" else ch.evaluate(grid)
            if sign_flip == channel:
                values = -values  # negative control: must trip the phase check
            ref = reference[channel]
            mag_err_pct = 100.0 * np.abs(np.abs(values) - np.abs(ref)) / np.abs(ref)
            phase_err = _principal_phase_err_deg(values, ref)
            i_mag = int(np.argmax(mag_err_pct))
            i_ph = int(np.argmax(phase_err))
            ok = mag_err_pct[i_mag] <= thr_mag_pct and phase_err[i_ph] <= thr_phase_deg
            report_rows.append(
                (
                    method.upper(),
                    channel,
                    grid.size,
                    float(mag_err_pct[i_mag]),
                    float(grid[i_mag]),
                    float(phase_err[i_ph]),
                    float(grid[i_ph]),
                    "pass" if ok else "FAIL",
                )
            )
            if not ok:
                failures.append(
                    f"{method.upper()} {channel}: mag {mag_err_pct[i_mag]:.3g}% at "
                    f"{grid[i_mag]:.3g} Hz, phase {phase_err[i_ph]:.3g} deg at "
                    f"{grid[i_ph]:.3g} Hz"
                )

    payloads: dict[str, bytes] = {}
    for method in METHOD_NAMES:
        grid = sweep.frequencies_hz if method == "sfra" else ORACLE_GRID_HZ
        payloads[f"{method}.csv"] = _bode_csv(bode(admittances[method], grid))
    closed = plant.closed_form_admittance(ORACLE_GRID_HZ)
    lines = ["f_hz,channel,method,mag_db,phase_deg"]
    for channel in CHANNEL_NAMES:
        mag_db, phase = _mag_phase(closed[channel])
        for f, m, p in zip(ORACLE_GRID_HZ, mag_db, phase):
            lines.append(f"{_fmt(f)},{channel},closed-form,{_fmt(m)},{_fmt(p)}")
    payloads["closed_form.csv"] = ("\n".join(lines) + "\n").encode()
    lines = [
        "method,channel,n_points,max_mag_err_pct,f_at_max_mag_hz,"
        "max_phase_err_deg,f_at_max_phase_hz,status"
    ]
    for row in report_rows:
        lines.append(
            f"{row[0]},{row[1]},{row[2]},{_fmt(row[3])},{_fmt(row[4])},"
            f"{_fmt(row[5])},{_fmt(row[6])},{row[7]}"
        )
    payloads["oracle_report.csv"] = ("\n".join(lines) + "\n").encode()
    manifest_extra = {
        "counts": {"step_experiments": 2, "sweep_simulations": 2 * len(ORACLE_GRID_HZ)},
        "oracle": {
            "R": ORACLE_R,
            "L": ORACLE_L,
            "omega0": ORACLE_OMEGA0,
            "thresholds": {"mag_pct": thr_mag_pct, "phase_deg": thr_phase_deg},
        },
    }
    try:
        write_artifacts(out_dir, payloads, manifest_extra)
    except OSError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return 3

    print(f"{'method':7s} {'channel':8s} {'n':>4s} {'mag err %':>12s} {'phase err deg':>14s}  status")
    for row in report_rows:
        print(f"{row[0]:7s} {row[1]:8s} {row[2]:4d} {row[3]:12.5f} {row[5]:14.5f}  {row[7]}")
    if failures:
        print("oracle failures:", file=sys.stderr)
        for line in failures:
            print(f"  {line}", file=sys.stderr)
        return 1
    print(f"all {len(report_rows)} oracle checks within {thr_mag_pct:g}% / {thr_phase_deg:g} deg")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dqadmit",
        description="dq-frame admittance identification testbed",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    run_p = sub.add_parser("run", help="run experiments and write artifacts")
    run_p.add_argument("--config", required=True, help="path to an INI run config")
    run_p.add_argument(
        "--methods", default="all", help="comma list from {era,sem,sfra}, or 'all'"
    )
    run_p.add_argument("--out", default=None, help="output directory (overrides config)")

    cmp_p = sub.add_parser("compare", help="diff two bode CSVs over a band")
    cmp_p.add_argument("bode_a", help="first bode CSV")
    cmp_p.add_argument("bode_b", help="second bode CSV")
    cmp_p.add_argument("--band", default="1:100", help="frequency band LO:HI in Hz")
    cmp_p.add_argument(
        "--thresholds", default="1:5", help="pass limits MAX_DMAG_DB:MAX_DPHASE_DEG"
    )
    cmp_p.add_argument("--out", default="report.csv", help="report CSV path")

    orc_p = sub.add_parser("oracle", help="closed-form RL self-check, all methods")
    orc_p.add_argument("--out", default="oracle_out", help="output directory")
    orc_p.add_argument(
        "--thresholds", default="2:2", help="pass limits MAX_MAG_ERR_PCT:MAX_PHASE_ERR_DEG"
    )
    orc_p.add_argument(
        "--sign-flip",
        default=None,
        metavar="CHANNEL",
        help="negative-control hook: negate one identified channel before checking",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "run":
        return cmd_run(args.config, args.methods, args.out)
    if args.verb == "compare":
        return cmd_compare(args.bode_a, args.bode_b, args.band, args.thresholds, args.out)
    return cmd_oracle(args.out, args.thresholds, args.sign_flip)


if __name__ == "__main__":
    sys.exit(main())
