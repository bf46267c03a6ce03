"""Shared fixtures: the expensive plant experiments run once per session."""

import numpy as np
import pytest

from dqadmit import (
    FitOptions,
    SineInjection,
    StepInjection,
    SweepPlan,
    assemble_sem,
    assemble_sfra,
    build_gfm_plant,
    build_rl_reference_plant,
    era_admittance,
    find_equilibrium,
    run_step_pair,
    run_sweep,
    simulate,
)

RL_R = 0.23
RL_L = 318.0e-6
RL_OMEGA0 = 377.0


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # One tiny simulation so JIT compilation never lands inside a timed test.
    plant = build_rl_reference_plant(R=1.0, L=0.1, omega0=1.0)
    simulate(plant, {"kind": "step", "axis": "d", "magnitude": 0.1, "t_start": 0.0},
             duration=0.02, fs=2500.0)
    simulate(plant, {"kind": "sine", "axis": "q", "amplitude": 0.1, "frequency_hz": 50.0},
             duration=0.02, fs=2500.0)


@pytest.fixture(scope="session")
def rl_plant():
    return build_rl_reference_plant(R=RL_R, L=RL_L, omega0=RL_OMEGA0)


@pytest.fixture(scope="session")
def rl_eq(rl_plant):
    return find_equilibrium(rl_plant)


@pytest.fixture(scope="session")
def rl_pair(rl_plant, rl_eq):
    injection = StepInjection(g=0.01, t_step=0.1, record_length=0.6)
    return run_step_pair(rl_plant, injection, rl_eq)


@pytest.fixture(scope="session")
def rl_grid():
    return np.logspace(0.0, 2.0, 30)


@pytest.fixture(scope="session")
def rl_sweep(rl_plant, rl_eq, rl_grid):
    plan = SweepPlan(frequencies_hz=rl_grid,
                     template=SineInjection(amplitude_pp=0.1, cycles=2))
    return run_sweep(rl_plant, plan, rl_eq)


@pytest.fixture(scope="session")
def gfm_plant():
    return build_gfm_plant()


@pytest.fixture(scope="session")
def gfm_eq(gfm_plant):
    return find_equilibrium(gfm_plant)


@pytest.fixture(scope="session")
def gfm_pair(gfm_plant, gfm_eq):
    return run_step_pair(gfm_plant, StepInjection(), gfm_eq)


@pytest.fixture(scope="session")
def gfm_sweep(gfm_plant, gfm_eq):
    return run_sweep(gfm_plant, SweepPlan(), gfm_eq)


@pytest.fixture(scope="session")
def gfm_era(gfm_pair):
    return era_admittance(gfm_pair, order=6)


@pytest.fixture(scope="session")
def gfm_sem(gfm_pair):
    return assemble_sem(gfm_pair, FitOptions(n_poles=4))


@pytest.fixture(scope="session")
def gfm_sfra(gfm_sweep):
    return assemble_sfra(gfm_sweep, FitOptions(n_poles=4))
