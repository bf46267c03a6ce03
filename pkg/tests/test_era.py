import numpy as np
import pytest
import scipy.signal

from dqadmit import (
    ContinuousStateSpace,
    DiscreteStateSpace,
    build_hankel,
    c2d_zoh,
    d2c_zoh,
    era_admittance,
    era_realize,
)
from dqadmit.errors import (
    InvalidParameters,
    LogBranchAmbiguity,
    NotEnoughData,
    OrderExceedsRank,
)


def _random_discrete(rng, n, spectral_radius=0.9):
    # random stable A via scaled orthogonal similarity of random eigenvalues
    eigs = rng.uniform(-spectral_radius, spectral_radius, n)
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    a = q @ np.diag(eigs) @ q.T
    b = rng.normal(size=(n, 1))
    c = rng.normal(size=(1, n))
    return a, b, c


def _random_continuous(rng, n):
    # strictly stable, eigenfrequencies well below the sampling wrap limit
    a = np.diag(rng.uniform(-900.0, -10.0, n))
    half = n // 2
    for i in range(half):
        w = rng.uniform(10.0, 2000.0)
        a[2 * i, 2 * i + 1] = w
        a[2 * i + 1, 2 * i] = -w
        a[2 * i + 1, 2 * i + 1] = a[2 * i, 2 * i]
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    a = q @ a @ q.T
    b = rng.normal(size=(n, 1))
    c = rng.normal(size=(1, n))
    d = np.zeros((1, 1))
    return a, b, c, d


def test_build_hankel_entries():
    h = np.arange(20.0)
    hk = build_hankel(h, rows=4, cols=5, shift=0)
    assert hk.entries.shape == (4, 5)
    for i in range(4):
        for j in range(5):
            assert hk.entries[i, j] == h[i + j + 1]
    shifted = build_hankel(h, rows=4, cols=5, shift=1)
    assert shifted.entries[0, 0] == h[2]
    with pytest.raises(NotEnoughData):
        build_hankel(np.arange(5.0), rows=4, cols=4)


def test_impulse_response_ordering():
    sys = DiscreteStateSpace(
        A=np.array([[0.5]]), B=np.array([[1.0]]), C=np.array([[2.0]]),
        D=np.array([[3.0]]), dt=0.1,
    )
    h = sys.impulse_response(4)
    assert np.allclose(h, [3.0, 2.0, 1.0, 0.5])


def test_era_reproduces_markov_parameters():
    rng = np.random.default_rng(7)
    a, b, c = _random_discrete(rng, 4)
    true = DiscreteStateSpace(A=a, B=b, C=c, D=np.array([[0.7]]), dt=0.01)
    h = true.impulse_response(120)
    realized, diag = era_realize(h, dt=0.01, order=4)
    assert diag.chosen_order == 4
    h2 = realized.impulse_response(120)
    scale = np.max(np.abs(h))
    assert np.max(np.abs(h2 - h)) < 1e-9 * scale
    # singular values beyond the true order collapse
    assert diag.singular_values[4] < 1e-10 * diag.singular_values[0]


def test_era_realization_preserves_eigenvalues():
    rng = np.random.default_rng(11)
    a, b, c = _random_discrete(rng, 5)
    true = DiscreteStateSpace(A=a, B=b, C=c, D=np.zeros((1, 1)), dt=0.002)
    h = true.impulse_response(200)
    realized, _ = era_realize(h, dt=0.002, order=5)
    got = np.sort_complex(np.linalg.eigvals(realized.A))
    want = np.sort_complex(np.linalg.eigvals(a))
    assert np.max(np.abs(got - want)) < 1e-8


def test_era_auto_order_finds_knee():
    rng = np.random.default_rng(3)
    a, b, c = _random_discrete(rng, 3)
    true = DiscreteStateSpace(A=a, B=b, C=c, D=np.zeros((1, 1)), dt=0.01)
    h = true.impulse_response(100)
    realized, diag = era_realize(h, dt=0.01, order="auto")
    assert diag.chosen_order == 3
    assert realized.A.shape == (3, 3)


def test_era_order_exceeding_rank_is_refused():
    rng = np.random.default_rng(5)
    a, b, c = _random_discrete(rng, 2)
    true = DiscreteStateSpace(A=a, B=b, C=c, D=np.zeros((1, 1)), dt=0.01)
    h = true.impulse_response(80)
    with pytest.raises(OrderExceedsRank):
        era_realize(h, dt=0.01, order=6)


def test_era_short_record_is_refused():
    with pytest.raises(NotEnoughData):
        era_realize(np.ones(6), dt=0.01, order=3)
    with pytest.raises(InvalidParameters):
        era_realize(np.ones(50), dt=0.01, order=0)


def test_c2d_matches_scipy_cont2discrete():
    rng = np.random.default_rng(17)
    a, b, c, d = _random_continuous(rng, 4)
    dt = 4e-4
    sys_c = ContinuousStateSpace(A=a, B=b, C=c, D=d, source_dt=dt)
    sys_d = c2d_zoh(sys_c, dt)
    (a_ref, b_ref, c_ref, d_ref, _) = scipy.signal.cont2discrete((a, b, c, d), dt, method="zoh")
    assert np.max(np.abs(sys_d.A - a_ref)) < 1e-10 * max(1.0, np.max(np.abs(a_ref)))
    assert np.max(np.abs(sys_d.B - b_ref)) < 1e-10 * max(1.0, np.max(np.abs(b_ref)))
    assert np.array_equal(sys_d.C, c_ref)
    assert np.array_equal(sys_d.D, d_ref)


def test_d2c_inverts_c2d():
    rng = np.random.default_rng(23)
    for n in (2, 3, 5):
        a, b, c, d = _random_continuous(rng, n)
        dt = 4e-4
        sys_c = ContinuousStateSpace(A=a, B=b, C=c, D=d, source_dt=dt)
        back = d2c_zoh(c2d_zoh(sys_c, dt))
        assert np.max(np.abs(back.A - a)) < 1e-8 * max(1.0, np.max(np.abs(a)))
        assert np.max(np.abs(back.B - b)) < 1e-8 * max(1.0, np.max(np.abs(b)))


def test_d2c_rejects_log_branch_ambiguity():
    # a negative real discrete eigenvalue has no principal real logarithm
    sys_d = DiscreteStateSpace(
        A=np.array([[-0.5]]), B=np.array([[1.0]]), C=np.array([[1.0]]),
        D=np.zeros((1, 1)), dt=0.01,
    )
    with pytest.raises(LogBranchAmbiguity):
        d2c_zoh(sys_d)


def test_era_admittance_recovers_rl_closed_form(rl_plant, rl_pair, rl_grid):
    y = era_admittance(rl_pair, order=3)
    assert y.method == "ERA"
    ref = rl_plant.closed_form_admittance(rl_grid)
    for name in ("Ydd", "Ydq", "Yqd", "Yqq"):
        got = y.channel(name).evaluate(rl_grid)
        rel = np.abs(got - ref[name]) / np.abs(ref[name])
        assert np.max(rel) < 1e-6
        assert y.channel(name).rational_is_exact


def test_era_admittance_diagnostics_expose_rank(rl_pair):
    y = era_admittance(rl_pair, order=3)
    for name in ("Ydd", "Ydq", "Yqd", "Yqq"):
        diag = y.diagnostics[name]
        s = diag.singular_values
        assert diag.chosen_order == 3
        assert np.all(np.diff(s) <= 0.0)
        # the step response carries exactly 3 states: 2 plant poles + drive
        assert s[3] < 1e-9 * s[0]


def test_era_admittance_zero_channel_becomes_exact_zero(rl_pair):
    from dqadmit import SimulationRecord, StepExperimentPair
    from dqadmit.signals import DqSignal, TimeSeries

    dead = TimeSeries(np.zeros(len(rl_pair.record_q.i_o.d)), rl_pair.dt)
    quiet = SimulationRecord(
        v_g=rl_pair.record_q.v_g,
        i_o=DqSignal(dead, dead),
        final_state=rl_pair.record_q.final_state,
        steady_state_reached=True,
    )
    pair = StepExperimentPair(
        record_d=rl_pair.record_d,
        record_q=quiet,
        g=rl_pair.g,
        dt=rl_pair.dt,
        g_abs_d=rl_pair.g_abs_d,
        g_abs_q=rl_pair.g_abs_q,
        onset_index=rl_pair.onset_index,
    )
    y = era_admittance(pair, order=3)
    grid = np.array([1.0, 10.0, 100.0])
    assert np.all(y.channel("Ydq").evaluate(grid) == 0.0)
    assert np.all(y.channel("Yqq").evaluate(grid) == 0.0)
    assert np.any(y.channel("Ydd").evaluate(grid) != 0.0)


def test_era_admittance_channel_errors_carry_channel_name(rl_pair):
    from dqadmit import StepExperimentPair

    short = StepExperimentPair(
        record_d=rl_pair.record_d,
        record_q=rl_pair.record_q,
        g=rl_pair.g,
        dt=rl_pair.dt,
        g_abs_d=rl_pair.g_abs_d,
        g_abs_q=rl_pair.g_abs_q,
        onset_index=len(rl_pair.record_d.i_o.d) - 8,
    )
    with pytest.raises(NotEnoughData, match="Ydd"):
        era_admittance(short, order=3)
