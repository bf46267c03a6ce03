"""Compiled fixed-step RK4 integration kernels.

Private module: the public surface is :mod:`dqadmit.plant`. Everything here
is numba-jitted with ``cache=True`` (compiled once per machine) and
``nogil=True`` so independent simulations can run on a thread pool. No
fastmath: results must be bit-identical across runs and schedules.

State layouts
-------------
GFM testbed (kind 0), 13 states::

    [delta, P, Q, phi_d, phi_q, gam_d, gam_q,
     i_ld, i_lq, v_od, v_oq, i_od, i_oq]

``delta`` is the inverter frame angle relative to the grid frame; the
electrical states live in the inverter frame. The PCC node (constant
impedance load + grid branch at source frequency) is algebraic, which is
what fixes the state count at 13.

RL reference (kind 1), 2 states: ``[i_d, i_q]``, the current drawn from
the source; the measured output is its negative (device-to-grid
direction), matching the sign convention of the identified admittance.

Parameter packs (float64 arrays)
--------------------------------
GFM: ``[V_ni, omega_ni, V_DC/2, m_P, n_Q, R_c, L_c, R_f, L_f, C_f,
K_PV, K_IV, K_PC, K_IC, F, omega_c, omega_g, V_gd, V_gq,
G_load, B_load, G_grid, B_grid]``

RL: ``[R, L, omega0, V_gd, V_gq]``

Inputs are described by ``(itype, p1, p2)``:
``0`` none; ``1``/``2`` step of ``p1`` volts on d/q starting at internal
step index ``p2``; ``3``/``4`` sine ``p1*sin(2*pi*p2*t)`` on d/q.
Step timing is in internal-step indices, not seconds, so the on/off
comparison is exact at the grid point where the step lands.
"""

import math

import numpy as np
from numba import njit

GFM_KIND = 0
RL_KIND = 1

STEP_D = 1
STEP_Q = 2
SINE_D = 3
SINE_Q = 4


@njit(cache=True, nogil=True, inline="always")
def _input_at(itype, p1, p2, jj, side, h):
    """Perturbation (du_d, du_q) at internal-step coordinate jj.

    side 0: right-continuous value (used for k1 and midpoints);
    side 1: left limit (used for the k4 endpoint, so an integration step
    ending exactly where a step input switches does not see the new value
    inside its own interval).
    """
    if itype == 0:
        return 0.0, 0.0
    if itype == STEP_D or itype == STEP_Q:
        if side == 0:
            on = jj >= p2
        else:
            on = jj > p2
        v = p1 if on else 0.0
        if itype == STEP_D:
            return v, 0.0
        return 0.0, v
    v = p1 * math.sin(2.0 * math.pi * p2 * (jj * h))
    if itype == SINE_D:
        return v, 0.0
    return 0.0, v


@njit(cache=True, nogil=True, inline="always")
def _rhs(kind, x, ud, uq, par, dx):
    if kind == RL_KIND:
        r = par[0]
        el = par[1]
        w0 = par[2]
        vgd = par[3] + ud
        vgq = par[4] + uq
        dx[0] = (vgd - r * x[0] + w0 * el * x[1]) / el
        dx[1] = (vgq - r * x[1] - w0 * el * x[0]) / el
        return

    delta = x[0]
    p_f = x[1]
    q_f = x[2]
    phid = x[3]
    phiq = x[4]
    gamd = x[5]
    gamq = x[6]
    ild = x[7]
    ilq = x[8]
    vod = x[9]
    voq = x[10]
    iod = x[11]
    ioq = x[12]

    v_ni = par[0]
    omega_ni = par[1]
    half_vdc = par[2]
    m_p = par[3]
    n_q = par[4]
    r_c = par[5]
    l_c = par[6]
    r_f = par[7]
    l_f = par[8]
    c_f = par[9]
    k_pv = par[10]
    k_iv = par[11]
    k_pc = par[12]
    k_ic = par[13]
    ff = par[14]
    omega_c = par[15]
    omega_g = par[16]
    g_l = par[19]
    b_l = par[20]
    g_g = par[21]
    b_g = par[22]

    omega = omega_ni - m_p * p_f

    # droop power measures (controller convention, unscaled products)
    p_inst = vod * iod + voq * ioq
    q_inst = voq * iod - vod * ioq

    # voltage loop: droop reference, PI, capacitor decoupling, feedforward
    ev_d = (v_ni - n_q * q_f) - vod
    ev_q = -voq
    ilref_d = ff * iod - omega * c_f * voq + k_pv * ev_d + k_iv * phid
    ilref_q = ff * ioq + omega * c_f * vod + k_pv * ev_q + k_iv * phiq

    # current loop: PI with inductor decoupling
    ei_d = ilref_d - ild
    ei_q = ilref_q - ilq
    vid = -omega * l_f * ilq + k_pc * ei_d + k_ic * gamd
    viq = omega * l_f * ild + k_pc * ei_q + k_ic * gamq

    # averaged bridge: V_DC only bounds the realizable vector magnitude
    mag = math.sqrt(vid * vid + viq * viq)
    if mag > half_vdc:
        s = half_vdc / mag
        vid *= s
        viq *= s

    # algebraic PCC node in the grid frame: i_o + Y_g*v_g = (Y_l + Y_g)*v_pcc
    vgd = par[17] + ud
    vgq = par[18] + uq
    cosd = math.cos(delta)
    sind = math.sin(delta)
    iod_g = cosd * iod - sind * ioq
    ioq_g = sind * iod + cosd * ioq
    nd = iod_g + g_g * vgd - b_g * vgq
    nq = ioq_g + b_g * vgd + g_g * vgq
    ga = g_l + g_g
    ba = b_l + b_g
    den = ga * ga + ba * ba
    vpd_g = (nd * ga + nq * ba) / den
    vpq_g = (nq * ga - nd * ba) / den
    vpd = cosd * vpd_g + sind * vpq_g
    vpq = -sind * vpd_g + cosd * vpq_g

    dx[0] = omega - omega_g
    dx[1] = omega_c * (p_inst - p_f)
    dx[2] = omega_c * (q_inst - q_f)
    dx[3] = ev_d
    dx[4] = ev_q
    dx[5] = ei_d
    dx[6] = ei_q
    dx[7] = (vid - vod - r_f * ild) / l_f + omega * ilq
    dx[8] = (viq - voq - r_f * ilq) / l_f - omega * ild
    dx[9] = (ild - iod) / c_f + omega * voq
    dx[10] = (ilq - ioq) / c_f - omega * vod
    dx[11] = (vod - vpd - r_c * iod) / l_c + omega * ioq
    dx[12] = (voq - vpq - r_c * ioq) / l_c - omega * iod


@njit(cache=True, nogil=True, inline="always")
def _output(kind, x, out, m):
    if kind == RL_KIND:
        out[m, 0] = -x[0]
        out[m, 1] = -x[1]
    else:
        cosd = math.cos(x[0])
        sind = math.sin(x[0])
        out[m, 0] = cosd * x[11] - sind * x[12]
        out[m, 1] = sind * x[11] + cosd * x[12]


@njit(cache=True, nogil=True)
def eval_rhs(kind, x, ud, uq, par):
    """Single derivative evaluation (used by the Newton polish)."""
    dx = np.empty(x.size)
    _rhs(kind, x, ud, uq, par, dx)
    return dx


@njit(cache=True, nogil=True)
def run_fixed(kind, x0, itype, p1, p2, n_out, substeps, h, par, div_bound):
    """Integrate n_out*substeps RK4 steps, decimating outputs to n_out+1.

    Returns (outputs[n_out+1, 2], final_state, fail_at): fail_at is -1 on
    success, else the output index at which the state norm first exceeded
    div_bound (or went non-finite); outputs beyond it are zero-filled.
    """
    nx = x0.size
    x = x0.copy()
    k1 = np.empty(nx)
    k2 = np.empty(nx)
    k3 = np.empty(nx)
    k4 = np.empty(nx)
    xt = np.empty(nx)
    out = np.zeros((n_out + 1, 2))
    _output(kind, x, out, 0)
    half = 0.5 * h
    sixth = h / 6.0
    j = 0
    for m in range(n_out):
        for _ in range(substeps):
            jj = float(j)
            ud, uq = _input_at(itype, p1, p2, jj, 0, h)
            _rhs(kind, x, ud, uq, par, k1)
            ud2, uq2 = _input_at(itype, p1, p2, jj + 0.5, 0, h)
            for i in range(nx):
                xt[i] = x[i] + half * k1[i]
            _rhs(kind, xt, ud2, uq2, par, k2)
            for i in range(nx):
                xt[i] = x[i] + half * k2[i]
            _rhs(kind, xt, ud2, uq2, par, k3)
            ud3, uq3 = _input_at(itype, p1, p2, jj + 1.0, 1, h)
            for i in range(nx):
                xt[i] = x[i] + h * k3[i]
            _rhs(kind, xt, ud3, uq3, par, k4)
            for i in range(nx):
                x[i] = x[i] + sixth * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i])
            j += 1
        big = 0.0
        for i in range(nx):
            a = abs(x[i])
            if a > big:
                big = a
        if not (big < div_bound):
            return out, x, m + 1
        _output(kind, x, out, m + 1)
    return out, x, -1


@njit(cache=True, nogil=True)
def run_fixed_arrays(kind, x0, ud_half, uq_half, n_out, substeps, h, par, div_bound):
    """Same loop with the perturbation pre-sampled on the half-step grid.

    ud_half/uq_half hold u at times j*h/2 (length 2*n_out*substeps + 1);
    used for caller-supplied perturbation callables.
    """
    nx = x0.size
    x = x0.copy()
    k1 = np.empty(nx)
    k2 = np.empty(nx)
    k3 = np.empty(nx)
    k4 = np.empty(nx)
    xt = np.empty(nx)
    out = np.zeros((n_out + 1, 2))
    _output(kind, x, out, 0)
    half = 0.5 * h
    sixth = h / 6.0
    j = 0
    for m in range(n_out):
        for _ in range(substeps):
            _rhs(kind, x, ud_half[2 * j], uq_half[2 * j], par, k1)
            for i in range(nx):
                xt[i] = x[i] + half * k1[i]
            _rhs(kind, xt, ud_half[2 * j + 1], uq_half[2 * j + 1], par, k2)
            for i in range(nx):
                xt[i] = x[i] + half * k2[i]
            _rhs(kind, xt, ud_half[2 * j + 1], uq_half[2 * j + 1], par, k3)
            for i in range(nx):
                xt[i] = x[i] + h * k3[i]
            _rhs(kind, xt, ud_half[2 * j + 2], uq_half[2 * j + 2], par, k4)
            for i in range(nx):
                x[i] = x[i] + sixth * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i])
            j += 1
        big = 0.0
        for i in range(nx):
            a = abs(x[i])
            if a > big:
                big = a
        if not (big < div_bound):
            return out, x, m + 1
        _output(kind, x, out, m + 1)
    return out, x, -1
