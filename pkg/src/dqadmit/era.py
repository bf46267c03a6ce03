"""Eigensystem realization from sampled step responses.

The step record itself is treated as the impulse response of an extended
discrete system (the plant response convolved with a running sum), so a
Hankel realization of the raw samples captures both the plant poles and
one integrator pole. Converting that realization to continuous time and
multiplying by s/g recovers the admittance channel.

The discrete-to-continuous step uses two distinct inverses on purpose:
``d2c_zoh`` implements the hold-equivalent inverse (its round trip with
``c2d_zoh`` is the identity), while the admittance path uses the
matching-samples inverse (pole mapping log(z)/dt with B scaled by the
inverse of A), because the realized Markov parameters are samples of a
continuous signal, not outputs of a held input. Applying the hold
inverse there would rescale every modal residue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._linalg import principal_matrix_log, zoh_discretize, zoh_input_integral
from .admittance import AdmittanceChannel, DqAdmittance, StateSpaceEvaluator
from .errors import (
    InvalidParameters,
    LogBranchAmbiguity,
    NotEnoughData,
    OrderExceedsRank,
)
from .experiments import StepExperimentPair
from .ratfit import RationalTransferFunction, zero_transfer_function

CHANNEL_NAMES = ("Ydd", "Ydq", "Yqd", "Yqq")


@dataclass(frozen=True)
class HankelMatrix:
    """Shifted-sample block-Hankel matrix over an impulse-response tail."""

    rows: int
    cols: int
    entries: np.ndarray

    def __post_init__(self) -> None:
        if self.entries.shape != (self.rows, self.cols):
            raise InvalidParameters("entries", "shape must match (rows, cols)")


@dataclass(frozen=True)
class DiscreteStateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise InvalidParameters("A", "must be square")
        m = self.B.shape[1]
        p = self.C.shape[0]
        if self.B.shape != (n, m) or self.C.shape != (p, n) or self.D.shape != (p, m):
            raise InvalidParameters("B", "dimension mismatch among A, B, C, D")
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise InvalidParameters("dt", "must be > 0")

    def impulse_response(self, n_samples: int) -> np.ndarray:
        """Markov parameters D, CB, CAB, ... (SISO entries squeezed)."""
        out = np.empty(n_samples)
        out[0] = float(self.D[0, 0])
        x = self.B[:, 0]
        for k in range(1, n_samples):
            out[k] = float(self.C[0] @ x)
            x = self.A @ x
        return out


@dataclass(frozen=True)
class ContinuousStateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    source_dt: float

    def __post_init__(self) -> None:
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise InvalidParameters("A", "must be square")
        m = self.B.shape[1]
        p = self.C.shape[0]
        if self.B.shape != (n, m) or self.C.shape != (p, n) or self.D.shape != (p, m):
            raise InvalidParameters("B", "dimension mismatch among A, B, C, D")


@dataclass(frozen=True)
class EraDiagnostics:
    singular_values: np.ndarray
    chosen_order: int
    hankel_shape: tuple[int, int]

    def __post_init__(self) -> None:
        s = np.asarray(self.singular_values, dtype=float)
        if np.any(s < 0.0) or np.any(np.diff(s) > 0.0):
            raise InvalidParameters("singular_values", "must be nonnegative and nonincreasing")
        object.__setattr__(self, "singular_values", s)


def build_hankel(h: np.ndarray, rows: int, cols: int, shift: int = 0) -> HankelMatrix:
    """Stack shifted slices of h: entry(i, j) = h[i + j + 1 + shift].

    h[0] is the sample at the perturbation instant (the feedthrough term)
    and is excluded; the matrix covers the response tail. shift=1 builds
    the one-step-advanced matrix used for the state matrix estimate.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim != 1:
        raise InvalidParameters("h", "must be 1-D")
    if shift not in (0, 1):
        raise InvalidParameters("shift", "must be 0 or 1")
    if rows < 1 or cols < 1:
        raise InvalidParameters("rows", "rows and cols must be >= 1")
    required = rows + cols + shift
    if h.size < required:
        raise NotEnoughData(f"need {required} samples for ({rows}x{cols}, shift={shift}), have {h.size}")
    view = np.lib.stride_tricks.sliding_window_view(h, cols)
    return HankelMatrix(rows=rows, cols=cols, entries=view[1 + shift : 1 + shift + rows].copy())


def _near_square_dims(n_samples: int) -> tuple[int, int]:
    half = (n_samples - 1) // 2
    return half, half


def _rank_budget(singular_values: np.ndarray, rows: int, cols: int) -> int:
    if singular_values.size == 0 or singular_values[0] == 0.0:
        return 0
    tol = max(rows, cols) * np.finfo(float).eps * singular_values[0]
    return int(np.count_nonzero(singular_values > tol))


def choose_order_knee(singular_values: np.ndarray, budget: int) -> int:
    """Order at the largest log-gap of the singular-value curve.

    The drop from the last in-budget value onto the noise floor competes
    with the interior gaps, so clean data keeps its full numerical rank.
    """
    if budget <= 1:
        return max(budget, 1)
    if budget < singular_values.size and singular_values[budget] > 0.0:
        s = singular_values[: budget + 1]
        ratios = s[:-1] / s[1:]
        return min(int(np.argmax(ratios)) + 1, budget)
    # nothing measurable below the budget: the boundary gap wins
    return budget


def era_realize(
    h: np.ndarray, dt: float, order: int | str
) -> tuple[DiscreteStateSpace, EraDiagnostics]:
    """Realize a discrete state space whose impulse response matches h.

    h[0] becomes the feedthrough; the largest near-square Hankel the
    record supports is factored by SVD and truncated at `order` (or at
    the largest singular-value log-gap when order="auto"). The record
    must support a Hankel with at least 2*order rows and columns.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim != 1:
        raise InvalidParameters("h", "must be 1-D")
    if not np.all(np.isfinite(h)):
        raise InvalidParameters("h", "must be finite")
    if not (math.isfinite(dt) and dt > 0.0):
        raise InvalidParameters("dt", "must be > 0")
    auto = isinstance(order, str)
    if auto:
        if order != "auto":
            raise InvalidParameters("order", "must be a positive integer or 'auto'")
    elif int(order) != order or order < 1:
        raise InvalidParameters("order", "must be a positive integer or 'auto'")

    rows, cols = _near_square_dims(h.size)
    if min(rows, cols) < 1:
        raise NotEnoughData(f"record of {h.size} samples cannot form a Hankel matrix")
    if not auto and min(rows, cols) < 2 * order:
        raise NotEnoughData(
            f"order {order} needs a Hankel of at least {2 * order} rows and cols; "
            f"record supports only {min(rows, cols)}"
        )
    h0 = build_hankel(h, rows, cols, shift=0)
    h1 = build_hankel(h, rows, cols, shift=1)
    u, s, vh = np.linalg.svd(h0.entries, full_matrices=False)
    budget = _rank_budget(s, rows, cols)
    if auto:
        order = choose_order_knee(s, budget)
        if min(rows, cols) < 2 * order:
            order = max(min(rows, cols) // 2, 1)
    if order > budget:
        raise OrderExceedsRank(f"order {order} exceeds numerical rank budget {budget}")

    sq = np.sqrt(s[:order])
    un = u[:, :order]
    vn = vh[:order]
    a = ((un.T @ h1.entries) @ vn.T) / np.outer(sq, sq)
    b = (sq * vn[:, 0])[:, None]
    c = (un[0, :] * sq)[None, :]
    d = np.array([[h[0]]])
    sys = DiscreteStateSpace(A=a, B=b, C=c, D=d, dt=float(dt))
    diag = EraDiagnostics(singular_values=s, chosen_order=int(order), hankel_shape=(rows, cols))
    return sys, diag


def d2c_zoh(sys: DiscreteStateSpace) -> ContinuousStateSpace:
    """Hold-equivalent continuous model: c2d_zoh at the same dt inverts it.

    The state matrix takes the principal logarithm (an eigenvalue at +1,
    the integrator pole, maps to 0); the input matrix solves the sampled
    input-integral equation. Eigenvalues on the closed negative real axis
    raise LogBranchAmbiguity since their principal log is not real.
    """
    a_c = principal_matrix_log(sys.A) / sys.dt
    m = zoh_input_integral(a_c, sys.dt)
    b_c = np.linalg.solve(m, sys.B)
    return ContinuousStateSpace(
        A=a_c, B=b_c, C=sys.C.copy(), D=sys.D.copy(), source_dt=sys.dt
    )


def c2d_zoh(sys: ContinuousStateSpace, dt: float) -> DiscreteStateSpace:
    """Zero-order-hold sampling of a continuous model at step dt."""
    if not (math.isfinite(dt) and dt > 0.0):
        raise InvalidParameters("dt", "must be > 0")
    a_d, b_d = zoh_discretize(sys.A, sys.B, dt)
    return DiscreteStateSpace(A=a_d, B=b_d, C=sys.C.copy(), D=sys.D.copy(), dt=float(dt))


def _matching_samples_continuous(sys: DiscreteStateSpace) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Continuous (A, B, C) whose impulse response interpolates the samples.

    Poles map by log(z)/dt; residues are preserved by B <- inv(A_d) B so
    that C exp(A_c k dt) B equals C A_d^(k-1) B at every sample. This is
    the right inverse when the Markov parameters are samples of a
    continuous signal (a recorded step response), in contrast to the
    hold-equivalent inverse of d2c_zoh.
    """
    a_c = principal_matrix_log(sys.A) / sys.dt
    try:
        b_c = np.linalg.solve(sys.A, sys.B)
    except np.linalg.LinAlgError as exc:
        raise LogBranchAmbiguity("state matrix is singular; a pole sits at z=0") from exc
    return a_c, b_c, sys.C.copy()


def _rational_from_modal(
    a_c: np.ndarray, b_c: np.ndarray, c_c: np.ndarray, gain: float, tol_origin: float
) -> tuple[RationalTransferFunction, bool]:
    """Closed-form gain*s*W(s) with the origin pole cancelled when present.

    W(s) = sum r_i/(s - p_i) from the modal decomposition. If exactly one
    pole lies within tol_origin of the origin, multiplying by s cancels
    it analytically and the result is exact (flag True); otherwise the
    numerator is multiplied by s outright and the form is approximate
    near the origin pole (flag False).
    """
    w, v = np.linalg.eig(a_c)
    ct = (c_c @ v).ravel()
    bt = np.linalg.solve(v, b_c).ravel()
    residues = ct * bt
    near_origin = np.abs(w) < tol_origin
    exact = int(np.count_nonzero(near_origin)) == 1
    if exact:
        keep = ~near_origin
        r0 = residues[near_origin][0]
        p = w[keep]
        r = residues[keep]
        den = np.poly(p) if p.size else np.ones(1)
        num = r0 * den
        for i in range(p.size):
            others = np.delete(p, i)
            term = np.poly(others) if others.size else np.ones(1)
            # r_i * s / (s - p_i): contributes r_i * s * prod_others
            num = np.polyadd(num, r[i] * np.polymul([1.0, 0.0], term))
        num = gain * num
    else:
        den = np.poly(w) if w.size else np.ones(1)
        num = np.zeros(1, dtype=complex)
        for i in range(w.size):
            others = np.delete(w, i)
            term = np.poly(others) if others.size else np.ones(1)
            num = np.polyadd(num, residues[i] * term)
        num = gain * np.polymul([1.0, 0.0], num)
    # conjugate-symmetric modes make the coefficients real up to round-off
    tf = RationalTransferFunction(np.real(num), np.real(den))
    return tf, exact


def era_admittance(
    pair: StepExperimentPair,
    order: int | str = 6,
    f_min_hz: float = 0.1,
) -> DqAdmittance:
    """Identify all four admittance channels from one step-experiment pair.

    Each channel record is realized at `order`, converted to continuous
    time with the matching-samples inverse, and evaluated as
    Y(jw) = -(jw/g) * W(jw): the integrator baked into the step data is
    undone by the multiplication by s, and the leading minus matches the
    source-directed current convention. A channel whose response never
    leaves the noise floor (relative 1e-12 of the largest channel)
    becomes an exact zero. Per-channel failures are re-raised with the
    channel name prefixed.
    """
    if not (pair.g_abs_d > 0.0 and pair.g_abs_q > 0.0):
        raise InvalidParameters("pair", "absolute step sizes must be > 0")
    if not (math.isfinite(f_min_hz) and f_min_hz > 0.0):
        raise InvalidParameters("f_min_hz", "must be > 0")
    tol_origin = 1e-3 * 2.0 * math.pi * f_min_hz

    resp_d = pair.response("d")
    resp_q = pair.response("q")
    records = {
        "Ydd": (resp_d.d.samples, pair.g_abs_d),
        "Yqd": (resp_d.q.samples, pair.g_abs_d),
        "Ydq": (resp_q.d.samples, pair.g_abs_q),
        "Yqq": (resp_q.q.samples, pair.g_abs_q),
    }
    ref_amp = max(float(np.max(np.abs(h))) for h, _ in records.values())
    if ref_amp == 0.0:
        raise InvalidParameters("pair", "all responses are identically zero")

    channels: dict[str, AdmittanceChannel] = {}
    diagnostics: dict[str, EraDiagnostics] = {}
    for name, (h, g_abs) in records.items():
        if float(np.max(np.abs(h))) <= 1e-12 * ref_amp:
            channels[name] = AdmittanceChannel(tf=zero_transfer_function(), rational_is_exact=True)
            continue
        try:
            dss, diag = era_realize(h, pair.dt, order)
            a_c, b_c, c_c = _matching_samples_continuous(dss)
        except (NotEnoughData, OrderExceedsRank, LogBranchAmbiguity) as exc:
            raise type(exc)(f"{name}: {exc}") from exc
        gain = -1.0 / g_abs
        evaluator = StateSpaceEvaluator(a=a_c, b=b_c, c=c_c, gain=gain, multiply_by_s=True)
        rational, exact = _rational_from_modal(a_c, b_c, c_c, gain, tol_origin)
        channels[name] = AdmittanceChannel(
            state_space=evaluator, tf=rational, rational_is_exact=exact
        )
        diagnostics[name] = diag

    return DqAdmittance(
        method="ERA",
        Ydd=channels["Ydd"],
        Ydq=channels["Ydq"],
        Yqd=channels["Yqd"],
        Yqq=channels["Yqq"],
        nyquist_hz=0.5 / pair.dt,
        diagnostics=diagnostics,
    )
