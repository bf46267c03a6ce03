"""Shared dense linear-algebra helpers for discretization and matrix logs."""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import LogBranchAmbiguity


def zoh_discretize(a: np.ndarray, b: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization of (a, b) at step dt.

    Uses the augmented exponential expm([[a, I], [0, 0]]*dt) whose upper
    right block is the input integral, valid for singular `a` too.
    """
    n = a.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = a
    aug[:n, n:] = np.eye(n)
    e = scipy.linalg.expm(aug * dt)
    a_d = e[:n, :n]
    b_d = e[:n, n:] @ b
    return a_d, b_d


def zoh_input_integral(a_c: np.ndarray, dt: float) -> np.ndarray:
    """The matrix integral of expm(a_c*tau) over one sample interval."""
    n = a_c.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = a_c
    aug[:n, n:] = np.eye(n)
    return scipy.linalg.expm(aug * dt)[:n, n:]


def principal_matrix_log(a_d: np.ndarray) -> np.ndarray:
    """Principal matrix logarithm with an explicit aliasing guard.

    Eigenvalues on the closed negative real axis (including zero) have no
    principal logarithm that a real sampled system can own: they indicate
    dynamics at or beyond Nyquist. Raises LogBranchAmbiguity for those.
    Diagonalizable matrices go through the eigendecomposition; a
    near-defect falls back to the dense Schur-based logarithm.
    """
    w, v = np.linalg.eig(a_d)
    for lam in w:
        if lam.imag == 0.0 and lam.real <= 0.0:
            raise LogBranchAmbiguity(
                f"eigenvalue {lam.real:.6g} on the closed negative real axis; "
                "sampled dynamics are ambiguous (lower the order or raise fs)"
            )
    try:
        cond = np.linalg.cond(v)
    except np.linalg.LinAlgError:
        cond = np.inf
    if np.isfinite(cond) and cond < 1e12:
        log_a = (v * np.log(w)) @ np.linalg.inv(v)
    else:
        log_a = scipy.linalg.logm(a_d)
    return np.ascontiguousarray(log_a.real)
