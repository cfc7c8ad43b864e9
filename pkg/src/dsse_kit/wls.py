"""Weighted least-squares state estimation, Gauss-Newton with Levenberg
damping.

The objective is sum_k (z_k - h_k(x))^2 / sigma_k^2 over the free state
(all voltage magnitudes, non-slack angles). damping > 0 runs an
accept/reject Levenberg loop; damping = 0 degrades to plain Gauss-Newton
steps taken unconditionally, which is deliberately available as a detuned
baseline.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import pf_equations as pf
from .pf_equations import DegenerateVoltageError, StateVector


class UnobservableError(RuntimeError):
    """The measurement set cannot pin down the state (too few rows or a
    rank-deficient gain matrix)."""


@dataclass
class WlsResult:
    state: StateVector
    converged: bool
    iterations: int
    objective: float
    wall_time_s: float


def wls_objective(measurements, state: StateVector, network) -> float:
    z = np.array([m.value for m in measurements])
    w = np.array([1.0 / (m.sigma * m.sigma) for m in measurements])
    h = pf.measurement_function(state, measurements, network)
    r = z - h
    return float(np.sum(w * r * r))


def _objective_or_inf(measurements, state, network) -> float:
    try:
        val = wls_objective(measurements, state, network)
    except DegenerateVoltageError:
        return np.inf
    return val if np.isfinite(val) else np.inf


def estimate_wls(
    network,
    measurements,
    tol: float = 1e-6,
    max_iter: int = 50,
    damping: float = 1e-3,
) -> WlsResult:
    """Iterate from a flat start until the accepted step's max-norm drops
    to tol. Never raises for slow convergence (converged=False instead);
    raises UnobservableError when the problem is structurally hopeless.
    """
    t0 = time.perf_counter()
    n_free = 2 * network.n_bus - 1
    if len(measurements) < n_free:
        raise UnobservableError(
            f"{len(measurements)} measurements cannot determine "
            f"{n_free} free state variables"
        )
    z = np.array([m.value for m in measurements])
    w = np.array([1.0 / (m.sigma * m.sigma) for m in measurements])

    state = pf.flat_start(network)
    current_obj = _objective_or_inf(measurements, state, network)
    best_state, best_obj = state, current_obj
    lam = damping
    converged = False
    iterations = 0

    for it in range(1, max_iter + 1):
        iterations = it
        jac = pf.measurement_jacobian(state, measurements, network)
        h = pf.measurement_function(state, measurements, network)
        gain = (jac.T * w) @ jac
        if it == 1:
            # numerical-rank test: genuinely unobserved directions show up
            # at roundoff level, while merely stiff (virtual-row) systems
            # keep their smallest eigenvalue far above it
            eig = np.linalg.eigvalsh(gain)
            if eig[-1] <= 0.0 or eig[0] < n_free * np.finfo(float).eps * eig[-1]:
                raise UnobservableError(
                    "rank-deficient gain matrix: the measurement set does "
                    "not observe every state direction"
                )
        rhs = (jac.T * w) @ (z - h)
        try:
            step = np.linalg.solve(gain + lam * np.eye(n_free), rhs)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(gain + lam * np.eye(n_free), rhs, rcond=None)
        cand = pf.free_to_state(pf.state_to_free(state, network) + step, network)
        cand_obj = (
            np.inf if np.any(cand.v <= np.finfo(float).eps)
            else _objective_or_inf(measurements, cand, network)
        )
        if damping > 0.0:
            if cand_obj <= current_obj:
                state, current_obj = cand, cand_obj
                lam = max(lam * 0.5, 1e-12)
                if current_obj < best_obj:
                    best_state, best_obj = state, current_obj
                if np.max(np.abs(step)) <= tol:
                    converged = True
                    break
            else:
                lam *= 10.0
                if lam > 1e10:
                    break  # damping exhausted; report best so far
        else:
            # plain Gauss-Newton: walk where the step points, no safeguard
            state, current_obj = cand, cand_obj
            if current_obj < best_obj:
                best_state, best_obj = state, current_obj
            if not np.isfinite(current_obj):
                break  # diverged into degenerate territory
            if np.max(np.abs(step)) <= tol:
                converged = True
                break

    return WlsResult(
        state=best_state.copy(),
        converged=converged,
        iterations=iterations,
        objective=best_obj,
        wall_time_s=time.perf_counter() - t0,
    )
