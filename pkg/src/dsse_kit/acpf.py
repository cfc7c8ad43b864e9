"""AC power flow, used to manufacture ground-truth states for datasets.

Injection targets here are generator-convention (consumption is negative),
which is how scenario profiles are written. The measurement side of the
package is load-convention, so the bridge is a single sign flip: the solver
drives -bus_injections(x) to the targets. All buses are PQ except the
slack, which holds V=1, theta=0.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import pf_equations as pf
from .pf_equations import Measurement, StateVector


class PowerFlowError(RuntimeError):
    """Newton iteration did not reach the mismatch tolerance."""

    def __init__(self, message: str, mismatch: float = float("nan")):
        super().__init__(message)
        self.mismatch = mismatch


@dataclass
class InjectionSpec:
    """Net injection targets per bus, generator convention (loads < 0).

    Slack entries are ignored (the slack balances the system). Zero-injection
    buses must carry exact zeros.
    """

    p_set: np.ndarray
    q_set: np.ndarray

    def validated(self, network) -> "InjectionSpec":
        n = network.n_bus
        if self.p_set.shape != (n,) or self.q_set.shape != (n,):
            raise ValueError("injection arrays must have one entry per bus")
        zi = network.zero_injection_mask
        if np.any(self.p_set[zi] != 0.0) or np.any(self.q_set[zi] != 0.0):
            raise ValueError("zero-injection buses must have exactly zero targets")
        return self

    def scaled(self, factor: float) -> "InjectionSpec":
        return InjectionSpec(self.p_set * factor, self.q_set * factor)


@dataclass
class PowerFlowResult:
    state: StateVector
    iterations: int
    mismatch: float


def solve_power_flow(
    network,
    injections: InjectionSpec,
    tol: float = 1e-8,
    max_iter: int = 20,
) -> PowerFlowResult:
    """Newton-Raphson from a flat start.

    Returns once the worst absolute P/Q mismatch at non-slack buses drops
    to tol; raises PowerFlowError (with the final mismatch attached) when
    max_iter Newton steps are not enough or a step collapses a voltage.
    """
    injections = injections.validated(network)
    n = network.n_bus
    slack = network.slack
    others = network.free_angle_buses()
    meas = [Measurement(pf.P_INJ, int(i)) for i in others] + [
        Measurement(pf.Q_INJ, int(i)) for i in others
    ]
    # free-vector columns for the power-flow unknowns: V then theta, both
    # excluding slack (the estimation free vector keeps V_slack; drop it)
    keep = np.concatenate([others, n + np.arange(n - 1)])

    state = pf.flat_start(network)
    mismatch = np.inf
    for it in range(max_iter + 1):
        p_load, q_load = pf.bus_injections(state, network)
        g = np.concatenate([
            -p_load[others] - injections.p_set[others],
            -q_load[others] - injections.q_set[others],
        ])
        mismatch = float(np.max(np.abs(g)))
        if mismatch <= tol:
            return PowerFlowResult(state=state, iterations=it, mismatch=mismatch)
        if it == max_iter:
            break
        jac = -pf.measurement_jacobian(state, meas, network)[:, keep]
        try:
            step = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(
                f"singular power-flow Jacobian at iteration {it}", mismatch
            ) from exc
        state = state.copy()
        state.v[others] += step[: n - 1]
        state.theta[others] += step[n - 1:]
        if np.any(state.v <= np.finfo(float).eps):
            raise PowerFlowError(
                f"voltage collapsed during Newton step {it + 1}", mismatch
            )
    raise PowerFlowError(
        f"no convergence after {max_iter} iterations "
        f"(worst mismatch {mismatch:.3e} pu)",
        mismatch,
    )
