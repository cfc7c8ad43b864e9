"""Measurement functions h(x) and their analytic Jacobians.

The state is (V, theta) per bus with the slack angle pinned to zero, so the
free vector has 2n-1 entries: all voltage magnitudes, then the angles of
every non-slack bus in ascending bus order. Injections follow the load
convention: a bus that consumes power has positive P. Branch current
magnitudes carry a 1/sqrt(3) factor (per-phase form); since ratings are on
the same scale it cancels out of loading percentages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SQRT3 = np.sqrt(3.0)

# measurement kinds
V_BUS = "v_bus"
THETA_BUS = "theta_bus"
P_INJ = "p_inj"
Q_INJ = "q_inj"
P_FLOW_FWD = "p_flow_fwd"
P_FLOW_REV = "p_flow_rev"
Q_FLOW_FWD = "q_flow_fwd"
Q_FLOW_REV = "q_flow_rev"
I_FLOW_FWD = "i_flow_fwd"
I_FLOW_REV = "i_flow_rev"

BUS_KINDS = (V_BUS, THETA_BUS, P_INJ, Q_INJ)
FLOW_KINDS = (P_FLOW_FWD, P_FLOW_REV, Q_FLOW_FWD, Q_FLOW_REV, I_FLOW_FWD, I_FLOW_REV)
ALL_KINDS = BUS_KINDS + FLOW_KINDS


class DegenerateVoltageError(ValueError):
    """A voltage magnitude at or below machine epsilon reached the current
    equations, where it would divide by zero."""


class UnknownLocationError(ValueError):
    """Measurement kind or location does not exist in the network."""


@dataclass
class StateVector:
    """Voltage magnitudes (pu) and angles (rad), one entry per bus."""

    v: np.ndarray
    theta: np.ndarray

    def copy(self) -> "StateVector":
        return StateVector(self.v.copy(), self.theta.copy())


@dataclass(frozen=True)
class Measurement:
    kind: str
    location: int
    value: float = float("nan")
    sigma: float = 1.0
    is_pseudo: bool = False
    is_virtual: bool = False


@dataclass
class BranchFlows:
    p_fwd: float
    q_fwd: float
    p_rev: float
    q_rev: float
    i_fwd: float
    i_rev: float


def flat_start(network) -> StateVector:
    return StateVector(np.ones(network.n_bus), np.zeros(network.n_bus))


def validate_state(state: StateVector, network) -> None:
    if state.v.shape != (network.n_bus,) or state.theta.shape != (network.n_bus,):
        raise ValueError("state arrays must have one entry per bus")
    if state.theta[network.slack] != 0.0:
        raise ValueError("slack angle must be exactly zero")
    if np.any(state.v <= 0.0):
        raise ValueError("voltage magnitudes must be positive")


def state_to_free(state: StateVector, network) -> np.ndarray:
    """Pack into the free vector [V_0..V_{n-1}, theta_{non-slack}]."""
    return np.concatenate([state.v, state.theta[network.free_angle_buses()]])


def free_to_state(vec: np.ndarray, network) -> StateVector:
    """Unpack a free vector; the slack angle is always written as zero, so
    no caller can perturb it through this path."""
    n = network.n_bus
    theta = np.zeros(n)
    theta[network.free_angle_buses()] = vec[n:]
    return StateVector(np.asarray(vec[:n], dtype=float).copy(), theta)


def _check_voltages(v: np.ndarray) -> None:
    if np.any(v <= np.finfo(float).eps):
        raise DegenerateVoltageError(
            "degenerate voltage: magnitude at or below machine epsilon"
        )


def _flow_arrays(state: StateVector, network):
    """All six flow quantities for every branch, vectorized.

    Open branches come back as exact zeros in every component.
    """
    _check_voltages(state.v)
    vi = state.v[network.from_idx]
    vj = state.v[network.to_idx]
    d = state.theta[network.from_idx] - state.theta[network.to_idx] + network.shift
    c = np.cos(d)
    s = np.sin(d)
    g = network.g_series
    b = network.b_series
    gt = g + network.g_shunt_half
    bt = b + network.b_shunt_half
    live = network.closed.astype(float)

    p_fwd = live * (-vi * vj * (g * c + b * s) + vi * vi * gt)
    p_rev = live * (vi * vj * (-g * c + b * s) + vj * vj * gt)
    q_fwd = live * (vi * vj * (-g * s + b * c) - vi * vi * bt)
    q_rev = live * (vi * vj * (g * s + b * c) - vj * vj * bt)
    i_fwd = np.hypot(p_fwd, q_fwd) / (SQRT3 * vi)
    i_rev = np.hypot(p_rev, q_rev) / (SQRT3 * vj)
    return p_fwd, q_fwd, p_rev, q_rev, i_fwd, i_rev


def branch_flows(state: StateVector, branch: int, network) -> BranchFlows:
    if not 0 <= branch < network.n_branch:
        raise UnknownLocationError(f"no branch {branch}")
    pf, qf, pr, qr, i_f, i_r = _flow_arrays(state, network)
    return BranchFlows(
        p_fwd=float(pf[branch]), q_fwd=float(qf[branch]),
        p_rev=float(pr[branch]), q_rev=float(qr[branch]),
        i_fwd=float(i_f[branch]), i_rev=float(i_r[branch]),
    )


def bus_injections(state: StateVector, network):
    """Load-convention net injections: P_i = -(sum of own-end branch flows).

    With this sign, injections and branch flows satisfy the exact balance
    sum_i P_i + sum_b (P_fwd + P_rev) = 0 (same for Q).
    """
    pf, qf, pr, qr, _, _ = _flow_arrays(state, network)
    n = network.n_bus
    p = np.zeros(n)
    q = np.zeros(n)
    np.add.at(p, network.from_idx, -pf)
    np.add.at(p, network.to_idx, -pr)
    np.add.at(q, network.from_idx, -qf)
    np.add.at(q, network.to_idx, -qr)
    return p, q


def line_loading(state: StateVector, branch: int, network) -> float:
    """Loading percentage: worst-end current magnitude over the rating."""
    flows = branch_flows(state, branch, network)
    return 100.0 * max(flows.i_fwd, flows.i_rev) / network.rating[branch]


def all_line_loadings(state: StateVector, network) -> np.ndarray:
    _, _, _, _, i_f, i_r = _flow_arrays(state, network)
    return 100.0 * np.maximum(i_f, i_r) / network.rating


def _check_measurements(measurements, network) -> None:
    for m in measurements:
        if m.kind in BUS_KINDS:
            if not 0 <= m.location < network.n_bus:
                raise UnknownLocationError(f"no bus {m.location} for {m.kind}")
        elif m.kind in FLOW_KINDS:
            if not 0 <= m.location < network.n_branch:
                raise UnknownLocationError(f"no branch {m.location} for {m.kind}")
        else:
            raise UnknownLocationError(f"unknown measurement kind {m.kind!r}")


def measurement_function(state: StateVector, measurements, network) -> np.ndarray:
    """h(x): model value of every measurement at the given state."""
    _check_measurements(measurements, network)
    pf, qf, pr, qr, i_f, i_r = _flow_arrays(state, network)
    p_inj = q_inj = None
    if any(m.kind in (P_INJ, Q_INJ) for m in measurements):
        p_inj, q_inj = bus_injections(state, network)
    by_kind = {
        V_BUS: state.v, THETA_BUS: state.theta,
        P_INJ: p_inj, Q_INJ: q_inj,
        P_FLOW_FWD: pf, P_FLOW_REV: pr,
        Q_FLOW_FWD: qf, Q_FLOW_REV: qr,
        I_FLOW_FWD: i_f, I_FLOW_REV: i_r,
    }
    return np.array([by_kind[m.kind][m.location] for m in measurements])


def _flow_partials(state: StateVector, network):
    """Partial derivatives of the six flow quantities per branch.

    Returns a dict kind -> (d_dvi, d_dvj, d_dd) arrays, where d is the
    branch angle difference theta_i - theta_j + shift. Open branches have
    all partials zero; branches with exactly zero apparent flow contribute
    zero current partials (the |S| kink is settled to 0).
    """
    vi = state.v[network.from_idx]
    vj = state.v[network.to_idx]
    d = state.theta[network.from_idx] - state.theta[network.to_idx] + network.shift
    c = np.cos(d)
    s = np.sin(d)
    g = network.g_series
    b = network.b_series
    gt = g + network.g_shunt_half
    bt = b + network.b_shunt_half
    live = network.closed.astype(float)

    dpf = (
        live * (-vj * (g * c + b * s) + 2.0 * vi * gt),
        live * (-vi * (g * c + b * s)),
        live * (vi * vj * (g * s - b * c)),
    )
    dpr = (
        live * (vj * (-g * c + b * s)),
        live * (vi * (-g * c + b * s) + 2.0 * vj * gt),
        live * (vi * vj * (g * s + b * c)),
    )
    dqf = (
        live * (vj * (-g * s + b * c) - 2.0 * vi * bt),
        live * (vi * (-g * s + b * c)),
        live * (-vi * vj * (g * c + b * s)),
    )
    dqr = (
        live * (vj * (g * s + b * c)),
        live * (vi * (g * s + b * c) - 2.0 * vj * bt),
        live * (vi * vj * (g * c - b * s)),
    )

    pf_, qf_, pr_, qr_, i_f, i_r = _flow_arrays(state, network)
    s_fwd = np.hypot(pf_, qf_)
    s_rev = np.hypot(pr_, qr_)
    inv_f = np.where(s_fwd > 0.0, 1.0 / np.where(s_fwd > 0.0, s_fwd, 1.0), 0.0)
    inv_r = np.where(s_rev > 0.0, 1.0 / np.where(s_rev > 0.0, s_rev, 1.0), 0.0)

    def current_partials(p, q, dp, dq, s_abs, inv, v_own, own_is_from):
        # i = |S| / (sqrt(3) v_own); chain rule plus the explicit 1/v term
        out = []
        for k in range(3):
            term = (p * dp[k] + q * dq[k]) * inv / (SQRT3 * v_own)
            out.append(term)
        # d/dv_own picks up -|S|/(sqrt(3) v_own^2)
        extra = s_abs / (SQRT3 * v_own * v_own)
        if own_is_from:
            out[0] = out[0] - extra
        else:
            out[1] = out[1] - extra
        return tuple(out)

    dif = current_partials(pf_, qf_, dpf, dqf, s_fwd, inv_f, vi, True)
    dir_ = current_partials(pr_, qr_, dpr, dqr, s_rev, inv_r, vj, False)
    return {
        P_FLOW_FWD: dpf, P_FLOW_REV: dpr,
        Q_FLOW_FWD: dqf, Q_FLOW_REV: dqr,
        I_FLOW_FWD: dif, I_FLOW_REV: dir_,
    }


def measurement_jacobian(state: StateVector, measurements, network) -> np.ndarray:
    """dh/dx with columns over the free vector (all V, then non-slack theta).

    The slack angle has no column, so no measurement can pull on it.
    """
    _check_measurements(measurements, network)
    n = network.n_bus
    slack = network.slack
    theta_col = np.full(n, -1, dtype=int)
    theta_col[network.free_angle_buses()] = n + np.arange(n - 1)
    partials = _flow_partials(state, network)
    jac = np.zeros((len(measurements), 2 * n - 1))

    def add_flow(row, kind, br, sign=1.0):
        d_dvi, d_dvj, d_dd = partials[kind]
        i, j = network.from_idx[br], network.to_idx[br]
        row[i] += sign * d_dvi[br]
        row[j] += sign * d_dvj[br]
        if i != slack:
            row[theta_col[i]] += sign * d_dd[br]
        if j != slack:
            row[theta_col[j]] -= sign * d_dd[br]

    for r, m in enumerate(measurements):
        row = jac[r]
        if m.kind == V_BUS:
            row[m.location] = 1.0
        elif m.kind == THETA_BUS:
            if m.location != slack:
                row[theta_col[m.location]] = 1.0
        elif m.kind in (P_INJ, Q_INJ):
            fwd = P_FLOW_FWD if m.kind == P_INJ else Q_FLOW_FWD
            rev = P_FLOW_REV if m.kind == P_INJ else Q_FLOW_REV
            for br, at_from in network.incident(m.location):
                add_flow(row, fwd if at_from else rev, br, sign=-1.0)
        else:
            add_flow(row, m.kind, m.location)
    return jac
