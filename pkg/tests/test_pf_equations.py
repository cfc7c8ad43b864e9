"""Measurement functions against the complex-phasor oracle and finite
differences.

The two-bus literals below were produced by tests/oracles.py (run standalone
before this module existed) and frozen; nothing here is copied from the
implementation under test.
"""

import numpy as np
import pytest

from dsse_kit import pf_equations as pf
from dsse_kit.pf_equations import Measurement, StateVector

from helpers import (
    all_kind_measurements,
    branch_dicts,
    case2,
    case14,
    random_states,
)
import oracles

# two-bus branch at V=(1.0, 0.98), theta=(0.0, -0.02); oracle freeze run
CASE2_STATE = StateVector(np.array([1.0, 0.98]), np.array([0.0, -0.02]))
CASE2_EXPECTED = {
    "p_fwd": 0.21404250204100794,
    "q_fwd": 0.16055568446343746,
    "i_fwd": 0.1544801179154325,
    "p_rev": -0.2132583565622876,
    "q_rev": -0.19192222967623393,
    "i_rev": 0.16902394017720748,
    "loading": 16.90239401772075,
}


def close(a, b, rel=1e-12):
    return abs(a - b) <= rel * max(1.0, abs(a), abs(b))


def test_two_bus_flows_match_frozen_oracle():
    net = case2()
    flows = pf.branch_flows(CASE2_STATE, 0, net)
    assert close(flows.p_fwd, CASE2_EXPECTED["p_fwd"])
    assert close(flows.q_fwd, CASE2_EXPECTED["q_fwd"])
    assert close(flows.i_fwd, CASE2_EXPECTED["i_fwd"])
    assert close(flows.p_rev, CASE2_EXPECTED["p_rev"])
    assert close(flows.q_rev, CASE2_EXPECTED["q_rev"])
    assert close(flows.i_rev, CASE2_EXPECTED["i_rev"])
    assert close(pf.line_loading(CASE2_STATE, 0, net), CASE2_EXPECTED["loading"])


def test_two_bus_injections_match_frozen_oracle():
    net = case2()
    p, q = pf.bus_injections(CASE2_STATE, net)
    # the source end exports (negative load), the far end consumes
    assert close(p[0], -CASE2_EXPECTED["p_fwd"])
    assert close(q[0], -CASE2_EXPECTED["q_fwd"])
    assert close(p[1], -CASE2_EXPECTED["p_rev"])
    assert close(q[1], -CASE2_EXPECTED["q_rev"])


@pytest.mark.parametrize("make_net", [case2, case14], ids=["case2", "case14"])
def test_measurement_function_matches_phasor_oracle(make_net):
    net = make_net()
    branches = branch_dicts(net)
    meas = all_kind_measurements(net)
    for state in random_states(net, 60, seed=11):
        h = pf.measurement_function(state, meas, net)
        expected = []
        p_orc, q_orc = oracles.bus_injections_cplx(state.v, state.theta, branches)
        per_branch = [
            oracles.branch_flows_cplx(
                state.v[b["from"]], state.theta[b["from"]],
                state.v[b["to"]], state.theta[b["to"]],
                b["r"], b["x"], b["g_sh"], b["b_sh"], b["shift"],
            ) if b["closed"] else (0.0,) * 6
            for b in branches
        ]
        for m in meas:
            if m.kind == pf.V_BUS:
                expected.append(state.v[m.location])
            elif m.kind == pf.THETA_BUS:
                expected.append(state.theta[m.location])
            elif m.kind == pf.P_INJ:
                expected.append(p_orc[m.location])
            elif m.kind == pf.Q_INJ:
                expected.append(q_orc[m.location])
            else:
                col = {
                    pf.P_FLOW_FWD: 0, pf.Q_FLOW_FWD: 1, pf.I_FLOW_FWD: 2,
                    pf.P_FLOW_REV: 3, pf.Q_FLOW_REV: 4, pf.I_FLOW_REV: 5,
                }[m.kind]
                expected.append(per_branch[m.location][col])
        assert oracles.max_rel_error(h, np.array(expected)) <= 1e-10


@pytest.mark.parametrize("make_net", [case2, case14], ids=["case2", "case14"])
def test_power_balance_identity(make_net):
    # load-convention injections exactly absorb every branch flow
    net = make_net()
    for state in random_states(net, 40, seed=5):
        p, q = pf.bus_injections(state, net)
        pf_, qf, pr, qr, _, _ = pf._flow_arrays(state, net)
        assert abs(p.sum() + pf_.sum() + pr.sum()) <= 1e-12
        assert abs(q.sum() + qf.sum() + qr.sum()) <= 1e-12


def test_open_branch_has_zero_flows_and_loading():
    net = case14()
    state = random_states(net, 1, seed=3)[0]
    flows = pf.branch_flows(state, 11, net)
    assert (flows.p_fwd, flows.q_fwd, flows.p_rev, flows.q_rev) == (0, 0, 0, 0)
    assert flows.i_fwd == 0.0 and flows.i_rev == 0.0
    assert pf.line_loading(state, 11, net) == 0.0


@pytest.mark.parametrize(
    "make_net,n_states", [(case2, 60), (case14, 25)], ids=["case2", "case14"]
)
def test_jacobian_matches_central_differences(make_net, n_states):
    net = make_net()
    meas = all_kind_measurements(net)

    def h_of_free(vec):
        return pf.measurement_function(pf.free_to_state(vec, net), meas, net)

    for state in random_states(net, n_states, seed=23):
        x0 = pf.state_to_free(state, net)
        jac = pf.measurement_jacobian(state, meas, net)
        fd = oracles.fd_jacobian(h_of_free, x0, step=1e-6)
        assert jac.shape == (len(meas), 2 * net.n_bus - 1)
        assert oracles.max_rel_error(jac, fd, abs_guard=1e-9) <= 1e-6


def test_slack_angle_has_no_jacobian_column():
    net = case14()
    state = random_states(net, 1, seed=1)[0]
    meas = [Measurement(pf.THETA_BUS, net.slack)]
    jac = pf.measurement_jacobian(state, meas, net)
    assert np.all(jac == 0.0)


def test_free_vector_round_trip_and_slack_pin():
    net = case14()
    state = random_states(net, 1, seed=9)[0]
    vec = pf.state_to_free(state, net)
    assert vec.shape == (2 * net.n_bus - 1,)
    back = pf.free_to_state(vec, net)
    assert np.array_equal(back.v, state.v)
    assert np.array_equal(back.theta, state.theta)
    # there is no way to write a nonzero slack angle through the free vector
    rng = np.random.default_rng(0)
    wild = pf.free_to_state(rng.normal(size=vec.shape) + 1.0, net)
    assert wild.theta[net.slack] == 0.0


def test_degenerate_voltage_raises():
    net = case2()
    state = StateVector(np.array([1.0, 0.0]), np.zeros(2))
    with pytest.raises(pf.DegenerateVoltageError):
        pf.branch_flows(state, 0, net)
    with pytest.raises(pf.DegenerateVoltageError):
        pf.measurement_function(state, [Measurement(pf.I_FLOW_FWD, 0)], net)


def test_unknown_kind_and_location_raise():
    net = case2()
    state = pf.flat_start(net)
    with pytest.raises(pf.UnknownLocationError):
        pf.measurement_function(state, [Measurement("p_branch", 0)], net)
    with pytest.raises(pf.UnknownLocationError):
        pf.measurement_function(state, [Measurement(pf.V_BUS, 99)], net)
    with pytest.raises(pf.UnknownLocationError):
        pf.measurement_jacobian(state, [Measurement(pf.P_FLOW_FWD, 5)], net)


def test_zero_flow_current_kink_is_settled():
    # exactly zero apparent power: current partials contribute zero instead
    # of dividing by zero
    # flat state on a branch with shunts gives nonzero Q, so use a bare one
    from dsse_kit.grid import Branch, Bus, GridNetwork

    bare = GridNetwork(
        buses=[Bus(0, slack=True), Bus(1)],
        branches=[Branch(0, 0, 1, r_pu=0.01, x_pu=0.1)],
    )
    meas = [Measurement(pf.I_FLOW_FWD, 0), Measurement(pf.I_FLOW_REV, 0)]
    h = pf.measurement_function(pf.flat_start(bare), meas, bare)
    jac = pf.measurement_jacobian(pf.flat_start(bare), meas, bare)
    assert np.all(h == 0.0)
    assert np.all(np.isfinite(jac))
