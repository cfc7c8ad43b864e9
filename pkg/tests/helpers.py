"""Shared test utilities (fixture loading shortcuts, permutations, states)."""

from __future__ import annotations

import numpy as np

from dsse_kit.grid import Branch, Bus, GridNetwork, fixture_path, load_grid
from dsse_kit.pf_equations import StateVector


def case2():
    return load_grid(fixture_path("case2.grid"))


def case14():
    return load_grid(fixture_path("case14.grid"))


def permute_network(network: GridNetwork, perm: np.ndarray) -> GridNetwork:
    """Relabel buses by perm (old index i becomes perm[i]); branch list
    order and ids stay put."""
    new_buses = [None] * network.n_bus
    for b in network.buses:
        new_buses[perm[b.index]] = Bus(
            index=int(perm[b.index]),
            slack=b.slack,
            zero_injection=b.zero_injection,
            base_kv=b.base_kv,
        )
    new_branches = [
        Branch(
            index=b.index,
            from_bus=int(perm[b.from_bus]),
            to_bus=int(perm[b.to_bus]),
            r_pu=b.r_pu,
            x_pu=b.x_pu,
            g_shunt_pu=b.g_shunt_pu,
            b_shunt_pu=b.b_shunt_pu,
            shift_rad=b.shift_rad,
            closed=b.closed,
            rating_pu=b.rating_pu,
            transformer=b.transformer,
        )
        for b in network.branches
    ]
    return GridNetwork(buses=new_buses, branches=new_branches, name=network.name)


def permute_state(state: StateVector, perm: np.ndarray) -> StateVector:
    v = np.empty_like(state.v)
    theta = np.empty_like(state.theta)
    v[perm] = state.v
    theta[perm] = state.theta
    return StateVector(v, theta)


def random_states(network, count, seed, v_span=(0.95, 1.05), th_span=0.3):
    """Plausible operating states with the slack angle pinned at zero."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        v = rng.uniform(*v_span, size=network.n_bus)
        theta = rng.uniform(-th_span, th_span, size=network.n_bus)
        theta[network.slack] = 0.0
        out.append(StateVector(v, theta))
    return out


def all_kind_measurements(network):
    """One measurement of every kind at every admissible location."""
    from dsse_kit import pf_equations as pf

    out = []
    for kind in pf.BUS_KINDS:
        for i in range(network.n_bus):
            out.append(pf.Measurement(kind=kind, location=i))
    for kind in pf.FLOW_KINDS:
        for b in range(network.n_branch):
            out.append(pf.Measurement(kind=kind, location=b))
    return out


def branch_dicts(network):
    """Network branches in the plain-dict form the oracle functions accept."""
    return [
        {
            "from": b.from_bus,
            "to": b.to_bus,
            "r": b.r_pu,
            "x": b.x_pu,
            "g_sh": b.g_shunt_pu,
            "b_sh": b.b_shunt_pu,
            "shift": b.shift_rad,
            "closed": b.closed,
        }
        for b in network.branches
    ]
