"""Grid model, file round-trip, validation, and hypergraph view."""

import json

import numpy as np
import pytest

from dsse_kit.grid import (
    GRID_SCHEMA,
    Branch,
    Bus,
    GridFormatError,
    GridNetwork,
    fixture_path,
    load_grid,
    save_grid,
    to_h2mg,
)

from helpers import case2, case14, permute_network


def test_case2_fixture_shape():
    net = case2()
    assert net.n_bus == 2
    assert net.n_branch == 1
    assert net.slack == 0
    br = net.branches[0]
    # 1/(0.01 + 0.1j), checked against plain complex division
    y = 1.0 / complex(0.01, 0.1)
    assert br.y_series == y
    assert net.g_series[0] == y.real
    assert net.b_series[0] == y.imag


def test_case14_fixture_shape():
    net = case14()
    assert net.n_bus == 14
    assert net.n_branch == 14
    assert net.slack == 0
    assert [b.index for b in net.buses if b.zero_injection] == [7]
    assert list(np.flatnonzero(net.transformer_mask)) == [12, 13]
    assert list(np.flatnonzero(~net.closed)) == [11]
    # feeders plus the open tie: still fully connected through closed branches
    assert net.buses[0].base_kv == 110.0


def test_round_trip(tmp_path):
    net = case14()
    out = tmp_path / "copy.grid"
    save_grid(net, out)
    again = load_grid(out)
    assert again.buses == net.buses
    assert again.branches == net.branches
    assert again.name == net.name


def _doc(path):
    return json.loads(fixture_path(path).read_text())


def _write(tmp_path, doc):
    p = tmp_path / "bad.grid"
    p.write_text(json.dumps(doc))
    return p


def test_rejects_wrong_schema(tmp_path):
    doc = _doc("case2.grid")
    doc["schema"] = "dsse-grid/99"
    with pytest.raises(GridFormatError, match="schema"):
        load_grid(_write(tmp_path, doc))


def test_rejects_invalid_json(tmp_path):
    p = tmp_path / "mangled.grid"
    p.write_text("{not json")
    with pytest.raises(GridFormatError, match="JSON"):
        load_grid(p)


def test_rejects_unknown_fields(tmp_path):
    # a per-branch base would silently change units, so extra keys are fatal
    doc = _doc("case2.grid")
    doc["branches"][0]["s_base_mva"] = 100.0
    with pytest.raises(GridFormatError, match="unknown"):
        load_grid(_write(tmp_path, doc))


def test_rejects_two_slacks(tmp_path):
    doc = _doc("case2.grid")
    doc["buses"][1]["slack"] = True
    with pytest.raises(GridFormatError, match="multiple slack"):
        load_grid(_write(tmp_path, doc))


def test_rejects_no_slack(tmp_path):
    doc = _doc("case2.grid")
    doc["buses"][0]["slack"] = False
    with pytest.raises(GridFormatError, match="no slack"):
        load_grid(_write(tmp_path, doc))


def test_rejects_duplicate_bus_ids(tmp_path):
    doc = _doc("case2.grid")
    doc["buses"][1]["id"] = 0
    with pytest.raises(GridFormatError, match="dense"):
        load_grid(_write(tmp_path, doc))


def test_rejects_dangling_endpoint(tmp_path):
    doc = _doc("case2.grid")
    doc["branches"][0]["to"] = 7
    with pytest.raises(GridFormatError, match="out of range"):
        load_grid(_write(tmp_path, doc))


def test_rejects_zero_impedance():
    with pytest.raises(GridFormatError, match="impedance"):
        GridNetwork(
            buses=[Bus(0, slack=True), Bus(1)],
            branches=[Branch(0, 0, 1, r_pu=0.0, x_pu=0.0)],
        )


def test_rejects_nonpositive_rating():
    with pytest.raises(GridFormatError, match="rating"):
        GridNetwork(
            buses=[Bus(0, slack=True), Bus(1)],
            branches=[Branch(0, 0, 1, r_pu=0.01, x_pu=0.1, rating_pu=0.0)],
        )


def test_rejects_shift_on_plain_line():
    with pytest.raises(GridFormatError, match="not a transformer"):
        GridNetwork(
            buses=[Bus(0, slack=True), Bus(1)],
            branches=[Branch(0, 0, 1, r_pu=0.01, x_pu=0.1, shift_rad=0.1)],
        )


def test_rejects_island_behind_open_branch():
    # bus 2 hangs on an open branch only: unreachable, so invalid
    with pytest.raises(GridFormatError, match="not connected"):
        GridNetwork(
            buses=[Bus(0, slack=True), Bus(1), Bus(2)],
            branches=[
                Branch(0, 0, 1, r_pu=0.01, x_pu=0.1),
                Branch(1, 1, 2, r_pu=0.01, x_pu=0.1, closed=False),
            ],
        )


def test_hypergraph_view_buses_are_vertices_and_edges():
    net = case14()
    topo = to_h2mg(net)
    assert topo.n_vertices == 14
    assert np.array_equal(topo.ports["bus"], np.arange(14)[:, None])
    assert topo.ports["branch"].shape == (14, 2)
    for i in range(14):
        assert ("bus", i, 0) in topo.incidence[i]
    # every branch port appears exactly once in the incidence lists
    flat = [t for lst in topo.incidence for t in lst if t[0] == "branch"]
    assert sorted(flat) == sorted(
        [("branch", e, 0) for e in range(14)] + [("branch", e, 1) for e in range(14)]
    )


def test_hypergraph_view_permutation_equivariance():
    net = case14()
    rng = np.random.default_rng(7)
    perm = rng.permutation(net.n_bus)
    pnet = permute_network(net, perm)
    topo = to_h2mg(net)
    ptopo = to_h2mg(pnet)
    assert np.array_equal(ptopo.ports["branch"], perm[topo.ports["branch"]])
    for i in range(net.n_bus):
        mapped = [
            ("bus", perm[e], p) if c == "bus" else (c, e, p)
            for (c, e, p) in topo.incidence[i]
        ]
        assert ptopo.incidence[perm[i]] == mapped


def test_incident_lists():
    net = case2()
    assert net.incident(0) == [(0, True)]
    assert net.incident(1) == [(0, False)]
