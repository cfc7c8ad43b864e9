"""Grid model: buses, branches, file round-trip, and the hypergraph view.

All electrical quantities are per-unit on a single system base. Bus indices
are dense 0..n-1 and double as vertex ids; branch indices are dense 0..m-1.
Open branches stay part of the model (their flows are identically zero), so
switching state is data, not topology surgery.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

GRID_SCHEMA = "dsse-grid/1"

_TOP_KEYS = {"schema", "name", "buses", "branches"}
_BUS_KEYS = {"id", "slack", "zero_injection", "base_kv"}
_BRANCH_KEYS = {
    "id", "from", "to", "r_pu", "x_pu", "g_shunt_pu", "b_shunt_pu",
    "shift_rad", "closed", "rating_pu", "transformer",
}


class GridFormatError(ValueError):
    """A grid file could not be parsed or failed validation."""


@dataclass(frozen=True)
class Bus:
    index: int
    slack: bool = False
    zero_injection: bool = False
    base_kv: float = 20.0


@dataclass(frozen=True)
class Branch:
    """A two-port element: line, cable, or transformer.

    r_pu/x_pu are the series impedance; g_shunt_pu/b_shunt_pu the *total*
    shunt admittance, split half per end. shift_rad is the ideal phase
    shift applied at the from side (transformers only). rating_pu limits
    the per-phase current magnitude used for loading percentages.
    """

    index: int
    from_bus: int
    to_bus: int
    r_pu: float
    x_pu: float
    g_shunt_pu: float = 0.0
    b_shunt_pu: float = 0.0
    shift_rad: float = 0.0
    closed: bool = True
    rating_pu: float = 1.0
    transformer: bool = False

    @property
    def y_series(self) -> complex:
        return 1.0 / complex(self.r_pu, self.x_pu)


@dataclass
class GridNetwork:
    """Validated network with precomputed arrays for the numeric kernels.

    The arrays (series/shunt admittance parts, endpoint indices, closed
    mask, ...) are derived once at construction so the measurement math can
    stay vectorized. Treat instances as immutable; rebuild instead of
    mutating.
    """

    buses: list[Bus]
    branches: list[Branch]
    name: str = ""

    # filled by __post_init__
    slack: int = field(init=False, repr=False)
    from_idx: np.ndarray = field(init=False, repr=False)
    to_idx: np.ndarray = field(init=False, repr=False)
    g_series: np.ndarray = field(init=False, repr=False)
    b_series: np.ndarray = field(init=False, repr=False)
    g_shunt_half: np.ndarray = field(init=False, repr=False)
    b_shunt_half: np.ndarray = field(init=False, repr=False)
    shift: np.ndarray = field(init=False, repr=False)
    closed: np.ndarray = field(init=False, repr=False)
    rating: np.ndarray = field(init=False, repr=False)
    transformer_mask: np.ndarray = field(init=False, repr=False)
    zero_injection_mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._validate()
        br = self.branches
        self.from_idx = np.array([b.from_bus for b in br], dtype=int)
        self.to_idx = np.array([b.to_bus for b in br], dtype=int)
        y = np.array([b.y_series for b in br], dtype=complex)
        self.g_series = y.real.copy()
        self.b_series = y.imag.copy()
        self.g_shunt_half = np.array([0.5 * b.g_shunt_pu for b in br])
        self.b_shunt_half = np.array([0.5 * b.b_shunt_pu for b in br])
        self.shift = np.array([b.shift_rad for b in br])
        self.closed = np.array([b.closed for b in br], dtype=bool)
        self.rating = np.array([b.rating_pu for b in br])
        self.transformer_mask = np.array([b.transformer for b in br], dtype=bool)
        self.zero_injection_mask = np.array(
            [b.zero_injection for b in self.buses], dtype=bool
        )
        # per-bus incidence: (branch index, True if this bus is the from end)
        self._incident: list[list[tuple[int, bool]]] = [[] for _ in self.buses]
        for b in br:
            self._incident[b.from_bus].append((b.index, True))
            self._incident[b.to_bus].append((b.index, False))

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    def incident(self, bus: int) -> list[tuple[int, bool]]:
        """Branches touching a bus, as (branch index, at_from) pairs."""
        return self._incident[bus]

    def free_angle_buses(self) -> np.ndarray:
        """Bus indices whose angle is a free variable (everything but slack)."""
        return np.array([i for i in range(self.n_bus) if i != self.slack])

    def _validate(self) -> None:
        n = len(self.buses)
        if n == 0:
            raise GridFormatError("network has no buses")
        if sorted(b.index for b in self.buses) != list(range(n)):
            raise GridFormatError("bus ids must be dense 0..n-1 without repeats")
        if any(self.buses[i].index != i for i in range(n)):
            raise GridFormatError("buses must be listed in id order")
        slacks = [b.index for b in self.buses if b.slack]
        if len(slacks) == 0:
            raise GridFormatError("no slack bus")
        if len(slacks) > 1:
            raise GridFormatError(f"multiple slack buses: {slacks}")
        self.slack = slacks[0]
        if self.buses[self.slack].zero_injection:
            raise GridFormatError("slack bus cannot be zero-injection")
        m = len(self.branches)
        if sorted(b.index for b in self.branches) != list(range(m)):
            raise GridFormatError("branch ids must be dense 0..m-1 without repeats")
        if any(self.branches[k].index != k for k in range(m)):
            raise GridFormatError("branches must be listed in id order")
        for b in self.branches:
            if not (0 <= b.from_bus < n and 0 <= b.to_bus < n):
                raise GridFormatError(f"branch {b.index} endpoint out of range")
            if b.from_bus == b.to_bus:
                raise GridFormatError(f"branch {b.index} connects a bus to itself")
            if b.r_pu == 0.0 and b.x_pu == 0.0:
                raise GridFormatError(f"branch {b.index} has zero series impedance")
            if b.rating_pu <= 0.0:
                raise GridFormatError(f"branch {b.index} rating must be positive")
            if b.shift_rad != 0.0 and not b.transformer:
                raise GridFormatError(
                    f"branch {b.index} has a phase shift but is not a transformer"
                )
        for bus in self.buses:
            if bus.base_kv <= 0.0:
                raise GridFormatError(f"bus {bus.index} base_kv must be positive")
        # every bus must be reachable from the slack over closed branches,
        # otherwise its state is undetermined
        seen = {self.slack}
        frontier = [self.slack]
        adj: list[list[int]] = [[] for _ in range(n)]
        for b in self.branches:
            if b.closed:
                adj[b.from_bus].append(b.to_bus)
                adj[b.to_bus].append(b.from_bus)
        while frontier:
            i = frontier.pop()
            for j in adj[i]:
                if j not in seen:
                    seen.add(j)
                    frontier.append(j)
        if len(seen) != n:
            dead = sorted(set(range(n)) - seen)
            raise GridFormatError(
                f"buses {dead} are not connected to the slack through closed branches"
            )


@dataclass
class H2MGTopology:
    """Hypergraph view: buses are vertices and 1-port hyperedges, branches
    are 2-port hyperedges.

    ports maps class name to an (n_edges, n_ports) array of vertex ids.
    incidence[i] lists (class_name, hyperedge_index, port) for every port
    of every hyperedge that touches vertex i.
    """

    n_vertices: int
    ports: dict[str, np.ndarray]
    incidence: list[list[tuple[str, int, int]]]


def to_h2mg(network: GridNetwork) -> H2MGTopology:
    n = network.n_bus
    bus_ports = np.arange(n, dtype=int)[:, None]
    branch_ports = np.stack([network.from_idx, network.to_idx], axis=1) \
        if network.n_branch else np.zeros((0, 2), dtype=int)
    incidence: list[list[tuple[str, int, int]]] = [[] for _ in range(n)]
    for i in range(n):
        incidence[i].append(("bus", i, 0))
    for e in range(network.n_branch):
        incidence[network.from_idx[e]].append(("branch", e, 0))
        incidence[network.to_idx[e]].append(("branch", e, 1))
    return H2MGTopology(
        n_vertices=n,
        ports={"bus": bus_ports, "branch": branch_ports},
        incidence=incidence,
    )


def _require_keys(obj: dict, allowed: set, required: set, what: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise GridFormatError(
            f"unknown field(s) {sorted(unknown)} in {what}; "
            "extra fields (including alternate bases) are rejected, not ignored"
        )
    missing = required - set(obj)
    if missing:
        raise GridFormatError(f"missing field(s) {sorted(missing)} in {what}")


def load_grid(path: str | Path) -> GridNetwork:
    """Load and validate a grid file (schema dsse-grid/1)."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GridFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise GridFormatError(f"{path}: top level must be an object")
    _require_keys(doc, _TOP_KEYS, {"schema", "buses", "branches"}, "grid file")
    if doc["schema"] != GRID_SCHEMA:
        raise GridFormatError(
            f"{path}: schema {doc['schema']!r} not supported (expected {GRID_SCHEMA!r})"
        )
    buses = []
    for raw in doc["buses"]:
        _require_keys(raw, _BUS_KEYS, {"id"}, f"bus entry {raw.get('id', '?')}")
        buses.append(Bus(
            index=int(raw["id"]),
            slack=bool(raw.get("slack", False)),
            zero_injection=bool(raw.get("zero_injection", False)),
            base_kv=float(raw.get("base_kv", 20.0)),
        ))
    branches = []
    for raw in doc["branches"]:
        _require_keys(
            raw, _BRANCH_KEYS, {"id", "from", "to", "r_pu", "x_pu"},
            f"branch entry {raw.get('id', '?')}",
        )
        branches.append(Branch(
            index=int(raw["id"]),
            from_bus=int(raw["from"]),
            to_bus=int(raw["to"]),
            r_pu=float(raw["r_pu"]),
            x_pu=float(raw["x_pu"]),
            g_shunt_pu=float(raw.get("g_shunt_pu", 0.0)),
            b_shunt_pu=float(raw.get("b_shunt_pu", 0.0)),
            shift_rad=float(raw.get("shift_rad", 0.0)),
            closed=bool(raw.get("closed", True)),
            rating_pu=float(raw.get("rating_pu", 1.0)),
            transformer=bool(raw.get("transformer", False)),
        ))
    buses.sort(key=lambda b: b.index)
    branches.sort(key=lambda b: b.index)
    return GridNetwork(buses=buses, branches=branches, name=str(doc.get("name", "")))


def save_grid(network: GridNetwork, path: str | Path) -> None:
    doc = {
        "schema": GRID_SCHEMA,
        "name": network.name,
        "buses": [
            {
                "id": b.index,
                "slack": b.slack,
                "zero_injection": b.zero_injection,
                "base_kv": b.base_kv,
            }
            for b in network.buses
        ],
        "branches": [
            {
                "id": b.index,
                "from": b.from_bus,
                "to": b.to_bus,
                "r_pu": b.r_pu,
                "x_pu": b.x_pu,
                "g_shunt_pu": b.g_shunt_pu,
                "b_shunt_pu": b.b_shunt_pu,
                "shift_rad": b.shift_rad,
                "closed": b.closed,
                "rating_pu": b.rating_pu,
                "transformer": b.transformer,
            }
            for b in network.branches
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def fixture_path(name: str) -> Path:
    """Path of a bundled fixture grid, e.g. fixture_path('case14.grid')."""
    return Path(resources.files("dsse_kit").joinpath("fixtures", name))
