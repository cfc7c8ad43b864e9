"""Scenario and measurement synthesis: daily profiles, Monte Carlo load
sampling, noisy meters, virtual and pseudo measurements, dataset files.

Seeds are plumbed so that any single sample can be regenerated without
replaying the rest: every random draw comes from a SeedSequence keyed by
(master seed, stream tag, sample index).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pf_equations as pf
from .acpf import InjectionSpec, solve_power_flow
from .pf_equations import Measurement, StateVector

DATASET_SCHEMA = "dsse-dataset/1"

SIGMA_FLOOR = 1e-4
SIGMA_VIRTUAL = 1e-5

# stream tags for SeedSequence namespacing
_TAG_SCENARIO = 11
_TAG_NOISE = 13
_TAG_SPLIT = 17

# hour-of-day shapes, peak-normalized; generation is a solar bump on top of
# an always-running base unit, so it never drops to zero (an exactly-zero
# profile would floor its pseudomeasurement sigma and turn a soft prior into
# a near-hard constraint)
RESIDENTIAL_SHAPE = np.array([
    0.42, 0.38, 0.36, 0.35, 0.35, 0.38, 0.46, 0.56, 0.62, 0.64, 0.66, 0.68,
    0.70, 0.68, 0.66, 0.68, 0.74, 0.84, 0.94, 1.00, 0.98, 0.88, 0.70, 0.52,
])
COMMERCIAL_SHAPE = np.array([
    0.18, 0.16, 0.15, 0.15, 0.16, 0.22, 0.40, 0.62, 0.82, 0.92, 0.97, 1.00,
    0.99, 0.97, 0.95, 0.92, 0.85, 0.72, 0.55, 0.40, 0.32, 0.26, 0.22, 0.20,
])
GENERATION_SHAPE = np.array([
    0.25, 0.25, 0.25, 0.25, 0.25, 0.26, 0.32, 0.42, 0.55, 0.70, 0.84, 0.94,
    1.00, 0.98, 0.91, 0.79, 0.64, 0.48, 0.36, 0.28, 0.26, 0.25, 0.25, 0.25,
])

_SHAPES = {
    "residential": RESIDENTIAL_SHAPE,
    "commercial": COMMERCIAL_SHAPE,
    "generation": GENERATION_SHAPE,
}
_PEAK_PU = {"residential": 0.12, "commercial": 0.15, "generation": 0.10}
_POWER_FACTOR_Q = {"residential": 0.33, "commercial": 0.33, "generation": 0.25}


@dataclass
class ProfileSet:
    """Per-bus hourly baseline injections, generator convention (loads < 0)."""

    classes: dict[int, str]
    p_base: np.ndarray  # (n_bus, 24)
    q_base: np.ndarray  # (n_bus, 24)


def default_profiles(network, seed: int = 0) -> ProfileSet:
    """Assign a consumption/generation class and scale to every load bus.

    The class pattern is deterministic in the bus index; scales vary
    plus/minus 30% around the class peak, drawn from a per-bus stream so
    adding a bus elsewhere cannot shuffle everyone's profile.
    """
    n = network.n_bus
    classes: dict[int, str] = {}
    p_base = np.zeros((n, 24))
    q_base = np.zeros((n, 24))
    for i in range(n):
        if i == network.slack or network.zero_injection_mask[i]:
            continue
        if i % 5 == 4:
            cls = "generation"
        elif i % 3 == 2:
            cls = "commercial"
        else:
            cls = "residential"
        classes[i] = cls
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        scale = _PEAK_PU[cls] * rng.uniform(0.7, 1.3)
        sign = 1.0 if cls == "generation" else -1.0
        p_base[i] = sign * scale * _SHAPES[cls]
        q_base[i] = sign * scale * _POWER_FACTOR_Q[cls] * _SHAPES[cls]
    return ProfileSet(classes=classes, p_base=p_base, q_base=q_base)


@dataclass
class MeterConfig:
    """Where the real meters sit: voltage magnitudes at buses, full
    (P, Q, I) packages on branch ends."""

    voltage_buses: tuple = ()
    flow_branches: tuple = ()  # (branch index, "fwd" | "rev") pairs
    include_angle_meters: bool = False


def default_meters(network) -> MeterConfig:
    """Sparse layout for the bundled feeders: voltage meters spread along
    the feeders plus flow packages at the two substation transformers (the
    branches SCADA actually watches, and the only ones whose flows never
    reverse); a tiny grid gets one of each."""
    if network.n_bus >= 13:
        return MeterConfig(voltage_buses=(1, 8, 12),
                           flow_branches=((12, "fwd"), (13, "fwd")))
    first = min(i for i in range(network.n_bus) if i != network.slack)
    return MeterConfig(voltage_buses=(first,), flow_branches=((0, "fwd"),))


@dataclass
class NoiseSpec:
    """Relative noise levels per meter family plus the master noise seed."""

    sigma_v: float = 0.01
    sigma_i: float = 0.01
    sigma_pq: float = 0.02
    sigma_pseudo: float = 0.30
    seed: int = 0

    @classmethod
    def from_level(cls, level: str, seed: int = 0) -> "NoiseSpec":
        table = {
            "default": (0.01, 0.01, 0.02),
            "low": (0.005, 0.005, 0.01),
            "high": (0.03, 0.03, 0.05),
        }
        if level not in table:
            raise ValueError(f"unknown noise level {level!r}")
        sv, si, spq = table[level]
        return cls(sigma_v=sv, sigma_i=si, sigma_pq=spq, seed=seed)


def sample_load_scenarios(
    profiles: ProfileSet,
    n_samples: int,
    uncertainty: float = 0.15,
    seed: int = 0,
) -> list[InjectionSpec]:
    """Monte Carlo around the hourly baseline: each bus gets one factor
    (1 + u), u ~ N(0, uncertainty^2), applied to both P and Q (constant
    power factor). Sample s uses hour s mod 24."""
    n_bus = profiles.p_base.shape[0]
    out = []
    for s in range(n_samples):
        rng = np.random.default_rng(np.random.SeedSequence([seed, _TAG_SCENARIO, s]))
        u = 1.0 + rng.normal(0.0, uncertainty, size=n_bus)
        hour = s % 24
        out.append(InjectionSpec(
            p_set=profiles.p_base[:, hour] * u,
            q_set=profiles.q_base[:, hour] * u,
        ))
    return out


def _real_sigma(rel: float, true_value: float) -> float:
    return max(rel * abs(true_value), SIGMA_FLOOR)


def synthesize_measurements(
    truth: StateVector,
    network,
    meters: MeterConfig,
    noise: NoiseSpec,
    seed=None,
) -> list[Measurement]:
    """Noisy meter readings plus exact virtual constraints for one state.

    Real meters: value = true * (1 + eps), eps ~ N(0, sigma_rel^2); the
    stored sigma is the absolute noise level, floored at 1e-4 pu. Virtual
    constraints (slack reference, zero-injection buses, open-branch flows)
    carry sigma 1e-5 and no noise. seed overrides noise.seed; a sequence is
    accepted so callers can pass per-sample entropy.
    """
    entropy = noise.seed if seed is None else seed
    if isinstance(entropy, (int, np.integer)):
        entropy = [int(entropy)]
    rng = np.random.default_rng(np.random.SeedSequence(entropy))

    out: list[Measurement] = []

    def meter(kind, loc, true_value, rel):
        value = true_value * (1.0 + rng.normal(0.0, rel))
        out.append(Measurement(kind=kind, location=loc, value=float(value),
                               sigma=_real_sigma(rel, true_value)))

    pf_, qf, pr, qr, i_f, i_r = pf._flow_arrays(truth, network)
    for b in sorted(meters.voltage_buses):
        meter(pf.V_BUS, int(b), float(truth.v[b]), noise.sigma_v)
        if meters.include_angle_meters:
            meter(pf.THETA_BUS, int(b), float(truth.theta[b]), noise.sigma_v)
    for br, side in sorted(meters.flow_branches):
        if side == "fwd":
            triple = (
                (pf.P_FLOW_FWD, pf_[br], noise.sigma_pq),
                (pf.Q_FLOW_FWD, qf[br], noise.sigma_pq),
                (pf.I_FLOW_FWD, i_f[br], noise.sigma_i),
            )
        elif side == "rev":
            triple = (
                (pf.P_FLOW_REV, pr[br], noise.sigma_pq),
                (pf.Q_FLOW_REV, qr[br], noise.sigma_pq),
                (pf.I_FLOW_REV, i_r[br], noise.sigma_i),
            )
        else:
            raise ValueError(f"flow meter side must be 'fwd' or 'rev', got {side!r}")
        for kind, true_value, rel in triple:
            meter(kind, int(br), float(true_value), rel)

    def virtual(kind, loc, value):
        out.append(Measurement(kind=kind, location=int(loc), value=float(value),
                               sigma=SIGMA_VIRTUAL, is_virtual=True))

    virtual(pf.V_BUS, network.slack, truth.v[network.slack])
    virtual(pf.THETA_BUS, network.slack, 0.0)
    for i in np.flatnonzero(network.zero_injection_mask):
        virtual(pf.P_INJ, i, 0.0)
        virtual(pf.Q_INJ, i, 0.0)
    for br in np.flatnonzero(~network.closed):
        for kind in pf.FLOW_KINDS:
            virtual(kind, br, 0.0)
    return out


def add_pseudomeasurements(
    measurements: list[Measurement],
    network,
    profiles: ProfileSet,
    hour: int,
    sigma_rel: float = 0.30,
) -> list[Measurement]:
    """Give every P/Q-uncovered bus an injection estimate from the generic
    profiles (load-convention values, sigma 30% relative).

    The slack bus gets a lossless-balance estimate (minus the sum of every
    other bus's profile injection) so that afterwards literally every bus
    carries at least one P and one Q constraint. Returns a new list; the
    input is not modified.
    """
    have_p = {m.location for m in measurements if m.kind == pf.P_INJ}
    have_q = {m.location for m in measurements if m.kind == pf.Q_INJ}
    others = [i for i in range(network.n_bus) if i != network.slack]
    # load-convention pseudo values at this hour
    p_pseudo = -profiles.p_base[:, hour]
    q_pseudo = -profiles.q_base[:, hour]
    p_slack = float(np.sum(profiles.p_base[others, hour]))
    q_slack = float(np.sum(profiles.q_base[others, hour]))

    out = list(measurements)

    def pseudo(kind, bus, value):
        out.append(Measurement(
            kind=kind, location=int(bus), value=float(value),
            sigma=_real_sigma(sigma_rel, value), is_pseudo=True,
        ))

    for i in range(network.n_bus):
        value_p = p_slack if i == network.slack else p_pseudo[i]
        value_q = q_slack if i == network.slack else q_pseudo[i]
        if i not in have_p:
            pseudo(pf.P_INJ, i, value_p)
        if i not in have_q:
            pseudo(pf.Q_INJ, i, value_q)
    return out


# ------------------------------------------------------------------ datasets

@dataclass
class Sample:
    index: int
    day: int
    hour: int
    injections: InjectionSpec
    truth: StateVector
    measurements: list[Measurement]
    split: str = ""


@dataclass
class Dataset:
    network: object
    samples: list[Sample]
    meters: MeterConfig
    noise: NoiseSpec
    profiles: ProfileSet
    uncertainty: float
    seed: int

    def by_split(self, name: str) -> list[Sample]:
        return [s for s in self.samples if s.split == name]


def split_dataset(dataset: Dataset, ratios=(0.8, 0.1, 0.1), seed=None) -> Dataset:
    """Tag every sample train/val/test by a seeded shuffle. Whole-dataset
    permutation, sizes rounded, remainder to test."""
    n = len(dataset.samples)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise ValueError("ratios must be three numbers summing to 1")
    if seed is None:
        seed = dataset.seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, _TAG_SPLIT]))
    perm = rng.permutation(n)
    n_train = int(round(n * ratios[0]))
    n_val = int(round(n * ratios[1]))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    for rank, idx in enumerate(perm):
        if rank < n_train:
            dataset.samples[idx].split = "train"
        elif rank < n_train + n_val:
            dataset.samples[idx].split = "val"
        else:
            dataset.samples[idx].split = "test"
    return dataset


def generate_dataset(
    network,
    n_samples: int,
    seed: int = 0,
    meters: MeterConfig | None = None,
    noise: NoiseSpec | None = None,
    profiles: ProfileSet | None = None,
    uncertainty: float = 0.15,
    ratios=(0.8, 0.1, 0.1),
) -> Dataset:
    """Scenarios -> power-flow truth -> noisy measurements -> pseudos -> split."""
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    if meters is None:
        meters = default_meters(network)
    if noise is None:
        noise = NoiseSpec(seed=seed)
    if profiles is None:
        profiles = default_profiles(network, seed=seed)
    injections = sample_load_scenarios(profiles, n_samples, uncertainty, seed=seed)
    samples = []
    for s, spec in enumerate(injections):
        truth = solve_power_flow(network, spec, tol=1e-10, max_iter=30).state
        z = synthesize_measurements(
            truth, network, meters, noise, seed=[noise.seed, _TAG_NOISE, s]
        )
        z = add_pseudomeasurements(
            z, network, profiles, hour=s % 24, sigma_rel=noise.sigma_pseudo
        )
        samples.append(Sample(
            index=s, day=s // 24, hour=s % 24,
            injections=spec, truth=truth, measurements=z,
        ))
    ds = Dataset(
        network=network, samples=samples, meters=meters, noise=noise,
        profiles=profiles, uncertainty=uncertainty, seed=seed,
    )
    return split_dataset(ds, ratios)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_dataset(dataset: Dataset, out_dir) -> None:
    """Write meta.json plus four CSV files; floats use %.17g so reloading
    is bit-exact and regeneration under a fixed seed is byte-identical."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net = dataset.network
    meta = {
        "schema": DATASET_SCHEMA,
        "grid_name": net.name,
        "n_bus": net.n_bus,
        "n_branch": net.n_branch,
        "n_samples": len(dataset.samples),
        "seed": dataset.seed,
        "uncertainty": dataset.uncertainty,
        "noise": {
            "sigma_v": dataset.noise.sigma_v,
            "sigma_i": dataset.noise.sigma_i,
            "sigma_pq": dataset.noise.sigma_pq,
            "sigma_pseudo": dataset.noise.sigma_pseudo,
            "seed": dataset.noise.seed,
        },
        "meters": {
            "voltage_buses": [int(b) for b in dataset.meters.voltage_buses],
            "flow_branches": [[int(b), side] for b, side in dataset.meters.flow_branches],
            "include_angle_meters": dataset.meters.include_angle_meters,
        },
        "profile_classes": {str(k): v for k, v in sorted(dataset.profiles.classes.items())},
        "split_counts": {
            name: len(dataset.by_split(name)) for name in ("train", "val", "test")
        },
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    with open(out / "samples.csv", "w") as f:
        f.write("sample,day,hour,split\n")
        for s in dataset.samples:
            f.write(f"{s.index},{s.day},{s.hour},{s.split}\n")
    with open(out / "truth.csv", "w") as f:
        f.write("sample,bus,v_pu,theta_rad\n")
        for s in dataset.samples:
            for b in range(net.n_bus):
                f.write(f"{s.index},{b},{_fmt(s.truth.v[b])},{_fmt(s.truth.theta[b])}\n")
    with open(out / "injections.csv", "w") as f:
        f.write("sample,bus,p_set,q_set\n")
        for s in dataset.samples:
            for b in range(net.n_bus):
                f.write(
                    f"{s.index},{b},{_fmt(s.injections.p_set[b])},"
                    f"{_fmt(s.injections.q_set[b])}\n"
                )
    with open(out / "measurements.csv", "w") as f:
        f.write("sample,seq,kind,location,value,sigma,is_pseudo,is_virtual\n")
        for s in dataset.samples:
            for k, m in enumerate(s.measurements):
                f.write(
                    f"{s.index},{k},{m.kind},{m.location},{_fmt(m.value)},"
                    f"{_fmt(m.sigma)},{int(m.is_pseudo)},{int(m.is_virtual)}\n"
                )
    with open(out / "profiles.csv", "w") as f:
        f.write("bus,class,hour,p_base,q_base\n")
        for b in sorted(dataset.profiles.classes):
            for h in range(24):
                f.write(
                    f"{b},{dataset.profiles.classes[b]},{h},"
                    f"{_fmt(dataset.profiles.p_base[b, h])},"
                    f"{_fmt(dataset.profiles.q_base[b, h])}\n"
                )


def load_dataset(in_dir, network) -> Dataset:
    """Rebuild a Dataset from disk; the grid is passed in (datasets store
    only its name and sizes, which are checked)."""
    src = Path(in_dir)
    meta = json.loads((src / "meta.json").read_text())
    if meta.get("schema") != DATASET_SCHEMA:
        raise ValueError(
            f"dataset schema {meta.get('schema')!r} not supported "
            f"(expected {DATASET_SCHEMA!r})"
        )
    if meta["n_bus"] != network.n_bus or meta["n_branch"] != network.n_branch:
        raise ValueError("dataset does not match the given grid (size mismatch)")
    n_bus = network.n_bus
    noise = NoiseSpec(**meta["noise"])
    meters = MeterConfig(
        voltage_buses=tuple(meta["meters"]["voltage_buses"]),
        flow_branches=tuple((b, side) for b, side in meta["meters"]["flow_branches"]),
        include_angle_meters=meta["meters"]["include_angle_meters"],
    )
    n_samples = meta["n_samples"]

    rows = (src / "samples.csv").read_text().splitlines()[1:]
    info = {}
    for line in rows:
        s, day, hour, split = line.split(",")
        info[int(s)] = (int(day), int(hour), split)

    truth_v = np.zeros((n_samples, n_bus))
    truth_t = np.zeros((n_samples, n_bus))
    for line in (src / "truth.csv").read_text().splitlines()[1:]:
        s, b, v, t = line.split(",")
        truth_v[int(s), int(b)] = float(v)
        truth_t[int(s), int(b)] = float(t)

    inj_p = np.zeros((n_samples, n_bus))
    inj_q = np.zeros((n_samples, n_bus))
    for line in (src / "injections.csv").read_text().splitlines()[1:]:
        s, b, p, q = line.split(",")
        inj_p[int(s), int(b)] = float(p)
        inj_q[int(s), int(b)] = float(q)

    meas: dict[int, list[Measurement]] = {s: [] for s in range(n_samples)}
    for line in (src / "measurements.csv").read_text().splitlines()[1:]:
        s, _seq, kind, loc, value, sigma, is_ps, is_virt = line.split(",")
        meas[int(s)].append(Measurement(
            kind=kind, location=int(loc), value=float(value), sigma=float(sigma),
            is_pseudo=bool(int(is_ps)), is_virtual=bool(int(is_virt)),
        ))

    classes: dict[int, str] = {}
    p_base = np.zeros((n_bus, 24))
    q_base = np.zeros((n_bus, 24))
    for line in (src / "profiles.csv").read_text().splitlines()[1:]:
        b, cls, h, p, q = line.split(",")
        classes[int(b)] = cls
        p_base[int(b), int(h)] = float(p)
        q_base[int(b), int(h)] = float(q)

    samples = []
    for s in range(n_samples):
        day, hour, split = info[s]
        samples.append(Sample(
            index=s, day=day, hour=hour,
            injections=InjectionSpec(inj_p[s].copy(), inj_q[s].copy()),
            truth=StateVector(truth_v[s].copy(), truth_t[s].copy()),
            measurements=meas[s], split=split,
        ))
    return Dataset(
        network=network, samples=samples, meters=meters, noise=noise,
        profiles=ProfileSet(classes=classes, p_base=p_base, q_base=q_base),
        uncertainty=meta["uncertainty"], seed=meta["seed"],
    )
