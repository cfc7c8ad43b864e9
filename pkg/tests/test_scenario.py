"""Scenario sampling, measurement synthesis, pseudos, dataset round-trip."""

import numpy as np
import pytest

from dsse_kit import pf_equations as pf
from dsse_kit.pf_equations import Measurement, StateVector
from dsse_kit.grid import Branch, Bus, GridNetwork
from dsse_kit.scenario import (
    SIGMA_FLOOR,
    SIGMA_VIRTUAL,
    Dataset,
    MeterConfig,
    NoiseSpec,
    add_pseudomeasurements,
    default_meters,
    default_profiles,
    generate_dataset,
    load_dataset,
    sample_load_scenarios,
    save_dataset,
    split_dataset,
    synthesize_measurements,
)

from helpers import case2, case14


def test_default_profiles_shape_and_determinism():
    net = case14()
    prof = default_profiles(net, seed=0)
    again = default_profiles(net, seed=0)
    assert prof.classes == again.classes
    assert np.array_equal(prof.p_base, again.p_base)
    # slack and zero-injection buses carry no profile
    assert 0 not in prof.classes and 7 not in prof.classes
    assert np.all(prof.p_base[0] == 0.0) and np.all(prof.p_base[7] == 0.0)
    # the deterministic class pattern puts generation at buses 4 and 9
    assert prof.classes[4] == "generation" and prof.classes[9] == "generation"
    assert all(np.all(prof.p_base[b] >= 0.0) for b, c in prof.classes.items()
               if c == "generation")
    assert all(np.all(prof.p_base[b] <= 0.0) for b, c in prof.classes.items()
               if c != "generation")


def test_scenario_sampling_statistics():
    net = case14()
    prof = default_profiles(net, seed=1)
    specs = sample_load_scenarios(prof, 2000, uncertainty=0.15, seed=5)
    assert len(specs) == 2000
    # pool the multiplicative deviations over all load buses and hours
    devs = []
    for s, spec in enumerate(specs):
        h = s % 24
        for b in prof.classes:
            base = prof.p_base[b, h]
            if base != 0.0:
                devs.append(spec.p_set[b] / base - 1.0)
    devs = np.array(devs)
    assert abs(devs.std() - 0.15) <= 0.015
    assert abs(devs.mean()) <= 0.01
    # zero-injection bus is untouched by the noise
    assert all(spec.p_set[7] == 0.0 and spec.q_set[7] == 0.0 for spec in specs)


def test_scenario_sampling_is_per_sample_deterministic():
    net = case14()
    prof = default_profiles(net, seed=1)
    full = sample_load_scenarios(prof, 50, seed=9)
    prefix = sample_load_scenarios(prof, 10, seed=9)
    # drawing fewer samples replays the identical per-sample streams
    for a, b in zip(prefix, full[:10]):
        assert np.array_equal(a.p_set, b.p_set)
        assert np.array_equal(a.q_set, b.q_set)


def _case14_truth():
    net = case14()
    prof = default_profiles(net, seed=0)
    from dsse_kit.acpf import InjectionSpec, solve_power_flow

    spec = InjectionSpec(prof.p_base[:, 12].copy(), prof.q_base[:, 12].copy())
    return net, prof, solve_power_flow(net, spec).state


def test_synthesize_structure_and_virtuals():
    net, _, truth = _case14_truth()
    meters = default_meters(net)
    assert meters.voltage_buses == (1, 8, 12)
    z = synthesize_measurements(truth, net, meters, NoiseSpec(seed=3))
    # 3 voltage meters, 2 flow packages of 3, then the virtuals:
    # slack V + slack angle, P/Q at the zero-injection bus, six zero flows
    # on the open branch
    assert len(z) == 3 + 6 + 2 + 2 + 6
    virtuals = [m for m in z if m.is_virtual]
    assert len(virtuals) == 10
    assert all(m.sigma == SIGMA_VIRTUAL for m in virtuals)
    slack_v = next(m for m in virtuals if m.kind == pf.V_BUS)
    assert slack_v.location == net.slack and slack_v.value == truth.v[net.slack]
    open_flows = [m for m in virtuals if m.location == 11 and m.kind in pf.FLOW_KINDS]
    assert len(open_flows) == 6 and all(m.value == 0.0 for m in open_flows)
    # determinism under the same seed
    z2 = synthesize_measurements(truth, net, meters, NoiseSpec(seed=3))
    assert z == z2
    z3 = synthesize_measurements(truth, net, meters, NoiseSpec(seed=4))
    assert z != z3


def test_noise_statistics_and_zero_mean():
    net, _, truth = _case14_truth()
    meters = MeterConfig(voltage_buses=(8,))
    noise = NoiseSpec(sigma_v=0.01)
    true_v = truth.v[8]
    draws = np.array([
        synthesize_measurements(truth, net, meters, noise, seed=[77, k])[0].value
        for k in range(10_000)
    ])
    rel = draws / true_v - 1.0
    assert abs(rel.std() - 0.01) <= 0.0005  # empirical std within 5%
    assert abs(rel.mean()) <= 4e-4
    # stored sigma is the absolute noise level
    m = synthesize_measurements(truth, net, meters, noise, seed=1)[0]
    assert m.sigma == pytest.approx(0.01 * true_v)


def test_sigma_floor_on_tiny_values():
    # a flow meter on a branch carrying nothing stores the floored sigma
    net = GridNetwork(
        buses=[Bus(0, slack=True), Bus(1)],
        branches=[Branch(0, 0, 1, r_pu=0.01, x_pu=0.1)],
    )
    truth = pf.flat_start(net)
    z = synthesize_measurements(
        truth, net, MeterConfig(flow_branches=((0, "fwd"),)), NoiseSpec(seed=0)
    )
    flow = [m for m in z if not m.is_virtual]
    assert all(m.sigma == SIGMA_FLOOR for m in flow)
    assert all(m.value == 0.0 for m in flow)  # zero true value, zero noise


def test_bad_flow_side_rejected():
    net, _, truth = _case14_truth()
    with pytest.raises(ValueError, match="side"):
        synthesize_measurements(
            truth, net, MeterConfig(flow_branches=((0, "up"),)), NoiseSpec()
        )


def test_pseudomeasurement_coverage():
    net, prof, truth = _case14_truth()
    meters = default_meters(net)
    z = synthesize_measurements(truth, net, meters, NoiseSpec(seed=3))
    full = add_pseudomeasurements(z, net, prof, hour=12)
    added = full[len(z):]
    assert all(m.is_pseudo for m in added)
    # every load bus (non-slack, non-zero-injection) gains exactly P and Q;
    # the slack gains its balance estimate; the zero-injection bus gains none
    per_bus = {}
    for m in added:
        per_bus.setdefault(m.location, []).append(m.kind)
    assert all(sorted(kinds) == [pf.P_INJ, pf.Q_INJ] for kinds in per_bus.values())
    assert set(per_bus) == set(range(14)) - {7}
    # afterwards every bus carries at least one P and one Q constraint
    have_p = {m.location for m in full if m.kind == pf.P_INJ}
    have_q = {m.location for m in full if m.kind == pf.Q_INJ}
    assert have_p == set(range(14)) and have_q == set(range(14))
    # the input list was not modified
    assert len(z) == 19
    # pseudo values are the hour's generic profile in load convention
    p_bus3 = next(m for m in added if m.location == 3 and m.kind == pf.P_INJ)
    assert p_bus3.value == -prof.p_base[3, 12]
    assert p_bus3.sigma == max(0.30 * abs(p_bus3.value), SIGMA_FLOOR)
    # a different hour gives different pseudo values
    other = add_pseudomeasurements(z, net, prof, hour=3)
    p_bus3_h3 = next(
        m for m in other[len(z):] if m.location == 3 and m.kind == pf.P_INJ
    )
    assert p_bus3_h3.value != p_bus3.value


def test_slack_pseudo_is_balance_estimate():
    net, prof, truth = _case14_truth()
    full = add_pseudomeasurements([], net, prof, hour=12)
    slack_p = next(m for m in full if m.location == 0 and m.kind == pf.P_INJ)
    others = [i for i in range(14) if i != 0]
    assert slack_p.value == pytest.approx(np.sum(prof.p_base[others, 12]))
    # the grid is a net consumer at noon, so the slack imports: in load
    # convention the source bus shows negative injection
    assert slack_p.value < 0.0


def _tiny_dataset(n=48, seed=123):
    net = case14()
    return net, generate_dataset(net, n_samples=n, seed=seed)


def test_generate_dataset_consistency():
    net, ds = _tiny_dataset()
    assert len(ds.samples) == 48
    for s in ds.samples[:5]:
        assert s.day == s.index // 24 and s.hour == s.index % 24
        # truth actually solves the sampled injections
        p_load, q_load = pf.bus_injections(s.truth, net)
        others = net.free_angle_buses()
        assert np.max(np.abs(-p_load[others] - s.injections.p_set[others])) <= 1e-8
        # real meters sit within 6 sigma of the model value at truth
        for m in s.measurements:
            if m.is_virtual or m.is_pseudo:
                continue
            h = pf.measurement_function(s.truth, [m], net)[0]
            assert abs(m.value - h) <= 6.0 * max(m.sigma, SIGMA_FLOOR)
    # splits cover everything exactly once
    names = [s.split for s in ds.samples]
    assert set(names) <= {"train", "val", "test"}
    assert len(ds.by_split("train")) + len(ds.by_split("val")) + len(ds.by_split("test")) == 48


def test_generate_dataset_is_deterministic():
    _, a = _tiny_dataset(n=12, seed=9)
    _, b = _tiny_dataset(n=12, seed=9)
    for sa, sb in zip(a.samples, b.samples):
        assert sa.measurements == sb.measurements
        assert np.array_equal(sa.truth.v, sb.truth.v)
        assert sa.split == sb.split


def test_split_ratios():
    net, ds = _tiny_dataset(n=10, seed=1)
    counts = {k: len(ds.by_split(k)) for k in ("train", "val", "test")}
    assert counts == {"train": 8, "val": 1, "test": 1}
    with pytest.raises(ValueError, match="sum"):
        split_dataset(ds, ratios=(0.5, 0.2, 0.2))


def test_split_8640_sizes():
    # the canonical yearly run: 360 days x 24 hours, 80/10/10
    n = 8640
    n_train = int(round(n * 0.8))
    n_val = int(round(n * 0.1))
    assert (n_train, n_val, n - n_train - n_val) == (6912, 864, 864)


def test_dataset_round_trip(tmp_path):
    net, ds = _tiny_dataset(n=12, seed=4)
    save_dataset(ds, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds", net)
    assert len(back.samples) == 12
    for a, b in zip(ds.samples, back.samples):
        assert np.array_equal(a.truth.v, b.truth.v)
        assert np.array_equal(a.truth.theta, b.truth.theta)
        assert np.array_equal(a.injections.p_set, b.injections.p_set)
        assert a.measurements == b.measurements
        assert (a.day, a.hour, a.split) == (b.day, b.hour, b.split)
    assert back.noise == ds.noise
    assert back.meters == ds.meters
    assert np.array_equal(back.profiles.p_base, ds.profiles.p_base)
    # saving the reloaded dataset reproduces the files byte for byte
    save_dataset(back, tmp_path / "ds2")
    for name in ("meta.json", "samples.csv", "truth.csv", "injections.csv",
                 "measurements.csv", "profiles.csv"):
        assert (tmp_path / "ds" / name).read_bytes() == \
            (tmp_path / "ds2" / name).read_bytes()


def test_load_dataset_rejects_mismatched_grid(tmp_path):
    net, ds = _tiny_dataset(n=6, seed=2)
    save_dataset(ds, tmp_path / "ds")
    with pytest.raises(ValueError, match="mismatch"):
        load_dataset(tmp_path / "ds", case2())


def test_load_dataset_rejects_wrong_schema(tmp_path):
    net, ds = _tiny_dataset(n=6, seed=2)
    save_dataset(ds, tmp_path / "ds")
    meta_path = tmp_path / "ds" / "meta.json"
    meta_path.write_text(meta_path.read_text().replace("dsse-dataset/1", "other/9"))
    with pytest.raises(ValueError, match="schema"):
        load_dataset(tmp_path / "ds", net)


def test_empty_split_rejected():
    net = case14()
    ds = Dataset(network=net, samples=[], meters=default_meters(net),
                 noise=NoiseSpec(), profiles=default_profiles(net),
                 uncertainty=0.15, seed=0)
    with pytest.raises(ValueError, match="empty"):
        split_dataset(ds)
    with pytest.raises(ValueError, match="positive"):
        generate_dataset(net, n_samples=0)
