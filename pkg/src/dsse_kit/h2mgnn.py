"""Recurrent residual message-passing estimator over the grid hypergraph.

Buses appear twice in the structure: as vertices and as 1-port hyperedges
carrying the bus measurements; branches are 2-port hyperedges carrying the
flow measurements and line parameters. Each of T iterations sends one
message per (class, port) into every vertex, then updates hyperedge latents
and the per-bus output increment, all scaled by 1/T so single iterations
move the estimate only gently.

Everything here runs in two interchangeable forms: plain numpy (inference)
and tape ops (training); both follow the identical arithmetic sequence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .pf_equations import FLOW_KINDS, P_INJ, Q_INJ, THETA_BUS, V_BUS, StateVector

MODEL_SCHEMA = "dsse-model/1"
FEATURE_VERSION = "dsse-h2mg-features/1"

BUS_FEATURE_DIM = 14
BRANCH_FEATURE_DIM = 24

# (value, weight, presence) triples; bus tail is [zero_injection, slack],
# branch tail is [g_series, b_series, g_shunt, b_shunt, shift, closed]
_BUS_SLOT = {V_BUS: 0, THETA_BUS: 3, P_INJ: 6, Q_INJ: 9}
_BRANCH_SLOT = {kind: 3 * k for k, kind in enumerate(FLOW_KINDS)}

# voltage readout: a shifted softplus, positive everywhere and exactly 1 at
# the raw initialization value 1
_V_SHIFT = float(np.log(np.e - 1.0)) - 1.0

MLP_NAMES = (
    "msg_bus", "msg_branch_from", "msg_branch_to",
    "upd_bus", "upd_branch", "dec_bus",
)


@dataclass
class ModelConfig:
    latent_dim: int = 40
    iterations: int = 7
    mlp_hidden: int = 40
    mlp_layers: int = 3
    dropout: float = 0.4


@dataclass
class FeatureEncoding:
    bus: np.ndarray     # (n_bus, BUS_FEATURE_DIM)
    branch: np.ndarray  # (n_branch, BRANCH_FEATURE_DIM)


@dataclass
class NormStats:
    bus_mean: np.ndarray
    bus_std: np.ndarray
    branch_mean: np.ndarray
    branch_std: np.ndarray


@dataclass
class Model:
    config: ModelConfig
    params: dict
    norm: NormStats
    feature_version: str = FEATURE_VERSION
    info: dict = field(default_factory=dict)


def encode_features(network, measurements) -> FeatureEncoding:
    """Raw (unnormalized) features for one measurement set.

    Measured slots carry (value, weight, 1); absent slots stay (0, 0, 0).
    Weights are 1/sigma^2 scaled by the per-kind maximum in this set. If a
    slot is measured twice the higher-weight reading wins. Virtual
    constraint rows are skipped: the zero-injection, slack, and closed
    booleans already state them, and their near-zero sigmas would crush
    every real meter's scaled weight to nothing.
    """
    n, m = network.n_bus, network.n_branch
    bus = np.zeros((n, BUS_FEATURE_DIM))
    branch = np.zeros((m, BRANCH_FEATURE_DIM))

    best: dict[tuple, tuple] = {}
    kind_max: dict[str, float] = {}
    for meas in measurements:
        if meas.is_virtual:
            continue
        w = 1.0 / (meas.sigma * meas.sigma)
        key = (meas.kind, meas.location)
        if key not in best or w > best[key][1]:
            best[key] = (meas.value, w)
        kind_max[meas.kind] = max(kind_max.get(meas.kind, 0.0), w)
    for (kind, loc), (value, w) in best.items():
        scaled = w / kind_max[kind]
        if kind in _BUS_SLOT:
            col = _BUS_SLOT[kind]
            bus[loc, col:col + 3] = (value, scaled, 1.0)
        else:
            col = _BRANCH_SLOT[kind]
            branch[loc, col:col + 3] = (value, scaled, 1.0)

    bus[:, 12] = network.zero_injection_mask.astype(float)
    bus[network.slack, 13] = 1.0
    branch[:, 18] = network.g_series
    branch[:, 19] = network.b_series
    branch[:, 20] = 2.0 * network.g_shunt_half
    branch[:, 21] = 2.0 * network.b_shunt_half
    branch[:, 22] = network.shift
    branch[:, 23] = network.closed.astype(float)
    return FeatureEncoding(bus=bus, branch=branch)


def compute_norm_stats(encodings) -> NormStats:
    """Per-column mean/std over a list of encodings (the training split).
    Near-constant columns keep std 1 so they pass through unscaled."""
    bus = np.concatenate([e.bus for e in encodings], axis=0)
    br = np.concatenate([e.branch for e in encodings], axis=0)

    def stats(mat):
        mean = mat.mean(axis=0)
        std = mat.std(axis=0)
        std = np.where(std < 1e-8, 1.0, std)
        return mean, std

    bm, bs = stats(bus)
    rm, rs = stats(br)
    return NormStats(bus_mean=bm, bus_std=bs, branch_mean=rm, branch_std=rs)


def apply_norm(enc: FeatureEncoding, norm: NormStats):
    return (
        (enc.bus - norm.bus_mean) / norm.bus_std,
        (enc.branch - norm.branch_mean) / norm.branch_std,
    )


def _mlp_dims(config: ModelConfig):
    d = config.latent_dim
    in_bus = 1 + 2 * d + 2 + BUS_FEATURE_DIM
    in_branch_msg = 1 + 2 * d + BRANCH_FEATURE_DIM
    in_branch_upd = 1 + 3 * d + BRANCH_FEATURE_DIM
    return {
        "msg_bus": (in_bus, d),
        "msg_branch_from": (in_branch_msg, d),
        "msg_branch_to": (in_branch_msg, d),
        "upd_bus": (in_bus, d),
        "upd_branch": (in_branch_upd, d),
        "dec_bus": (in_bus, 2),
    }


_DECODER_INIT_SCALE = 0.01


def init_model_params(config: ModelConfig, seed: int = 0) -> dict:
    """Glorot-normal weights, zero biases, in a deterministic layer order.

    The decoder output layer is damped by ``_DECODER_INIT_SCALE`` so the
    untrained network reproduces the flat-start state almost exactly.  At
    full Glorot scale the random decoder already scatters angles by a few
    tenths of a radian, which the measurement weights price at ~1e9 and
    which puts the first gradient steps on the slope of a degenerate
    low-voltage basin.  Damping only the last layer keeps every weight in
    the gradient path (nothing is initialised to zero).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    params: dict = {}
    for name in MLP_NAMES:
        d_in, d_out = _mlp_dims(config)[name]
        dims = [d_in] + [config.mlp_hidden] * (config.mlp_layers - 1) + [d_out]
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            std = np.sqrt(2.0 / (fan_in + fan_out))
            w = rng.normal(0.0, std, size=(fan_in, fan_out))
            layers.append((w, np.zeros(fan_out)))
        params[name] = layers
    w_last, b_last = params["dec_bus"][-1]
    params["dec_bus"][-1] = (w_last * _DECODER_INIT_SCALE, b_last)
    return params


def param_count(params: dict) -> int:
    return sum(w.size + b.size for layers in params.values() for w, b in layers)


# ------------------------------------------------------------- numpy forward

def _mlp_np(layers, x, final_tanh: bool):
    last = len(layers) - 1
    for k, (w, b) in enumerate(layers):
        x = x @ w + b
        if k < last or final_tanh:
            x = np.tanh(x)
    return x


def forward_batch_numpy(params, network, bus_feat, br_feat, config: ModelConfig,
                        return_trace: bool = False):
    """Eval-mode forward over a batch of normalized feature tensors.

    bus_feat: (B, n, BUS_FEATURE_DIM); br_feat: (B, m, BRANCH_FEATURE_DIM).
    Returns (v, theta) arrays of shape (B, n), plus a per-iteration trace
    of intermediate estimates when asked.
    """
    B, n, _ = bus_feat.shape
    m = br_feat.shape[1]
    d = config.latent_dim
    T = config.iterations
    zb = bus_feat.reshape(B * n, -1)
    zr = br_feat.reshape(B * m, -1)
    offs_n = (np.arange(B) * n)[:, None]
    flat_from = (offs_n + network.from_idx[None, :]).ravel()
    flat_to = (offs_n + network.to_idx[None, :]).ravel()
    # every row's slack row within its own sample, for the angle gauge
    ref_rows = (np.arange(B * n) // n) * n + network.slack

    def _readout(u_arr):
        v_col = np.logaddexp(0.0, u_arr[:, :1] + _V_SHIFT)
        th_col = u_arr[:, 1:] - u_arr[ref_rows, 1:]
        return np.concatenate([v_col, th_col], axis=1)

    h_v = np.zeros((B * n, d))
    h_bus = np.zeros((B * n, d))
    h_br = np.zeros((B * m, d))
    u = np.zeros((B * n, 2))
    u[:, 0] = 1.0
    xhat = _readout(u)
    trace = []
    inv_t = 1.0 / T
    for t in range(T):
        tau_b = np.full((B * n, 1), t / T)
        tau_r = np.full((B * m, 1), t / T)
        bus_in = np.concatenate([tau_b, h_v, h_bus, xhat, zb], axis=1)
        msg_bus = _mlp_np(params["msg_bus"], bus_in, False)
        from_in = np.concatenate([tau_r, h_v[flat_from], h_br, zr], axis=1)
        to_in = np.concatenate([tau_r, h_v[flat_to], h_br, zr], axis=1)
        msg_from = _mlp_np(params["msg_branch_from"], from_in, False)
        msg_to = _mlp_np(params["msg_branch_to"], to_in, False)
        agg = msg_bus.copy()
        np.add.at(agg, flat_from, msg_from)
        np.add.at(agg, flat_to, msg_to)
        h_v = h_v + inv_t * agg

        upd_bus_in = np.concatenate([tau_b, h_v, h_bus, xhat, zb], axis=1)
        h_bus = h_bus + inv_t * _mlp_np(params["upd_bus"], upd_bus_in, False)
        upd_br_in = np.concatenate(
            [tau_r, h_v[flat_from], h_v[flat_to], h_br, zr], axis=1
        )
        h_br = h_br + inv_t * _mlp_np(params["upd_branch"], upd_br_in, False)

        dec_in = np.concatenate([tau_b, h_v, h_bus, xhat, zb], axis=1)
        u = u + inv_t * _mlp_np(params["dec_bus"], dec_in, True)
        xhat = _readout(u)
        if return_trace:
            trace.append((
                xhat[:, 0].reshape(B, n).copy(), xhat[:, 1].reshape(B, n).copy()
            ))
    v = xhat[:, 0].reshape(B, n)
    theta = xhat[:, 1].reshape(B, n)
    return (v, theta, trace) if return_trace else (v, theta)


# -------------------------------------------------------------- tape forward

def _dropout(x, rate, rng):
    keep = (rng.random(x.value.shape) >= rate).astype(float) / (1.0 - rate)
    return ad.mul(x, keep)


def _mlp_tape(tape, layer_vars, x, final_tanh: bool, mode: str, rate: float, rng):
    last = len(layer_vars) - 1
    for k, (w, b) in enumerate(layer_vars):
        x = ad.add(ad.matmul(x, w), b)
        if k < last:
            x = ad.tanh(x)
            if mode == "train" and rate > 0.0:
                x = _dropout(x, rate, rng)
        elif final_tanh:
            x = ad.tanh(x)
    return x


def forward_batch_tape(tape, param_vars, network, bus_feat, br_feat,
                       config: ModelConfig, mode: str = "eval", rng=None):
    """Tape twin of forward_batch_numpy; in eval mode the arithmetic is an
    exact mirror, in train mode dropout masks come from rng."""
    if mode == "train" and rng is None:
        raise ValueError("train mode needs an rng for dropout masks")
    B, n, _ = bus_feat.shape
    m = br_feat.shape[1]
    d = config.latent_dim
    T = config.iterations
    rate = config.dropout
    zb = tape.const(bus_feat.reshape(B * n, -1))
    zr = tape.const(br_feat.reshape(B * m, -1))
    offs_n = (np.arange(B) * n)[:, None]
    flat_from = (offs_n + network.from_idx[None, :]).ravel()
    flat_to = (offs_n + network.to_idx[None, :]).ravel()
    ref_rows = (np.arange(B * n) // n) * n + network.slack

    h_v = tape.const(np.zeros((B * n, d)))
    h_bus = tape.const(np.zeros((B * n, d)))
    h_br = tape.const(np.zeros((B * m, d)))
    u = tape.const(np.concatenate(
        [np.ones((B * n, 1)), np.zeros((B * n, 1))], axis=1
    ))

    def readout(u_var):
        v_col = ad.softplus(ad.add(
            ad.reshape(ad.column(u_var, 0), (B * n, 1)), tape.const(_V_SHIFT)
        ))
        th_raw = ad.reshape(ad.column(u_var, 1), (B * n, 1))
        th_col = ad.sub(th_raw, ad.gather_rows(th_raw, ref_rows))
        return ad.concat([v_col, th_col], axis=1)

    xhat = readout(u)
    inv_t = 1.0 / T
    for t in range(T):
        tau_b = tape.const(np.full((B * n, 1), t / T))
        tau_r = tape.const(np.full((B * m, 1), t / T))
        bus_in = ad.concat([tau_b, h_v, h_bus, xhat, zb], axis=1)
        msg_bus = _mlp_tape(tape, param_vars["msg_bus"], bus_in, False, mode, rate, rng)
        h_v_from = ad.gather_rows(h_v, flat_from)
        h_v_to = ad.gather_rows(h_v, flat_to)
        from_in = ad.concat([tau_r, h_v_from, h_br, zr], axis=1)
        to_in = ad.concat([tau_r, h_v_to, h_br, zr], axis=1)
        msg_from = _mlp_tape(
            tape, param_vars["msg_branch_from"], from_in, False, mode, rate, rng
        )
        msg_to = _mlp_tape(
            tape, param_vars["msg_branch_to"], to_in, False, mode, rate, rng
        )
        agg = ad.add(
            ad.add(msg_bus, ad.segment_sum_rows(msg_from, flat_from, B * n)),
            ad.segment_sum_rows(msg_to, flat_to, B * n),
        )
        h_v = ad.add(h_v, ad.mul(agg, tape.const(inv_t)))

        upd_bus_in = ad.concat([tau_b, h_v, h_bus, xhat, zb], axis=1)
        h_bus = ad.add(h_bus, ad.mul(
            _mlp_tape(tape, param_vars["upd_bus"], upd_bus_in, False, mode, rate, rng),
            tape.const(inv_t),
        ))
        upd_br_in = ad.concat([
            tau_r, ad.gather_rows(h_v, flat_from), ad.gather_rows(h_v, flat_to),
            h_br, zr,
        ], axis=1)
        h_br = ad.add(h_br, ad.mul(
            _mlp_tape(tape, param_vars["upd_branch"], upd_br_in, False, mode, rate, rng),
            tape.const(inv_t),
        ))

        dec_in = ad.concat([tau_b, h_v, h_bus, xhat, zb], axis=1)
        u = ad.add(u, ad.mul(
            _mlp_tape(tape, param_vars["dec_bus"], dec_in, True, mode, rate, rng),
            tape.const(inv_t),
        ))
        xhat = readout(u)

    v = ad.reshape(ad.column(xhat, 0), (B, n))
    theta = ad.reshape(ad.column(xhat, 1), (B, n))
    return v, theta


def params_to_tape(tape, params: dict) -> dict:
    """Lift every weight onto a tape as a leaf Var, preserving structure."""
    return {
        name: [(tape.var(w), tape.var(b)) for (w, b) in layers]
        for name, layers in params.items()
    }


# ----------------------------------------------------------------- inference

def forward(model: Model, network, measurements, return_trace: bool = False):
    """Single-sample eval-mode estimate as a StateVector."""
    enc = encode_features(network, measurements)
    bus, br = apply_norm(enc, model.norm)
    out = forward_batch_numpy(
        model.params, network, bus[None, :, :], br[None, :, :], model.config,
        return_trace=return_trace,
    )
    if return_trace:
        v, theta, trace = out
        return StateVector(v[0].copy(), theta[0].copy()), trace
    v, theta = out
    return StateVector(v[0].copy(), theta[0].copy())


# --------------------------------------------------------------- persistence

def save_model(path, model: Model) -> None:
    arrays = {
        "norm/bus_mean": model.norm.bus_mean,
        "norm/bus_std": model.norm.bus_std,
        "norm/branch_mean": model.norm.branch_mean,
        "norm/branch_std": model.norm.branch_std,
    }
    for name, layers in model.params.items():
        for k, (w, b) in enumerate(layers):
            arrays[f"w/{name}/{k}/W"] = w
            arrays[f"w/{name}/{k}/b"] = b
    meta = {
        "schema": MODEL_SCHEMA,
        "feature_version": model.feature_version,
        "config": {
            "latent_dim": model.config.latent_dim,
            "iterations": model.config.iterations,
            "mlp_hidden": model.config.mlp_hidden,
            "mlp_layers": model.config.mlp_layers,
            "dropout": model.config.dropout,
        },
        "layers": {name: len(layers) for name, layers in model.params.items()},
        "info": model.info,
    }
    arrays["meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8
    )
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_model(path) -> Model:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("schema") != MODEL_SCHEMA:
            raise ValueError(
                f"model schema {meta.get('schema')!r} not supported "
                f"(expected {MODEL_SCHEMA!r})"
            )
        if meta.get("feature_version") != FEATURE_VERSION:
            raise ValueError(
                f"feature layout {meta.get('feature_version')!r} does not match "
                f"this build ({FEATURE_VERSION!r})"
            )
        config = ModelConfig(**meta["config"])
        params = {
            name: [
                (data[f"w/{name}/{k}/W"].copy(), data[f"w/{name}/{k}/b"].copy())
                for k in range(count)
            ]
            for name, count in meta["layers"].items()
        }
        norm = NormStats(
            bus_mean=data["norm/bus_mean"].copy(),
            bus_std=data["norm/bus_std"].copy(),
            branch_mean=data["norm/branch_mean"].copy(),
            branch_std=data["norm/branch_std"].copy(),
        )
        return Model(config=config, params=params, norm=norm,
                     feature_version=meta["feature_version"], info=meta["info"])
