"""Training for the hypergraph estimator.

Two modes share one loop. "weak" fits the measurement-mismatch objective
(the same weighted squares the iterative estimator minimizes) plus soft
operating-limit penalties, and never reads the true states. "supervised"
fits plain MSE against the true states. Checkpoint selection follows the
validation value of whichever objective is being trained.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .h2mgnn import (
    Model,
    ModelConfig,
    compute_norm_stats,
    encode_features,
    forward,
    forward_batch_numpy,
    forward_batch_tape,
    init_model_params,
    params_to_tape,
)
from .pf_equations import (
    FLOW_KINDS,
    DegenerateVoltageError,
    I_FLOW_FWD,
    I_FLOW_REV,
    P_FLOW_FWD,
    P_FLOW_REV,
    P_INJ,
    Q_FLOW_FWD,
    Q_FLOW_REV,
    Q_INJ,
    SQRT3,
    THETA_BUS,
    V_BUS,
    all_line_loadings,
)


class TrainingDivergedError(RuntimeError):
    """Raised when a loss term stops being finite, with enough context
    to find the offending batch again."""

    def __init__(self, epoch, batch, term, value):
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}: "
            f"term {term!r} = {value!r}"
        )
        self.epoch = epoch
        self.batch = batch
        self.term = term


@dataclass
class LossConfig:
    """Operating-limit penalties added to the weak objective.

    Voltages should stay inside [v_lb, v_ub] pu, angle differences across
    closed branches inside [-dtheta_ub, dtheta_ub] radians, and branch
    loading below loading_ub percent. Violations enter as linear hinges;
    the three sums are weighted lambda1..lambda3 and the whole penalty
    block is scaled once more by lambda0.
    """

    v_lb: float = 0.95
    v_ub: float = 1.05
    dtheta_ub: float = 0.25
    loading_ub: float = 100.0
    lambda0: float = 0.8
    lambda1: float = 0.8
    lambda2: float = 0.8
    lambda3: float = 0.8


@dataclass
class TrainConfig:
    mode: str = "weak"
    epochs: int = 630
    lr: float = 0.006
    lr_final: float | None = None
    batch_size: int = 64
    l2: float = 0.002
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    """Cosine taper from lr down to lr_final; constant when lr_final is None."""
    if cfg.lr_final is None or cfg.epochs <= 1:
        return cfg.lr
    frac = (epoch - 1) / (cfg.epochs - 1)
    return cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (
        1.0 + math.cos(math.pi * frac)
    )


def reference_profile():
    """Full-length case14 training recipe."""
    return ModelConfig(), TrainConfig()


FAST_EPOCHS = 60


def fast_profile(epochs: int = FAST_EPOCHS):
    """Same recipe with the epoch count cut down, nothing else touched.
    Meant for test runs on a time budget."""
    model_cfg, train_cfg = reference_profile()
    train_cfg.epochs = epochs
    return model_cfg, train_cfg


# ----------------------------------------------------------- loss plumbing

_BUS_SOURCE_KINDS = (V_BUS, THETA_BUS, P_INJ, Q_INJ)


@dataclass
class MeasurementLayout:
    """Measurements of N like-shaped samples, regrouped by kind.

    Every sample must carry the identical (kind, location) sequence; the
    values and weights then stack into (N, k) blocks that slice cleanly
    into batches.
    """

    kinds: tuple
    locs: dict
    z: dict       # kind -> (N, k)
    w: dict       # kind -> (N, k)
    n_samples: int

    def take(self, idx) -> "MeasurementLayout":
        return MeasurementLayout(
            kinds=self.kinds,
            locs=self.locs,
            z={k: self.z[k][idx] for k in self.kinds},
            w={k: self.w[k][idx] for k in self.kinds},
            n_samples=len(idx),
        )


def build_measurement_layout(network, samples,
                             include_virtual: bool = True) -> MeasurementLayout:
    """Group a sample list's shared measurement set by kind.

    With include_virtual=False the exact structural constraints (slack
    reference, zero injections, open-branch flows) are dropped: the model
    already carries them as boolean features, and their near-zero sigmas
    would otherwise let a handful of rows outweigh every real meter by ten
    orders of magnitude in the fitting objective.
    """
    keep = [i for i, m in enumerate(samples[0].measurements)
            if include_virtual or not m.is_virtual]
    template = [(samples[0].measurements[i].kind,
                 samples[0].measurements[i].location) for i in keep]
    for s in samples[1:]:
        got = [(s.measurements[i].kind, s.measurements[i].location)
               for i in keep if i < len(s.measurements)]
        if len(s.measurements) != len(samples[0].measurements) or got != template:
            raise ValueError(
                f"sample {s.index} has a different measurement layout; "
                "all samples in one set must share meters and pseudos"
            )
    order: dict = {}
    for pos, (kind, loc) in zip(keep, template):
        order.setdefault(kind, []).append((pos, loc))
    kinds = tuple(k for k in (_BUS_SOURCE_KINDS + FLOW_KINDS) if k in order)
    locs = {}
    z = {}
    w = {}
    n = len(samples)
    for kind in kinds:
        positions = [p for p, _ in order[kind]]
        locs[kind] = np.array([l for _, l in order[kind]], dtype=int)
        zk = np.empty((n, len(positions)))
        wk = np.empty_like(zk)
        for si, s in enumerate(samples):
            for j, pos in enumerate(positions):
                m = s.measurements[pos]
                zk[si, j] = m.value
                wk[si, j] = 1.0 / (m.sigma * m.sigma)
        z[kind] = zk
        w[kind] = wk
    return MeasurementLayout(kinds=kinds, locs=locs, z=z, w=w, n_samples=n)


def _branch_rows(network):
    g = network.g_series
    b = network.b_series
    return {
        "g": g, "b": b,
        "gt": g + network.g_shunt_half,
        "bt": b + network.b_shunt_half,
        "live": network.closed.astype(float),
        "shift": network.shift,
        "inv_rating": 1.0 / network.rating,
    }


def weak_loss_tape(tape, v, th, network, layout: MeasurementLayout,
                   cfg: LossConfig):
    """Batch total of the weak objective on tape.

    v, th are (B, n_bus) nodes; layout must already be sliced to the same
    B rows. Returns (total, parts) with parts holding the mismatch term
    and the three unweighted penalty sums as separate nodes.
    """
    if np.any(v.value <= np.finfo(float).eps):
        raise DegenerateVoltageError(
            "degenerate voltage: magnitude at or below machine epsilon"
        )
    rows = _branch_rows(network)
    fi, ti = network.from_idx, network.to_idx
    n = network.n_bus

    vi = ad.gather_cols(v, fi)
    vj = ad.gather_cols(v, ti)
    delta = ad.gather_cols(th, fi) - ad.gather_cols(th, ti) + rows["shift"]
    c = ad.cos(delta)
    s = ad.sin(delta)
    live, g, b = rows["live"], rows["g"], rows["b"]
    p_fwd = (vi * vj * (c * g + s * b) * (-1.0) + vi * vi * rows["gt"]) * live
    p_rev = (vi * vj * (s * b - c * g) + vj * vj * rows["gt"]) * live
    q_fwd = (vi * vj * (c * b - s * g) - vi * vi * rows["bt"]) * live
    q_rev = (vi * vj * (c * b + s * g) - vj * vj * rows["bt"]) * live
    i_fwd = ad.hypot(p_fwd, q_fwd) / (vi * SQRT3)
    i_rev = ad.hypot(p_rev, q_rev) / (vj * SQRT3)

    need_inj = P_INJ in layout.kinds or Q_INJ in layout.kinds
    if need_inj:
        p_inj = (ad.segment_sum_cols(p_fwd, fi, n)
                 + ad.segment_sum_cols(p_rev, ti, n)) * (-1.0)
        q_inj = (ad.segment_sum_cols(q_fwd, fi, n)
                 + ad.segment_sum_cols(q_rev, ti, n)) * (-1.0)

    source = {
        V_BUS: v, THETA_BUS: th,
        P_FLOW_FWD: p_fwd, P_FLOW_REV: p_rev,
        Q_FLOW_FWD: q_fwd, Q_FLOW_REV: q_rev,
        I_FLOW_FWD: i_fwd, I_FLOW_REV: i_rev,
    }
    if need_inj:
        source[P_INJ] = p_inj
        source[Q_INJ] = q_inj

    mismatch = None
    for kind in layout.kinds:
        vals = ad.gather_cols(source[kind], layout.locs[kind])
        resid = ad.sub(tape.const(layout.z[kind]), vals)
        term = ad.vsum(resid * resid * layout.w[kind])
        mismatch = term if mismatch is None else ad.add(mismatch, term)

    pen_v = ad.add(
        ad.vsum(ad.relu_plus(v - cfg.v_ub)),
        ad.vsum(ad.relu_plus(ad.sub(tape.const(cfg.v_lb), v))),
    )

    # wild untrained angles would dominate; the hinge sees them clamped
    clamped = ad.maximum(
        ad.maximum(delta, -np.pi) * (-1.0), -np.pi
    ) * (-1.0)
    over_a = ad.relu_plus(clamped - cfg.dtheta_ub)
    under_a = ad.relu_plus(clamped * (-1.0) - cfg.dtheta_ub)
    pen_a = ad.vsum((over_a + under_a) * live)

    loading = ad.maximum(i_fwd, i_rev) * (100.0 * rows["inv_rating"])
    pen_l = ad.vsum(ad.relu_plus(loading - cfg.loading_ub) * live)

    penalty = ad.add(
        ad.add(pen_v * cfg.lambda1, pen_a * cfg.lambda2),
        pen_l * cfg.lambda3,
    )
    total = ad.add(mismatch, penalty * cfg.lambda0)
    parts = {
        "mismatch": mismatch,
        "penalty_v": pen_v,
        "penalty_angle": pen_a,
        "penalty_loading": pen_l,
    }
    return total, parts


def weak_loss_numpy(network, v, th, layout: MeasurementLayout,
                    cfg: LossConfig):
    """Plain-array twin of weak_loss_tape, same shapes and grouping."""
    if np.any(v <= np.finfo(float).eps):
        raise DegenerateVoltageError(
            "degenerate voltage: magnitude at or below machine epsilon"
        )
    rows = _branch_rows(network)
    fi, ti = network.from_idx, network.to_idx
    n = network.n_bus

    vi = v[:, fi]
    vj = v[:, ti]
    delta = th[:, fi] - th[:, ti] + rows["shift"]
    c = np.cos(delta)
    s = np.sin(delta)
    live, g, b = rows["live"], rows["g"], rows["b"]
    p_fwd = (vi * vj * (c * g + s * b) * (-1.0) + vi * vi * rows["gt"]) * live
    p_rev = (vi * vj * (s * b - c * g) + vj * vj * rows["gt"]) * live
    q_fwd = (vi * vj * (c * b - s * g) - vi * vi * rows["bt"]) * live
    q_rev = (vi * vj * (c * b + s * g) - vj * vj * rows["bt"]) * live
    i_fwd = np.hypot(p_fwd, q_fwd) / (vi * SQRT3)
    i_rev = np.hypot(p_rev, q_rev) / (vj * SQRT3)

    B = v.shape[0]
    p_inj = np.zeros((B, n))
    q_inj = np.zeros((B, n))
    np.add.at(p_inj, (slice(None), fi), -p_fwd)
    np.add.at(p_inj, (slice(None), ti), -p_rev)
    np.add.at(q_inj, (slice(None), fi), -q_fwd)
    np.add.at(q_inj, (slice(None), ti), -q_rev)

    source = {
        V_BUS: v, THETA_BUS: th, P_INJ: p_inj, Q_INJ: q_inj,
        P_FLOW_FWD: p_fwd, P_FLOW_REV: p_rev,
        Q_FLOW_FWD: q_fwd, Q_FLOW_REV: q_rev,
        I_FLOW_FWD: i_fwd, I_FLOW_REV: i_rev,
    }
    mismatch = 0.0
    for kind in layout.kinds:
        resid = layout.z[kind] - source[kind][:, layout.locs[kind]]
        mismatch += float(np.sum(resid * resid * layout.w[kind]))

    pen_v = float(np.sum(np.maximum(v - cfg.v_ub, 0.0))
                  + np.sum(np.maximum(cfg.v_lb - v, 0.0)))
    clamped = np.clip(delta, -np.pi, np.pi)
    over_a = np.maximum(clamped - cfg.dtheta_ub, 0.0)
    under_a = np.maximum(-clamped - cfg.dtheta_ub, 0.0)
    pen_a = float(np.sum((over_a + under_a) * live))
    loading = np.maximum(i_fwd, i_rev) * (100.0 * rows["inv_rating"])
    pen_l = float(np.sum(np.maximum(loading - cfg.loading_ub, 0.0) * live))

    total = mismatch + cfg.lambda0 * (
        cfg.lambda1 * pen_v + cfg.lambda2 * pen_a + cfg.lambda3 * pen_l
    )
    parts = {
        "mismatch": mismatch,
        "penalty_v": pen_v,
        "penalty_angle": pen_a,
        "penalty_loading": pen_l,
    }
    return total, parts


def penalty_terms(network, state, cfg: LossConfig) -> dict:
    """Unweighted penalty values for one state, for reports and checks."""
    _, parts = weak_loss_numpy(
        network, state.v[None, :], state.theta[None, :],
        MeasurementLayout(kinds=(), locs={}, z={}, w={}, n_samples=1), cfg,
    )
    return {
        "v": parts["penalty_v"],
        "angle": parts["penalty_angle"],
        "loading": parts["penalty_loading"],
    }


def supervised_loss_tape(tape, v, th, truth_v, truth_th, nonslack):
    """Batch total of per-sample MSE over the 2n-1 free state channels."""
    n = truth_v.shape[1]
    rv = ad.sub(tape.const(truth_v), v)
    th_free = ad.gather_cols(th, nonslack)
    rt = ad.sub(tape.const(truth_th[:, nonslack]), th_free)
    total = ad.add(ad.vsum(rv * rv), ad.vsum(rt * rt))
    return ad.mul(total, tape.const(1.0 / (2 * n - 1)))


def supervised_loss_numpy(v, th, truth_v, truth_th, nonslack) -> float:
    n = truth_v.shape[1]
    rv = truth_v - v
    rt = truth_th[:, nonslack] - th[:, nonslack]
    return float((np.sum(rv * rv) + np.sum(rt * rt)) / (2 * n - 1))


# ------------------------------------------------------------------- Adam

def _tree_zeros(params):
    return {
        name: [(np.zeros_like(w), np.zeros_like(b)) for (w, b) in layers]
        for name, layers in params.items()
    }


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0


def init_adam(params) -> AdamState:
    return AdamState(m=_tree_zeros(params), v=_tree_zeros(params))


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    out = {}
    for name, layers in params.items():
        new_layers = []
        for k, (wv, bv) in enumerate(layers):
            updated = []
            for slot, val in enumerate((wv, bv)):
                gval = grads[name][k][slot]
                mm = state.m[name][k][slot]
                vv = state.v[name][k][slot]
                mm *= beta1
                mm += (1.0 - beta1) * gval
                vv *= beta2
                vv += (1.0 - beta2) * gval * gval
                step = lr * (mm / c1) / (np.sqrt(vv / c2) + eps)
                updated.append(val - step)
            new_layers.append(tuple(updated))
        out[name] = new_layers
    return out


# ------------------------------------------------------------ the trainer

@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_v_rmse: float
    val_loading_rmse: float
    wall_time_s: float


def _batched_loadings(network, v, th):
    """Loading percent per branch for (B, n) state arrays; open branches 0."""
    rows = _branch_rows(network)
    vi = v[:, network.from_idx]
    vj = v[:, network.to_idx]
    delta = th[:, network.from_idx] - th[:, network.to_idx] + rows["shift"]
    c = np.cos(delta)
    s = np.sin(delta)
    live, g, b = rows["live"], rows["g"], rows["b"]
    p_fwd = (vi * vj * (c * g + s * b) * (-1.0) + vi * vi * rows["gt"]) * live
    p_rev = (vi * vj * (s * b - c * g) + vj * vj * rows["gt"]) * live
    q_fwd = (vi * vj * (c * b - s * g) - vi * vi * rows["bt"]) * live
    q_rev = (vi * vj * (c * b + s * g) - vj * vj * rows["bt"]) * live
    den_f = vi * SQRT3
    den_r = vj * SQRT3
    i_fwd = np.divide(np.hypot(p_fwd, q_fwd), den_f,
                      out=np.zeros_like(den_f), where=den_f > 0.0)
    i_rev = np.divide(np.hypot(p_rev, q_rev), den_r,
                      out=np.zeros_like(den_r), where=den_r > 0.0)
    return np.maximum(i_fwd, i_rev) * (100.0 * rows["inv_rating"])


@dataclass
class TrainResult:
    model: Model
    history: list
    best_epoch: int
    final_params: dict


def _stack_features(network, samples, norm):
    bus = np.empty((len(samples), network.n_bus, norm.bus_mean.size))
    br = np.empty((len(samples), network.n_branch, norm.branch_mean.size))
    for k, s in enumerate(samples):
        enc = encode_features(network, s.measurements)
        bus[k] = (enc.bus - norm.bus_mean) / norm.bus_std
        br[k] = (enc.branch - norm.branch_mean) / norm.branch_std
    return bus, br


def _grad_tree(grads, pvars):
    return {
        name: [(grads.wrt(w), grads.wrt(b)) for (w, b) in layers]
        for name, layers in pvars.items()
    }


def train(dataset, model_cfg: ModelConfig | None = None,
          train_cfg: TrainConfig | None = None, callback=None) -> TrainResult:
    """Fit a model on the train split, selecting the checkpoint with the
    best validation objective. Deterministic for a fixed dataset and
    configs; the weak mode never reads the true states for training or
    selection (validation v-rmse is recorded purely as a diagnostic)."""
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    if train_cfg.mode not in ("weak", "supervised"):
        raise ValueError(f"unknown training mode {train_cfg.mode!r}")
    network = dataset.network
    train_samples = dataset.by_split("train")
    val_samples = dataset.by_split("val")
    if not train_samples or not val_samples:
        raise ValueError("dataset needs non-empty train and val splits")

    encs_train = [encode_features(network, s.measurements)
                  for s in train_samples]
    norm = compute_norm_stats(encs_train)
    bus_tr = np.stack([(e.bus - norm.bus_mean) / norm.bus_std
                       for e in encs_train])
    br_tr = np.stack([(e.branch - norm.branch_mean) / norm.branch_std
                      for e in encs_train])
    bus_val, br_val = _stack_features(network, val_samples, norm)

    weak = train_cfg.mode == "weak"
    layout_tr = build_measurement_layout(network, train_samples,
                                         include_virtual=False)
    layout_val = build_measurement_layout(network, val_samples,
                                          include_virtual=False)
    tv_tr = np.stack([s.truth.v for s in train_samples])
    tt_tr = np.stack([s.truth.theta for s in train_samples])
    tv_val = np.stack([s.truth.v for s in val_samples])
    tt_val = np.stack([s.truth.theta for s in val_samples])
    nonslack = network.free_angle_buses()
    closed = network.closed
    truth_loading_val = _batched_loadings(network, tv_val, tt_val)

    params = init_model_params(model_cfg, seed=train_cfg.seed)
    adam = init_adam(params)
    n_train = len(train_samples)
    B = train_cfg.batch_size
    history = []
    best_loss = np.inf
    best_params = copy.deepcopy(params)
    best_epoch = 0

    for epoch in range(1, train_cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = _epoch_lr(train_cfg, epoch)
        rng = np.random.default_rng(
            np.random.SeedSequence([train_cfg.seed, epoch])
        )
        perm = rng.permutation(n_train)
        batch_losses = []
        for bstart in range(0, n_train, B):
            idx = perm[bstart:bstart + B]
            tape = ad.Tape()
            pvars = params_to_tape(tape, params)
            v, th = forward_batch_tape(
                tape, pvars, network, bus_tr[idx], br_tr[idx], model_cfg,
                mode="train", rng=rng,
            )
            nb = float(len(idx))
            if weak:
                task_total, parts = weak_loss_tape(
                    tape, v, th, network, layout_tr.take(idx), train_cfg.loss
                )
            else:
                task_total = supervised_loss_tape(
                    tape, v, th, tv_tr[idx], tt_tr[idx], nonslack
                )
                parts = {"supervised": task_total}
            loss = ad.mul(task_total, tape.const(1.0 / nb))
            if train_cfg.l2 > 0.0:
                reg = None
                for layers in pvars.values():
                    for w, _ in layers:
                        term = ad.vsum(w * w)
                        reg = term if reg is None else ad.add(reg, term)
                parts = dict(parts, l2=reg)
                loss = ad.add(loss, ad.mul(reg, tape.const(train_cfg.l2)))
            lval = float(loss.value)
            if not np.isfinite(lval):
                bad = next(
                    (name for name, node in parts.items()
                     if not np.isfinite(float(node.value))),
                    "total",
                )
                raise TrainingDivergedError(
                    epoch, bstart // B,
                    bad, float(parts[bad].value) if bad != "total" else lval,
                )
            grads = ad.backward(loss)
            params = adam_step(
                params, _grad_tree(grads, pvars), adam, lr
            )
            batch_losses.append(lval)

        v_val, th_val = forward_batch_numpy(
            params, network, bus_val, br_val, model_cfg
        )
        if weak:
            total, _ = weak_loss_numpy(
                network, v_val, th_val, layout_val, train_cfg.loss
            )
            val_loss = total / len(val_samples)
        else:
            val_loss = supervised_loss_numpy(
                v_val, th_val, tv_val, tt_val, nonslack
            )
        val_v_rmse = float(np.sqrt(np.mean((v_val - tv_val) ** 2)))
        est_loading = _batched_loadings(network, v_val, th_val)
        val_loading_rmse = float(np.sqrt(np.mean(
            (est_loading[:, closed] - truth_loading_val[:, closed]) ** 2
        )))
        stats = EpochStats(
            epoch=epoch,
            train_loss=float(np.mean(batch_losses)),
            val_loss=float(val_loss),
            val_v_rmse=val_v_rmse,
            val_loading_rmse=val_loading_rmse,
            wall_time_s=time.perf_counter() - t0,
        )
        history.append(stats)
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = copy.deepcopy(params)
            best_epoch = epoch
        if callback is not None:
            callback(stats)

    model = Model(
        config=model_cfg, params=best_params, norm=norm,
        info={
            "mode": train_cfg.mode,
            "epochs": train_cfg.epochs,
            "best_epoch": best_epoch,
            "seed": train_cfg.seed,
            "lr": train_cfg.lr,
            "batch_size": train_cfg.batch_size,
            "l2": train_cfg.l2,
        },
    )
    return TrainResult(model=model, history=history, best_epoch=best_epoch,
                       final_params=params)


# -------------------------------------------------------------- evaluation

@dataclass
class EvalMetrics:
    voltage_rmse: float          # pu
    theta_rmse: float            # rad, slack excluded
    loading_rmse_lines: float    # percent, closed non-transformer branches
    loading_rmse_all: float      # percent, every closed branch
    weak_loss: float             # fitted objective per sample
    convergence_rate: float      # percent of samples with all-finite output
    mean_inference_ms: float
    std_inference_ms: float
    n_samples: int

    @property
    def all_finite(self) -> bool:
        return self.convergence_rate == 100.0


def _loading_diffs(network, samples, states) -> np.ndarray:
    """(B, n_branch) loading-percent errors; rows of NaN for broken states."""
    diffs = np.empty((len(samples), network.n_branch))
    for k, (st, s) in enumerate(zip(states, samples)):
        if np.all(np.isfinite(st.v)) and np.all(st.v > np.finfo(float).eps):
            diffs[k] = all_line_loadings(st, network) - all_line_loadings(
                s.truth, network
            )
        else:
            diffs[k] = np.nan
    return diffs


def metrics_from_states(network, samples, states, times_s,
                        loss_cfg: LossConfig | None = None,
                        converged=None) -> EvalMetrics:
    """Aggregate estimator outputs into the standard metric set.

    The one scoring routine for every estimator, neural or classical, so
    that benchmark numbers and evaluate() numbers can never drift apart.
    converged, when given, is a per-sample boolean from the estimator's own
    convergence signal; otherwise finite output counts as converged.
    """
    loss_cfg = loss_cfg or LossConfig()
    v_est = np.stack([st.v for st in states])
    th_est = np.stack([st.theta for st in states])
    tv = np.stack([s.truth.v for s in samples])
    tt = np.stack([s.truth.theta for s in samples])
    nonslack = network.free_angle_buses()
    voltage_rmse = float(np.sqrt(np.mean((v_est - tv) ** 2)))
    theta_rmse = float(np.sqrt(np.mean(
        (th_est[:, nonslack] - tt[:, nonslack]) ** 2
    )))

    lines = (~network.transformer_mask) & network.closed
    closed = network.closed
    diffs = _loading_diffs(network, samples, states)
    loading_rmse_lines = float(np.sqrt(np.mean(diffs[:, lines] ** 2)))
    loading_rmse_all = float(np.sqrt(np.mean(diffs[:, closed] ** 2)))

    finite_per_sample = (np.all(np.isfinite(v_est), axis=1)
                         & np.all(np.isfinite(th_est), axis=1))
    ok = finite_per_sample if converged is None else (
        finite_per_sample & np.asarray(converged, dtype=bool)
    )
    if np.all(finite_per_sample) and np.all(v_est > np.finfo(float).eps):
        layout = build_measurement_layout(network, samples,
                                          include_virtual=False)
        weak_total, _ = weak_loss_numpy(
            network, v_est, th_est, layout, loss_cfg
        )
        weak_per_sample = weak_total / len(samples)
    else:
        weak_per_sample = float("inf")
    times_s = np.asarray(times_s)
    return EvalMetrics(
        voltage_rmse=voltage_rmse,
        theta_rmse=theta_rmse,
        loading_rmse_lines=loading_rmse_lines,
        loading_rmse_all=loading_rmse_all,
        weak_loss=weak_per_sample,
        convergence_rate=100.0 * float(np.mean(ok)),
        mean_inference_ms=1e3 * float(times_s.mean()),
        std_inference_ms=1e3 * float(times_s.std()),
        n_samples=len(samples),
    )


def per_sample_errors(network, samples, states) -> dict:
    """Per-sample error series backing the spread columns of reports."""
    v_est = np.stack([st.v for st in states])
    th_est = np.stack([st.theta for st in states])
    tv = np.stack([s.truth.v for s in samples])
    lines = (~network.transformer_mask) & network.closed
    closed = network.closed
    diffs = _loading_diffs(network, samples, states)
    return {
        "voltage_rmse": np.sqrt(np.mean((v_est - tv) ** 2, axis=1)),
        "loading_rmse_lines": np.sqrt(np.mean(diffs[:, lines] ** 2, axis=1)),
        "loading_rmse_all": np.sqrt(np.mean(diffs[:, closed] ** 2, axis=1)),
        "finite": (np.all(np.isfinite(v_est), axis=1)
                   & np.all(np.isfinite(th_est), axis=1)),
    }


def evaluate(model: Model, dataset, split: str = "test",
             loss_cfg: LossConfig | None = None,
             time_samples: int | None = None) -> EvalMetrics:
    """Accuracy and timing of a model on one split.

    Timing measures the single-sample path (encode, normalize, forward)
    the way a live estimator would run it; accuracy uses the same outputs.
    """
    network = dataset.network
    samples = dataset.by_split(split)
    if not samples:
        raise ValueError(f"split {split!r} is empty")
    n_time = len(samples) if time_samples is None else min(
        time_samples, len(samples)
    )
    states = []
    times = []
    for k, s in enumerate(samples):
        if k < n_time:
            t0 = time.perf_counter()
            est = forward(model, network, s.measurements)
            times.append(time.perf_counter() - t0)
        else:
            est = forward(model, network, s.measurements)
        states.append(est)
    return metrics_from_states(network, samples, states, times, loss_cfg)
