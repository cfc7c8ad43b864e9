import sys; sys.path.insert(0, "tests")
import numpy as np
from helpers import case14
from dsse_kit.scenario import generate_dataset
from dsse_kit.h2mgnn import (ModelConfig, init_model_params, encode_features,
                             forward_batch_numpy, forward_batch_tape)
from dsse_kit.train import TrainConfig, train
from dsse_kit import autodiff as ad

net = case14()
ds = generate_dataset(net, n_samples=512, seed=3)

# eval-mode equivalence numpy vs tape after the mask edit
cfg = ModelConfig(dropout=0.0)
p = init_model_params(cfg, seed=5)
encs = [encode_features(net, s.measurements) for s in ds.samples[:4]]
bus = np.stack([e.bus for e in encs]); br = np.stack([e.branch for e in encs])
v1, t1 = forward_batch_numpy(p, net, bus, br, cfg)
tape = ad.Tape()
from dsse_kit.train import params_to_tape
pv = params_to_tape(tape, p)
v2, t2 = forward_batch_tape(tape, pv, net, bus, br, cfg)
print("mirror v", np.max(np.abs(v1 - v2.value)), "th", np.max(np.abs(t1 - t2.value)))
print("slack v pinned:", v1[:, net.slack])

tcfg = TrainConfig(epochs=120, lr=0.002, seed=11)
res = train(ds, cfg, tcfg)
hs = {h.epoch: h for h in res.history}
for e in (1, 10, 20, 40, 80, 120):
    h = hs[e]
    print(f"ep {h.epoch:3d}  train {h.train_loss:.3e}  val {h.val_loss:.3e}  v {h.val_v_rmse:.4f}  load {h.val_loading_rmse:.2f}")
print("best", res.best_epoch, f"{hs[res.best_epoch].val_v_rmse:.4f}")
