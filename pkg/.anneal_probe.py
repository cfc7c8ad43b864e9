import sys; sys.path.insert(0, "tests")
import numpy as np
from helpers import case14
from dsse_kit.scenario import generate_dataset
from dsse_kit.h2mgnn import ModelConfig
from dsse_kit.train import TrainConfig, train

net = case14()
ds = generate_dataset(net, n_samples=512, seed=3)
cfg = ModelConfig(dropout=0.0)
tcfg = TrainConfig(epochs=300, lr=0.002, lr_final=2e-4, seed=11)
res = train(ds, cfg, tcfg)
hs = {h.epoch: h for h in res.history}
for e in (1, 20, 40, 80, 120, 160, 200, 240, 280, 300):
    h = hs[e]
    print(f"ep {h.epoch:3d}  train {h.train_loss:.3e}  val {h.val_loss:.3e}  v {h.val_v_rmse:.4f}  load {h.val_loading_rmse:.2f}")
hb = hs[res.best_epoch]
print(f"best ep{res.best_epoch}  val {hb.val_loss:.3e}  v {hb.val_v_rmse:.4f}  load {hb.val_loading_rmse:.2f}")
