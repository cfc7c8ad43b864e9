import sys, time; sys.path.insert(0, "tests")
import numpy as np
from helpers import case14
from dsse_kit.scenario import generate_dataset
from dsse_kit.h2mgnn import ModelConfig
from dsse_kit.train import TrainConfig, train

net = case14()
t0 = time.perf_counter()
ds = generate_dataset(net, n_samples=8640, seed=3)
print(f"dataset gen {time.perf_counter()-t0:.1f} s", flush=True)
cfg = ModelConfig(dropout=0.0)
tcfg = TrainConfig(epochs=50, lr=0.002, seed=11)
def cb(h):
    print(f"ep {h.epoch:3d}  train {h.train_loss:.3e}  val {h.val_loss:.3e}  "
          f"v {h.val_v_rmse:.4f}  load {h.val_loading_rmse:.2f}  {h.wall_time_s:.1f}s", flush=True)
res = train(ds, cfg, tcfg, callback=cb)
print("best", res.best_epoch)
