import sys, time; sys.path.insert(0, "tests")
import numpy as np
from helpers import case14
from dsse_kit.scenario import generate_dataset
from dsse_kit.h2mgnn import ModelConfig
from dsse_kit import train as tr

net = case14()
ds = generate_dataset(net, n_samples=512, seed=3)
cfg = ModelConfig()
tcfg = tr.TrainConfig(epochs=10, seed=11, mode="supervised")
t0 = time.time()
res = tr.train(ds, cfg, tcfg)
for i, h in enumerate(res.history):
    print(f"ep {i:2d} train {h.train_loss:.4e} val_v {h.val_v_rmse:.4e} val_load {h.val_loading_rmse:.4e}")
print(f"{time.time()-t0:.1f}s")
