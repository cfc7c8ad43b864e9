import sys, time; sys.path.insert(0, "tests")
import numpy as np
from helpers import case14
from dsse_kit.scenario import generate_dataset
from dsse_kit.h2mgnn import ModelConfig
from dsse_kit import train as tr

n = int(sys.argv[1]) if len(sys.argv) > 1 else 512
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 10
net = case14()
ds = generate_dataset(net, n_samples=n, seed=3)
cfg = ModelConfig()
tcfg = tr.TrainConfig(epochs=epochs, seed=11)
t0 = time.time()
res = tr.train(ds, cfg, tcfg)
for h in res.history:
    print(f"ep {h.epoch:3d} train {h.train_loss:.4e} val {h.val_loss:.4e} "
          f"val_v {h.val_v_rmse:.4e} val_load {h.val_loading_rmse:.3e}")
print(f"best epoch {res.best_epoch}  {time.time()-t0:.1f}s")
