import sys; sys.path.insert(0, "tests")
import numpy as np
from helpers import case14
from dsse_kit.scenario import generate_dataset
from dsse_kit import h2mgnn as hm
from dsse_kit import train as tr

net = case14()
ds = generate_dataset(net, n_samples=512, seed=3)
orig_init = hm.init_model_params

def scaled_init(config, seed=0):
    p = orig_init(config, seed)
    w, b = p["dec_bus"][-1]
    p["dec_bus"][-1] = (w * 0.01, b)
    return p

hm.init_model_params = scaled_init
tr.init_model_params = scaled_init
cfg = hm.ModelConfig()
tcfg = tr.TrainConfig(epochs=60, seed=11)
res = tr.train(ds, cfg, tcfg)
for h in res.history:
    if h.epoch % 4 == 0 or h.epoch <= 3:
        print(f"ep {h.epoch:3d}  train {h.train_loss:.3e}  val {h.val_loss:.3e}  v_rmse {h.val_v_rmse:.4f}  load_rmse {h.val_loading_rmse:.4f}")
print("best", res.best_epoch)
