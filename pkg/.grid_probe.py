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

for drop in (0.4, 0.0):
    for lr in (0.006, 0.002):
        cfg = hm.ModelConfig(dropout=drop)
        tcfg = tr.TrainConfig(epochs=60, lr=lr, seed=11)
        res = tr.train(ds, cfg, tcfg)
        hs = {h.epoch: h for h in res.history}
        line = " ".join(f"{hs[e].val_v_rmse:.4f}" for e in (1, 10, 20, 40, 60))
        hb = hs[res.best_epoch]
        print(f"drop {drop}  lr {lr:.3f}  v_rmse@1/10/20/40/60: {line}  "
              f"best ep{res.best_epoch} val {hb.val_loss:.3e} v {hb.val_v_rmse:.4f} load {hb.val_loading_rmse:.1f}")
