import sys; sys.path.insert(0, "tests")
import numpy as np
from helpers import case14
from dsse_kit.scenario import generate_dataset
from dsse_kit import h2mgnn as hm
from dsse_kit import train as tr

net = case14()
ds = generate_dataset(net, n_samples=512, seed=3)
orig_init = hm.init_model_params

def scaled_init(config, seed=0, scale=1.0):
    p = orig_init(config, seed)
    w, b = p["dec_bus"][-1]
    p["dec_bus"][-1] = (w * scale, b)
    return p

for scale in (1.0, 0.1, 0.03, 0.01):
    hm.init_model_params = lambda c, seed=0: scaled_init(c, seed, scale)
    tr.init_model_params = hm.init_model_params
    cfg = hm.ModelConfig()
    tcfg = tr.TrainConfig(epochs=10, seed=11)
    res = tr.train(ds, cfg, tcfg)
    h0 = res.history[0]
    traj = " ".join(f"{h.val_v_rmse:.3f}" for h in res.history)
    print(f"scale {scale:5.2f}  ep1 train {h0.train_loss:.2e}  val_v: {traj}")
