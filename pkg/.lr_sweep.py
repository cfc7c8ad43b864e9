import sys, time; sys.path.insert(0, "tests")
import numpy as np
from helpers import case14
from dsse_kit.scenario import generate_dataset
from dsse_kit.h2mgnn import ModelConfig
from dsse_kit import train as tr

net = case14()
ds = generate_dataset(net, n_samples=512, seed=3)
for lr in (0.003, 0.001, 0.0003):
    cfg = ModelConfig()
    tcfg = tr.TrainConfig(epochs=10, seed=11, lr=lr)
    res = tr.train(ds, cfg, tcfg)
    h0, hN = res.history[0], res.history[-1]
    traj = " ".join(f"{h.val_v_rmse:.3f}" for h in res.history)
    print(f"lr {lr:7.4f}  ep1 train {h0.train_loss:.2e}  val_v: {traj}")
