import sys, time
sys.path.insert(0, "tests")
import numpy as np
from helpers import case14
from dsse_kit.scenario import generate_dataset
from dsse_kit.h2mgnn import ModelConfig
from dsse_kit.train import TrainConfig, train, evaluate

net = case14()
t0 = time.time()
ds = generate_dataset(net, n_samples=1024, seed=0)
print(f"dataset: {time.time()-t0:.1f}s", flush=True)

mc = ModelConfig(latent_dim=40, iterations=7, mlp_hidden=40, mlp_layers=3, dropout=0.4)
tc = TrainConfig(mode="weak", epochs=28, lr=0.006, batch_size=64, l2=0.002, seed=0)

def cb(st):
    print(f"ep {st.epoch:3d} train {st.train_loss:.4e} val {st.val_loss:.4e} "
          f"vrmse {st.val_v_rmse:.4e} lrmse {st.val_loading_rmse:.3e} "
          f"{st.wall_time_s:.1f}s", flush=True)

t0 = time.time()
res = train(ds, mc, tc, callback=cb)
print(f"train total {time.time()-t0:.1f}s best_epoch {res.best_epoch}", flush=True)
m = evaluate(res.model, ds, split="test")
print(f"TEST v_rmse {m.voltage_rmse:.4e} th_rmse {m.theta_rmse:.4e} "
      f"loading {m.loading_rmse_lines:.4e} conv {m.convergence_rate}", flush=True)
