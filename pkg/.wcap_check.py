import sys, time
sys.path.insert(0, "tests")
import numpy as np
from helpers import case14
from dsse_kit.scenario import generate_dataset
from dsse_kit.h2mgnn import ModelConfig
from dsse_kit import train as tr

cap = float(sys.argv[1])
net = case14()
ds = generate_dataset(net, n_samples=512, seed=0)

orig_build = tr.build_measurement_layout
def capped(network, samples, include_virtual=True):
    lay = orig_build(network, samples, include_virtual=include_virtual)
    for k in lay.kinds:
        lay.w[k] = np.minimum(lay.w[k], cap)
    return lay
tr.build_measurement_layout = capped

mc = ModelConfig(latent_dim=40, iterations=7, mlp_hidden=40, mlp_layers=3, dropout=0.4)
tc = tr.TrainConfig(mode="weak", epochs=10, lr=0.006, batch_size=64, l2=0.002, seed=0)

def cb(st):
    print(f"cap {cap:.0e} ep {st.epoch:3d} train {st.train_loss:.4e} "
          f"val {st.val_loss:.4e} vrmse {st.val_v_rmse:.4e}", flush=True)

tr.train(ds, mc, tc, callback=cb)
