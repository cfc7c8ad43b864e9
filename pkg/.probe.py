import sys
sys.path.insert(0, "tests")
import numpy as np
from helpers import case14
from dsse_kit.scenario import generate_dataset
from dsse_kit.h2mgnn import ModelConfig
from dsse_kit import train as tr

cap = float(sys.argv[1])
lr = float(sys.argv[2])
drop_i = sys.argv[3] == "noi"

net = case14()
ds = generate_dataset(net, n_samples=512, seed=0)

orig_build = tr.build_measurement_layout
def patched(network, samples, include_virtual=True):
    lay = orig_build(network, samples, include_virtual=include_virtual)
    kinds = tuple(k for k in lay.kinds
                  if not (drop_i and k.startswith("i_flow")))
    lay = tr.MeasurementLayout(
        kinds=kinds,
        locs={k: lay.locs[k] for k in kinds},
        z={k: lay.z[k] for k in kinds},
        w={k: np.minimum(lay.w[k], cap) for k in kinds},
        n_samples=lay.n_samples,
    )
    return lay
tr.build_measurement_layout = patched

mc = ModelConfig(latent_dim=40, iterations=7, mlp_hidden=40, mlp_layers=3, dropout=0.4)
tc = tr.TrainConfig(mode="weak", epochs=10, lr=lr, batch_size=64, l2=0.002, seed=0)

def cb(st):
    print(f"cap {cap:.0e} lr {lr:g} noI={drop_i} ep {st.epoch:3d} "
          f"train {st.train_loss:.4e} val {st.val_loss:.4e} "
          f"vrmse {st.val_v_rmse:.4e}", flush=True)

tr.train(ds, mc, tc, callback=cb)
