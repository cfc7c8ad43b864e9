import sys
sys.path.insert(0, "tests")
import numpy as np
from helpers import case14
from dsse_kit.scenario import generate_dataset
from dsse_kit.h2mgnn import (ModelConfig, encode_features, init_model_params,
                             compute_norm_stats, forward_batch_numpy)
from dsse_kit import train as tr
from dsse_kit import autodiff as ad

cap = 1e4
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
tc = tr.TrainConfig(mode="weak", epochs=4, lr=0.006, batch_size=64, l2=0.002, seed=0)
res = tr.train(ds, mc, tc)

val = ds.by_split("val")
model = res.model
v_all, th_all = [], []
from dsse_kit.train import forward
for s in val[:50]:
    st = forward(model, net, s.measurements)
    v_all.append(st.v); th_all.append(st.theta)
v = np.stack(v_all); th = np.stack(th_all)
print("Vhat  min %.4f med %.4f max %.4f" % (v.min(), np.median(v), v.max()))
print("THhat min %.4f med %.4f max %.4f" % (th.min(), np.median(th), th.max()))
print("Vtrue min %.4f max %.4f" % (min(s.truth.v.min() for s in val[:50]),
                                   max(s.truth.v.max() for s in val[:50])))

lay = tr.build_measurement_layout(net, val[:50], include_virtual=False)
total, parts = tr.weak_loss_numpy(net, v, th, lay, tr.LossConfig())
print("loss/sample %.4e" % (total / 50), {k: round(x / 50, 1) for k, x in parts.items()})

# per-kind contributions via measurement_function on synthetic Measurement lists
import dsse_kit.pf_equations as pf
from dsse_kit.pf_equations import Measurement, StateVector
for kind in lay.kinds:
    z, w, locs = lay.z[kind], lay.w[kind], lay.locs[kind]
    meas = [Measurement(kind=kind, location=int(l), value=0.0, sigma=1.0)
            for l in locs]
    hs = np.array([
        pf.measurement_function(StateVector(v=v[i], theta=th[i]), meas, net)
        for i in range(50)
    ])
    print(f"{kind:12s} contrib {np.sum(w * (z - hs) ** 2) / 50:.4e}  "
          f"hhat med {np.median(hs):+.3e}  z med {np.median(z):+.3e}")
