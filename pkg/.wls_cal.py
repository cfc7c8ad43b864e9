import sys; sys.path.insert(0, "tests")
import numpy as np
from helpers import case14
from dsse_kit.scenario import generate_dataset
from dsse_kit.wls import estimate_wls
from dsse_kit.pf_equations import StateVector, all_line_loadings

net = case14()
ds = generate_dataset(net, n_samples=512, seed=3)
val = [s for s in ds.samples if s.split == "val"][:30]
errs_v, errs_th, loads = [], [], []
for s in val:
    r = estimate_wls(net, s.measurements)
    errs_v.append(r.state.v - s.truth.v)
    errs_th.append(r.state.theta - s.truth.theta)
    est_l = all_line_loadings(r.state, net)
    true_l = all_line_loadings(StateVector(s.truth.v, s.truth.theta), net)
    loads.append((est_l - true_l)[net.closed])
ev = np.stack(errs_v); eth = np.stack(errs_th); el = np.stack(loads)
print(f"WLS val v_rmse {np.sqrt(np.mean(ev**2)):.5f}  th_rmse {np.sqrt(np.mean(eth**2)):.5f}  load_rmse {np.sqrt(np.mean(el**2)):.2f}")
print("per-bus v rmse:", " ".join(f"{x:.4f}" for x in np.sqrt(np.mean(ev**2, axis=0))))
