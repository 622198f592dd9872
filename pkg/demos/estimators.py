"""Compare the estimators on one sampled PEC dataset, with the exact answer alongside.

Run: python3 demos/estimators.py [n_trot] [n_instances]
"""

import sys

import numpy as np

from qpdcv.experiment import CircuitContext, ExperimentConfig, control_data, sample_circuit, simulate_circuit
from qpdcv.estimators import Dataset, daf, estimate_basic, estimate_centered, estimate_cv
from qpdcv.qpd import gamma, mu_w

n_trot = int(sys.argv[1]) if len(sys.argv) > 1 else 6
n_inst = int(sys.argv[2]) if len(sys.argv) > 2 else 400

cfg = ExperimentConfig.load("q4_desk").replace(n_trot_list=[n_trot], n_instances=n_inst)
ctx = CircuitContext(cfg, n_trot)
raw = simulate_circuit(ctx, sample_circuit(ctx))
controls = control_data(ctx, raw["indices"].astype(np.int64))
exact = {b: ctx.runner.exact_expectations(b) for b in cfg.bases}
cols = ctx.obs_columns()

print(f"Q=4, n_trot={n_trot}, gamma={gamma(ctx.model):.3f}, {n_inst} instances x {cfg.n_shots} shots")
for basis in cfg.bases:
    for j, obs in enumerate(cfg.observable_list):
        x = raw[f"x_{basis}"][:, j]
        base = estimate_basic(Dataset(x, raw["w"]))
        results = [base, estimate_centered(Dataset(x, raw["w"]), mu_w(ctx.model))]
        results += [estimate_cv(Dataset(x, raw["w"], v), st) for v, st in controls.values()]
        truth = exact[basis][cols[j]]
        print(f"\n<{obs}> in the {basis} basis, exact {truth:+.4f}, unmitigated {raw[f'nopec_t_{basis}'][j]:+.4f}")
        for label, r in zip(["basic", "centered", *controls], results):
            err = np.sqrt(r.sigma_hat_sq)
            print(f"  {label:<9} {r.t_hat:+.4f} +- {err:.4f}   DAF {daf(base.sigma_hat_sq, r.sigma_hat_sq):5.2f}")
