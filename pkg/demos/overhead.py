"""How the sampling overhead grows with Trotter depth for the two bundled noise tables.

Run: python3 demos/overhead.py
"""

import math

from qpdcv.experiment import ExperimentConfig
from qpdcv.ising import build_qpd, resolve_noise
from qpdcv.qpd import gamma, gamma_per_position, n_sigma_k

for name in ("q4_full", "q10_full"):
    cfg = ExperimentConfig.load(name)
    noise = resolve_noise(cfg.noise_file)
    print(f"\n{name}: {noise.n_paulis} Pauli error terms on {cfg.qubits} qubits")
    print(f"{'n_trot':>6} {'gamma':>10} {'log gamma':>10} {'M':>6} {'sum K':>7} {'worst position':>15}")
    for n_trot in cfg.n_trot_list:
        pec = build_qpd(noise, cfg.circuit(n_trot))
        g = gamma(pec.model)
        worst = gamma_per_position(pec.model).max()
        print(f"{n_trot:>6} {g:>10.4f} {math.log(g):>10.4f} {pec.m_total:>6} {n_sigma_k(pec.model):>7} {worst:>15.6f}")

# log gamma is linear in depth: every Trotter step adds the same four noisy layers
