"""Squared correlation between W and W X for a two-valued weight, over the feasible
(E[X], E[WX]) region, at a few overheads.  Writes one CSV per gamma and prints a coarse map.

Run: python3 demos/correlation_map.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from qpdcv.controls import rho_squared_grid

out = Path(sys.argv[1]) if len(sys.argv) > 1 else None
shades = " .:-=+*#%@"

for g in (1.66, 5.0, 34.95):
    grid = rho_squared_grid(g, 41)
    rho2 = np.where(grid["allowed"], grid["rho2"], np.nan)
    print(f"\ngamma = {g}  (rows: E[X] from +1 to -1, columns: E[WX] from -1 to +1; blank = infeasible)")
    for i in range(rho2.shape[0] - 1, -1, -2):
        line = "".join(" " if np.isnan(v) else shades[min(int(v * len(shades)), len(shades) - 1)] for v in rho2[i, ::1])
        print(f"  {grid['ex'][i]:+.2f} |{line}|")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        ex, ewx = np.meshgrid(grid["ex"], grid["ewx"], indexing="ij")
        table = np.column_stack([ex.ravel(), ewx.ravel(), rho2.ravel()])
        np.savetxt(out / f"rho2_gamma{g}.csv", table, delimiter=",", header="ex,ewx,rho2", comments="")

# as gamma grows the map flattens to E[X]^2 regardless of E[WX]
