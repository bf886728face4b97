"""
Fitting a TDOA calibration table
================================

Each (pair, elevation) row of a calibration table is a smooth periodic
function of azimuth. Noisy or wrong observations are cleaned up by a
polynomial fit over three tiled periods, with outliers removed and the
fit repeated.
"""

import numpy as np

from pairseld import DoaGrid, TdoaLattice, analytic_table, fit_calibration, tetrahedral_geometry
from pairseld.calibration import CalibrationObservations, evaluate_fit

grid = DoaGrid()
lattice = TdoaLattice()
geometry = tetrahedral_geometry()

# far-field TDOAs for the 4.2 cm tetrahedron
truth = analytic_table(geometry, grid, 48000, lattice).tdoa
print("table shape (grid points, pairs):", truth.shape)
print("largest |TDOA|:", np.abs(truth).max().round(2), "samples")

# %%
# Corrupt 5% of the observations with +/- tau_max and add a little jitter
rng = np.random.default_rng(3)
observed = truth + rng.normal(0, 0.1, truth.shape)
flat = observed.reshape(-1)
bad = rng.choice(flat.size, flat.size // 20, replace=False)
flat[bad] = rng.choice([-20.0, 20.0], bad.size)

obs = CalibrationObservations.empty(grid, 4, lattice)
obs.tdoa[:] = observed
obs.weight[:] = 1.0

# %%
table = fit_calibration(obs)
err = np.abs(table.tdoa - truth)
print("outliers flagged:", int(table.outliers.sum()), "of", bad.size, "injected")
print("max error after fit:", err.max().round(3), "samples")
print("mean error after fit:", err.mean().round(3), "samples")

# %%
# First fit against final fit for the row that held the most outliers
rows = np.zeros((6, grid.num_elevations), int)
for i in bad:
    q, p = divmod(i, 6)
    rows[p, q // grid.num_azimuths] += 1
p, e = np.unravel_index(np.argmax(rows), rows.shape)
az = np.asarray(grid.azimuths, float)
row_truth = truth[e * 36 : (e + 1) * 36, p]
for name, coef in (("first", table.first_fit_coefficients[p, e]), ("final", table.coefficients[p, e])):
    rms = np.sqrt(np.mean((evaluate_fit(coef, az) - row_truth) ** 2))
    print(f"pair {table.pair_order[p]} elevation {grid.elevations[e]}: {name} fit RMS {rms:.3f}")
