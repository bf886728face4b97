"""
Segment and localization metrics by hand
========================================

Small activity grids and DOA sets where every count can be checked by eye.
"""

import numpy as np

from pairseld.metrics import angular_distance, assignment_cost, compute_doae, compute_er_f, compute_fr, segment_counts

# two segments, three classes
est = np.array([[1, 1, 0], [0, 1, 0]])
ref = np.array([[1, 0, 1], [0, 1, 1]])
c = segment_counts(est, ref)
print("per segment TP", c.tp, "FN", c.fn, "FP", c.fp)
print("per segment S", c.s, "D", c.d, "I", c.i)
er, f = compute_er_f(c)
print(f"ER = {er:.3f}  F = {f:.3f}")

# %%
# Great-circle distances in degrees between (azimuth, elevation) pairs
print(angular_distance((0, 0), (90, 0)), angular_distance((0, 0), (180, 0)), angular_distance((10, 40), (10, -40)))

# %%
# Optimal matching ignores the order of the sets
a, b = [20.0, 0.0], [-150.0, 30.0]
print("swapped sets cost:", assignment_cost(np.array([a, b]), np.array([b, a])))

# one frame with two estimates against one reference: the spare estimate
# adds nothing to the cost but still counts in the denominator
est_frames = [np.array([[0.0, 0.0], [90.0, 0.0]]), np.array([[30.0, 10.0]])]
ref_frames = [np.array([[0.0, 10.0]]), np.array([[30.0, 10.0]])]
print("DOAE:", compute_doae(est_frames, ref_frames))
print("FR:", compute_fr(est_frames, ref_frames))
