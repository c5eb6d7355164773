"""
Heavy tails and planted outliers
================================

Draw measurement problems from the three regimes used throughout the
package and look at what the residuals of the true signal look like.
"""

import numpy as np

from momcs.generator import random_generator
from momcs.sensing import Gaussian, NoiseSpec, StudentT, synthesize

net = random_generator([5, 50, 100], seed=0)
z_star = np.random.default_rng(0).standard_normal(5)

problems = {
    "clean gaussian": synthesize(net, z_star, 1000, Gaussian(), NoiseSpec(Gaussian(), 1.0), seed=1),
    "heavy tailed": synthesize(net, z_star, 1000, StudentT(4), NoiseSpec(StudentT(3), 1.0), seed=1),
    "2% corrupted": synthesize(net, z_star, 1000, StudentT(4), NoiseSpec(StudentT(3), 1.0), epsilon=0.02, seed=1),
}

for name, p in problems.items():
    r = p.y - p.A @ p.x_star
    print(f"{name:>15}: max |residual| {np.abs(r).max():8.2f}  corrupted rows {p.corrupted_rows.size}")

# the corrupted rows carry y = -1 and random-sign rows of A
p = problems["2% corrupted"]
print("outlier y values:", np.unique(p.y[p.corrupted_rows]))
print("outlier A entries:", np.unique(p.A[p.corrupted_rows]))
