"""
ERM against the median-of-means tournament
==========================================

Recover the same corrupted problem with every algorithm and compare the
reconstruction error per pixel.  ERM is pulled towards the outliers; the
robust objectives are not.
"""

from dataclasses import replace

import numpy as np

from momcs.generator import random_generator
from momcs.recovery import RecoveryConfig, recover
from momcs.sensing import NoiseSpec, StudentT, split_validation, synthesize

net = random_generator([5, 50, 100], seed=0)
z_star = np.random.default_rng(4).standard_normal(5)
full = synthesize(net, z_star, 1200, StudentT(4), NoiseSpec(StudentT(3), 0.1), epsilon=0.02, seed=4)
train, val = split_validation(full, 200, seed=0)

configs = {
    "erm": RecoveryConfig(algorithm="erm"),
    "l1": RecoveryConfig(algorithm="l1"),
    "trimmed(0.9)": RecoveryConfig(algorithm="trimmed", trim_fraction=0.9),
    "mom_direct(40)": RecoveryConfig(algorithm="mom_direct", M=40),
    "mom_tournament(40)": RecoveryConfig(algorithm="mom_tournament", M=40),
}
for name, cfg in configs.items():
    rep = recover(train, net, replace(cfg, step_size=0.01, iterations=1000), val)
    print(f"{name:>20}: error/pixel {rep.recon_error_per_pixel:.2e}  objective {rep.final_objective:+.3e}  "
          f"restart {rep.restart_index_chosen}  {rep.wall_time:.1f}s")
