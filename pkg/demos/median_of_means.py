"""
Median of means in one dimension and in the loss
================================================

The median of batch means resists heavy tails.  The same aggregation,
applied to per-batch squared losses, is what the robust objectives use.
"""

import numpy as np

from momcs.generator import random_generator
from momcs.objectives import batch_losses, erm_value, make_partition, mom_direct_value
from momcs.sensing import Gaussian, NoiseSpec, synthesize
from momcs.theory_lab import mom_mean_1d

rng = np.random.default_rng(0)
x = rng.standard_t(2.1, (2000, 10_000))
err_mean = np.abs(x.mean(axis=1))
err_mom = np.array([abs(mom_mean_1d(row, 40)) for row in x])
for q in (0.5, 0.99, 0.999):
    print(f"quantile {q}: mean {np.quantile(err_mean, q):.3f}  median of means {np.quantile(err_mom, q):.3f}")

# a few wildly corrupted batches move the ERM loss but not the median batch loss
net = random_generator([5, 50, 100], seed=0)
z_star = rng.standard_normal(5)
p = synthesize(net, z_star, 400, Gaussian(), NoiseSpec(Gaussian(), 0.5), seed=3)
part = make_partition(p.m, 20)
z = z_star + 0.05
print("clean:     erm", round(erm_value(p, net, z), 4), " mom", round(mom_direct_value(p, net, z, part).value, 4))
p.y[part.batches[:3].ravel()] += 1e3
print("corrupted: erm", round(erm_value(p, net, z), 1), " mom", round(mom_direct_value(p, net, z, part).value, 4))
print("per-batch losses (first five):", np.round(batch_losses(p, net, z, part)[:5], 2))
