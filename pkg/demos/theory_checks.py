"""
Monte-Carlo checks of the batch concentration properties
========================================================

The objective bound, the batchwise restricted eigenvalue condition and the
multiplier bound, each as a pass rate over independent trials.  The unnamed
constants are calibrated on separate seeds first.
"""

from dataclasses import replace

from momcs.sensing import Gaussian, StudentT
from momcs.theory_lab import (
    LemmaCheckConfig,
    calibrate_batch_size,
    calibrate_gamma,
    check_batch_srec,
    check_multiplier_bound,
    check_objective_bound,
    estimate_moment_ratio,
)

for ens, noise in [(Gaussian(), Gaussian()), (StudentT(4), StudentT(3))]:
    base = LemmaCheckConfig(trials=50, ensemble=ens, noise=noise)
    net = base.generator()
    cal = replace(base, seed=base.seed + 1)
    b, b_sweep = calibrate_batch_size(cal, [4, 8, 16], "multiplier", net)
    gamma, _ = calibrate_gamma(replace(cal, b=b), [0.7, 0.6, 0.5, 0.4, 0.3], "generator", net)
    cfg = replace(base, b=b, gamma=gamma)
    print(f"{ens.tag()}: moment ratio {estimate_moment_ratio(ens, 50, 50_000, n=20):.2f}, b = {b}, gamma = {gamma}")
    for rep in (
        check_objective_bound(replace(base, M=20, b=10)),
        check_batch_srec(cfg, "generator", net),
        check_batch_srec(cfg, "subspace", net),
        check_multiplier_bound(cfg, net),
    ):
        print(f"    {rep.name:<24} pass rate {rep.pass_rate:.2f}")
