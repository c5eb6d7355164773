"""Monte-Carlo checks of the batchwise concentration properties behind MOM recovery.

Each ``check_*`` function draws ``trials`` independent instances from
per-trial child seeds of ``config.seed`` and reports the fraction of trials
on which the property held.  Constants the theory leaves unnamed (the
restricted-eigenvalue level ``gamma``, the batch size ``b``) are inputs here,
and :func:`calibrate_gamma` / :func:`calibrate_batch_size` search for them on
seeds disjoint from the evaluation seeds.

Pass-rate thresholds default to 0.95 over at least 100 trials: a property
whose true per-trial success rate is 0.99 then fails the threshold with
probability below 1e-3 (see :func:`threshold_miss_probability`).
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .generator import forward, random_generator
from .objectives import make_partition, median_index, mom_direct_value
from .sensing import Gaussian, NoiseSpec, measure, sample_measurement_matrix, synthesize


@dataclass(frozen=True)
class LemmaCheckConfig:
    trials: int = 100
    M: int = 100
    b: int = 8
    n: int = 100
    k: int = 5
    hidden: int = 50
    ensemble: object = field(default_factory=Gaussian)
    noise: object = field(default_factory=Gaussian)
    sigma: float = 1.0
    direction_samples: int = 100
    gamma: float = 0.5
    batch_fraction: float = 0.9
    target_rate: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.M < 1 or self.b < 1:
            raise ValueError("M and b must be >= 1")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @property
    def m(self):
        return self.M * self.b

    def generator(self, seed=None):
        dims = [self.k, self.hidden, self.n] if self.hidden else [self.k, self.n]
        return random_generator(dims, self.seed if seed is None else seed)


@dataclass
class LemmaCheckReport:
    name: str
    pass_rate: float
    passed: np.ndarray
    min_fraction: np.ndarray
    worst_direction: np.ndarray
    constants: dict
    config: LemmaCheckConfig

    @property
    def ok(self):
        return self.pass_rate >= self.config.target_rate

    def to_row(self):
        c = self.config
        return {
            "check": self.name,
            "m": c.m,
            "n": c.n,
            "k": c.k,
            "M": c.M,
            "b": c.b,
            "ensemble": c.ensemble.tag(),
            "noise": c.noise.tag(),
            "sigma": c.sigma,
            "trials": c.trials,
            "constants": {key: float(v) for key, v in self.constants.items()},
            "pass_rate": float(self.pass_rate),
            "target_rate": c.target_rate,
            "seed": c.seed,
        }


def _trial_rngs(config):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(config.trials)]


def _report(name, config, passed, min_frac, worst, constants):
    passed = np.asarray(passed, dtype=bool)
    return LemmaCheckReport(
        name=name,
        pass_rate=float(np.mean(passed)),
        passed=passed,
        min_fraction=np.asarray(min_frac, dtype=np.float64),
        worst_direction=np.asarray(worst, dtype=np.int64),
        constants=constants,
        config=config,
    )


def threshold_miss_probability(trials, true_rate=0.99, threshold=0.95):
    """P(observed pass rate < threshold) when each trial passes w.p. ``true_rate``."""
    need = int(np.ceil(threshold * trials))
    return float(stats.binom.cdf(need - 1, trials, true_rate))


def check_objective_bound(config, net=None):
    """Median over batches of ``l_j(z*)`` at most ``4 sigma^2``.

    ``l_j(z*)`` upper-bounds the tournament value at ``z = z*`` for every
    ``z'``, so this bounds the min-max objective.  Problems are uncorrupted.
    """
    net = net or config.generator()
    part = make_partition(config.m, config.M)
    noise = NoiseSpec(config.noise, config.sigma)
    bound = 4 * config.sigma**2
    passed, medians = [], []
    for rng in _trial_rngs(config):
        z_star = rng.standard_normal(net.latent_dim)
        prob = synthesize(net, z_star, config.m, config.ensemble, noise, 0.0, seed=rng)
        med = mom_direct_value(prob, net, z_star, part).value
        medians.append(med)
        passed.append(med <= bound)
    medians = np.asarray(medians)
    return _report(
        "objective_bound",
        config,
        passed,
        medians,
        np.zeros(len(medians)),
        {"bound": bound, "max_median": medians.max(), "mean_median": medians.mean()},
    )


def _directions(kind, config, net, rng):
    D = config.direction_samples
    if kind == "generator":
        z1 = rng.standard_normal((D, net.latent_dim))
        z2 = rng.standard_normal((D, net.latent_dim))
        V = forward(net, z1) - forward(net, z2)
    elif kind == "subspace":
        dim = min(2 * config.k, config.n)
        W, _ = np.linalg.qr(rng.standard_normal((config.n, dim)))
        V = rng.standard_normal((D, dim)) @ W.T
    else:
        raise ValueError(f"unknown direction kind {kind!r}")
    norms = np.linalg.norm(V, axis=1)
    return V[norms > 0], norms[norms > 0]


def srec_fractions(A, V, partition, gamma):
    """Per-direction fraction of batches with ``||A_B v||^2 / b >= gamma^2 ||v||^2``."""
    AV = V @ A.T
    q = np.mean(AV[:, partition.batches] ** 2, axis=-1)
    ratio = q / np.sum(V**2, axis=1)[:, None]
    return np.mean(ratio >= gamma**2, axis=1), ratio


def check_batch_srec(config, directions="generator", net=None, matrix_sampler=None):
    """Restricted eigenvalue bound on at least ``batch_fraction`` of the batches.

    A trial passes when every sampled direction satisfies the bound on the
    required fraction of batches.  ``matrix_sampler(rng)`` overrides the
    random ensemble (used for hand-built matrices).
    """
    net = net or config.generator()
    part = make_partition(config.m, config.M)
    passed, min_frac, worst, ratios = [], [], [], []
    for rng in _trial_rngs(config):
        if matrix_sampler is not None:
            A = np.asarray(matrix_sampler(rng), dtype=np.float64)
        else:
            A = sample_measurement_matrix(config.m, config.n, config.ensemble, rng)
        V, _ = _directions(directions, config, net, rng)
        frac, ratio = srec_fractions(A, V, part, config.gamma)
        passed.append(bool(np.all(frac >= config.batch_fraction)))
        min_frac.append(frac.min())
        worst.append(int(np.argmin(frac)))
        ratios.append(np.quantile(ratio, 1 - config.batch_fraction, axis=1).min())
    return _report(
        f"batch_srec[{directions}]",
        config,
        passed,
        min_frac,
        worst,
        {"gamma": config.gamma, "worst_ratio_quantile": float(np.min(ratios))},
    )


def multiplier_fractions(eta, A, V, partition, sigma):
    """Per-direction fraction of batches with ``|eta_B^T A_B v| / b <= sigma ||v||``."""
    AV = V @ A.T
    cross = np.abs(np.mean(eta[partition.batches][None] * AV[:, partition.batches], axis=-1))
    limit = sigma * np.linalg.norm(V, axis=1)[:, None]
    return np.mean(cross <= limit, axis=1)


def check_multiplier_bound(config, net=None):
    """Noise-measurement cross term bounded by ``sigma ||G(z) - G(z*)||`` batchwise."""
    net = net or config.generator()
    part = make_partition(config.m, config.M)
    noise = NoiseSpec(config.noise, config.sigma)
    passed, min_frac, worst = [], [], []
    for rng in _trial_rngs(config):
        z_star = rng.standard_normal(net.latent_dim)
        prob = synthesize(net, z_star, config.m, config.ensemble, noise, 0.0, seed=rng)
        eta = prob.y - measure(prob.A, prob.x_star)
        z = rng.standard_normal((config.direction_samples, net.latent_dim))
        V = forward(net, z) - prob.x_star
        V = V[np.linalg.norm(V, axis=1) > 0]
        frac = multiplier_fractions(eta, prob.A, V, part, config.sigma)
        passed.append(bool(np.all(frac >= config.batch_fraction)))
        min_frac.append(frac.min())
        worst.append(int(np.argmin(frac)))
    return _report("multiplier_bound", config, passed, min_frac, worst, {"sigma": config.sigma})


def calibrate_gamma(config, gamma_grid, directions="generator", net=None, target_rate=0.99):
    """Largest ``gamma`` in the grid whose S-REC pass rate reaches ``target_rate``.

    Runs on the calibration seed ``config.seed``; evaluate on another seed.
    Returns ``(gamma, rows)`` where ``rows`` lists ``(gamma, pass_rate)``.
    """
    rows = []
    for gamma in sorted(gamma_grid, reverse=True):
        rate = check_batch_srec(replace(config, gamma=float(gamma)), directions, net).pass_rate
        rows.append((float(gamma), rate))
        if rate >= target_rate:
            return float(gamma), rows
    raise ValueError(f"no gamma in {sorted(gamma_grid)} reaches pass rate {target_rate}")


def calibrate_batch_size(config, b_grid, check="multiplier", net=None, target_rate=0.99):
    """Smallest ``b`` in the grid at which the chosen check reaches ``target_rate``.

    ``M`` is held fixed, so ``m`` grows with ``b``.
    """
    fn = {"multiplier": check_multiplier_bound, "srec": check_batch_srec}[check]
    rows = []
    for b in sorted(b_grid):
        rate = fn(replace(config, b=int(b)), net=net).pass_rate
        rows.append((int(b), rate))
        if rate >= target_rate:
            return int(b), rows
    raise ValueError(f"no batch size in {sorted(b_grid)} reaches pass rate {target_rate}")


def mom_mean_1d(samples, M):
    """Median of the means of ``M`` contiguous equal batches (lower median)."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    part = make_partition(x.size, M)
    means = x[part.batches].mean(axis=1)
    return float(means[median_index(means)])


def estimate_moment_ratio(ensemble, directions=200, samples=50000, n=None, seed=0):
    """Largest L4/L2 ratio ``E[<a,u>^4]^(1/4) / E[<a,u>^2]^(1/2)`` over directions.

    ``ensemble`` is either an ensemble (then ``n`` is required and ``samples``
    rows are drawn) or an explicit ``(N, n)`` sample matrix.  ``directions`` is
    a count of random unit vectors or an explicit ``(D, n)`` array.
    """
    rng = np.random.default_rng(seed)
    if isinstance(ensemble, np.ndarray):
        rows = np.asarray(ensemble, dtype=np.float64)
    else:
        if n is None:
            raise ValueError("n is required when sampling from an ensemble")
        rows = sample_measurement_matrix(samples, n, ensemble, rng)
    if np.isscalar(directions):
        U = rng.standard_normal((int(directions), rows.shape[1]))
    else:
        U = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    U = U / np.linalg.norm(U, axis=1, keepdims=True)
    proj = rows @ U.T
    ratio = np.mean(proj**4, axis=0) ** 0.25 / np.mean(proj**2, axis=0) ** 0.5
    return float(ratio.max())


def write_reports(reports, path):
    """One JSON object per line."""
    with open(path, "w") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.to_row() if isinstance(rep, LemmaCheckReport) else rep) + "\n")
