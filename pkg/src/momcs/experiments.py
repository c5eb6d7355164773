"""Seeded Monte-Carlo experiment plans over (m, algorithm, trial) cells.

Seeds are derived with :func:`derive_seed`, a counter-based scheme on top of
``numpy.random.SeedSequence``: the key ``(scenario_id, m, algorithm_id,
trial)`` is used as the spawn key under ``master_seed``.  Problems use
``algorithm_id = 0`` so every algorithm in a cell sees the same measurements;
algorithm ``i`` in the plan recovers with ``algorithm_id = i + 1``.
"""

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import __version__
from .generator import load_weights, random_generator
from .recovery import RecoveryConfig, RecoveryError, recover
from .sensing import Gaussian, NoiseSpec, StudentT, synthesize

SCENARIOS = {
    "clean_gaussian": 0,
    "heavy_tailed": 1,
    "corrupted": 2,
}

BENCH_COLUMNS = [
    "scenario",
    "m",
    "algorithm",
    "M",
    "trial",
    "recon_error_per_pixel",
    "final_objective",
    "iterations",
    "wall_ms",
    "diverged",
]
SUMMARY_COLUMNS = [
    "scenario",
    "m",
    "algorithm",
    "M",
    "trials",
    "diverged",
    "mean",
    "ci_low",
    "ci_high",
    "median",
]
TRACE_COLUMNS = ["iteration", "objective", "recon_error", "elapsed_seconds"]


def derive_seed(master_seed, *key):
    """64-bit seed for the cell ``key`` under ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class ExperimentPlan:
    """A grid of (m, algorithm) cells, each run for ``trials`` seeded problems.

    ``algorithms`` maps a label to a :class:`RecoveryConfig` template; the
    template's ``seed`` is replaced per trial.  ``validation_m`` extra fresh
    measurements per trial, when positive, are used to rank restarts.
    """

    scenario: str = "heavy_tailed"
    m_grid: list = field(default_factory=lambda: [100, 200])
    algorithms: dict = field(default_factory=lambda: {"erm": RecoveryConfig(algorithm="erm")})
    trials: int = 5
    master_seed: int = 0
    sigma: float = 1.0
    epsilon: float = 0.02
    generator_dims: list = field(default_factory=lambda: [5, 50, 100])
    generator_seed: int = 0
    generator_scale: float = 1.0
    final_relu: bool = False
    generator_file: str = ""
    latent_scale: float = 1.0
    validation_m: int = 0
    val_batches: int = 10
    out: str = ""

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {sorted(SCENARIOS)}")
        if not self.m_grid:
            raise ValueError("m_grid is empty")
        if not self.algorithms:
            raise ValueError("plan has no algorithms")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        for label, cfg in self.algorithms.items():
            if not isinstance(cfg, RecoveryConfig):
                raise TypeError(f"algorithm {label!r} is not a RecoveryConfig")
            if cfg.uses_batches:
                for m in self.m_grid:
                    if m % cfg.M:
                        raise ValueError(f"algorithm {label!r}: M={cfg.M} does not divide m={m}")
        if self.validation_m and self.validation_m % self.val_batches:
            raise ValueError("val_batches must divide validation_m")
        return self

    def generator(self):
        if self.generator_file:
            return load_weights(self.generator_file)
        return random_generator(self.generator_dims, self.generator_seed, self.generator_scale, self.final_relu)

    def ensembles(self):
        if self.scenario == "clean_gaussian":
            return Gaussian(), NoiseSpec(Gaussian(), self.sigma), 0.0
        eps = self.epsilon if self.scenario == "corrupted" else 0.0
        return StudentT(4), NoiseSpec(StudentT(3), self.sigma), eps


def make_trial_problem(plan, net, m, trial):
    """Training problem (and optional validation rows) for one cell trial."""
    sid = SCENARIOS[plan.scenario]
    seed = derive_seed(plan.master_seed, sid, m, 0, trial)
    ensemble, noise, eps = plan.ensembles()
    rng = np.random.default_rng(seed)
    z_star = plan.latent_scale * rng.standard_normal(net.latent_dim)
    total = m + plan.validation_m
    full = synthesize(net, z_star, total, ensemble, noise, eps, seed=seed)
    if not plan.validation_m:
        return full, None
    return full.subset(np.arange(m)), full.subset(np.arange(m, total))


def _run_cell(args):
    plan, net, m, a_idx, label, cfg, trial = args
    problem, validation = make_trial_problem(plan, net, m, trial)
    seed = derive_seed(plan.master_seed, SCENARIOS[plan.scenario], m, a_idx + 1, trial)
    cfg = replace(cfg, seed=seed % (2**63))
    t0 = time.perf_counter()
    try:
        rep = recover(problem, net, cfg, validation, plan.val_batches)
    except RecoveryError:
        rep = None
    wall_ms = 1000 * (time.perf_counter() - t0)
    return {
        "scenario": plan.scenario,
        "m": m,
        "algorithm": label,
        "M": cfg.M if cfg.uses_batches else 1,
        "trial": trial,
        "recon_error_per_pixel": rep.recon_error_per_pixel if rep else float("nan"),
        "final_objective": rep.final_objective if rep else float("nan"),
        "iterations": rep.iterations if rep else 0,
        "wall_ms": wall_ms,
        "diverged": int(rep is None),
    }


def summarize(rows):
    """Mean and 95% t-interval of ``recon_error_per_pixel`` per (m, algorithm) cell."""
    cells = {}
    for r in rows:
        cells.setdefault((r["scenario"], r["m"], r["algorithm"], r["M"]), []).append(r)
    out = []
    for (scenario, m, alg, M), rs in sorted(cells.items(), key=lambda kv: (kv[0][1], kv[0][2])):
        err = np.array([r["recon_error_per_pixel"] for r in rs if not r["diverged"]])
        n = err.size
        mean = float(err.mean()) if n else float("nan")
        half = float(stats.t.ppf(0.975, n - 1) * err.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
        out.append(
            {
                "scenario": scenario,
                "m": m,
                "algorithm": alg,
                "M": M,
                "trials": len(rs),
                "diverged": len(rs) - n,
                "mean": mean,
                "ci_low": mean - half,
                "ci_high": mean + half,
                "median": float(np.median(err)) if n else float("nan"),
            }
        )
    return out


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows, master_seed=None):
    """CSV with a ``#`` provenance line carrying the package version and seed."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# momcs {__version__} master_seed={master_seed}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def read_csv(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


@dataclass
class PlanResult:
    rows: list
    summary: list

    def cell(self, m, algorithm):
        return [r for r in self.rows if r["m"] == m and r["algorithm"] == algorithm]

    def errors(self, m, algorithm):
        return np.array([r["recon_error_per_pixel"] for r in self.cell(m, algorithm)])


def run_plan(plan, workers=1):
    """Run every (m, algorithm, trial) cell; write ``bench.csv`` and
    ``summary.csv`` under ``plan.out`` when it is set."""
    plan.validate()
    net = plan.generator()
    jobs = [
        (plan, net, m, a_idx, label, cfg, trial)
        for m in plan.m_grid
        for a_idx, (label, cfg) in enumerate(plan.algorithms.items())
        for trial in range(plan.trials)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell, jobs))
    else:
        rows = [_run_cell(j) for j in jobs]
    rows.sort(key=lambda r: (r["m"], r["algorithm"], r["trial"]))
    result = PlanResult(rows, summarize(rows))
    if plan.out:
        os.makedirs(plan.out, exist_ok=True)
        write_csv(os.path.join(plan.out, "bench.csv"), BENCH_COLUMNS, rows, plan.master_seed)
        write_csv(os.path.join(plan.out, "summary.csv"), SUMMARY_COLUMNS, result.summary, plan.master_seed)
    return result


def emit_trace(report, path, master_seed=None):
    """Per-iteration CSV of objective, reconstruction error and elapsed time."""
    rows = [
        {
            "iteration": t + 1,
            "objective": report.objective_trace[t],
            "recon_error": report.recon_trace[t],
            "elapsed_seconds": report.elapsed_trace[t],
        }
        for t in range(len(report.objective_trace))
    ]
    write_csv(path, TRACE_COLUMNS, rows, master_seed)
    return rows
