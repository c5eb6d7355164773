"""Latent recovery loops: MOM tournament descent/ascent and the baselines.

Restarts run side by side as rows of a ``(R, k)`` latent stack; every
restart has its own optimizer state and divergence flag, and the per-restart
results are reported separately before :func:`select_best` picks one.
"""

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .generator import forward_cached, latent_gradient
from .sensing import measure
from .objectives import (
    BatchPartition,
    make_partition,
    median_index,
    mom_direct_value,
)

ALGORITHMS = ("erm", "l1", "trimmed", "mom_direct", "mom_tournament")
OPTIMIZERS = ("gd", "momentum", "adam")
DEFAULT_STEP_GRID = (0.1, 0.05, 0.01, 0.005)


class RecoveryError(RuntimeError):
    """Every restart diverged, or nothing was left to choose from."""


@dataclass(frozen=True)
class RecoveryConfig:
    """Settings for one call to :func:`recover`.

    ``M`` is only used by the two MOM algorithms, ``trim_fraction`` only by
    ``"trimmed"``.  ``ascent_steps > 1`` gives the tournament extra z'
    updates per iteration (ablation; the default is one simultaneous step).
    """

    algorithm: str = "mom_tournament"
    M: int = 1
    trim_fraction: float = 0.9
    step_size: float = 0.05
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    iterations: int = 2000
    restarts: int = 5
    init_scale: float = 1.0
    seed: int = 0
    stop_tol: float = 0.0
    reshuffle_each_iter: bool = False
    shuffle_partition: bool = True
    ascent_steps: int = 1
    divergence_bound: float = 1e6

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; choose from {OPTIMIZERS}")
        if not (np.isfinite(self.step_size) and self.step_size > 0):
            raise ValueError(f"step_size must be finite and positive, got {self.step_size}")
        if self.iterations < 1 or self.restarts < 1:
            raise ValueError("iterations and restarts must both be >= 1")
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if not 0 < self.trim_fraction <= 1:
            raise ValueError(f"trim_fraction must lie in (0, 1], got {self.trim_fraction}")
        if self.stop_tol < 0:
            raise ValueError("stop_tol must be >= 0")
        if self.ascent_steps < 1:
            raise ValueError("ascent_steps must be >= 1")

    @property
    def uses_batches(self):
        return self.algorithm in ("mom_direct", "mom_tournament")


@dataclass
class RecoveryReport:
    z_hat: np.ndarray
    reconstruction: np.ndarray
    objective_trace: np.ndarray
    final_objective: float
    recon_error_per_pixel: float
    wall_time: float
    restart_index_chosen: int
    algorithm: str = ""
    z_prime_hat: Optional[np.ndarray] = None
    recon_trace: Optional[np.ndarray] = None
    elapsed_trace: Optional[np.ndarray] = None
    selection_objective: float = np.nan
    diverged: bool = False
    iterations: int = 0
    partition: Optional[BatchPartition] = None
    restarts: list = field(default_factory=list, repr=False)

    @property
    def tau(self):
        """Optimisation gap against the lower bound 0."""
        return self.final_objective


class _Optimizer:
    """Row-wise first-order update; rows flagged inactive are left untouched."""

    def __init__(self, config, shape):
        self.cfg = config
        self.t = 0
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)

    def step(self, params, grad, active):
        c = self.cfg
        self.t += 1
        grad = np.where(active[:, None], grad, 0.0)
        if c.optimizer == "gd":
            delta = c.step_size * grad
        elif c.optimizer == "momentum":
            self.m = c.momentum * self.m + grad
            delta = c.step_size * self.m
        else:
            self.m = c.beta1 * self.m + (1 - c.beta1) * grad
            self.v = c.beta2 * self.v + (1 - c.beta2) * grad**2
            m_hat = self.m / (1 - c.beta1**self.t)
            v_hat = self.v / (1 - c.beta2**self.t)
            delta = c.step_size * m_hat / (np.sqrt(v_hat) + c.adam_eps)
        return np.where(active[:, None], params - delta, params)


def _median_batch_upstream(A, r, partition, sel):
    """``(2/b) A_B^T r_B`` for the batch ``sel[i]`` of every row ``i``."""
    rows = partition.batches[sel]
    r_sel = np.take_along_axis(r, rows, axis=1)
    return np.einsum("rb,rbn->rn", (2.0 / partition.b) * r_sel, A[rows])


def _quantities(problem, net, cfg, Z, Zp, partition, need_grad=True):
    """Objective value per restart and the gradients each player descends.

    Returns ``(value, grad_z, grad_zp, X)``; ``grad_zp`` is the gradient of
    ``l_j(z')`` on the selected batch (ascent on the tournament objective is
    descent on that), ``None`` for single-player algorithms.
    """
    A, y = problem.A, problem.y
    R = Z.shape[0]
    if cfg.algorithm == "mom_tournament":
        ZZ = np.vstack([Z, Zp])
        X, ws = forward_cached(net, ZZ)
        r = measure(A, X) - y
        L = np.mean(r[:, partition.batches] ** 2, axis=-1)
        g = L[:R] - L[R:]
        sel = median_index(g)
        value = g[np.arange(R), sel]
        if not need_grad:
            return value, None, None, X[:R]
        up = _median_batch_upstream(A, r, partition, np.concatenate([sel, sel]))
        grad = latent_gradient(net, ZZ, up, ws)
        return value, grad[:R], grad[R:], X[:R]

    X, ws = forward_cached(net, Z)
    r = measure(A, X) - y
    m = r.shape[1]
    if cfg.algorithm == "mom_direct":
        L = np.mean(r[:, partition.batches] ** 2, axis=-1)
        sel = median_index(L)
        value = L[np.arange(R), sel]
        up = _median_batch_upstream(A, r, partition, sel) if need_grad else None
    elif cfg.algorithm == "erm":
        value = np.mean(r**2, axis=1)
        up = (2.0 / m) * r @ A if need_grad else None
    elif cfg.algorithm == "l1":
        value = np.mean(np.abs(r), axis=1)
        up = np.sign(r) @ A / m if need_grad else None
    else:
        sq = r**2
        keep = int(np.floor(cfg.trim_fraction * m))
        if keep == 0:
            raise ValueError(f"trim fraction {cfg.trim_fraction} keeps no sample out of {m}")
        kept = np.argsort(sq, axis=1, kind="stable")[:, :keep]
        value = np.mean(np.take_along_axis(sq, kept, axis=1), axis=1)
        up = None
        if need_grad:
            w = np.zeros_like(r)
            np.put_along_axis(w, kept, (2.0 / keep) * np.take_along_axis(r, kept, axis=1), axis=1)
            up = w @ A
    grad = latent_gradient(net, Z, up, ws) if need_grad else None
    return value, grad, None, X


def _selection_objective(problem, cfg, X, partition):
    """Score used to rank restarts without validation data: the MOM loss of
    z-hat alone for the MOM algorithms, the algorithm's own loss otherwise."""
    r = measure(problem.A, X) - problem.y
    if cfg.uses_batches:
        L = np.mean(r[:, partition.batches] ** 2, axis=-1)
        return L[np.arange(L.shape[0]), median_index(L)]
    if cfg.algorithm == "l1":
        return np.mean(np.abs(r), axis=1)
    if cfg.algorithm == "trimmed":
        keep = int(np.floor(cfg.trim_fraction * r.shape[1]))
        return np.mean(np.sort(r**2, axis=1)[:, :keep], axis=1)
    return np.mean(r**2, axis=1)


def _partition_for(problem, cfg, rng=None):
    if not cfg.uses_batches:
        return None
    if rng is not None:
        return make_partition(problem.m, cfg.M, seed=rng, shuffle=True)
    return make_partition(problem.m, cfg.M, seed=cfg.seed, shuffle=cfg.shuffle_partition)


def recover(problem, net, config, validation=None, val_batches=10, z_init=None, z_prime_init=None):
    """Run ``config.restarts`` restarts and return the selected one.

    Parameters
    ----------
    problem : SensingProblem
    net : GeneratorNet
    config : RecoveryConfig
    validation : SensingProblem, optional
        Held-out rows; when given, restarts are ranked by their MOM loss on
        ``val_batches`` validation batches instead of the training objective.
    z_init, z_prime_init : array_like, optional
        Starting latents, shape ``(k,)`` (shared) or ``(R, k)``.

    Returns
    -------
    RecoveryReport
        The chosen restart; ``report.restarts`` holds all of them.
    """
    cfg = config
    k = net.latent_dim
    R, T = cfg.restarts, cfg.iterations
    rng = np.random.default_rng(cfg.seed)
    Z = cfg.init_scale * rng.standard_normal((R, k))
    Zp = cfg.init_scale * rng.standard_normal((R, k))
    if z_init is not None:
        Z = np.broadcast_to(np.asarray(z_init, dtype=np.float64), (R, k)).copy()
    if z_prime_init is not None:
        Zp = np.broadcast_to(np.asarray(z_prime_init, dtype=np.float64), (R, k)).copy()
    tournament = cfg.algorithm == "mom_tournament"
    shuffle_rng = np.random.default_rng([cfg.seed, 1]) if cfg.reshuffle_each_iter else None
    partition = _partition_for(problem, cfg)

    opt_z = _Optimizer(cfg, Z.shape)
    opt_zp = _Optimizer(cfg, Zp.shape)
    active = np.ones(R, dtype=bool)
    diverged_at = np.full(R, -1)
    trace = np.full((R, T), np.nan)
    recon = np.full((R, T), np.nan)
    elapsed = np.zeros(T)
    x_star = problem.x_star

    t0 = time.perf_counter()
    with np.errstate(over="ignore", invalid="ignore"):
        value, gz, gzp, X = _quantities(problem, net, cfg, Z, Zp, partition)
        for t in range(T):
            Z = opt_z.step(Z, gz, active)
            if tournament:
                Zp = opt_zp.step(Zp, gzp, active)
                for _ in range(cfg.ascent_steps - 1):
                    _, _, gzp, _ = _quantities(problem, net, cfg, Z, Zp, partition)
                    Zp = opt_zp.step(Zp, gzp, active)
            if shuffle_rng is not None:
                partition = _partition_for(problem, cfg, shuffle_rng)
            value, gz, gzp, X = _quantities(problem, net, cfg, Z, Zp, partition)
            bad = ~np.isfinite(value) | (np.abs(Z).max(axis=1) > cfg.divergence_bound)
            if tournament:
                bad |= np.abs(Zp).max(axis=1) > cfg.divergence_bound
            newly = bad & active
            diverged_at[newly] = t
            active &= ~bad
            trace[active, t] = value[active]
            recon[active, t] = np.mean((X[active] - x_star) ** 2, axis=1)
            elapsed[t] = time.perf_counter() - t0
        select_obj = _selection_objective(problem, cfg, X, partition)
    wall = time.perf_counter() - t0

    reports = []
    for i in range(R):
        div = not active[i]
        x_hat = X[i].copy()
        reports.append(
            RecoveryReport(
                z_hat=Z[i].copy(),
                reconstruction=x_hat,
                objective_trace=trace[i].copy(),
                final_objective=float(value[i]) if not div else np.nan,
                recon_error_per_pixel=float(np.mean((x_hat - x_star) ** 2)) if not div else np.nan,
                wall_time=wall,
                restart_index_chosen=i,
                algorithm=cfg.algorithm,
                z_prime_hat=Zp[i].copy() if tournament else None,
                recon_trace=recon[i].copy(),
                elapsed_trace=elapsed.copy(),
                selection_objective=float(select_obj[i]) if not div else np.nan,
                diverged=div,
                iterations=T if not div else int(diverged_at[i]) + 1,
                partition=partition,
            )
        )
    chosen = select_best(reports, net=net, validation=validation, val_batches=val_batches)
    best = replace(reports[chosen], restarts=reports)
    return best


def validation_score(validation, net, z, val_batches=10):
    """MOM loss of ``z`` on held-out rows split into ``val_batches`` batches."""
    part = make_partition(validation.m, val_batches)
    return mom_direct_value(validation, net, z, part).value


def select_best(reports, net=None, validation=None, val_batches=10):
    """Index of the restart to keep.

    With ``validation`` every non-diverged restart is scored by
    :func:`validation_score`; otherwise by its ``selection_objective``.
    Ties go to the lowest index.
    """
    if not reports:
        raise RecoveryError("no restart reports to choose from")
    alive = [i for i, r in enumerate(reports) if not r.diverged]
    if not alive:
        raise RecoveryError(f"all {len(reports)} restarts diverged")
    if validation is not None:
        if net is None:
            raise ValueError("validation scoring needs the generator")
        scores = [validation_score(validation, net, reports[i].z_hat, val_batches) for i in alive]
    else:
        scores = [reports[i].selection_objective for i in alive]
    scores = np.asarray(scores, dtype=np.float64)
    scores = np.where(np.isfinite(scores), scores, np.inf)
    return alive[int(np.argmin(scores))]


def select_batch_count(problem, net, config, M_grid, validation, val_batches=10):
    """Run :func:`recover` for every ``M`` in ``M_grid``; keep the best on validation.

    Returns
    -------
    M_best : int
    table : list of dict
        One row per ``M`` with keys ``M``, ``score`` and ``report``.
    """
    M_grid = list(M_grid)
    if not M_grid:
        raise ValueError("M grid is empty")
    for M in M_grid:
        if problem.m % M:
            raise ValueError(f"batch count {M} does not divide training size {problem.m}")
    table = []
    for M in M_grid:
        rep = recover(problem, net, replace(config, M=int(M)), validation, val_batches)
        score = validation_score(validation, net, rep.z_hat, val_batches)
        table.append({"M": int(M), "score": score, "report": rep})
    best = int(np.argmin([row["score"] for row in table]))
    return table[best]["M"], table


def select_step_size(problem, net, config, validation, grid=DEFAULT_STEP_GRID, val_batches=10):
    """Learning-rate search scored on fresh validation measurements."""
    grid = list(grid)
    if not grid:
        raise ValueError("step-size grid is empty")
    table = []
    for lr in grid:
        try:
            rep = recover(problem, net, replace(config, step_size=float(lr)), validation, val_batches)
        except RecoveryError:
            table.append({"step_size": float(lr), "score": np.inf, "report": None})
            continue
        score = validation_score(validation, net, rep.z_hat, val_batches)
        table.append({"step_size": float(lr), "score": score, "report": rep})
    best = int(np.argmin([row["score"] for row in table]))
    return table[best]["step_size"], table
