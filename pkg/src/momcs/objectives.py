"""Batch partitions, per-batch squared losses and the robust aggregates built on them.

All losses are normalised per sample: the ERM value is ``||A G(z) - y||^2 / m``,
which is exactly the batch loss of a single batch holding every row.

Median convention: for ``M`` values the median is the order statistic of rank
``(M + 1) // 2`` (the lower median for even ``M``), so it is always attained
by an actual batch.  Ties go to the lowest batch index.
"""

from dataclasses import dataclass

import numpy as np

from .generator import forward, forward_cached, latent_gradient
from .sensing import measure


@dataclass(frozen=True)
class BatchPartition:
    """``batches[j]`` holds the row indices of batch ``j``; shape ``(M, b)``."""

    batches: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.batches, dtype=np.int64)
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
            raise ValueError(f"batches must be a non-empty (M, b) array, got shape {b.shape}")
        if np.unique(b).size != b.size:
            raise ValueError("batches must be disjoint")
        if b.min() < 0:
            raise ValueError("negative row index in partition")
        b.setflags(write=False)
        object.__setattr__(self, "batches", b)

    @property
    def M(self):
        return self.batches.shape[0]

    @property
    def b(self):
        return self.batches.shape[1]

    def __len__(self):
        return self.M

    def __iter__(self):
        return iter(self.batches)


@dataclass(frozen=True)
class MedianSelection:
    batch_index: int
    value: float


def make_partition(m, M, seed=None, shuffle=False):
    """Split ``range(m)`` into ``M`` disjoint batches of size ``m // M``.

    ``M`` must divide ``m``; no sample is silently dropped.
    """
    m, M = int(m), int(M)
    if M < 1:
        raise ValueError(f"batch count must be >= 1, got {M}")
    if m % M:
        raise ValueError(f"batch count {M} does not divide sample count {m}")
    idx = np.arange(m)
    if shuffle:
        idx = np.random.default_rng(seed).permutation(m)
    return BatchPartition(idx.reshape(M, m // M))


def median_index(values):
    """Index of the lower median of ``values`` along the last axis.

    Works on ``(M,)`` or ``(R, M)`` arrays; returns an int or an ``(R,)`` array.
    """
    v = np.asarray(values, dtype=np.float64)
    M = v.shape[-1]
    med = np.sort(v, axis=-1)[..., (M + 1) // 2 - 1]
    hit = v == med[..., None]
    return np.argmax(hit, axis=-1)


def upper_median_index(values):
    """Counterpart of :func:`median_index` taking rank ``M // 2 + 1``."""
    v = np.asarray(values, dtype=np.float64)
    M = v.shape[-1]
    med = np.sort(v, axis=-1)[..., M // 2]
    return np.argmax(v == med[..., None], axis=-1)


def lower_median(values):
    v = np.asarray(values, dtype=np.float64)
    out = np.take_along_axis(v, np.expand_dims(median_index(v), -1), -1)[..., 0]
    return float(out) if out.ndim == 0 else out


def residuals(problem, net, z):
    """``A G(z) - y``; shape ``(m,)`` or ``(R, m)`` for stacked latents."""
    return measure(problem.A, forward(net, z)) - problem.y


def batch_losses_from_residual(r, partition):
    """Per-batch mean squared residual, shape ``(..., M)``."""
    return np.mean(r[..., partition.batches] ** 2, axis=-1)


def batch_loss(problem, net, z, batch):
    """``(1/b) ||A_B G(z) - y_B||^2`` for one batch of row indices."""
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size == 0:
        raise ValueError("batch must be non-empty")
    r = residuals(problem, net, z)[..., batch]
    return float(np.mean(r**2))


def batch_losses(problem, net, z, partition):
    return batch_losses_from_residual(residuals(problem, net, z), partition)


def _select(g):
    j = int(median_index(g))
    return MedianSelection(j, float(g[j]))


def mom_tournament_value(problem, net, z, z_prime, partition):
    """Median over batches of ``l_j(z) - l_j(z')`` (same partition for both)."""
    g = batch_losses(problem, net, z, partition) - batch_losses(problem, net, z_prime, partition)
    return _select(g)


def mom_direct_value(problem, net, z, partition):
    """Median over batches of ``l_j(z)``."""
    return _select(batch_losses(problem, net, z, partition))


def erm_value(problem, net, z):
    return float(np.mean(residuals(problem, net, z) ** 2))


def l1_value(problem, net, z):
    return float(np.mean(np.abs(residuals(problem, net, z))))


def trimmed_value(problem, net, z, trim_fraction):
    """Mean of the ``floor(t m)`` smallest squared residuals.

    Returns
    -------
    value : float
    kept : ndarray of int
        Indices of the retained samples, sorted.
    """
    if not 0 < trim_fraction <= 1:
        raise ValueError(f"trim fraction must lie in (0, 1], got {trim_fraction}")
    sq = residuals(problem, net, z) ** 2
    keep = int(np.floor(trim_fraction * sq.size))
    if keep == 0:
        raise ValueError(f"trim fraction {trim_fraction} keeps no sample out of {sq.size}")
    kept = np.sort(np.argsort(sq, kind="stable")[:keep])
    return float(np.mean(sq[kept])), kept


def objective_gradient(problem, net, z, index_set, sign=1, loss="l2"):
    """Latent gradient of the mean loss over ``index_set``, times ``sign``.

    ``loss="l2"`` differentiates ``(1/|S|) sum (a_i.G(z) - y_i)^2``;
    ``loss="l1"`` the mean absolute residual with ``sign(0) = 0``.
    """
    idx = np.asarray(index_set, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ValueError("index set must be non-empty")
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    x, ws = forward_cached(net, z)
    A = problem.A[idx]
    r = (measure(problem.A, x) - problem.y)[idx]
    if loss == "l2":
        w = (2.0 / idx.size) * r
    elif loss == "l1":
        w = np.sign(r) / idx.size
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return sign * latent_gradient(net, z, w @ A, ws)
