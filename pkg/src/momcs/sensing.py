"""Synthetic measurement problems y = A G(z*) + eta with Huber contamination."""

import json
import os
import struct
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .generator import forward

ARRAY_MAGIC = b"GNA1"


def measure(A, x):
    """``A x`` for one signal or a stack ``(R, n)`` of signals.

    Each signal goes through the same matrix-vector product, so a residual
    computed here at the true signal of a noiseless problem is exactly zero
    no matter how many signals are stacked.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return A @ x
    return np.stack([A @ xi for xi in x.reshape(-1, x.shape[-1])]).reshape(*x.shape[:-1], A.shape[0])


@dataclass(frozen=True)
class Gaussian:
    """Standard normal entries."""

    def tag(self):
        return "gaussian"


@dataclass(frozen=True)
class StudentT:
    """Student-t entries rescaled to unit variance (needs ``dof > 2``)."""

    dof: float

    def __post_init__(self):
        if not self.dof > 2:
            raise ValueError(f"Student-t needs dof > 2 for finite variance, got {self.dof}")

    def tag(self):
        return f"student_t({self.dof:g})"


def parse_ensemble(text):
    """Inverse of ``ensemble.tag()``; also accepts ``t4`` / ``student_t:4``."""
    s = str(text).strip().lower().replace(" ", "")
    if s in ("gaussian", "normal"):
        return Gaussian()
    for prefix in ("student_t(", "studentt(", "t("):
        if s.startswith(prefix) and s.endswith(")"):
            return StudentT(float(s[len(prefix):-1]))
    for prefix in ("student_t:", "studentt:", "t"):
        if s.startswith(prefix):
            return StudentT(float(s[len(prefix):]))
    raise ValueError(f"unknown ensemble {text!r}")


@dataclass(frozen=True)
class NoiseSpec:
    kind: object = field(default_factory=Gaussian)
    sigma: float = 0.0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class CorruptionSpec:
    """How the selected rows are overwritten.

    ``target`` is ``"both"`` (random-sign A row and y = -1), ``"y"`` or
    ``"A"``.  A ``callback(A, y, rows, rng)`` mutating ``A`` and ``y`` in place
    replaces the built-in rule when given.
    """

    target: str = "both"
    y_value: float = -1.0
    callback: Optional[Callable] = None

    def __post_init__(self):
        if self.target not in ("both", "y", "A"):
            raise ValueError(f"corruption target must be 'both', 'y' or 'A', got {self.target!r}")


@dataclass
class SensingProblem:
    A: np.ndarray
    y: np.ndarray
    z_star: np.ndarray
    x_star: np.ndarray
    sigma: float = 0.0
    epsilon: float = 0.0
    corrupted_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    ensemble: object = field(default_factory=Gaussian)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: Optional[int] = None

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.A.shape[1]

    def subset(self, rows):
        """Problem restricted to ``rows`` (corruption bookkeeping re-indexed)."""
        rows = np.asarray(rows, dtype=np.int64)
        pos = {int(r): i for i, r in enumerate(rows)}
        kept = np.array(
            sorted(pos[int(r)] for r in self.corrupted_rows if int(r) in pos), dtype=np.int64
        )
        return replace(self, A=self.A[rows].copy(), y=self.y[rows].copy(), corrupted_rows=kept)


def student_t(rng, dof, size):
    """Unit-variance Student-t draws, built as N(0,1) / sqrt(chi2(dof)/dof)."""
    t = rng.standard_normal(size) / np.sqrt(rng.chisquare(dof, size) / dof)
    return t * np.sqrt((dof - 2.0) / dof)


def _draw(rng, ensemble, size):
    if isinstance(ensemble, Gaussian):
        return rng.standard_normal(size)
    if isinstance(ensemble, StudentT):
        return student_t(rng, ensemble.dof, size)
    raise TypeError(f"unsupported ensemble {ensemble!r}")


def sample_measurement_matrix(m, n, ensemble, seed):
    """i.i.d. unit-variance entries, so rows are isotropic."""
    if m < 1 or n < 1:
        raise ValueError(f"matrix dims must be >= 1, got {m}x{n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _draw(rng, ensemble, (m, n))


def sample_noise(noise, m, seed):
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return noise.sigma * _draw(rng, noise.kind, m)


def apply_paper_corruption(A, y, rows, rng, corruption=None):
    """Overwrite ``rows`` in place: random-sign rows of A, y fixed to -1."""
    corruption = corruption or CorruptionSpec()
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size and (rows.min() < 0 or rows.max() >= A.shape[0]):
        raise IndexError(f"corruption rows out of range [0, {A.shape[0]})")
    if rows.size == 0:
        return A, y
    if corruption.callback is not None:
        corruption.callback(A, y, rows, rng)
        return A, y
    if corruption.target in ("both", "A"):
        A[rows] = rng.choice(np.array([-1.0, 1.0]), size=(rows.size, A.shape[1]))
    if corruption.target in ("both", "y"):
        y[rows] = corruption.y_value
    return A, y


def synthesize(
    net,
    z_star,
    m,
    ensemble=None,
    noise=None,
    epsilon=0.0,
    corruption=None,
    seed=0,
):
    """Draw a problem from (1 - eps) P + eps Q with exactly floor(eps*m) outliers.

    The matrix, noise and corruption use independent child streams of
    ``seed``, so changing ``epsilon`` leaves the clean part of A untouched.
    """
    ensemble = ensemble or Gaussian()
    noise = noise or NoiseSpec()
    if not 0 <= epsilon < 1:
        raise ValueError(f"epsilon must lie in [0, 1), got {epsilon}")
    z_star = np.asarray(z_star, dtype=np.float64)
    x_star = forward(net, z_star)
    if not np.all(np.isfinite(x_star)):
        raise ValueError("G(z*) has non-finite entries")
    if isinstance(seed, np.random.Generator):
        rng_a, rng_noise, rng_corrupt = seed.spawn(3)
    else:
        ss = np.random.SeedSequence(seed)
        rng_a, rng_noise, rng_corrupt = (np.random.default_rng(s) for s in ss.spawn(3))
    A = sample_measurement_matrix(m, net.output_dim, ensemble, rng_a)
    y = measure(A, x_star) + sample_noise(noise, m, rng_noise)
    n_bad = int(np.floor(epsilon * m))
    rows = np.sort(rng_corrupt.choice(m, size=n_bad, replace=False)).astype(np.int64)
    apply_paper_corruption(A, y, rows, rng_corrupt, corruption)
    if not np.all(np.isfinite(A)):
        raise ValueError("measurement matrix has non-finite entries")
    return SensingProblem(
        A=A,
        y=y,
        z_star=z_star.copy(),
        x_star=x_star,
        sigma=float(noise.sigma),
        epsilon=float(epsilon),
        corrupted_rows=rows,
        ensemble=ensemble,
        noise=noise,
        seed=seed if isinstance(seed, (int, np.integer)) else None,
    )


def split_validation(problem, n_val, seed=0):
    """Random (train, validation) split of the rows of ``problem``."""
    if not 0 < n_val < problem.m:
        raise ValueError(f"validation size must lie in (0, {problem.m}), got {n_val}")
    perm = np.random.default_rng(seed).permutation(problem.m)
    return problem.subset(np.sort(perm[n_val:])), problem.subset(np.sort(perm[:n_val]))


def write_array(path, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(ARRAY_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_array(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != ARRAY_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    (ndim,) = struct.unpack_from("<I", data, 4)
    shape = struct.unpack_from(f"<{ndim}I", data, 8)
    off = 8 + 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    if len(data) - off != 8 * count:
        raise ValueError(f"{path}: payload holds {(len(data) - off) // 8} values, expected {count}")
    return np.frombuffer(data, dtype="<f8", offset=off).astype(np.float64).reshape(shape)


def save_problem(problem, directory):
    os.makedirs(directory, exist_ok=True)
    write_array(os.path.join(directory, "A.bin"), problem.A)
    write_array(os.path.join(directory, "y.bin"), problem.y)
    write_array(os.path.join(directory, "z_star.bin"), problem.z_star)
    write_array(os.path.join(directory, "x_star.bin"), problem.x_star)
    meta = {
        "m": problem.m,
        "n": problem.n,
        "sigma": problem.sigma,
        "epsilon": problem.epsilon,
        "ensemble": problem.ensemble.tag(),
        "noise": problem.noise.kind.tag(),
        "seed": problem.seed,
        "corrupted_rows": [int(r) for r in problem.corrupted_rows],
    }
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)


def load_problem(directory):
    with open(os.path.join(directory, "meta.json")) as fh:
        meta = json.load(fh)
    A = read_array(os.path.join(directory, "A.bin"))
    if A.shape != (meta["m"], meta["n"]):
        raise ValueError(f"A has shape {A.shape}, metadata says {(meta['m'], meta['n'])}")
    return SensingProblem(
        A=A,
        y=read_array(os.path.join(directory, "y.bin")),
        z_star=read_array(os.path.join(directory, "z_star.bin")),
        x_star=read_array(os.path.join(directory, "x_star.bin")),
        sigma=float(meta["sigma"]),
        epsilon=float(meta["epsilon"]),
        corrupted_rows=np.asarray(meta["corrupted_rows"], dtype=np.int64),
        ensemble=parse_ensemble(meta["ensemble"]),
        noise=NoiseSpec(parse_ensemble(meta["noise"]), float(meta["sigma"])),
        seed=meta["seed"],
    )
