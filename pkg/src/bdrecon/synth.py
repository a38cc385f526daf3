"""Sampled and noisy boundary measurements."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from .expr import Expression, parse
from .forward import FemSolution, FieldOracle
from .pointwise import MeasurementTriple

__all__ = [
    "SampleSet",
    "NoiseConfig",
    "sample_boundary",
    "tangential_A",
    "add_noise",
    "write_samples",
    "read_samples",
    "FEM_OFFSET",
]

# irrational fraction of one sample step, keeps samples off the mesh vertices
FEM_OFFSET = (math.sqrt(5.0) - 1.0) / 2.0

Source = Union[FemSolution, FieldOracle]


@dataclass
class SampleSet:
    thetas: np.ndarray
    A: np.ndarray
    N: np.ndarray
    H: np.ndarray
    sigma_true: Optional[np.ndarray] = None
    n_true: Optional[np.ndarray] = None
    source: Optional[Source] = None
    q: Union[float, str] = 2.0

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float)
        m = len(self.thetas)
        for name in ("A", "N", "H"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (m,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({m},)")
            setattr(self, name, arr)
        if np.any(np.diff(self.thetas) <= 0):
            raise ValueError("sample angles must be strictly increasing")

    @property
    def M(self) -> int:
        return len(self.thetas)

    @property
    def triples(self) -> List[MeasurementTriple]:
        return [MeasurementTriple(a, n, h) for a, n, h in zip(self.A, self.N, self.H)]

    @property
    def has_truth(self) -> bool:
        return self.sigma_true is not None


def sample_boundary(source: Source, M: int, q=2.0, offset: Optional[float] = None) -> SampleSet:
    """Measure at ``theta_j = 2 pi (j + offset) / M``, counter-clockwise.

    ``offset`` is in units of the sample step; the default is an irrational
    fraction for finite element sources and 0 for analytic ones.
    """
    if M < 4:
        raise ValueError("need at least 4 samples")
    if offset is None:
        offset = FEM_OFFSET if isinstance(source, FemSolution) else 0.0
    thetas = 2.0 * np.pi * (np.arange(M) + offset) / M
    thetas = np.mod(thetas, 2.0 * np.pi)
    order = np.argsort(thetas, kind="stable")
    thetas = thetas[order]
    A, N, H = source.triples(thetas, q)
    sig, n = source.truth(thetas)
    return SampleSet(thetas, A, N, H, np.asarray(sig, float), np.asarray(n, float), source, q)


def tangential_A(f, theta, step: Optional[float] = None) -> np.ndarray:
    """``|df/dtheta|`` on the unit circle.

    Expressions are differentiated exactly.  Plain callables use central
    differences with ``step`` (default ``2 pi / 1000``).
    """
    theta = np.asarray(theta, dtype=float)
    if isinstance(f, (str, int, float, Expression)):
        return np.abs(parse(f).on_circle(theta)[1])
    h = step if step is not None else 2.0 * np.pi / 1000
    return np.abs((np.asarray(f(theta + h)) - np.asarray(f(theta - h))) / (2.0 * h))


@dataclass(frozen=True)
class NoiseConfig:
    """Relative Gaussian noise levels for angle, Neumann, and interior data.

    ``mode="std"`` uses a standard deviation of ``level * |value|`` (and
    ``level * 2 pi / M`` for angles).  ``mode="variance"`` reads the level
    literally as a variance: ``sqrt(level * |value|)``.
    """

    angular_level: float = 0.05
    neumann_level: float = 0.05
    interior_level: float = 0.05
    seed: int = 0
    mode: str = "std"

    def __post_init__(self):
        for name in ("angular_level", "neumann_level", "interior_level"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.mode not in ("std", "variance"):
            raise ValueError(f"unknown noise mode {self.mode!r}")

    @classmethod
    def none(cls, seed: int = 0) -> "NoiseConfig":
        return cls(0.0, 0.0, 0.0, seed)

    @property
    def is_zero(self) -> bool:
        return self.angular_level == 0 and self.neumann_level == 0 and self.interior_level == 0

    def spread(self, level: float, magnitude: np.ndarray) -> np.ndarray:
        magnitude = np.abs(magnitude)
        if self.mode == "std":
            return level * magnitude
        return np.sqrt(level * magnitude)


def _per_sample_normals(seed: int, M: int) -> np.ndarray:
    # one independent stream per sample so chunked or parallel runs agree
    out = np.empty((M, 3))
    for j in range(M):
        out[j] = np.random.default_rng([seed, j]).standard_normal(3)
    return out


def add_noise(s: SampleSet, cfg: NoiseConfig) -> SampleSet:
    """Perturb measurement angles, Neumann data and interior data.

    With an attached source, angular noise means the data are re-measured at
    ``theta_j + eps_j`` while the recorded angle stays ``theta_j``.  Without a
    source the angles themselves are shifted and the samples re-sorted.
    """
    if cfg.is_zero:
        return replace(s)
    M = s.M
    z = _per_sample_normals(cfg.seed, M)
    thetas, A, N, H = s.thetas.copy(), s.A.copy(), s.N.copy(), s.H.copy()
    sig_true = None if s.sigma_true is None else s.sigma_true.copy()
    n_true = None if s.n_true is None else s.n_true.copy()

    if cfg.angular_level > 0:
        eps = cfg.spread(cfg.angular_level, 2.0 * np.pi / M) * z[:, 0]
        if s.source is not None:
            A, N, H = (np.asarray(v, float) for v in s.source.triples(thetas + eps, s.q))
        else:
            thetas = np.mod(thetas + eps, 2.0 * np.pi)
            order = np.argsort(thetas, kind="stable")
            thetas, A, N, H = thetas[order], A[order], N[order], H[order]
            if sig_true is not None:
                sig_true = sig_true[order]
            if n_true is not None:
                n_true = n_true[order]
            z = z[order]
    if cfg.neumann_level > 0:
        N = N + cfg.spread(cfg.neumann_level, N) * z[:, 1]
    if cfg.interior_level > 0:
        H = np.maximum(0.0, H + cfg.spread(cfg.interior_level, H) * z[:, 2])
    return SampleSet(thetas, A, N, H, sig_true, n_true, s.source, s.q)


_FIELDS = ["theta", "A", "N", "H"]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_samples(s: SampleSet, path: Union[str, Path]) -> None:
    """CSV with header ``theta,A,N,H[,sigma_true,n_true]`` at full precision."""
    header = list(_FIELDS)
    cols = [s.thetas, s.A, s.N, s.H]
    if s.sigma_true is not None:
        header.append("sigma_true")
        cols.append(s.sigma_true)
        header.append("n_true")
        cols.append(s.n_true if s.n_true is not None else np.full(s.M, np.nan))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])


def read_samples(path: Union[str, Path], q=2.0) -> SampleSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if header[:4] != _FIELDS:
            raise ValueError(f"{path}: expected header starting with {','.join(_FIELDS)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
    if not rows:
        raise ValueError(f"{path}: no samples")
    data = np.array(rows)
    truth = data[:, 4] if "sigma_true" in header else None
    n_true = data[:, 5] if "n_true" in header else None
    return SampleSet(data[:, 0], data[:, 1], data[:, 2], data[:, 3], truth, n_true, None, q)
