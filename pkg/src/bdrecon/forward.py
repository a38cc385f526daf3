"""Linear conductivity equation on the unit disk and analytic boundary data.

The finite element part solves ``div(sigma grad u) = 0`` with Dirichlet data
using piecewise-linear elements on a ring-based Delaunay triangulation.
Boundary gradients are recovered by a local quadratic least-squares fit,
which avoids the O(1) noise of raw elementwise gradients at the boundary.

The field oracle evaluates boundary data directly from an analytic potential,
for any exponents ``p`` and ``q``, without solving a PDE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import Delaunay, cKDTree

from .expr import Expression, parse
from .pointwise import MeasurementTriple

__all__ = [
    "DiskMesh",
    "FemSolution",
    "FieldOracle",
    "MeshTooLargeError",
    "EmptyPatchError",
    "build_disk_mesh",
    "solve_conductivity",
    "boundary_triple",
    "field_oracle",
    "save_mesh",
    "load_mesh",
]

MAX_VERTICES = 2_000_000

FieldLike = Union[str, float, Expression]


class MeshTooLargeError(MemoryError):
    pass


class EmptyPatchError(ValueError):
    pass


@dataclass(frozen=True)
class DiskMesh:
    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3), counter-clockwise
    boundary_vertices: np.ndarray  # cyclic, increasing angle
    h: float

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def interior_mask(self) -> np.ndarray:
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[self.boundary_vertices] = False
        return mask

    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def max_edge_length(self) -> float:
        e = self.edges()
        return float(np.max(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)))

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.vertices)


def build_disk_mesh(h: float, max_vertices: int = MAX_VERTICES) -> DiskMesh:
    """Quasi-uniform triangulation of the unit disk with target edge length ``h``.

    Vertices lie on concentric rings of radius ``k/K``; ring ``k`` carries
    ``ceil(2 pi r_k / h)`` equally spaced points, alternate rings are rotated
    by half a step, and the point set is Delaunay-triangulated.
    """
    if not (0.0 < h < 1.0):
        raise ValueError(f"mesh size must satisfy 0 < h < 1, got {h}")
    n_rings = int(math.ceil(1.0 / h))
    counts = [max(6, int(math.ceil(2.0 * math.pi * k / n_rings / h)))
              for k in range(1, n_rings + 1)]
    total = 1 + sum(counts)
    if total > max_vertices:
        raise MeshTooLargeError(
            f"h={h} needs {total} vertices, above the cap of {max_vertices}"
        )
    pts = [np.zeros((1, 2))]
    for k, m in enumerate(counts, start=1):
        r = k / n_rings
        shift = 0.5 * (k % 2)
        ang = 2.0 * np.pi * (np.arange(m) + shift) / m if k < n_rings else \
            2.0 * np.pi * np.arange(m) / m
        pts.append(np.column_stack([r * np.cos(ang), r * np.sin(ang)]))
    vertices = np.concatenate(pts)
    n_b = counts[-1]
    boundary = np.arange(total - n_b, total)

    tri = Delaunay(vertices).simplices.astype(np.int64)
    p = vertices[tri]
    cross = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
             - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    flip = cross < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    keep = np.abs(cross) > 1e-14 * h * h
    return DiskMesh(vertices, tri[keep], boundary, h)


def save_mesh(mesh: DiskMesh, path: Union[str, Path]) -> None:
    """Plain-text dump: header line, vertices, triangles, boundary indices."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"diskmesh {mesh.h!r} {len(mesh.vertices)} {len(mesh.triangles)} "
                 f"{len(mesh.boundary_vertices)}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")
        fh.write(" ".join(str(i) for i in mesh.boundary_vertices) + "\n")


def load_mesh(path: Union[str, Path]) -> DiskMesh:
    lines = Path(path).read_text().splitlines()
    tag, h, nv, nt, nb = lines[0].split()
    if tag != "diskmesh":
        raise ValueError(f"{path}: not a disk mesh file")
    nv, nt, nb = int(nv), int(nt), int(nb)
    verts = np.array([[float(v) for v in ln.split()] for ln in lines[1:1 + nv]])
    tris = np.array([[int(v) for v in ln.split()] for ln in lines[1 + nv:1 + nv + nt]],
                    dtype=np.int64)
    bnd = np.array([int(v) for v in lines[1 + nv + nt].split()], dtype=np.int64)
    if len(bnd) != nb:
        raise ValueError(f"{path}: boundary count mismatch")
    return DiskMesh(verts, tris, bnd, float(h))


def _as_field(f: FieldLike) -> Expression:
    return parse(f)


def _boundary_function(f) -> Tuple[Callable[[np.ndarray], np.ndarray], Optional[Callable]]:
    """Return ``(value(theta), derivative(theta) or None)`` for Dirichlet data."""
    if isinstance(f, (str, int, float, Expression)):
        ex = parse(f)
        return (lambda th: ex.on_circle(th)[0]), (lambda th: ex.on_circle(th)[1])
    return f, None


@dataclass(frozen=True)
class FemSolution:
    mesh: DiskMesh
    u: np.ndarray
    sigma: Expression
    dirichlet: Callable[[np.ndarray], np.ndarray]
    dirichlet_derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None
    residual: float = 0.0
    r_patch_factor: float = 3.0

    def gradient_at_boundary(self, theta: np.ndarray) -> np.ndarray:
        """Least-squares gradient recovery at ``(cos theta, sin theta)``.

        A full quadratic is fitted to the nodal values inside a disk of radius
        ``r_patch_factor * h`` around each point.
        """
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        pts = np.column_stack([np.cos(theta), np.sin(theta)])
        r = self.r_patch_factor * self.mesh.h
        grads = np.empty((len(theta), 2))
        for i, (x0, nbrs) in enumerate(zip(pts, self.mesh.tree.query_ball_point(pts, r))):
            if len(nbrs) < 6:
                raise EmptyPatchError(
                    f"patch radius {r:.3g} holds {len(nbrs)} vertices at theta={theta[i]:.6g}"
                )
            d = (self.mesh.vertices[nbrs] - x0) / r
            V = np.column_stack([np.ones(len(d)), d[:, 0], d[:, 1],
                                 d[:, 0] ** 2, d[:, 0] * d[:, 1], d[:, 1] ** 2])
            coef, *_ = np.linalg.lstsq(V, self.u[nbrs], rcond=None)
            grads[i] = coef[1:3] / r
        return grads

    def triples(self, theta, q) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorised ``(A, N, H)`` at angles ``theta`` (p = 2)."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        grad = self.gradient_at_boundary(theta)
        c, s = np.cos(theta), np.sin(theta)
        n = grad[:, 0] * c + grad[:, 1] * s
        if self.dirichlet_derivative is not None:
            t = np.asarray(self.dirichlet_derivative(theta), dtype=float)
        else:
            t = -grad[:, 0] * s + grad[:, 1] * c
        sig = np.broadcast_to(self.sigma(c, s), theta.shape)
        qv = np.broadcast_to(parse(q)(c, s), theta.shape)
        A = np.abs(t)
        N = sig * n
        H = sig * (A * A + n * n) ** (qv / 2.0)
        return A, N, H

    def truth(self, theta) -> Tuple[np.ndarray, np.ndarray]:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        c, s = np.cos(theta), np.sin(theta)
        sig = np.broadcast_to(self.sigma(c, s), theta.shape).astype(float)
        grad = self.gradient_at_boundary(theta)
        return sig, grad[:, 0] * c + grad[:, 1] * s


def solve_conductivity(mesh: DiskMesh, sigma: FieldLike, f, rtol: float = 1e-10) -> FemSolution:
    """Piecewise-linear Galerkin solution of ``div(sigma grad u) = 0``, ``u = f`` on the circle.

    ``f`` is either an expression (in ``theta``, ``x1``, ``x2``) or a callable
    of the boundary angle.
    """
    sig = _as_field(sigma)
    fval, fder = _boundary_function(f)
    V, T = mesh.vertices, mesh.triangles
    p = V[T]
    # edge-midpoint quadrature for the coefficient
    mids = 0.5 * (p + p[:, [1, 2, 0]])
    sq = np.broadcast_to(sig(mids[..., 0], mids[..., 1]), mids.shape[:2])
    if not np.all(np.isfinite(sq)) or np.any(sq <= 0.0):
        raise ValueError("conductivity must be positive and finite at all quadrature points")
    sbar = sq.mean(axis=1)

    area = mesh.areas
    # gradients of barycentric basis functions
    b = np.stack([p[:, 1, 1] - p[:, 2, 1], p[:, 2, 1] - p[:, 0, 1], p[:, 0, 1] - p[:, 1, 1]], axis=1)
    c = np.stack([p[:, 2, 0] - p[:, 1, 0], p[:, 0, 0] - p[:, 2, 0], p[:, 1, 0] - p[:, 0, 0]], axis=1)
    ke = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :])
    ke *= (sbar / (4.0 * area))[:, None, None]
    rows = np.repeat(T, 3, axis=1).ravel()
    cols = np.tile(T, (1, 3)).ravel()
    nv = mesh.n_vertices
    K = sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(nv, nv))

    bidx = mesh.boundary_vertices
    theta_b = np.arctan2(V[bidx, 1], V[bidx, 0])
    u = np.zeros(nv)
    u[bidx] = np.asarray(fval(theta_b), dtype=float)
    inner = np.flatnonzero(mesh.interior_mask)
    Kii = K[inner][:, inner].tocsc()
    rhs = -K[inner][:, bidx] @ u[bidx]
    u[inner] = spla.spsolve(Kii, rhs)
    res = np.linalg.norm(Kii @ u[inner] - rhs)
    scale = max(np.linalg.norm(rhs), 1e-300)
    rel = res / scale
    if rel > rtol:
        x, info = spla.cg(Kii, rhs, x0=u[inner], rtol=rtol * 0.1, maxiter=10 * len(inner))
        u[inner] = x
        rel = np.linalg.norm(Kii @ x - rhs) / scale
    return FemSolution(mesh, u, sig, fval, fder, residual=float(rel))


def boundary_triple(sol: FemSolution, theta: float, q: float) -> MeasurementTriple:
    A, N, H = sol.triples(np.array([theta]), q)
    return MeasurementTriple(float(A[0]), float(N[0]), float(H[0]))


@dataclass(frozen=True)
class FieldOracle:
    """Analytic source: potential ``u(x1, x2)`` with conductivity and exponents."""

    u: Expression
    sigma: Expression
    p: Expression = field(default_factory=lambda: parse(2.0))
    q: Expression = field(default_factory=lambda: parse(2.0))

    @classmethod
    def from_strings(cls, u: FieldLike, sigma: FieldLike = 1.0,
                     p: FieldLike = 2.0, q: FieldLike = 2.0) -> "FieldOracle":
        return cls(parse(u), parse(sigma), parse(p), parse(q))

    def _fields(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        c, s = np.cos(theta), np.sin(theta)
        _, g = self.u.value_and_grad(c, s)
        g = np.broadcast_to(g, (2,) + theta.shape)
        n = g[0] * c + g[1] * s
        t = -g[0] * s + g[1] * c
        shape = theta.shape
        sig = np.broadcast_to(self.sigma(c, s), shape).astype(float)
        p = np.broadcast_to(self.p(c, s), shape).astype(float)
        q = np.broadcast_to(self.q(c, s), shape).astype(float)
        return n, t, sig, p, q

    def triples(self, theta, q=None):
        n, t, sig, p, qv = self._fields(theta)
        if q is not None:
            qv = np.broadcast_to(np.asarray(q, dtype=float), n.shape)
        A = np.abs(t)
        r2 = A * A + n * n
        with np.errstate(divide="ignore", invalid="ignore"):
            N = np.where(r2 > 0, sig * r2 ** ((p - 2.0) / 2.0) * n, 0.0)
            H = np.where(r2 > 0, sig * r2 ** (qv / 2.0), 0.0)
        return A, N, H

    def truth(self, theta):
        n, _, sig, _, _ = self._fields(theta)
        return sig, n


def field_oracle(u_field: FieldLike, sigma: FieldLike, p: FieldLike, q: FieldLike,
                 theta: float) -> MeasurementTriple:
    A, N, H = FieldOracle.from_strings(u_field, sigma, p, q).triples(np.array([theta]))
    return MeasurementTriple(float(A[0]), float(N[0]), float(H[0]))
