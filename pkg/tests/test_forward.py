import math

import numpy as np
import pytest

from bdrecon.forward import (
    EmptyPatchError,
    FemSolution,
    FieldOracle,
    MeshTooLargeError,
    boundary_triple,
    build_disk_mesh,
    field_oracle,
    load_mesh,
    save_mesh,
    solve_conductivity,
)


@pytest.fixture(scope="module")
def mesh05():
    return build_disk_mesh(0.05)


@pytest.fixture(scope="module")
def manufactured(mesh05):
    return solve_conductivity(mesh05, "exp(-x1)", "exp(cos(theta))")


# --- mesh ---------------------------------------------------------------------

def test_coarse_mesh():
    m = build_disk_mesh(0.5)
    assert len(m.triangles) >= 12


def test_boundary_count(mesh05):
    assert len(mesh05.boundary_vertices) >= math.ceil(2 * math.pi / 0.05)


@pytest.mark.parametrize("h", [0.3, 0.1, 0.05])
def test_mesh_geometry(h):
    m = build_disk_mesh(h)
    assert abs(m.areas.sum() - math.pi) <= 2 * h
    assert np.all(m.areas > 0)
    assert m.max_edge_length() <= 1.5 * h
    r = np.hypot(*m.vertices.T)
    assert np.all(r <= 1 + 1e-12)
    assert np.allclose(r[m.boundary_vertices], 1.0, atol=1e-12)
    tb = np.sort(np.arctan2(m.vertices[m.boundary_vertices, 1], m.vertices[m.boundary_vertices, 0]))
    gaps = np.diff(np.concatenate([tb, tb[:1] + 2 * np.pi]))
    assert gaps.max() <= h + 1e-12


def test_mesh_conforming(mesh05):
    # every interior edge is shared by exactly two triangles, boundary edges by one
    T = mesh05.triangles
    e = np.sort(np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    assert set(counts) <= {1, 2}
    assert np.sum(counts == 1) == len(mesh05.boundary_vertices)


def test_mesh_io(tmp_path, mesh05):
    p = tmp_path / "m.txt"
    save_mesh(mesh05, p)
    m2 = load_mesh(p)
    assert np.array_equal(m2.vertices, mesh05.vertices)
    assert np.array_equal(m2.triangles, mesh05.triangles)
    assert np.array_equal(m2.boundary_vertices, mesh05.boundary_vertices)


def test_mesh_too_large():
    with pytest.raises(MeshTooLargeError):
        build_disk_mesh(0.01, max_vertices=1000)
    with pytest.raises(ValueError):
        build_disk_mesh(1.5)


# --- solve --------------------------------------------------------------------

def test_linear_exact(mesh05):
    sol = solve_conductivity(mesh05, 1.0, "cos(theta)")
    assert np.max(np.abs(sol.u - mesh05.vertices[:, 0])) < 1e-10
    assert sol.residual <= 1e-10


def test_quadratic_harmonic(mesh05):
    sol = solve_conductivity(mesh05, 1.0, "cos(2*theta)")
    x, y = mesh05.vertices.T
    assert np.max(np.abs(sol.u - (x * x - y * y))) < 5e-3


def test_manufactured_converges():
    errs = []
    for h in (0.1, 0.05):
        m = build_disk_mesh(h)
        sol = solve_conductivity(m, "exp(-x1)", "exp(cos(theta))")
        errs.append(np.max(np.abs(sol.u - np.exp(m.vertices[:, 0]))))
    assert errs[1] < errs[0]


def test_boundary_values_prescribed(manufactured):
    b = manufactured.mesh.boundary_vertices
    assert np.allclose(manufactured.u[b], np.exp(manufactured.mesh.vertices[b, 0]), atol=1e-14)


def test_callable_dirichlet(mesh05):
    sol = solve_conductivity(mesh05, 1.0, np.cos)
    assert sol.dirichlet_derivative is None
    A, N, H = sol.triples(np.array([math.pi / 6]), 2.0)
    assert A[0] == pytest.approx(0.5, abs=1e-6)


def test_maximum_principle(manufactured):
    b = manufactured.mesh.boundary_vertices
    f = manufactured.u[b]
    assert manufactured.u.min() >= f.min() - 1e-12
    assert manufactured.u.max() <= f.max() + 1e-12


def test_nonpositive_sigma(mesh05):
    with pytest.raises(ValueError):
        solve_conductivity(mesh05, "x1", "cos(theta)")


def test_energy_stationarity(manufactured):
    # perturbing interior values never lowers the discrete energy
    sol = manufactured
    m = sol.mesh
    rng = np.random.default_rng(0)
    p = m.vertices[m.triangles]

    def energy(u):
        ut = u[m.triangles]
        b = np.stack([p[:, 1, 1] - p[:, 2, 1], p[:, 2, 1] - p[:, 0, 1], p[:, 0, 1] - p[:, 1, 1]], 1)
        c = np.stack([p[:, 2, 0] - p[:, 1, 0], p[:, 0, 0] - p[:, 2, 0], p[:, 1, 0] - p[:, 0, 0]], 1)
        gx = (b * ut).sum(1) / (2 * m.areas)
        gy = (c * ut).sum(1) / (2 * m.areas)
        mids = 0.5 * (p + p[:, [1, 2, 0]])
        s = np.exp(-mids[..., 0]).mean(1)
        return 0.5 * np.sum(s * (gx * gx + gy * gy) * m.areas)

    e0 = energy(sol.u)
    for _ in range(5):
        du = np.zeros_like(sol.u)
        du[m.interior_mask] = 1e-3 * rng.standard_normal(m.interior_mask.sum())
        assert energy(sol.u + du) > e0


# --- boundary triples -----------------------------------------------------------

def test_triple_linear(mesh05):
    sol = solve_conductivity(mesh05, 1.0, "cos(theta)")
    t = boundary_triple(sol, math.pi / 6, 2.0)
    assert (t.A, t.N, t.H) == pytest.approx((0.5, math.sqrt(3) / 2, 1.0), abs=1e-8)


def test_triple_manufactured(manufactured):
    t = boundary_triple(manufactured, 0.0, 2.0)
    assert t.A == pytest.approx(0.0, abs=1e-12)
    assert t.N == pytest.approx(1.0, rel=1e-2)
    assert t.H == pytest.approx(math.e, rel=2e-2)


def test_triple_periodic(manufactured):
    a = boundary_triple(manufactured, 0.7, 2.0)
    b = boundary_triple(manufactured, 0.7 + 2 * math.pi, 2.0)
    assert (a.A, a.N, a.H) == pytest.approx((b.A, b.N, b.H), rel=1e-12)


def test_flux_balance():
    errs = []
    th = 2 * np.pi * (np.arange(512) + 0.5) / 512
    for h in (0.1, 0.05):
        sol = solve_conductivity(build_disk_mesh(h), "exp(-x1)", "exp(cos(theta))")
        _, N, _ = sol.triples(th, 2.0)
        errs.append(abs(N.mean()) / np.abs(N).mean())
    assert errs[1] < 1e-2
    assert errs[1] <= errs[0] + 1e-4


def test_empty_patch(mesh05):
    sol = solve_conductivity(mesh05, 1.0, "cos(theta)")
    tiny = FemSolution(sol.mesh, sol.u, sol.sigma, sol.dirichlet, sol.dirichlet_derivative,
                       r_patch_factor=0.1)
    with pytest.raises(EmptyPatchError):
        tiny.triples(np.array([0.3]), 2.0)


# --- analytic oracle ------------------------------------------------------------

def test_oracle_examples():
    r = math.sqrt(0.5)
    t = field_oracle("x1", 1, 2, 2, math.pi / 4)
    assert (t.A, t.N, t.H) == pytest.approx((r, r, 1.0), rel=1e-14)
    t = field_oracle("x1", 2, 3.5, 1, math.pi / 3)
    assert (t.A, t.N, t.H) == pytest.approx((math.sqrt(3) / 2, 1.0, 2.0), rel=1e-14)
    t = field_oracle("x1*x2", 1, 2, 2, 0.0)
    assert (t.A, t.N, t.H) == pytest.approx((1.0, 0.0, 1.0), abs=1e-15)


def test_oracle_truth():
    o = FieldOracle.from_strings("x1^2 - x2^2", "2 + x1", 2, 2)
    sig, n = o.truth(np.array([0.0, math.pi / 2]))
    assert sig == pytest.approx([3.0, 2.0])
    assert n == pytest.approx([2.0, -2.0])
