"""Meshes, assembly against hand matrices and a finite-difference oracle."""

import numpy as np
import pytest

from degenergy.fem import (
    ManufacturedCase,
    assemble,
    build_interval_mesh,
    build_unit_square_mesh,
    case_cosine_1d,
    case_cosine_2d,
    error_norms,
    interpolate,
    mesh_to_text,
    write_mesh,
)
from degenergy.formulations import solve_projected
from degenergy.linalg import spmv
from degenergy.problem_core import is_consistent, project_perp


# ---------------------------------------------------------------------------
# mesh construction


def test_interval_mesh_small():
    mesh = build_interval_mesh(2)
    assert np.allclose(mesh.nodes, [0.0, 0.5, 1.0])
    assert mesh.h == 0.5
    assert mesh.n_elements == 2
    assert mesh.degree == 1


def test_interval_mesh_spacing():
    mesh = build_interval_mesh(4)
    assert mesh.h == 0.25
    assert mesh.n_nodes == 5
    assert np.allclose(np.diff(mesh.nodes), 0.25)


def test_interval_mesh_quadratic():
    mesh = build_interval_mesh(2, degree=2)
    assert mesh.n_nodes == 5
    assert mesh.n_elements == 2
    assert np.allclose(mesh.nodes, np.linspace(0.0, 1.0, 5))
    # each element row lists (left vertex, right vertex, midpoint)
    assert mesh.elements.shape == (2, 3)
    left, right, mid = mesh.elements[0]
    assert mesh.nodes[mid] == pytest.approx(0.5 * (mesh.nodes[left] + mesh.nodes[right]))


def test_square_mesh_counts():
    mesh = build_unit_square_mesh(2)
    assert mesh.n_nodes == 9
    assert mesh.n_elements == 8
    bigger = build_unit_square_mesh(4)
    assert bigger.n_nodes == 25
    assert bigger.n_elements == 32


def test_square_mesh_h_is_diagonal_length():
    m2 = build_unit_square_mesh(2)
    m4 = build_unit_square_mesh(4)
    assert m2.h == pytest.approx(np.sqrt(2.0) / 2.0)
    assert m4.h == pytest.approx(m2.h / 2.0)


def test_square_mesh_triangles_positively_oriented():
    mesh = build_unit_square_mesh(3)
    pts = mesh.nodes
    for tri in mesh.elements:
        a, b, c = pts[tri]
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        assert cross > 0.0
        assert cross == pytest.approx(2.0 * (0.5 / 9.0))  # twice the area 1/(2 n^2)


def test_mesh_builders_reject_tiny_n():
    with pytest.raises(ValueError):
        build_interval_mesh(1)
    with pytest.raises(ValueError):
        build_unit_square_mesh(1)


def test_square_mesh_rejects_quadratic():
    with pytest.raises(ValueError):
        build_unit_square_mesh(4, degree=2)


def test_assemble_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        assemble(build_interval_mesh(4), case_cosine_2d())


# ---------------------------------------------------------------------------
# assembled matrices vs hand computation


def test_stiffness_and_mass_hand_values_1d():
    # two linear elements of size 1/2
    problem = assemble(build_interval_mesh(2), case_cosine_1d())
    K = np.array([[2.0, -2.0, 0.0], [-2.0, 4.0, -2.0], [0.0, -2.0, 2.0]])
    h = 0.5
    Mass = (h / 6.0) * np.array([[2.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 2.0]])
    assert np.allclose(problem.A.toarray(), K, atol=1e-14)
    assert np.allclose(problem.M.toarray(), Mass, atol=1e-14)
    # the norm Gram matrix carries both parts
    assert np.allclose(problem.H_gram.toarray(), K + Mass, atol=1e-14)


def test_mass_matrix_total_is_domain_measure():
    for builder, n in ((build_interval_mesh, 8), (build_unit_square_mesh, 4)):
        problem = assemble(
            builder(n),
            case_cosine_1d() if builder is build_interval_mesh else case_cosine_2d(),
        )
        total = np.ones(problem.n) @ spmv(problem.M, np.ones(problem.n))
        assert abs(total - 1.0) <= 1e-12


def test_stiffness_annihilates_constants():
    for problem in (
        assemble(build_interval_mesh(16), case_cosine_1d()),
        assemble(build_interval_mesh(8, degree=2), case_cosine_1d()),
        assemble(build_unit_square_mesh(6), case_cosine_2d()),
    ):
        ones = np.ones(problem.n)
        scale = np.abs(problem.A.toarray()).max()
        assert np.abs(spmv(problem.A, ones)).max() <= 1e-12 * scale


def test_assembly_is_bitwise_symmetric():
    for problem in (
        assemble(build_interval_mesh(17), case_cosine_1d()),
        assemble(build_interval_mesh(9, degree=2), case_cosine_1d()),
        assemble(build_unit_square_mesh(5), case_cosine_2d()),
    ):
        dense = problem.A.toarray()
        assert np.array_equal(dense, dense.T)
        dense_m = problem.M.toarray()
        assert np.array_equal(dense_m, dense_m.T)


def test_zero_forcing_gives_zero_load():
    quiet = ManufacturedCase(
        name="quiet",
        dim=1,
        exact_u=lambda x: np.zeros_like(x),
        exact_grad=lambda x: np.zeros_like(x),
        forcing_f=lambda x: np.zeros_like(x),
    )
    problem = assemble(build_interval_mesh(6), quiet)
    assert np.abs(problem.F).max() == 0.0


def test_assembled_load_is_consistent():
    for problem in (
        assemble(build_interval_mesh(32), case_cosine_1d()),
        assemble(build_interval_mesh(16, degree=2), case_cosine_1d()),
        assemble(build_unit_square_mesh(8), case_cosine_2d()),
    ):
        assert is_consistent(problem)


# ---------------------------------------------------------------------------
# the discrete operator solves the PDE: finite-difference oracle


def test_solution_satisfies_pde_pointwise_1d():
    """Compare the discrete solution against -u'' = f via central differences."""
    mesh = build_interval_mesh(256)
    problem = assemble(mesh, case_cosine_1d())
    u = solve_projected(problem).u
    x = mesh.nodes
    h = mesh.h
    second = (u[:-2] - 2.0 * u[1:-1] + u[2:]) / (h * h)
    residual = -second - case_cosine_1d().forcing_f(x[1:-1])
    assert np.abs(residual).max() <= 1e-2  # O(h^2) truncation at h = 1/256


def test_case_gradients_match_finite_differences():
    d = 1e-6
    c1 = case_cosine_1d()
    x = np.linspace(0.05, 0.95, 37)
    fd = (c1.exact_u(x + d) - c1.exact_u(x - d)) / (2.0 * d)
    assert np.abs(fd - c1.exact_grad(x)).max() <= 1e-6

    c2 = case_cosine_2d()
    y = np.linspace(0.07, 0.93, 37)
    fdx = (c2.exact_u(x + d, y) - c2.exact_u(x - d, y)) / (2.0 * d)
    fdy = (c2.exact_u(x, y + d) - c2.exact_u(x, y - d)) / (2.0 * d)
    gx, gy = c2.exact_grad(x, y)
    assert np.abs(fdx - gx).max() <= 1e-6
    assert np.abs(fdy - gy).max() <= 1e-6


def test_cases_have_zero_mean():
    c1 = case_cosine_1d()
    xs, wts = np.polynomial.legendre.leggauss(20)
    xs = 0.5 * (xs + 1.0)
    wts = 0.5 * wts
    assert abs(wts @ c1.exact_u(xs)) <= 1e-14
    c2 = case_cosine_2d()
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    W = np.outer(wts, wts)
    assert abs(np.sum(W * c2.exact_u(X, Y))) <= 1e-14


# ---------------------------------------------------------------------------
# interpolation and error measurement


def test_interpolate_constants_and_coordinates():
    mesh = build_interval_mesh(4)
    assert np.allclose(interpolate(mesh, lambda x: np.ones_like(x)), 1.0)
    assert np.allclose(interpolate(mesh, lambda x: x), mesh.nodes)


def test_interpolate_cosine_coarse():
    mesh = build_interval_mesh(2)
    vals = interpolate(mesh, case_cosine_1d().exact_u)
    assert np.allclose(vals, [1.0, 0.0, -1.0], atol=1e-15)


def test_error_of_exact_interpolant_shrinks_at_known_rates():
    case = case_cosine_1d()
    h1_errs, l2_errs = [], []
    for n in (16, 32):
        mesh = build_interval_mesh(n)
        u_h = interpolate(mesh, case.exact_u)
        h1, l2 = error_norms(mesh, u_h, case)
        h1_errs.append(h1)
        l2_errs.append(l2)
    assert h1_errs[0] / h1_errs[1] == pytest.approx(2.0, rel=0.05)
    assert l2_errs[0] / l2_errs[1] == pytest.approx(4.0, rel=0.05)


def test_error_norms_zero_for_reproduced_function():
    # degree-2 elements represent quadratics exactly
    mesh = build_interval_mesh(8, degree=2)
    poly = ManufacturedCase(
        name="quad",
        dim=1,
        exact_u=lambda x: x * x - x + 1.0 / 6.0,
        exact_grad=lambda x: 2.0 * x - 1.0,
        forcing_f=lambda x: np.full_like(x, -2.0),
    )
    u_h = interpolate(mesh, poly.exact_u)
    h1, l2 = error_norms(mesh, u_h, poly)
    assert h1 <= 1e-13
    assert l2 <= 1e-14


def test_constant_shift_adds_in_quadrature():
    # || e + c ||^2 = ||e||^2 + c^2 when e has zero mean on the unit interval
    case = case_cosine_1d()
    mesh = build_interval_mesh(32)
    u_h = interpolate(mesh, case.exact_u)
    _, l2_base = error_norms(mesh, u_h, case)
    c = 0.3
    _, l2_shift = error_norms(mesh, u_h + c, case)
    assert l2_shift**2 == pytest.approx(l2_base**2 + c * c, rel=1e-6)


def test_align_mean_removes_constant_shift():
    case = case_cosine_1d()
    mesh = build_interval_mesh(32)
    u_h = interpolate(mesh, case.exact_u)
    h1_a, l2_a = error_norms(mesh, u_h, case, align_mean=True)
    h1_b, l2_b = error_norms(mesh, u_h + 17.0, case, align_mean=True)
    assert h1_b == pytest.approx(h1_a, rel=1e-9)
    assert l2_b == pytest.approx(l2_a, rel=1e-9)


# ---------------------------------------------------------------------------
# patch test: quadratic elements reproduce quadratic solutions exactly


def test_patch_quadratic_exactness():
    """-u'' = -2 with flux data matching u = x^2 - x + 1/6.

    The forcing alone is inconsistent with pure natural boundary
    conditions; the boundary fluxes -u'(0) = 1 and u'(1) = 1 close the
    balance. Quadratic elements then reproduce u to rounding.
    """
    mesh = build_interval_mesh(4, degree=2)
    poly = ManufacturedCase(
        name="patch",
        dim=1,
        exact_u=lambda x: x * x - x + 1.0 / 6.0,
        exact_grad=lambda x: 2.0 * x - 1.0,
        forcing_f=lambda x: np.full_like(x, -2.0),
    )
    problem = assemble(mesh, poly)
    F = problem.F.copy()
    F[0] += 1.0  # -u'(0)
    F[mesh.n_nodes - 1] += 1.0  # u'(1)
    import dataclasses

    problem = dataclasses.replace(problem, F=F)
    u = solve_projected(problem).u
    exact = interpolate(mesh, poly.exact_u)
    # both live in the zero-M-mean slice up to the exact function's mean
    diff = u - exact
    diff -= (np.ones(len(diff)) @ spmv(problem.M, diff)) / (
        np.ones(len(diff)) @ spmv(problem.M, np.ones(len(diff)))
    )
    assert np.abs(diff).max() <= 1e-10


def test_galerkin_orthogonality():
    problem = assemble(build_interval_mesh(64), case_cosine_1d())
    u = solve_projected(problem).u
    residual = spmv(problem.A, u) - problem.F
    # the residual must vanish on the complement of the kernel
    r_perp = project_perp(problem, residual)
    assert np.linalg.norm(r_perp) <= 1e-10 * np.linalg.norm(problem.F)


# ---------------------------------------------------------------------------
# mesh serialization


def test_mesh_text_format():
    mesh = build_interval_mesh(2)
    text = mesh_to_text(mesh)
    lines = text.strip().split("\n")
    assert lines[0] == "# mesh dim=1 degree=1"
    counts = lines[1].split()
    assert counts == ["3", "2"]
    assert float(lines[2].split()[0]) == 0.0


def test_write_mesh_round_trips_node_count(tmp_path):
    mesh = build_unit_square_mesh(3)
    path = tmp_path / "mesh.txt"
    write_mesh(mesh, path)
    text = path.read_text()
    counts = text.strip().split("\n")[1].split()
    assert int(counts[0]) == mesh.n_nodes
    assert int(counts[1]) == mesh.n_elements
