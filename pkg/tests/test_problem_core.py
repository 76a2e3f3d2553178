"""Projector algebra, functionals, consistency handling, serialization."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from degenergy.fem import assemble, build_interval_mesh, case_cosine_1d
from degenergy.linalg import SparseMatrix, spmv
from degenergy.problem_core import (
    DiscreteProblem,
    KernelBasis,
    RankDeficientKernelError,
    check_consistency,
    energy_value,
    h_norm,
    is_consistent,
    l_norm,
    make_consistent,
    make_problem,
    orthonormalize_kernel,
    problem_diagnostics,
    problem_from_json,
    problem_to_json,
    project_parallel,
    project_perp,
    regularized_value,
    toy_problem,
)


@pytest.fixture(scope="module")
def toy():
    return toy_problem()


@pytest.fixture(scope="module")
def neumann_1d():
    return assemble(build_interval_mesh(9), case_cosine_1d())


# ---------------------------------------------------------------------------
# kernel orthonormalization


def test_orthonormalize_already_normalized():
    M = SparseMatrix.from_dense(0.5 * np.eye(2))
    basis = orthonormalize_kernel(np.array([[1.0], [1.0]]), M)
    assert np.allclose(basis.matrix[:, 0], [1.0, 1.0], atol=1e-14)


def test_orthonormalize_rescales():
    M = SparseMatrix.from_dense(0.5 * np.eye(2))
    basis = orthonormalize_kernel(np.array([[2.0], [2.0]]), M)
    assert np.allclose(basis.matrix[:, 0], [1.0, 1.0], atol=1e-14)
    z = basis.matrix[:, 0]
    assert abs(z @ spmv(M, z) - 1.0) <= 1e-14


def test_orthonormalize_rejects_dependent_columns():
    M = SparseMatrix.identity(2)
    cols = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(RankDeficientKernelError):
        orthonormalize_kernel(cols, M)


def test_make_problem_rejects_non_kernel_column(toy):
    A = toy.A
    M = toy.M
    bad = np.array([[1.0], [0.0]])  # not in the kernel of A
    with pytest.raises(ValueError):
        make_problem(A, M, np.zeros(2), bad)


# ---------------------------------------------------------------------------
# projectors: hand values


def test_project_parallel_fixes_kernel(toy):
    z = toy.kernel.matrix[:, 0]
    assert np.allclose(project_parallel(toy, z), z, atol=1e-14)


def test_project_parallel_hand_value(toy):
    out = project_parallel(toy, np.array([1.0, 0.0]))
    assert np.allclose(out, [0.5, 0.5], atol=1e-14)


def test_project_perp_hand_value(toy):
    out = project_perp(toy, np.array([1.0, 0.0]))
    assert np.allclose(out, [0.5, -0.5], atol=1e-14)


def test_project_perp_annihilates_kernel(toy):
    z = toy.kernel.matrix[:, 0]
    assert np.allclose(project_perp(toy, z), np.zeros(2), atol=1e-14)


def test_perp_leaves_orthogonal_vectors_alone(toy):
    u = np.array([1.0, -1.0])  # already M-orthogonal to (1,1)
    assert np.allclose(project_perp(toy, u), u, atol=1e-14)


# ---------------------------------------------------------------------------
# projector properties on a real discretization


def _random_vector(problem, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(problem.n)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_projector_decomposition(neumann_1d, seed):
    u = _random_vector(neumann_1d, seed)
    recomposed = project_parallel(neumann_1d, u) + project_perp(neumann_1d, u)
    assert np.linalg.norm(recomposed - u) <= 1e-14 * max(np.linalg.norm(u), 1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_projector_idempotence(neumann_1d, seed):
    u = _random_vector(neumann_1d, seed)
    par = project_parallel(neumann_1d, u)
    perp = project_perp(neumann_1d, u)
    assert np.linalg.norm(project_parallel(neumann_1d, par) - par) <= 1e-12
    assert np.linalg.norm(project_perp(neumann_1d, perp) - perp) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_projector_l_orthogonality(neumann_1d, seed):
    u = _random_vector(neumann_1d, seed)
    v = _random_vector(neumann_1d, seed + 1)
    par = project_parallel(neumann_1d, u)
    perp = project_perp(neumann_1d, v)
    cross = abs(par @ spmv(neumann_1d.M, perp))
    assert cross <= 1e-12 * l_norm(neumann_1d, u) * l_norm(neumann_1d, v) + 1e-15


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_minimal_norm_pythagoras(neumann_1d, seed):
    """Dropping the kernel part never increases the L-norm (Pythagoras)."""
    u = _random_vector(neumann_1d, seed)
    perp = project_perp(neumann_1d, u)
    assert l_norm(neumann_1d, u) >= l_norm(neumann_1d, perp) - 1e-14


def test_minimal_norm_strict_when_kernel_part_present(neumann_1d):
    u = np.ones(neumann_1d.n) + _random_vector(neumann_1d, 5)
    par = project_parallel(neumann_1d, u)
    assert l_norm(neumann_1d, par) > 1e-8  # kernel part genuinely present
    assert l_norm(neumann_1d, u) > l_norm(neumann_1d, project_perp(neumann_1d, u))


# ---------------------------------------------------------------------------
# functionals


def test_energy_value_zero(toy):
    assert energy_value(toy, np.zeros(2)) == 0.0


def test_energy_value_minimum(toy):
    assert abs(energy_value(toy, np.array([0.5, -0.5])) + 0.5) <= 1e-14


def test_energy_value_off_minimum(toy):
    assert abs(energy_value(toy, np.array([1.0, -1.0]))) <= 1e-14


def test_regularized_value_hand(toy):
    val = regularized_value(toy, np.array([0.5, -0.5]), 0.1)
    assert abs(val + 0.475) <= 1e-14


def test_regularized_value_rejects_nonpositive_eta(toy):
    with pytest.raises(ValueError):
        regularized_value(toy, np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        regularized_value(toy, np.zeros(2), -1.0)


def test_energy_invariant_under_kernel_shift(toy):
    # a and ell both vanish on the kernel for consistent problems
    u = np.array([0.3, -1.2])
    z = toy.kernel.matrix[:, 0]
    v0 = energy_value(toy, u)
    v1 = energy_value(toy, u + 2.5 * z)
    assert abs(v1 - v0) <= 1e-12 * max(abs(v0), 1.0)


def test_norms_hand_values(toy):
    assert abs(l_norm(toy, np.array([3.0, 4.0])) - 5.0) <= 1e-14
    assert abs(h_norm(toy, np.array([1.0, -1.0])) - np.sqrt(6.0)) <= 1e-14
    assert l_norm(toy, np.zeros(2)) == 0.0


# ---------------------------------------------------------------------------
# consistency


def test_check_consistency_consistent(toy):
    pairings = check_consistency(toy)
    assert np.abs(pairings).max() <= 1e-14
    assert is_consistent(toy)


def test_check_consistency_inconsistent(toy):
    import dataclasses

    bad = dataclasses.replace(toy, F=np.array([1.0, 0.0]))
    pairings = check_consistency(bad)
    assert abs(pairings[0] - 1.0 / np.sqrt(2.0)) <= 1e-14
    assert not is_consistent(bad)


def test_make_consistent_removes_kernel_component(toy):
    import dataclasses

    bad = dataclasses.replace(toy, F=np.array([1.0, 0.0]))
    fixed = make_consistent(bad)
    assert np.allclose(fixed.F, [0.5, -0.5], atol=1e-14)
    assert is_consistent(fixed)
    assert np.abs(check_consistency(fixed)).max() <= 1e-12


def test_make_consistent_is_identity_on_consistent_data(toy):
    same = make_consistent(toy)
    assert np.array_equal(same.F, toy.F)


def test_make_consistent_kills_pure_kernel_load(toy):
    import dataclasses

    z = toy.kernel.matrix[:, 0]
    bad = dataclasses.replace(toy, F=z.copy())
    fixed = make_consistent(bad)
    assert np.abs(fixed.F).max() <= 1e-14


# ---------------------------------------------------------------------------
# serialization


def test_json_round_trip_is_bit_exact(neumann_1d):
    text = problem_to_json(neumann_1d)
    back = problem_from_json(text)
    assert np.array_equal(back.A.toarray(), neumann_1d.A.toarray())
    assert np.array_equal(back.M.toarray(), neumann_1d.M.toarray())
    assert np.array_equal(back.H_gram.toarray(), neumann_1d.H_gram.toarray())
    assert np.array_equal(back.F, neumann_1d.F)
    assert np.array_equal(back.kernel.matrix, neumann_1d.kernel.matrix)
    assert back.label == neumann_1d.label
    assert back.tolerances == neumann_1d.tolerances


def test_json_schema_fields(neumann_1d):
    import json

    doc = json.loads(problem_to_json(neumann_1d))
    assert doc["format"] == "degenergy-problem"
    assert doc["version"] == 1
    for key in ("A", "M", "H_gram", "F", "kernel", "label", "tolerances"):
        assert key in doc


def test_save_and_load(tmp_path, neumann_1d):
    from degenergy.problem_core import load_problem, save_problem

    path = tmp_path / "problem.json"
    save_problem(neumann_1d, path)
    back = load_problem(path)
    assert np.array_equal(back.F, neumann_1d.F)


# ---------------------------------------------------------------------------
# diagnostics


def test_problem_diagnostics_reports_sane_values(neumann_1d):
    diag = problem_diagnostics(neumann_1d)
    assert diag["a_symmetry_error"] == 0.0
    assert diag["kernel_residual"] <= 1e-12
    assert diag["kernel_orthonormality_error"] <= 1e-12
    assert np.abs(np.asarray(diag["consistency_pairings"])).max() <= 1e-10
    assert diag["n"] == neumann_1d.n
    assert diag["kernel_dim"] == 1
    assert diag["coercivity_estimate"] > 0.0
    assert diag["continuity_estimate"] > diag["coercivity_estimate"]


def test_toy_problem_shape(toy):
    assert toy.n == 2
    assert toy.kernel.m == 1
    assert isinstance(toy, DiscreteProblem)
    assert isinstance(toy.kernel, KernelBasis)
    assert toy.label == "toy2x2"
