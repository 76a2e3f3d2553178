"""Lagrange finite elements for pure-Neumann model problems.

Meshes the interval (degree 1 or 2) and the unit square (degree 1),
assembles stiffness/mass/load into a :class:`DiscreteProblem` whose
kernel is the constant mode, and measures errors against manufactured
solutions with quadrature one degree above the assembly rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .linalg import SparseMatrix
from .problem_core import DiscreteProblem, Tolerances, DEFAULT_TOLERANCES, make_problem

__all__ = [
    "ManufacturedCase",
    "Mesh",
    "assemble",
    "build_interval_mesh",
    "build_unit_square_mesh",
    "case_cosine_1d",
    "case_cosine_2d",
    "error_norms",
    "interpolate",
    "mesh_to_text",
    "write_mesh",
]


@dataclass(frozen=True)
class Mesh:
    """Conforming mesh with Lagrange node coordinates.

    ``nodes`` is a flat coordinate array in 1D and an (n_nodes, 2) array
    in 2D; ``elements`` lists the global node ids of each element in
    local order. ``h`` is the element diameter of the uniform mesh.
    """

    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    h: float
    degree: int

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]


def build_interval_mesh(n: int, degree: int = 1) -> Mesh:
    """Uniform mesh of [0, 1] with n elements.

    Degree 2 elements carry their midpoint node last in the local
    ordering (left vertex, right vertex, midpoint).
    """
    if n < 2:
        raise ValueError("need at least two elements")
    if degree == 1:
        nodes = np.linspace(0.0, 1.0, n + 1)
        elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    elif degree == 2:
        nodes = np.linspace(0.0, 1.0, 2 * n + 1)
        e = np.arange(n)
        elements = np.column_stack([2 * e, 2 * e + 2, 2 * e + 1])
    else:
        raise ValueError("degree must be 1 or 2 on the interval")
    return Mesh(dim=1, nodes=nodes, elements=elements, h=1.0 / n, degree=degree)


def build_unit_square_mesh(n: int, degree: int = 1) -> Mesh:
    """Structured triangulation of the unit square, n x n cells split
    along the same diagonal; both triangles are positively oriented."""
    if n < 2:
        raise ValueError("need at least two cells per side")
    if degree != 1:
        raise ValueError("only degree 1 is supported on the square")
    side = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(side, side, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    elements = np.array(tris, dtype=np.int64)
    return Mesh(dim=2, nodes=nodes, elements=elements, h=np.sqrt(2.0) / n, degree=1)


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact solution, gradient, and matching forcing term.

    1D callables take an array x; 2D callables take arrays (x, y) and
    the gradient returns the pair of partials.
    """

    name: str
    dim: int
    exact_u: Callable
    exact_grad: Callable
    forcing_f: Callable


def case_cosine_1d() -> ManufacturedCase:
    """u = cos(pi x) on [0, 1]: mean-zero with natural boundary data."""
    pi = np.pi
    return ManufacturedCase(
        name="cosine1d",
        dim=1,
        exact_u=lambda x: np.cos(pi * x),
        exact_grad=lambda x: -pi * np.sin(pi * x),
        forcing_f=lambda x: pi * pi * np.cos(pi * x),
    )


def case_cosine_2d() -> ManufacturedCase:
    """u = cos(pi x) cos(pi y) on the unit square."""
    pi = np.pi
    return ManufacturedCase(
        name="cosine2d",
        dim=2,
        exact_u=lambda x, y: np.cos(pi * x) * np.cos(pi * y),
        exact_grad=lambda x, y: (
            -pi * np.sin(pi * x) * np.cos(pi * y),
            -pi * np.cos(pi * x) * np.sin(pi * y),
        ),
        forcing_f=lambda x, y: 2.0 * pi * pi * np.cos(pi * x) * np.cos(pi * y),
    )


# ---------------------------------------------------------------------------
# reference elements and quadrature


def _gauss_01(k: int):
    # Gauss-Legendre on [0, 1]
    x, w = np.polynomial.legendre.leggauss(k)
    return 0.5 * (x + 1.0), 0.5 * w


def _basis_1d(degree: int, t: np.ndarray):
    """Values and reference derivatives of the local basis at points t."""
    t = np.asarray(t)
    if degree == 1:
        vals = np.stack([1.0 - t, t], axis=-1)
        ders = np.stack([-np.ones_like(t), np.ones_like(t)], axis=-1)
    else:
        # local order: left vertex, right vertex, midpoint
        vals = np.stack(
            [2.0 * (t - 0.5) * (t - 1.0), 2.0 * t * (t - 0.5), 4.0 * t * (1.0 - t)],
            axis=-1,
        )
        ders = np.stack([4.0 * t - 3.0, 4.0 * t - 1.0, 4.0 - 8.0 * t], axis=-1)
    return vals, ders


# midpoint rule on the reference triangle (degree 2); weights include
# the reference area 1/2
_TRI_MID_POINTS = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
_TRI_MID_WEIGHTS = np.full(3, 1.0 / 6.0)

# six-point degree-4 rule, barycentric orbit weights scaled by area 1/2
_S6_A1, _S6_B1, _S6_W1 = 0.816847572980459, 0.091576213509771, 0.109951743655322
_S6_A2, _S6_B2, _S6_W2 = 0.108103018168070, 0.445948490915965, 0.223381589678011


def _tri_rule_degree4():
    bary = np.array(
        [
            [_S6_A1, _S6_B1, _S6_B1],
            [_S6_B1, _S6_A1, _S6_B1],
            [_S6_B1, _S6_B1, _S6_A1],
            [_S6_A2, _S6_B2, _S6_B2],
            [_S6_B2, _S6_A2, _S6_B2],
            [_S6_B2, _S6_B2, _S6_A2],
        ]
    )
    points = bary[:, 1:]  # reference vertices (0,0), (1,0), (0,1)
    weights = 0.5 * np.array([_S6_W1] * 3 + [_S6_W2] * 3)
    return points, weights


def _basis_tri_p1(points: np.ndarray):
    x, y = points[:, 0], points[:, 1]
    vals = np.stack([1.0 - x - y, x, y], axis=-1)
    grads = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return vals, grads


# ---------------------------------------------------------------------------
# assembly


def _assemble_1d(mesh: Mesh, case: ManufacturedCase):
    k = 2 if mesh.degree == 1 else 3
    t, w = _gauss_01(k)
    vals, ders = _basis_1d(mesh.degree, t)  # (nq, nb)
    nb = vals.shape[1]
    h = mesh.h

    # fixed reference matrices, scaled per element by a scalar: the local
    # blocks are exactly symmetric and identical across elements. einsum
    # multiplies w into the left factor first, which rounds (i, j) and
    # (j, i) differently; averaging with the transpose restores exact
    # symmetry because float + and * commute bitwise.
    mass_ref = np.einsum("q,qi,qj->ij", w, vals, vals, optimize=False)
    mass_ref = 0.5 * (mass_ref + mass_ref.T)
    stiff_ref = np.einsum("q,qi,qj->ij", w, ders, ders, optimize=False)
    stiff_ref = 0.5 * (stiff_ref + stiff_ref.T)
    mass_loc = h * mass_ref
    stiff_loc = (1.0 / h) * stiff_ref

    ne = mesh.n_elements
    left = mesh.nodes[mesh.elements[:, 0]]  # left vertex coordinate
    xq = left[:, None] + h * t[None, :]  # (ne, nq)
    fq = case.forcing_f(xq)
    load_loc = h * np.einsum("q,eq,qi->ei", w, fq, vals, optimize=False)

    rows = np.broadcast_to(mesh.elements[:, :, None], (ne, nb, nb)).ravel()
    cols = np.broadcast_to(mesh.elements[:, None, :], (ne, nb, nb)).ravel()
    A_vals = np.broadcast_to(stiff_loc, (ne, nb, nb)).ravel()
    M_vals = np.broadcast_to(mass_loc, (ne, nb, nb)).ravel()
    n = mesh.n_nodes
    A = SparseMatrix.from_triplets(n, n, rows, cols, A_vals, symmetric=True)
    M = SparseMatrix.from_triplets(n, n, rows, cols, M_vals, symmetric=True)
    F = np.zeros(n)
    np.add.at(F, mesh.elements.ravel(), load_loc.ravel())
    return A, M, F


def _triangle_geometry(mesh: Mesh):
    coords = mesh.nodes[mesh.elements]  # (ne, 3, 2)
    J = np.stack(
        [coords[:, 1] - coords[:, 0], coords[:, 2] - coords[:, 0]], axis=-1
    )  # (ne, 2, 2), columns are the edge vectors
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(det <= 0.0):
        raise ValueError("triangulation contains a degenerate or flipped element")
    inv_t = np.empty_like(J)  # J^{-T}
    inv_t[:, 0, 0] = J[:, 1, 1]
    inv_t[:, 0, 1] = -J[:, 1, 0]
    inv_t[:, 1, 0] = -J[:, 0, 1]
    inv_t[:, 1, 1] = J[:, 0, 0]
    inv_t /= det[:, None, None]
    return coords, J, det, inv_t


def _assemble_2d(mesh: Mesh, case: ManufacturedCase):
    points, weights = _TRI_MID_POINTS, _TRI_MID_WEIGHTS
    vals, grads_ref = _basis_tri_p1(points)  # (nq, 3), (3, 2)
    coords, J, det, inv_t = _triangle_geometry(mesh)
    ne = mesh.n_elements

    # physical gradients are constant per element for P1
    G = np.einsum("ers,is->eir", inv_t, grads_ref, optimize=False)  # (ne, 3, 2)
    stiff_loc = 0.5 * det[:, None, None] * np.einsum(
        "eid,ejd->eij", G, G, optimize=False
    )
    mass_ref = np.einsum("q,qi,qj->ij", weights, vals, vals, optimize=False)
    mass_ref = 0.5 * (mass_ref + mass_ref.T)
    mass_loc = det[:, None, None] * mass_ref

    # physical quadrature points, one block per element
    xq = np.einsum("qi,eic->eqc", vals, coords, optimize=False)  # (ne, nq, 2)
    fq = case.forcing_f(xq[:, :, 0], xq[:, :, 1])
    load_loc = det[:, None] * np.einsum("q,eq,qi->ei", weights, fq, vals, optimize=False)

    nb = 3
    rows = np.broadcast_to(mesh.elements[:, :, None], (ne, nb, nb)).ravel()
    cols = np.broadcast_to(mesh.elements[:, None, :], (ne, nb, nb)).ravel()
    n = mesh.n_nodes
    A = SparseMatrix.from_triplets(n, n, rows, cols, stiff_loc.ravel(), symmetric=True)
    M = SparseMatrix.from_triplets(n, n, rows, cols, mass_loc.ravel(), symmetric=True)
    F = np.zeros(n)
    np.add.at(F, mesh.elements.ravel(), load_loc.ravel())
    return A, M, F


def assemble(
    mesh: Mesh,
    case: ManufacturedCase,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> DiscreteProblem:
    """Assemble the discrete problem for a manufactured case.

    The kernel basis is the constant mode, normalized in the mass inner
    product. Assembly accumulates symmetric local blocks in a fixed
    order, so the returned matrices are exactly symmetric, not just up
    to rounding.
    """
    if case.dim != mesh.dim:
        raise ValueError(f"case {case.name} is {case.dim}D but the mesh is {mesh.dim}D")
    if mesh.dim == 1:
        A, M, F = _assemble_1d(mesh, case)
    else:
        A, M, F = _assemble_2d(mesh, case)
    ones = np.ones((mesh.n_nodes, 1))
    if mesh.dim == 1:
        cells = mesh.n_elements
    else:
        cells = int(round(np.sqrt(mesh.n_elements / 2)))
    label = f"{case.name}-n{cells}-p{mesh.degree}"
    return make_problem(A, M, F, ones, label=label, tolerances=tolerances)


def interpolate(mesh: Mesh, g: Callable) -> np.ndarray:
    """Nodal interpolant of a callable on the mesh's Lagrange nodes."""
    if mesh.dim == 1:
        return np.asarray(g(mesh.nodes), dtype=float)
    return np.asarray(g(mesh.nodes[:, 0], mesh.nodes[:, 1]), dtype=float)


# ---------------------------------------------------------------------------
# error measurement


def error_norms(
    mesh: Mesh,
    u_h: np.ndarray,
    case: ManufacturedCase,
    align_mean: bool = False,
) -> tuple:
    """Full H1 and L2 errors of a coefficient vector against the case.

    Quadrature is one degree above the assembly rule so the measured
    error is not an artifact of the rule that built the system. With
    ``align_mean`` the mean of the difference is removed first, which
    compares solutions modulo the constant kernel; the gradient part is
    unaffected either way.
    """
    u_h = np.asarray(u_h, dtype=float)
    if u_h.shape != (mesh.n_nodes,):
        raise ValueError("coefficient vector does not match the mesh")
    if mesh.dim == 1:
        k = 3 if mesh.degree == 1 else 4
        t, w = _gauss_01(k)
        vals, ders = _basis_1d(mesh.degree, t)
        h = mesh.h
        left = mesh.nodes[mesh.elements[:, 0]]
        xq = left[:, None] + h * t[None, :]
        ue = mesh.elements  # (ne, nb)
        uh_q = u_h[ue] @ vals.T  # (ne, nq)
        duh_q = (u_h[ue] @ ders.T) / h
        diff = uh_q - case.exact_u(xq)
        grad_diff = duh_q - case.exact_grad(xq)
        wq = np.broadcast_to(h * w, xq.shape)
    else:
        points, weights = _tri_rule_degree4()
        vals, grads_ref = _basis_tri_p1(points)
        coords, J, det, inv_t = _triangle_geometry(mesh)
        G = np.einsum("ers,is->eir", inv_t, grads_ref, optimize=False)
        ue = mesh.elements
        uh_q = u_h[ue] @ vals.T  # (ne, nq)
        duh = np.einsum("ei,eir->er", u_h[ue], G, optimize=False)  # (ne, 2), constant
        xq = np.einsum("qi,eic->eqc", vals, coords, optimize=False)
        gx, gy = case.exact_grad(xq[:, :, 0], xq[:, :, 1])
        diff = uh_q - case.exact_u(xq[:, :, 0], xq[:, :, 1])
        grad_diff = np.stack(
            [duh[:, 0:1] - gx, duh[:, 1:2] - gy], axis=-1
        )  # (ne, nq, 2)
        wq = det[:, None] * weights[None, :]

    if align_mean:
        volume = float(wq.sum())
        diff = diff - float((wq * diff).sum()) / volume
    l2_sq = float((wq * diff**2).sum())
    if mesh.dim == 1:
        semi_sq = float((wq * grad_diff**2).sum())
    else:
        semi_sq = float((wq * (grad_diff**2).sum(axis=-1)).sum())
    l2 = np.sqrt(max(l2_sq, 0.0))
    h1 = np.sqrt(max(l2_sq + semi_sq, 0.0))
    return h1, l2


# ---------------------------------------------------------------------------
# plain-text mesh export


def mesh_to_text(mesh: Mesh) -> str:
    lines = [f"# mesh dim={mesh.dim} degree={mesh.degree}"]
    lines.append(f"{mesh.n_nodes} {mesh.n_elements}")
    if mesh.dim == 1:
        for x in mesh.nodes:
            lines.append(f"{x:.17g}")
    else:
        for x, y in mesh.nodes:
            lines.append(f"{x:.17g} {y:.17g}")
    for elem in mesh.elements:
        lines.append(" ".join(str(int(v)) for v in elem))
    return "\n".join(lines) + "\n"


def write_mesh(mesh: Mesh, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(mesh_to_text(mesh))
