"""Stabilized phi-FEM for -Laplace(u) = f in {phi < 0}, u = g on {phi = 0}.

The discrete solution is sought as ``u_h = phi_h * w_h + g_h`` with ``w_h``
continuous P1 on the active cells of the background mesh.
"""
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .mesh import build_background_mesh, build_pixel_masks, classify_cells, interpolate_nodal

SOLVER_TOL = 1e-10


class SolverError(RuntimeError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass(eq=False)
class DofMap:
    vertices: np.ndarray  # vertex id of each dof
    vertex_to_dof: np.ndarray  # dof of each vertex, -1 when unmapped

    @property
    def n_dofs(self):
        return len(self.vertices)


@dataclass(eq=False)
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray


def build_dofmap(mesh, cls):
    verts = np.unique(mesh.triangles[cls.active].ravel())
    v2d = np.full(mesh.n_vertices, -1, dtype=np.int64)
    v2d[verts] = np.arange(len(verts))
    return DofMap(verts, v2d)


def _opposite_vertex(tri_rows, a, b):
    mask = (tri_rows != a[:, None]) & (tri_rows != b[:, None])
    return tri_rows[mask]


def _check_grid(mesh, *grids):
    for grid in grids:
        if np.shape(grid) != mesh.shape:
            raise ValueError(f"grid of shape {np.shape(grid)} does not match mesh {mesh.shape}")


def assemble(mesh, cls, phi_h, f_h, g_h, sigma_D=1.0):
    """Assemble the phi-FEM system in the ``w`` unknowns.

    Rows are test functions ``phi_h * s``, columns trial functions
    ``phi_h * w``. All ``g_h`` contributions are moved to the right-hand side.
    """
    if not sigma_D > 0:
        raise ValueError("sigma_D must be positive")
    _check_grid(mesh, phi_h, f_h, g_h)
    if np.any(mesh.areas <= 0):
        raise ValueError("degenerate triangle in background mesh")
    phi = np.asarray(phi_h, dtype=float).ravel()
    f = np.asarray(f_h, dtype=float).ravel()
    g = np.asarray(g_h, dtype=float).ravel()
    h = mesh.h
    dofmap = build_dofmap(mesh, cls)
    v2d = dofmap.vertex_to_dof
    X = mesh.vertices

    rows, cols, vals = [], [], []
    rhs = np.zeros(dofmap.n_dofs)

    def scatter(K, r, dofs):
        rows.append(np.broadcast_to(dofs[:, None, :], K.shape).ravel())
        cols.append(np.broadcast_to(dofs[:, :, None], K.shape).ravel())
        vals.append(K.ravel())
        np.add.at(rhs, dofs.ravel(), r.ravel())

    cells = cls.active_cells
    tris = mesh.triangles[cells]
    K, r = kernels.cell_matrices(X[tris], phi[tris], f[tris], g[tris], cls.cut[cells], h, sigma_D)
    scatter(K, r, v2d[tris])

    bnd = cls.omega_boundary_facets
    if len(bnd):
        owner = cls.boundary_owner
        local = np.argmax(mesh.cell_edges[owner] == bnd[:, None], axis=1)
        otris = mesh.triangles[owner]
        K, r = kernels.boundary_matrices(X[otris], phi[otris], g[otris], local)
        scatter(K, r, v2d[otris])

    stab = cls.stabilized_facets
    if len(stab):
        s0, s1 = mesh.edges[stab, 0], mesh.edges[stab, 1]
        c0, c1 = mesh.edge_cells[stab, 0], mesh.edge_cells[stab, 1]
        o0 = _opposite_vertex(mesh.triangles[c0], s0, s1)
        o1 = _opposite_vertex(mesh.triangles[c1], s0, s1)
        quad = np.column_stack([s0, s1, o0, o1])
        K, r = kernels.facet_matrices(X[quad], phi[quad], g[quad], sigma_D * h)
        scatter(K, r, v2d[quad])

    n = dofmap.n_dofs
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    A.sum_duplicates()
    if not (np.all(np.isfinite(A.data)) and np.all(np.isfinite(rhs))):
        raise ValueError("non-finite entries in assembled system")
    return SparseSystem(A, rhs), dofmap


def _relative_residual(A, x, b):
    return float(np.linalg.norm(A @ x - b) / max(1.0, np.linalg.norm(b)))


def solve(system, dofmap, shape, tol=SOLVER_TOL):
    """Solve for ``w_h`` and extend it by zero to the full ``shape`` grid."""
    A, b = system.matrix, system.rhs
    out = np.zeros(int(np.prod(shape)))
    if not np.any(b):
        return out.reshape(shape)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", spla.MatrixRankWarning)
        try:
            x = spla.spsolve(A.tocsc(), b)
        except RuntimeError:
            x = np.full_like(b, np.nan)
    res = _relative_residual(A, x, b) if np.all(np.isfinite(x)) else float("inf")

    if not res <= tol:
        try:
            ilu = spla.spilu(A.tocsc(), drop_tol=1e-6, fill_factor=20)
            M = spla.LinearOperator(A.shape, ilu.solve)
        except RuntimeError:
            M = None
        x, _ = spla.gmres(A, b, M=M, rtol=tol * 1e-2, atol=0.0, restart=200, maxiter=50)
        res = _relative_residual(A, x, b) if np.all(np.isfinite(x)) else float("inf")
        if not res <= tol:
            raise SolverError("phi-FEM linear solve did not converge", res)

    out[dofmap.vertices] = x
    return out.reshape(shape)


def reconstruct_u(phi_h, w_h, g_h):
    phi_h, w_h, g_h = (np.asarray(a, dtype=float) for a in (phi_h, w_h, g_h))
    if not (phi_h.shape == w_h.shape == g_h.shape):
        raise ValueError("phi_h, w_h and g_h must share one shape")
    return phi_h * w_h + g_h


def ground_truth(f_h, phi_h, g_h, sigma_D=1.0, tol=SOLVER_TOL):
    """The map ``(f_h, phi_h, g_h) -> w_h`` realized by the phi-FEM solver."""
    mesh = build_background_mesh(*np.shape(phi_h))
    cls = classify_cells(mesh, phi_h)
    system, dofmap = assemble(mesh, cls, phi_h, f_h, g_h, sigma_D)
    return solve(system, dofmap, mesh.shape, tol)


# ----------------------------------------------------------- convergence study


@dataclass(frozen=True)
class PoissonCase:
    """Manufactured problem; ``f = -Laplace(u_exact)`` and ``g = u_exact``."""

    name: str
    f: Callable
    g: Callable
    u_exact: Callable
    affine: bool = False


def sine_case():
    def u(x, y):
        return np.sin(np.pi * x) * np.sin(np.pi * y)

    def f(x, y):
        return 2.0 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)

    return PoissonCase("sine", f, u, u)


def affine_case(a=1.0, b=-0.5, c=0.25):
    def u(x, y):
        return a * np.asarray(x, dtype=float) + b * np.asarray(y, dtype=float) + c

    def f(x, y):
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)

    return PoissonCase("affine", f, u, u, affine=True)


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    h: float
    error: float
    order: float | None  # None on the first row and for exactly reproduced cases


def relative_l2_on_mask(u_ref, u, mask):
    num = np.sum((u_ref[mask] - u[mask]) ** 2)
    den = np.sum(u_ref[mask] ** 2)
    if den == 0:
        raise ValueError("reference vanishes on the mask")
    return float(np.sqrt(num / den))


def solve_case(case, domain, n, sigma_D=1.0):
    mesh = build_background_mesh(n, n)
    phi_h = interpolate_nodal(domain, mesh)
    f_h = interpolate_nodal(case.f, mesh)
    g_h = interpolate_nodal(case.g, mesh)
    cls = classify_cells(mesh, phi_h)
    system, dofmap = assemble(mesh, cls, phi_h, f_h, g_h, sigma_D)
    w_h = solve(system, dofmap, mesh.shape)
    u_h = reconstruct_u(phi_h, w_h, g_h)
    masks = build_pixel_masks(cls, mesh)
    return mesh, u_h, masks


def convergence_study(case, domain, resolutions, sigma_D=1.0, exact_tol=1e-9):
    """Relative discrete L2 error on ``S0`` over a ladder of square grids."""
    resolutions = [int(n) for n in resolutions]
    if len(resolutions) < 3 or any(b <= a for a, b in zip(resolutions, resolutions[1:])):
        raise ValueError("need at least 3 strictly increasing resolutions")
    rows = []
    for n in resolutions:
        mesh, u_h, masks = solve_case(case, domain, n, sigma_D)
        u_ex = interpolate_nodal(case.u_exact, mesh)
        err = relative_l2_on_mask(u_ex, u_h, masks.S0)
        order = None
        if rows and not (case.affine or err <= exact_tol and rows[-1].error <= exact_tol):
            prev = rows[-1]
            order = math.log(prev.error / err) / math.log(prev.h / mesh.h)
        rows.append(ConvergenceRow(n, mesh.h, err, order))
    return rows
