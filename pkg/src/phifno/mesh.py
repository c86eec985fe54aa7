"""Cartesian triangular background mesh of the unit square and its phi-FEM submeshes.

Vertex ``(i, j)`` sits at ``(i / (nx - 1), j / (ny - 1))`` and has flat index
``i * ny + j``; nodal grids are ``(nx, ny)`` arrays in the same order. Every
square is split along its lower-left to upper-right diagonal.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class EmptyDomainError(ValueError):
    """The level-set is non-negative at every vertex of every cell."""


@dataclass(frozen=True, eq=False)
class BackgroundMesh:
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"mesh needs at least 2 nodes per axis, got {self.nx}x{self.ny}")

    @property
    def dx(self):
        return 1.0 / (self.nx - 1)

    @property
    def dy(self):
        return 1.0 / (self.ny - 1)

    @property
    def h(self):
        """Maximal cell diameter."""
        return float(np.hypot(self.dx, self.dy))

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def n_vertices(self):
        return self.nx * self.ny

    @cached_property
    def vertices(self):
        X, Y = np.meshgrid(
            np.arange(self.nx) / (self.nx - 1), np.arange(self.ny) / (self.ny - 1), indexing="ij"
        )
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def triangles(self):
        nx, ny = self.nx, self.ny
        I, J = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
        v00 = (I * ny + J).ravel()
        v10 = v00 + ny
        v01 = v00 + 1
        v11 = v10 + 1
        tris = np.empty((2 * len(v00), 3), dtype=np.int64)
        tris[0::2] = np.column_stack([v00, v10, v11])
        tris[1::2] = np.column_stack([v00, v11, v01])
        return tris

    @property
    def n_cells(self):
        return len(self.triangles)

    @cached_property
    def areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def _topology(self):
        tris = self.triangles
        nv = self.n_vertices
        local = np.array([[0, 1], [1, 2], [2, 0]])
        pairs = np.sort(tris[:, local], axis=2).reshape(-1, 2)
        keys = pairs[:, 0] * nv + pairs[:, 1]
        uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
        edges = pairs[first]
        tri_edges = inverse.reshape(-1, 3)
        edge_cells = np.full((len(edges), 2), -1, dtype=np.int64)
        owner = np.repeat(np.arange(len(tris)), 3)
        # first occurrence goes to column 0, the other to column 1
        order = np.argsort(inverse, kind="stable")
        sorted_edges = inverse[order]
        starts = np.r_[True, sorted_edges[1:] != sorted_edges[:-1]]
        edge_cells[sorted_edges[starts], 0] = owner[order][starts]
        edge_cells[sorted_edges[~starts], 1] = owner[order][~starts]
        return edges, tri_edges, edge_cells

    @property
    def edges(self):
        """``(n_edges, 2)`` sorted vertex pairs."""
        return self._topology[0]

    @property
    def cell_edges(self):
        """``(n_cells, 3)`` edge index of local edges (0,1), (1,2), (2,0)."""
        return self._topology[1]

    @property
    def edge_cells(self):
        """``(n_edges, 2)`` adjacent cells, ``-1`` where the edge is on the box border."""
        return self._topology[2]


def build_background_mesh(nx, ny):
    return BackgroundMesh(int(nx), int(ny))


def interpolate_nodal(field, mesh):
    """Nodal values ``grid[i, j] = field(x_i, y_j)``."""
    X = mesh.vertices[:, 0].reshape(mesh.shape)
    Y = mesh.vertices[:, 1].reshape(mesh.shape)
    values = np.broadcast_to(np.asarray(field(X, Y), dtype=float), mesh.shape).copy()
    if not np.all(np.isfinite(values)):
        raise ValueError("field produced non-finite nodal values")
    return values


@dataclass(eq=False)
class CellClassification:
    active: np.ndarray  # bool per cell, the computational mesh T_h
    cut: np.ndarray  # bool per cell, T_h^Gamma
    stabilized_facets: np.ndarray  # edge indices, F_h^Gamma
    omega_boundary_facets: np.ndarray  # edge indices on the boundary of Omega_h
    boundary_owner: np.ndarray  # active cell owning each boundary facet

    @property
    def active_cells(self):
        return np.flatnonzero(self.active)

    @property
    def cut_cells(self):
        return np.flatnonzero(self.cut)


def classify_cells(mesh, phi_h):
    """Split the background mesh into the phi-FEM submeshes.

    A cell is active when its smallest vertex value is strictly negative and
    cut when it is active and its largest vertex value is non-negative.
    """
    phi_h = np.asarray(phi_h, dtype=float)
    if phi_h.shape != mesh.shape:
        raise ValueError(f"phi_h has shape {phi_h.shape}, mesh expects {mesh.shape}")
    if not np.all(np.isfinite(phi_h)):
        raise ValueError("phi_h must be finite")
    vals = phi_h.ravel()[mesh.triangles]
    active = vals.min(axis=1) < 0.0
    if not active.any():
        raise EmptyDomainError("domain does not intersect grid")
    cut = active & (vals.max(axis=1) >= 0.0)

    ec = mesh.edge_cells
    side_active = np.where(ec >= 0, active[np.maximum(ec, 0)], False)
    n_active = side_active.sum(axis=1)
    internal = n_active == 2
    side_cut = np.where(ec >= 0, cut[np.maximum(ec, 0)], False)
    stabilized = np.flatnonzero(internal & side_cut.any(axis=1))
    boundary = np.flatnonzero(n_active == 1)
    owner = np.where(side_active[boundary, 0], ec[boundary, 0], ec[boundary, 1])
    return CellClassification(active, cut, stabilized, boundary, owner)


@dataclass(eq=False)
class PixelMasks:
    S0: np.ndarray
    S1: np.ndarray


def active_vertex_mask(mesh, cls):
    mask = np.zeros(mesh.n_vertices, dtype=bool)
    mask[mesh.triangles[cls.active].ravel()] = True
    return mask.reshape(mesh.shape)


def build_pixel_masks(cls, mesh):
    """``S0``: vertices of active cells; ``S1``: ``S0`` eroded by one 8-neighbour layer.

    Pixels on the grid border never belong to ``S1``.
    """
    S0 = active_vertex_mask(mesh, cls)
    S1 = np.zeros_like(S0)
    inner = np.ones((mesh.nx - 2, mesh.ny - 2), dtype=bool) if mesh.nx > 2 and mesh.ny > 2 else None
    if inner is not None:
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                inner &= S0[1 + di : mesh.nx - 1 + di, 1 + dj : mesh.ny - 1 + dj]
        S1[1:-1, 1:-1] = inner
    return PixelMasks(S0, S1)


def masks_from_levelset(phi_h):
    mesh = build_background_mesh(*np.shape(phi_h))
    return build_pixel_masks(classify_cells(mesh, phi_h), mesh)
