"""P1 Lagrange kernel: assembly, constrained spaces, norms, boundary functionals."""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from qrcauchy.geometry import Tag
from qrcauchy.mesh import TriMesh


class FemError(ValueError):
    pass


# Strang-Fix / Dunavant 6-point rule, exact for degree 4 (weights sum to 1)
_A4, _B4 = 0.445948490915964886318329253883, 0.091576213509770743459571463402
_WA4, _WB4 = 0.223381589678011465944480498, 0.109951743655321867872186168
QUAD6_BARY = np.array([
    [_A4, _A4, 1 - 2 * _A4], [_A4, 1 - 2 * _A4, _A4], [1 - 2 * _A4, _A4, _A4],
    [_B4, _B4, 1 - 2 * _B4], [_B4, 1 - 2 * _B4, _B4], [1 - 2 * _B4, _B4, _B4],
])
QUAD6_WEIGHTS = np.array([_WA4] * 3 + [_WB4] * 3)

# two-point Gauss-Legendre on [0, 1]
EDGE_GAUSS_T = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
EDGE_GAUSS_W = np.array([0.5, 0.5])


class SpaceKind(str, enum.Enum):
    V0 = "V0"              # vanishes on closed Gamma
    V0_TILDE = "V0_TILDE"  # vanishes on closed Gamma-tilde


@dataclass(frozen=True, eq=False)
class DofMap:
    space_kind: SpaceKind
    free_nodes: np.ndarray
    constrained_nodes: np.ndarray
    node_to_dof: np.ndarray  # -1 on constrained nodes

    @property
    def n_dofs(self) -> int:
        return len(self.free_nodes)

    def extend(self, dof_values, n_nodes=None) -> np.ndarray:
        n = len(self.node_to_dof) if n_nodes is None else n_nodes
        out = np.zeros(n, dtype=np.result_type(dof_values, float))
        out[self.free_nodes] = dof_values
        return out


def dofmap(mesh: TriMesh, kind: SpaceKind | str) -> DofMap:
    kind = SpaceKind(kind)
    tag = Tag.GAMMA if kind is SpaceKind.V0 else Tag.GAMMA_TILDE
    constrained = mesh.gamma_nodes(tag)
    mask = np.ones(mesh.n_nodes, dtype=bool)
    mask[constrained] = False
    free = np.flatnonzero(mask)
    node_to_dof = np.full(mesh.n_nodes, -1, dtype=np.int64)
    node_to_dof[free] = np.arange(len(free))
    return DofMap(kind, free, constrained, node_to_dof)


@dataclass(frozen=True, eq=False)
class FeFunction:
    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.mesh.n_nodes,):
            raise FemError(f"expected {self.mesh.n_nodes} nodal values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise FemError("nodal values must be finite")
        object.__setattr__(self, "values", vals)

    def __add__(self, other):
        _same_mesh(self, other)
        return FeFunction(self.mesh, self.values + other.values)

    def __sub__(self, other):
        _same_mesh(self, other)
        return FeFunction(self.mesh, self.values - other.values)

    def __mul__(self, c):
        return FeFunction(self.mesh, c * self.values)

    __rmul__ = __mul__

    def to_csv(self, path) -> None:
        lines = ["node_index,x,y,value"]
        for i, ((x, y), v) in enumerate(zip(self.mesh.nodes.tolist(), self.values.tolist())):
            lines.append(f"{i},{x:.17g},{y:.17g},{v:.17g}")
        Path(path).write_text("\n".join(lines) + "\n")


def _same_mesh(a: FeFunction, b: FeFunction):
    if a.mesh is not b.mesh:
        raise FemError("FE functions live on different meshes")


def interpolate(mesh: TriMesh, func: Callable) -> FeFunction:
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    return FeFunction(mesh, np.broadcast_to(func(x, y), x.shape).astype(float))


def _geometry(mesh: TriMesh):
    p = mesh.nodes[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area = 0.5 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    h = mesh.h
    bad = area <= 1e-14 * h * h
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise FemError(f"degenerate triangle {k} (area {area[k]:.3e})")
    return b, c, area


def _scatter(mesh: TriMesh, local: np.ndarray) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


@functools.lru_cache(maxsize=16)
def assemble_stiffness(mesh: TriMesh) -> sp.csr_matrix:
    """P1 stiffness matrix (grad u, grad v) on the full node set."""
    b, c, area = _geometry(mesh)
    local = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (4.0 * area[:, None, None])
    return _scatter(mesh, local)


@functools.lru_cache(maxsize=16)
def assemble_mass(mesh: TriMesh) -> sp.csr_matrix:
    """P1 mass matrix (u, v); exact, equal to the 3-point degree-2 rule."""
    _, _, area = _geometry(mesh)
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _scatter(mesh, area[:, None, None] * ref[None])


def _coerce(u, mesh=None) -> FeFunction:
    if isinstance(u, FeFunction):
        if mesh is not None and u.mesh is not mesh:
            raise FemError("FE function lives on a different mesh")
        return u
    raise FemError("expected an FeFunction")


def h1_seminorm(u: FeFunction) -> float:
    u = _coerce(u)
    v = u.values
    return float(np.sqrt(max(v @ (assemble_stiffness(u.mesh) @ v), 0.0)))


def l2_norm(u: FeFunction) -> float:
    u = _coerce(u)
    v = u.values
    return float(np.sqrt(max(v @ (assemble_mass(u.mesh) @ v), 0.0)))


def h1_norm(u: FeFunction) -> float:
    return float(np.hypot(h1_seminorm(u), l2_norm(u)))


def h1_delta_norm(u: FeFunction, laplacian_l2: float) -> float:
    """H^1(Delta) norm given the L2 norm of the Laplacian (not representable in P1)."""
    return float(np.hypot(h1_norm(u), laplacian_l2))


def quadrature_points(mesh: TriMesh):
    """Degree-4 points (M, 6, 2) and weights (M, 6) already scaled by triangle area."""
    _, _, area = _geometry(mesh)
    p = mesh.nodes[mesh.triangles]
    pts = np.einsum("qk,mkd->mqd", QUAD6_BARY, p)
    return pts, area[:, None] * QUAD6_WEIGHTS[None, :]


@dataclass(frozen=True)
class ErrorNorms:
    l2: float
    h1: float
    h1_semi: float

    def __iter__(self):
        return iter((self.l2, self.h1))


def error_norms(u_h: FeFunction, exact) -> ErrorNorms:
    """L2 and H1 distance between a P1 function and a field with ``value``/``gradient``.

    ``exact`` may also be another FeFunction on the same mesh.
    """
    mesh = u_h.mesh
    b, c, area = _geometry(mesh)
    pts, w = quadrature_points(mesh)
    uv = u_h.values[mesh.triangles]
    uq = uv @ QUAD6_BARY.T
    gx = (uv * b).sum(1) / (2 * area)
    gy = (uv * c).sum(1) / (2 * area)
    if isinstance(exact, FeFunction):
        _same_mesh(u_h, exact)
        ev = exact.values[mesh.triangles]
        eq = ev @ QUAD6_BARY.T
        egx = np.repeat(((ev * b).sum(1) / (2 * area))[:, None], 6, axis=1)
        egy = np.repeat(((ev * c).sum(1) / (2 * area))[:, None], 6, axis=1)
    else:
        x, y = pts[..., 0], pts[..., 1]
        eq = np.broadcast_to(exact.value(x, y), x.shape)
        g = exact.gradient(x, y)
        egx, egy = np.broadcast_to(g[0], x.shape), np.broadcast_to(g[1], x.shape)
    l2sq = float((w * (uq - eq) ** 2).sum())
    semisq = float((w * ((gx[:, None] - egx) ** 2 + (gy[:, None] - egy) ** 2)).sum())
    return ErrorNorms(np.sqrt(l2sq), np.sqrt(l2sq + semisq), np.sqrt(semisq))


def integrate(mesh: TriMesh, func: Callable) -> float:
    pts, w = quadrature_points(mesh)
    return float((w * func(pts[..., 0], pts[..., 1])).sum())


def boundary_edge_geometry(mesh: TriMesh, edge_ids=None):
    """Oriented endpoints, lengths, outward normals and Gauss points of boundary edges."""
    oriented = mesh.oriented_boundary_edges()
    if edge_ids is not None:
        oriented = oriented[edge_ids]
    a, b = mesh.nodes[oriented[:, 0]], mesh.nodes[oriented[:, 1]]
    d = b - a
    length = np.hypot(d[:, 0], d[:, 1])
    normal = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
    pts = a[:, None, :] + EDGE_GAUSS_T[None, :, None] * d[:, None, :]
    return oriented, length, normal, pts


def boundary_load(mesh: TriMesh, edge_ids: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Nodal vector of int_e g * phi_i over the given boundary edges.

    ``values`` holds g at the two Gauss points of each edge, ordered along the
    oriented edge (see ``boundary_edge_geometry``).
    """
    oriented, length, _, _ = boundary_edge_geometry(mesh, edge_ids)
    values = np.asarray(values, dtype=float).reshape(len(edge_ids), 2)
    phi_start = 1.0 - EDGE_GAUSS_T
    phi_end = EDGE_GAUSS_T
    contrib_a = length * (values * (EDGE_GAUSS_W * phi_start)).sum(1)
    contrib_b = length * (values * (EDGE_GAUSS_W * phi_end)).sum(1)
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, oriented[:, 0], contrib_a)
    np.add.at(out, oriented[:, 1], contrib_b)
    return out
