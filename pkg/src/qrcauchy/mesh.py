"""Triangular meshes: structured generation, uniform refinement, plaintext I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from qrcauchy.geometry import PolygonSpec, Tag


class MeshError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True, eq=False)
class TriMesh:
    nodes: np.ndarray            # (N, 2) float
    triangles: np.ndarray        # (M, 3) int, counter-clockwise
    boundary_edges: np.ndarray   # (K, 2) int
    boundary_tags: np.ndarray    # (K,) str, "G" or "GT"

    def __post_init__(self):
        for name in ("nodes", "triangles", "boundary_edges", "boundary_tags"):
            getattr(self, name).setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def h(self) -> float:
        """Largest triangle diameter (longest edge)."""
        p = self.nodes[self.triangles]
        lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
        return float(lengths.max())

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted node pairs, lexicographically ordered."""
        t = self.triangles
        all_edges = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        return np.unique(all_edges, axis=0)

    def gamma_nodes(self, tag: Tag) -> np.ndarray:
        """Nodes lying on the closure of the edges carrying ``tag``."""
        mask = self.boundary_tags == Tag(tag).value
        return np.unique(self.boundary_edges[mask].ravel())

    def oriented_boundary_edges(self) -> np.ndarray:
        """Boundary edges oriented so the domain lies on their left."""
        t = self.triangles
        directed = {}
        for a, b in np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]):
            directed[(int(a), int(b))] = True
        out = np.empty_like(self.boundary_edges)
        for k, (a, b) in enumerate(self.boundary_edges):
            out[k] = (a, b) if (int(a), int(b)) in directed else (b, a)
        return out

    def min_angle(self) -> float:
        p = self.nodes[self.triangles]
        angles = []
        for k in range(3):
            u = p[:, (k + 1) % 3] - p[:, k]
            v = p[:, (k + 2) % 3] - p[:, k]
            c = (u * v).sum(1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles.append(np.arccos(np.clip(c, -1.0, 1.0)))
        return float(np.min(angles))

    def __eq__(self, other):
        if not isinstance(other, TriMesh):
            return NotImplemented
        return (np.array_equal(self.nodes, other.nodes) and np.array_equal(self.triangles, other.triangles)
                and np.array_equal(self.boundary_edges, other.boundary_edges)
                and np.array_equal(self.boundary_tags, other.boundary_tags))

    __hash__ = object.__hash__  # identity hash so meshes can key assembly caches


def _boundary_from_triangles(triangles: np.ndarray) -> np.ndarray:
    t = triangles
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    key = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if counts.max() > 2:
        raise MeshError("non-manifold mesh: an edge is shared by more than two triangles")
    return directed[counts[inverse] == 1]


def _tag_edges(nodes, edges, spec: PolygonSpec) -> np.ndarray:
    tol = 1e-9 * spec.diameter
    mid = 0.5 * (nodes[edges[:, 0]] + nodes[edges[:, 1]])
    dist = np.empty((len(edges), spec.n_edges))
    for i in range(spec.n_edges):
        a, b = spec.edge(i)
        d = b - a
        s = np.clip(((mid - a) @ d) / (d @ d), 0.0, 1.0)
        dist[:, i] = np.linalg.norm(mid - (a + s[:, None] * d), axis=1)
    best = np.argmin(dist, axis=1)  # argmin keeps the lowest index on ties
    if np.any(dist[np.arange(len(edges)), best] > tol):
        k = int(np.argmax(dist.min(axis=1)))
        raise MeshError(f"boundary edge {tuple(edges[k])} does not lie on any polygon edge")
    return np.array([spec.edge_tags[i].value for i in best])


def _renumber(nodes, triangles, bedges):
    order = np.lexsort((nodes[:, 0], nodes[:, 1]))
    new_index = np.empty_like(order)
    new_index[order] = np.arange(len(order))
    return nodes[order], new_index[triangles], new_index[bedges]


def _sort_boundary(bedges, tags):
    key = np.lexsort((bedges[:, 1], bedges[:, 0]))
    return bedges[key], tags[key]


def _assemble(nodes, triangles, spec: PolygonSpec) -> TriMesh:
    bedges = _boundary_from_triangles(triangles)
    nodes, triangles, bedges = _renumber(nodes, triangles, bedges)
    tags = _tag_edges(nodes, bedges, spec)
    bedges, tags = _sort_boundary(bedges, tags)
    return TriMesh(nodes, triangles.astype(np.int64), bedges.astype(np.int64), tags)


def _point_in_polygon(pts, verts):
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    n = len(verts)
    for i in range(n):
        (x1, y1), (x2, y2) = verts[i], verts[(i + 1) % n]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xint)
    return inside


def generate_structured(spec: PolygonSpec, n_divisions: int) -> TriMesh:
    """Uniform right-triangle mesh of an axis-aligned polygon.

    The bounding box is cut into ``n_divisions`` cells per side; every vertex of
    the polygon must fall on that grid (unit square, L-shape with even ``n``, ...).
    Each cell is split along its (0,0)-(1,1) diagonal.
    """
    if n_divisions < 2:
        raise MeshError("n_divisions must be at least 2")
    verts = spec.vertices
    edges_vec = np.roll(verts, -1, axis=0) - verts
    if not np.all((np.abs(edges_vec[:, 0]) < 1e-14) | (np.abs(edges_vec[:, 1]) < 1e-14)):
        raise MeshError("structured generation needs an axis-aligned polygon; "
                        "build the mesh externally and load it with read_mesh")
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    step = (hi - lo) / n_divisions
    grid = (verts - lo) / step
    if np.any(np.abs(grid - np.round(grid)) > 1e-9):
        raise MeshError(f"polygon vertices do not fall on the {n_divisions}x{n_divisions} grid; "
                        "use another n_divisions or load an external mesh with read_mesh")

    n = n_divisions
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    centers = np.column_stack([lo[0] + (i.ravel() + 0.5) * step[0], lo[1] + (j.ravel() + 0.5) * step[1]])
    keep = _point_in_polygon(centers, verts)
    ci, cj = i.ravel()[keep], j.ravel()[keep]

    def node_id(a, b):
        return b * (n + 1) + a

    n00, n10 = node_id(ci, cj), node_id(ci + 1, cj)
    n01, n11 = node_id(ci, cj + 1), node_id(ci + 1, cj + 1)
    tris = np.concatenate([np.column_stack([n00, n10, n11]), np.column_stack([n00, n11, n01])])
    gx, gy = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="xy")
    all_nodes = np.column_stack([lo[0] + gx.ravel() * step[0], lo[1] + gy.ravel() * step[1]])
    # drop grid nodes outside the polygon
    used, tris = np.unique(tris, return_inverse=True)
    tris = tris.reshape(-1, 3)
    return _assemble(all_nodes[used], tris, spec)


def refine_with_transfer(mesh: TriMesh):
    """Red refinement plus the sparse P1 prolongation from ``mesh`` to the child mesh."""
    import scipy.sparse as sp

    edges = mesh.edges()
    n0 = mesh.n_nodes
    mids = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    nodes = np.vstack([mesh.nodes, mids])
    lookup = {(int(a), int(b)): n0 + k for k, (a, b) in enumerate(edges)}

    def mid(a, b):
        return lookup[(a, b) if a < b else (b, a)]

    tris = []
    for a, b, c in mesh.triangles.tolist():
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        tris.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])
    bedges, tags = [], []
    for (a, b), tag in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags):
        m = mid(a, b)
        bedges.extend([(a, m), (m, b)])
        tags.extend([tag, tag])

    rows = np.concatenate([np.arange(n0), np.repeat(n0 + np.arange(len(edges)), 2)])
    cols = np.concatenate([np.arange(n0), edges.ravel()])
    vals = np.concatenate([np.ones(n0), np.full(2 * len(edges), 0.5)])

    order = np.lexsort((nodes[:, 0], nodes[:, 1]))
    new_index = np.empty_like(order)
    new_index[order] = np.arange(len(order))
    nodes, tris, bedges = nodes[order], new_index[np.array(tris)], new_index[np.array(bedges)]
    bedges, tags = _sort_boundary(bedges, np.array(tags))
    fine = TriMesh(nodes, tris.astype(np.int64), bedges.astype(np.int64), tags)
    P = sp.csr_matrix((vals, (new_index[rows], cols)), shape=(len(nodes), n0))
    return fine, P


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """Red refinement: every triangle split into four through its edge midpoints."""
    return refine_with_transfer(mesh)[0]


def refine_levels(mesh: TriMesh, levels: int):
    """Refine ``levels`` times; returns the fine mesh and the composed prolongation."""
    import scipy.sparse as sp

    P = sp.identity(mesh.n_nodes, format="csr")
    for _ in range(levels):
        mesh, step = refine_with_transfer(mesh)
        P = (step @ P).tocsr()
    return mesh, P


def validate(mesh: TriMesh) -> None:
    if np.any(mesh.signed_areas() <= 0):
        k = int(np.argmin(mesh.signed_areas()))
        raise MeshError(f"triangle {k} has non-positive signed area")
    true_boundary = {tuple(sorted(e)) for e in _boundary_from_triangles(mesh.triangles).tolist()}
    listed = [tuple(sorted(e)) for e in mesh.boundary_edges.tolist()]
    for e in listed:
        if e not in true_boundary:
            raise MeshError(f"edge {e} is not on the mesh boundary")
    if len(set(listed)) != len(listed):
        raise MeshError("duplicate boundary edge")
    missing = true_boundary - set(listed)
    if missing:
        raise MeshError(f"untagged boundary edge {sorted(missing)[0]}")


def write_mesh(mesh: TriMesh, path) -> None:
    lines = [f"nodes {mesh.n_nodes} triangles {mesh.n_triangles} bedges {len(mesh.boundary_edges)}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.nodes.tolist()]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    lines += [f"{a} {b} {t}" for (a, b), t in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> TriMesh:
    text = Path(path).read_text().splitlines()
    if not text:
        raise MeshError("empty mesh file", line=1)
    header = text[0].split()
    if len(header) != 6 or header[0::2] != ["nodes", "triangles", "bedges"]:
        raise MeshError("header must read 'nodes N triangles M bedges K'", line=1)
    try:
        n, m, k = (int(v) for v in header[1::2])
    except ValueError:
        raise MeshError("non-integer count in header", line=1) from None
    if min(n, m, k) < 0:
        raise MeshError("negative count in header", line=1)
    if len(text) < 1 + n + m + k:
        raise MeshError(f"expected {n + m + k} data lines, found {len(text) - 1}", line=len(text))

    nodes = np.empty((n, 2))
    for r in range(n):
        lineno = 2 + r
        parts = text[lineno - 1].split()
        try:
            if len(parts) != 2:
                raise ValueError
            nodes[r] = [float(parts[0]), float(parts[1])]
        except ValueError:
            raise MeshError("node line must hold two floats 'x y'", line=lineno) from None
        if not np.all(np.isfinite(nodes[r])):
            raise MeshError("non-finite node coordinate", line=lineno)

    def indices(lineno, parts, count):
        try:
            idx = [int(p) for p in parts[:count]]
        except ValueError:
            raise MeshError("expected integer node indices", line=lineno) from None
        for i in idx:
            if not 0 <= i < n:
                raise MeshError(f"node index {i} out of range [0, {n})", line=lineno)
        return idx

    tris = np.empty((m, 3), dtype=np.int64)
    for r in range(m):
        lineno = 2 + n + r
        parts = text[lineno - 1].split()
        if len(parts) != 3:
            raise MeshError("triangle line must hold 'i j k'", line=lineno)
        tris[r] = indices(lineno, parts, 3)

    bedges = np.empty((k, 2), dtype=np.int64)
    tags = []
    for r in range(k):
        lineno = 2 + n + m + r
        parts = text[lineno - 1].split()
        if len(parts) != 3:
            raise MeshError("boundary edge line must hold 'i j TAG'", line=lineno)
        bedges[r] = indices(lineno, parts, 2)
        if parts[2] not in (Tag.GAMMA.value, Tag.GAMMA_TILDE.value):
            raise MeshError(f"unknown boundary tag {parts[2]!r}", line=lineno)
        tags.append(parts[2])
    if any(s.strip() for s in text[1 + n + m + k:]):
        raise MeshError("trailing data after the declared counts", line=2 + n + m + k)

    mesh = TriMesh(nodes, tris, bedges, np.array(tags, dtype="<U2"))
    validate(mesh)
    return mesh


def polygon_area_check(mesh: TriMesh, spec: PolygonSpec) -> float:
    """Relative mismatch between summed triangle areas and the polygon area."""
    return abs(mesh.signed_areas().sum() - spec.area) / spec.area


__all__ = [
    "MeshError", "TriMesh", "generate_structured", "refine_uniform", "read_mesh", "write_mesh",
    "refine_with_transfer", "refine_levels", "validate", "polygon_area_check",
]
