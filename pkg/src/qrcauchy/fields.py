"""Manufactured solutions, compatible sources and Cauchy data on polygon edges."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from qrcauchy.fem import boundary_edge_geometry, integrate
from qrcauchy.geometry import CornerKind, PolygonSpec, Tag, classify_corners
from qrcauchy.mesh import TriMesh


class CatalogError(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True)
class ExactField:
    name: str
    value: Callable
    gradient: Callable   # (x, y) -> (d/dx, d/dy)
    laplacian: Callable
    params: dict = field(default_factory=dict)

    def __call__(self, x, y):
        return self.value(x, y)

    def normal_derivative(self, x, y, nx, ny):
        gx, gy = self.gradient(x, y)
        return gx * nx + gy * ny


def _zeros_like(x, y):
    return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)


def exp_cos() -> ExactField:
    return ExactField(
        "exp_cos",
        lambda x, y: np.exp(x) * np.cos(y),
        lambda x, y: (np.exp(x) * np.cos(y), -np.exp(x) * np.sin(y)),
        _zeros_like,
    )


def poly2() -> ExactField:
    return ExactField(
        "poly2",
        lambda x, y: x * x - y * y,
        lambda x, y: (2.0 * x + 0.0 * y, -2.0 * y + 0.0 * x),
        _zeros_like,
    )


def corner_sing(alpha=2.0 / 3.0, vertex=(0.5, 0.5), theta0=math.pi / 2) -> ExactField:
    """r^alpha sin(alpha*theta) with theta measured from direction ``theta0`` in [0, 2pi)."""
    x0, y0 = float(vertex[0]), float(vertex[1])
    alpha, theta0 = float(alpha), float(theta0)

    def polar(x, y):
        dx, dy = np.asarray(x, dtype=float) - x0, np.asarray(y, dtype=float) - y0
        phi = np.arctan2(dy, dx)
        return np.hypot(dx, dy), np.mod(phi - theta0, 2 * np.pi), phi

    def value(x, y):
        r, th, _ = polar(x, y)
        return r ** alpha * np.sin(alpha * th)

    def gradient(x, y):
        r, th, phi = polar(x, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = alpha * r ** (alpha - 1.0)
        dr, dt = scale * np.sin(alpha * th), scale * np.cos(alpha * th)
        return dr * np.cos(phi) - dt * np.sin(phi), dr * np.sin(phi) + dt * np.cos(phi)

    params = {"alpha": alpha, "vertex": [x0, y0], "theta0": theta0}
    return ExactField("corner_sing", value, gradient, _zeros_like, params)


HARMONIC_NAMES = ("exp_cos", "poly2", "corner_sing")


def harmonic_catalog(name: str, params: dict | None = None) -> ExactField:
    params = dict(params or {})
    if name == "exp_cos":
        f = exp_cos()
    elif name == "poly2":
        f = poly2()
    elif name == "corner_sing":
        return corner_sing(**params)
    else:
        raise CatalogError(f"unknown harmonic field {name!r}; choose from {', '.join(HARMONIC_NAMES)}")
    if params:
        raise CatalogError(f"{name} takes no parameters, got {sorted(params)}")
    return f


# compatible sources: u* vanishes with its normal derivative on Gamma, f = -Lap u*

def _sin_bottom() -> ExactField:
    pi = math.pi
    return ExactField(
        "y2_sin",
        lambda x, y: y ** 2 * np.sin(pi * x),
        lambda x, y: (pi * y ** 2 * np.cos(pi * x), 2 * y * np.sin(pi * x)),
        lambda x, y: (2.0 - pi ** 2 * y ** 2) * np.sin(pi * x),
    )


def _sin_bottom_right() -> ExactField:
    pi = math.pi

    def a(x):
        return (1 - x) ** 2 * np.sin(pi * x)

    def da(x):
        return -2 * (1 - x) * np.sin(pi * x) + pi * (1 - x) ** 2 * np.cos(pi * x)

    def d2a(x):
        return (2 - pi ** 2 * (1 - x) ** 2) * np.sin(pi * x) - 4 * pi * (1 - x) * np.cos(pi * x)

    return ExactField(
        "y2_1mx2_sin",
        lambda x, y: y ** 2 * a(x),
        lambda x, y: (y ** 2 * da(x), 2 * y * a(x)),
        lambda x, y: 2 * a(x) + y ** 2 * d2a(x),
    )


def distance_product(spec: PolygonSpec) -> ExactField:
    """Product of squared signed distances to the lines carrying the Gamma edges."""
    lines = []
    for i in spec.gamma_edges():
        n = spec.outward_normal(i)
        a = spec.vertices[i]
        lines.append((n[0], n[1], -(n @ a)))

    def parts(x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return [a * x + b * y + c for a, b, c in lines]

    def prod_except(ls, skip):
        out = np.ones(np.broadcast(*ls).shape)
        for k, ell in enumerate(ls):
            if k not in skip:
                out = out * ell ** 2
        return out

    def value(x, y):
        return prod_except(parts(x, y), ())

    def gradient(x, y):
        ls = parts(x, y)
        gx = sum(2 * ls[i] * lines[i][0] * prod_except(ls, (i,)) for i in range(len(ls)))
        gy = sum(2 * ls[i] * lines[i][1] * prod_except(ls, (i,)) for i in range(len(ls)))
        return gx, gy

    def laplacian(x, y):
        ls = parts(x, y)
        total = sum(2.0 * prod_except(ls, (i,)) for i in range(len(ls)))  # |grad l_i| = 1
        for i in range(len(ls)):
            for j in range(i + 1, len(ls)):
                dot = lines[i][0] * lines[j][0] + lines[i][1] * lines[j][1]
                total = total + 8.0 * ls[i] * ls[j] * dot * prod_except(ls, (i, j))
        return total

    return ExactField("distance_product", value, gradient, laplacian, {"gamma_edges": spec.gamma_edges()})


def _is_unit_square(spec: PolygonSpec) -> bool:
    return spec.n_edges == 4 and np.allclose(spec.vertices, [(0, 0), (1, 0), (1, 1), (0, 1)])


COMPATIBLE_NAMES = ("auto", "y2_sin", "y2_1mx2_sin", "distance_product")


def compatible_source(spec: PolygonSpec, name: str = "auto"):
    """(f, u*) with f = -Lap u* and zero Cauchy data of u* on Gamma."""
    gamma = spec.gamma_edges()
    if name == "auto":
        if _is_unit_square(spec) and gamma == [0]:
            name = "y2_sin"
        elif _is_unit_square(spec) and gamma == [0, 1]:
            name = "y2_1mx2_sin"
        else:
            name = "distance_product"
    if name == "y2_sin":
        if not (_is_unit_square(spec) and gamma == [0]):
            raise CatalogError("y2_sin needs the unit square with Gamma = {bottom}")
        u = _sin_bottom()
    elif name == "y2_1mx2_sin":
        if not (_is_unit_square(spec) and gamma == [0, 1]):
            raise CatalogError("y2_1mx2_sin needs the unit square with Gamma = {bottom, right}")
        u = _sin_bottom_right()
    elif name == "distance_product":
        u = distance_product(spec)
    else:
        raise CatalogError(f"no compatible source named {name!r}; choose from {', '.join(COMPATIBLE_NAMES)}")
    lap = u.laplacian
    f = ExactField("source:" + u.name, lambda x, y: -lap(x, y), _no_gradient, _no_gradient, dict(u.params))
    return f, u


def _no_gradient(x, y):
    raise NotImplementedError("source terms carry no derivative data")


def exact_norms(exact: ExactField, mesh: TriMesh) -> dict:
    """L2, H1 and H1(Delta) norms of an exact field by degree-4 quadrature."""
    l2 = integrate(mesh, lambda x, y: exact.value(x, y) ** 2)
    semi = integrate(mesh, lambda x, y: sum(g ** 2 for g in exact.gradient(x, y)))
    lap = integrate(mesh, lambda x, y: exact.laplacian(x, y) ** 2)
    return {"l2": math.sqrt(l2), "h1": math.sqrt(l2 + semi), "h1_delta": math.sqrt(l2 + semi + lap),
            "laplacian_l2": math.sqrt(lap)}


@dataclass(frozen=True)
class EdgeTrace:
    """Dirichlet data along one polygon edge; ``t`` runs from 0 (start vertex) to 1."""

    edge: int
    nodes: np.ndarray
    t: np.ndarray
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class CauchyData:
    g0: np.ndarray            # nodal, NaN off closed Gamma
    g1: np.ndarray            # (n_bedges, 2) Gauss-point fluxes, NaN off Gamma
    traces: tuple             # EdgeTrace per Gamma polygon edge

    def with_g0_noise(self, delta: float, seed: int = 0) -> "CauchyData":
        """Independent nodewise noise of amplitude ``delta`` on every edge trace."""
        rng = np.random.default_rng(seed)
        traces = tuple(replace(tr, values=tr.values + delta * rng.uniform(-1.0, 1.0, len(tr.values)))
                       for tr in self.traces)
        return replace(self, g0=_merge_traces(traces, len(self.g0)), traces=traces)

    def with_edge_offset(self, edge: int, offset: float) -> "CauchyData":
        traces = tuple(replace(tr, values=tr.values + offset) if tr.edge == edge else tr for tr in self.traces)
        return replace(self, g0=_merge_traces(traces, len(self.g0)), traces=traces)


def _merge_traces(traces, n_nodes) -> np.ndarray:
    """Nodal g0; corner nodes shared by two Gamma edges take the average."""
    total, count = np.zeros(n_nodes), np.zeros(n_nodes)
    for tr in traces:
        np.add.at(total, tr.nodes, tr.values)
        np.add.at(count, tr.nodes, 1.0)
    out = np.full(n_nodes, np.nan)
    hit = count > 0
    out[hit] = total[hit] / count[hit]
    return out


def edge_nodes(mesh: TriMesh, spec: PolygonSpec, edge: int):
    """Mesh nodes on polygon edge ``edge`` sorted by their parameter along it."""
    a, b = spec.edge(edge)
    d = b - a
    t = ((mesh.nodes - a) @ d) / (d @ d)
    proj = a + np.clip(t, 0, 1)[:, None] * d
    on = np.linalg.norm(mesh.nodes - proj, axis=1) <= 1e-9 * spec.diameter
    on &= (t >= -1e-12) & (t <= 1 + 1e-12)
    idx = np.flatnonzero(on)
    order = np.argsort(t[idx], kind="stable")
    return idx[order], np.clip(t[idx][order], 0.0, 1.0)


def cauchy_data_from(exact: ExactField, spec: PolygonSpec, mesh: TriMesh) -> CauchyData:
    traces = []
    for i in spec.gamma_edges():
        nodes, t = edge_nodes(mesh, spec, i)
        vals = np.asarray(exact.value(mesh.nodes[nodes, 0], mesh.nodes[nodes, 1]), dtype=float)
        traces.append(EdgeTrace(i, nodes, t, np.broadcast_to(vals, nodes.shape).copy()))
    traces = tuple(traces)
    g0 = _merge_traces(traces, mesh.n_nodes)

    g1 = np.full((len(mesh.boundary_edges), 2), np.nan)
    ids = np.flatnonzero(mesh.boundary_tags == Tag.GAMMA.value)
    if len(ids):
        _, _, normal, pts = boundary_edge_geometry(mesh, ids)
        gx, gy = exact.gradient(pts[..., 0], pts[..., 1])
        g1[ids] = gx * normal[:, None, 0] + gy * normal[:, None, 1]
    return CauchyData(g0, g1, traces)


@dataclass(frozen=True)
class CornerGap:
    vertex_index: int
    vertex: tuple
    gap: float
    flagged: bool


def check_nodal_compatibility(g0, g1=None, spec: PolygonSpec | None = None, tol: float = 1e-9) -> list[CornerGap]:
    """Continuity of the Dirichlet data at every GAMMA-type corner.

    ``g0`` is a CauchyData or a sequence of EdgeTrace.  ``g1`` is accepted for
    symmetry but only the Dirichlet line of the compatibility system is checked.
    """
    traces = g0.traces if isinstance(g0, CauchyData) else tuple(g0)
    if spec is None:
        raise ValueError("a PolygonSpec is required to locate the corners")
    by_edge = {tr.edge: tr for tr in traces}
    report = []
    for c in classify_corners(spec):
        if c.kind is not CornerKind.GAMMA:
            continue
        incoming, outgoing = c.incident_edges
        if incoming not in by_edge or outgoing not in by_edge:
            continue
        end_val = float(by_edge[incoming].values[-1])
        start_val = float(by_edge[outgoing].values[0])
        gap = abs(end_val - start_val)
        report.append(CornerGap(c.index, c.vertex, gap, bool(gap > tol)))
    return report
