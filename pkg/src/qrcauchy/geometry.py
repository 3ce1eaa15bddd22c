"""Polygonal domains with a Gamma / Gamma-tilde boundary partition."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class GeometryError(ValueError):
    pass


class Tag(str, enum.Enum):
    """Boundary label: GAMMA carries the Cauchy data, GAMMA_TILDE is inaccessible."""

    GAMMA = "G"
    GAMMA_TILDE = "GT"

    @classmethod
    def parse(cls, value) -> "Tag":
        if isinstance(value, Tag):
            return value
        key = str(value).strip().upper()
        aliases = {"G": cls.GAMMA, "GAMMA": cls.GAMMA, "GT": cls.GAMMA_TILDE, "GAMMA_TILDE": cls.GAMMA_TILDE}
        try:
            return aliases[key]
        except KeyError:
            raise GeometryError(f"unknown edge tag {value!r} (expected G or GT)") from None


class CornerKind(str, enum.Enum):
    GAMMA = "GAMMA"
    GAMMA_TILDE = "GAMMA_TILDE"
    MIXED = "MIXED"


@dataclass(frozen=True)
class CornerRecord:
    vertex: tuple[float, float]
    omega: float
    kind: CornerKind
    incident_edges: tuple[int, int]
    index: int = -1


@dataclass(frozen=True)
class ExponentReport:
    s_C_sup: float
    s_M_sup: float
    s_sup: float
    s_used: float


def _segments_intersect(p1, p2, q1, q2, tol):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_segment(a, b, c):
        return (min(a[0], b[0]) - tol <= c[0] <= max(a[0], b[0]) + tol
                and min(a[1], b[1]) - tol <= c[1] <= max(a[1], b[1]) + tol)

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if ((o1 > tol and o2 < -tol) or (o1 < -tol and o2 > tol)) and \
            ((o3 > tol and o4 < -tol) or (o3 < -tol and o4 > tol)):
        return True
    if abs(o1) <= tol and on_segment(p1, p2, q1):
        return True
    if abs(o2) <= tol and on_segment(p1, p2, q2):
        return True
    if abs(o3) <= tol and on_segment(q1, q2, p1):
        return True
    if abs(o4) <= tol and on_segment(q1, q2, p2):
        return True
    return False


@dataclass(frozen=True, eq=False)
class PolygonSpec:
    """Counter-clockwise simple polygon; edge ``i`` joins vertex ``i`` to ``i+1 mod N``."""

    vertices: np.ndarray
    edge_tags: tuple[Tag, ...]

    def __init__(self, vertices, edge_tags):
        verts = np.array(vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2:
            raise GeometryError("vertices must be a sequence of 2D points")
        tags = tuple(Tag.parse(t) for t in edge_tags)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "edge_tags", tags)
        verts.setflags(write=False)
        self._validate()

    def __eq__(self, other):
        if not isinstance(other, PolygonSpec):
            return NotImplemented
        return np.array_equal(self.vertices, other.vertices) and self.edge_tags == other.edge_tags

    @property
    def n_edges(self) -> int:
        return len(self.vertices)

    def edge(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices[i], self.vertices[(i + 1) % self.n_edges]

    @property
    def diameter(self) -> float:
        d = self.vertices[:, None, :] - self.vertices[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())

    @property
    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    def gamma_edges(self) -> list[int]:
        return [i for i, t in enumerate(self.edge_tags) if t is Tag.GAMMA]

    def outward_normal(self, i: int) -> np.ndarray:
        a, b = self.edge(i)
        t = b - a
        return np.array([t[1], -t[0]]) / np.hypot(*t)

    def _validate(self):
        n = len(self.vertices)
        if n < 3:
            raise GeometryError("a polygon needs at least 3 vertices")
        if len(self.edge_tags) != n:
            raise GeometryError(f"expected {n} edge tags, got {len(self.edge_tags)}")
        if Tag.GAMMA not in self.edge_tags or Tag.GAMMA_TILDE not in self.edge_tags:
            raise GeometryError("need at least one GAMMA edge and one GAMMA_TILDE edge")
        lengths = np.hypot(*(np.roll(self.vertices, -1, axis=0) - self.vertices).T)
        if np.any(lengths <= 1e-14 * lengths.max()):
            i = int(np.argmin(lengths))
            raise GeometryError(f"edge {i} has zero length (repeated vertex {i})")
        if self.area <= 0:
            raise GeometryError("polygon must be counter-clockwise oriented (positive signed area)")
        for i in range(n):
            a = self.vertices[(i + 1) % n] - self.vertices[i]
            b = self.vertices[i - 1] - self.vertices[i]
            if abs(a[0] * b[1] - a[1] * b[0]) <= 1e-14 * lengths.max() ** 2 and a @ b > 0:
                raise GeometryError(f"degenerate corner at vertex {i} {tuple(self.vertices[i])}: zero angle")
        tol = 1e-12 * self.diameter ** 2
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_intersect(*self.edge(i), *self.edge(j), tol):
                    raise GeometryError(f"polygon is not simple: edges {i} and {j} intersect")

    def to_json(self) -> str:
        return json.dumps({"vertices": self.vertices.tolist(), "edge_tags": [t.value for t in self.edge_tags]})

    @classmethod
    def from_json(cls, text: str) -> "PolygonSpec":
        data = json.loads(text)
        try:
            return cls(data["vertices"], data["edge_tags"])
        except KeyError as exc:
            raise GeometryError(f"polygon JSON missing key {exc}") from None

    @classmethod
    def load(cls, path) -> "PolygonSpec":
        return cls.from_json(Path(path).read_text())


SQUARE_EDGES = ("bottom", "right", "top", "left")
LSHAPE_EDGES = ("bottom", "right", "notch_h", "notch_v", "top", "left")


def _tags_from_gamma(names: Sequence[str], gamma) -> list[Tag]:
    chosen = set()
    for g in gamma:
        if isinstance(g, (int, np.integer)) or str(g).isdigit():
            idx = int(g)
            if not 0 <= idx < len(names):
                raise GeometryError(f"edge index {idx} out of range")
        else:
            try:
                idx = names.index(str(g).strip())
            except ValueError:
                raise GeometryError(f"unknown edge name {g!r}; choose from {', '.join(names)}") from None
        chosen.add(idx)
    return [Tag.GAMMA if i in chosen else Tag.GAMMA_TILDE for i in range(len(names))]


def unit_square(gamma=("bottom",)) -> PolygonSpec:
    verts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    return PolygonSpec(verts, _tags_from_gamma(SQUARE_EDGES, gamma))


def l_shape(gamma=("bottom", "right", "notch_h")) -> PolygonSpec:
    """(0,1)^2 minus [1/2,1)^2; the reentrant corner sits at (1/2, 1/2)."""
    verts = [(0.0, 0.0), (1.0, 0.0), (1.0, 0.5), (0.5, 0.5), (0.5, 1.0), (0.0, 1.0)]
    return PolygonSpec(verts, _tags_from_gamma(LSHAPE_EDGES, gamma))


def named_geometry(name: str, gamma) -> PolygonSpec:
    if isinstance(gamma, str):
        gamma = [g for g in gamma.split(",") if g.strip()]
    if name == "square":
        return unit_square(gamma)
    if name in ("lshape", "l-shape", "L"):
        return l_shape(gamma)
    raise GeometryError(f"unknown geometry {name!r} (square, lshape)")


def classify_corners(spec: PolygonSpec) -> list[CornerRecord]:
    """One record per vertex with its interior angle in (0, 2pi) and corner type."""
    n = spec.n_edges
    records = []
    for i in range(n):
        v = spec.vertices[i]
        to_next = spec.vertices[(i + 1) % n] - v
        to_prev = spec.vertices[i - 1] - v
        cross = to_next[0] * to_prev[1] - to_next[1] * to_prev[0]
        dot = to_next[0] * to_prev[0] + to_next[1] * to_prev[1]
        omega = math.atan2(cross, dot) % (2 * math.pi)
        scale = np.hypot(*to_next) * np.hypot(*to_prev)
        if abs(cross) <= 1e-14 * scale and dot > 0:
            raise GeometryError(f"degenerate corner at vertex {i} {tuple(v)}: incident edges fold back (zero angle)")
        incoming, outgoing = (i - 1) % n, i
        tags = {spec.edge_tags[incoming], spec.edge_tags[outgoing]}
        if tags == {Tag.GAMMA}:
            kind = CornerKind.GAMMA
        elif tags == {Tag.GAMMA_TILDE}:
            kind = CornerKind.GAMMA_TILDE
        else:
            kind = CornerKind.MIXED
        records.append(CornerRecord((float(v[0]), float(v[1])), omega, kind, (incoming, outgoing), i))
    return records


def regularity_exponent(corners: Sequence[CornerRecord], slack: float = 0.01) -> ExponentReport:
    """Sobolev exponent bounds per corner type.

    Same-type corners limit s by ``1 + pi/omega`` once reentrant; mixed corners by
    ``1 + pi/(2 omega)`` once ``omega >= pi/2``.  Both bounds are strict, so the
    exponent actually used is the supremum minus ``slack``.
    """
    if not corners:
        raise GeometryError("need at least one corner")
    if slack <= 0:
        raise ValueError("slack must be positive")
    s_c, s_m = 2.0, 2.0
    for c in corners:
        if c.kind is CornerKind.MIXED:
            if c.omega >= math.pi / 2:
                s_m = min(s_m, 1.0 + math.pi / (2.0 * c.omega))
        elif c.omega > math.pi:
            s_c = min(s_c, 1.0 + math.pi / c.omega)
    s = min(s_c, s_m)
    return ExponentReport(s_c, s_m, s, s - slack)
