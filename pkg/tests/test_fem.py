import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrcauchy.fem import (
    FemError,
    FeFunction,
    SpaceKind,
    assemble_mass,
    assemble_stiffness,
    boundary_load,
    dofmap,
    error_norms,
    h1_delta_norm,
    h1_norm,
    h1_seminorm,
    integrate,
    interpolate,
    l2_norm,
)
from qrcauchy.geometry import l_shape, unit_square
from qrcauchy.mesh import TriMesh, generate_structured, refine_uniform


class Field:
    def __init__(self, value, gradient):
        self.value, self.gradient = value, gradient


def test_stiffness_kernel_and_symmetry(square_mesh16):
    K = assemble_stiffness(square_mesh16)
    assert np.abs(K @ np.ones(square_mesh16.n_nodes)).max() < 1e-12
    assert abs(K - K.T).max() <= 1e-14 * abs(K).max()
    evals = np.linalg.eigvalsh(K.toarray())
    assert evals.min() > -1e-12


def test_mass_area_identity(square_mesh16):
    M = assemble_mass(square_mesh16)
    one = np.ones(square_mesh16.n_nodes)
    assert one @ M @ one == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.eigvalsh(M.toarray()).min() > 0


def test_linear_x_norms(square_mesh16):
    u = interpolate(square_mesh16, lambda x, y: x)
    K = assemble_stiffness(square_mesh16)
    assert u.values @ K @ u.values == pytest.approx(1.0, abs=1e-12)
    assert h1_seminorm(u) == pytest.approx(1.0, abs=1e-12)
    assert l2_norm(u) == pytest.approx(1 / math.sqrt(3), abs=1e-12)
    assert h1_norm(u) ** 2 == pytest.approx(1 + 1 / 3, abs=1e-12)


def test_constant_seminorm_and_delta_norm(square_mesh16):
    c = FeFunction(square_mesh16, np.full(square_mesh16.n_nodes, 3.0))
    assert h1_seminorm(c) == pytest.approx(0.0, abs=1e-12)
    zero = FeFunction(square_mesh16, np.zeros(square_mesh16.n_nodes))
    assert h1_delta_norm(zero, 2.0) == 2.0


def test_error_norms_affine_and_constant(square_mesh16):
    f = Field(lambda x, y: 2 * x - y + 1, lambda x, y: (np.full_like(x, 2.0), np.full_like(x, -1.0)))
    u = interpolate(square_mesh16, f.value)
    l2, h1 = error_norms(u, f)
    assert l2 <= 1e-12 and h1 <= 1e-12
    one = Field(lambda x, y: np.ones_like(x), lambda x, y: (np.zeros_like(x), np.zeros_like(x)))
    zero = FeFunction(square_mesh16, np.zeros(square_mesh16.n_nodes))
    assert error_norms(zero, one).l2 == pytest.approx(1.0, abs=1e-12)


def test_interpolation_error_rates():
    x2 = Field(lambda x, y: x ** 2, lambda x, y: (2 * x, np.zeros_like(x)))
    spec = unit_square()
    errs = []
    for n in (8, 16, 32):
        m = generate_structured(spec, n)
        errs.append(error_norms(interpolate(m, x2.value), x2))
    ratio = errs[0].l2 / errs[1].l2
    assert 3.6 <= ratio <= 4.4
    h1_rate = math.log2(errs[1].h1 / errs[2].h1)
    assert h1_rate >= 0.9


def test_quadrature_degree_four(square_mesh16):
    # x^4 integrates to 1/5 exactly with a degree-4 rule
    assert integrate(square_mesh16, lambda x, y: x ** 4) == pytest.approx(0.2, abs=1e-14)
    assert integrate(square_mesh16, lambda x, y: x ** 2 * y ** 2) == pytest.approx(1 / 9, abs=1e-14)


def test_mismatched_mesh_rejected(square_mesh16):
    other = generate_structured(unit_square(), 8)
    a = FeFunction(square_mesh16, np.zeros(square_mesh16.n_nodes))
    b = FeFunction(other, np.zeros(other.n_nodes))
    with pytest.raises(FemError):
        a + b
    with pytest.raises(FemError):
        error_norms(a, b)


def test_fefunction_rejects_nonfinite(square_mesh16):
    vals = np.zeros(square_mesh16.n_nodes)
    vals[3] = np.nan
    with pytest.raises(FemError):
        FeFunction(square_mesh16, vals)


def test_fefunction_csv(tmp_path, square):
    m = generate_structured(square, 2)
    u = interpolate(m, lambda x, y: x + y)
    u.to_csv(tmp_path / "u.csv")
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "node_index,x,y,value"
    assert len(lines) == 1 + m.n_nodes


def test_degenerate_triangle_rejected():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 3], [0, 1, 2]])
    m = TriMesh(nodes, tris, np.array([[0, 1]]), np.array(["G"]))
    with pytest.raises(FemError):
        assemble_stiffness(m)


@pytest.mark.parametrize("gamma", [("bottom",), ("bottom", "right")])
def test_dofmaps_closed_edges(gamma):
    spec = unit_square(gamma)
    m = generate_structured(spec, 4)
    for kind, tag in ((SpaceKind.V0, "G"), (SpaceKind.V0_TILDE, "GT")):
        d = dofmap(m, kind)
        on = set(m.boundary_edges[m.boundary_tags == tag].ravel().tolist())
        assert set(d.constrained_nodes.tolist()) == on
        assert d.n_dofs + len(d.constrained_nodes) == m.n_nodes
    # the two mixed corners are constrained in both spaces
    v0, vt = dofmap(m, "V0"), dofmap(m, "V0_TILDE")
    both = set(v0.constrained_nodes.tolist()) & set(vt.constrained_nodes.tolist())
    assert len(both) == 2


def test_boundary_load_constant_flux(square):
    m = generate_structured(square, 8)
    ids = np.arange(len(m.boundary_edges))
    load = boundary_load(m, ids, np.ones((len(ids), 2)))
    assert load.sum() == pytest.approx(4.0, abs=1e-13)


def _shuffle(mesh, perm):
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return TriMesh(mesh.nodes[perm], inv[mesh.triangles], inv[mesh.boundary_edges], mesh.boundary_tags.copy())


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_assembly_permutation_invariance(seed):
    m = generate_structured(l_shape(), 4)
    perm = np.random.default_rng(seed).permutation(m.n_nodes)
    s = _shuffle(m, perm)
    for assemble in (assemble_stiffness, assemble_mass):
        A, B = assemble(m).toarray(), assemble(s).toarray()
        assert np.allclose(B, A[np.ix_(perm, perm)], atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6))
def test_norms_match_quadratic_forms(coeffs):
    m = generate_structured(unit_square(), 4)
    a, b, c, d, e, f = coeffs
    u = interpolate(m, lambda x, y: a + b * x + c * y + d * x * y + e * x ** 2 + f * y ** 2)
    K, M = assemble_stiffness(m), assemble_mass(m)
    assert h1_seminorm(u) ** 2 == pytest.approx(u.values @ K @ u.values, rel=1e-12, abs=1e-12)
    assert l2_norm(u) ** 2 == pytest.approx(u.values @ M @ u.values, rel=1e-12, abs=1e-12)
    zero = FeFunction(m, np.zeros(m.n_nodes))
    l2, h1 = error_norms(zero, u)
    assert l2 == pytest.approx(l2_norm(u), rel=1e-10, abs=1e-12)
    assert h1 == pytest.approx(h1_norm(u), rel=1e-10, abs=1e-12)
