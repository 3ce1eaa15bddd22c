"""The ten acceptance criteria at their stated tolerances; one summary line each."""

import math
import time

import numpy as np
import pytest

from qrcauchy import fields
from qrcauchy.experiments import SweepConfig, run_sweep, stability_constant
from qrcauchy.fem import FeFunction, error_norms, h1_norm, h1_seminorm
from qrcauchy.geometry import unit_square
from qrcauchy.mesh import generate_structured, read_mesh, write_mesh
from qrcauchy.qr import assemble_qr_source, bilinear_form, solve_noisy, solve_source
from qrcauchy.spectrum import (
    PencilParams,
    adjoint,
    biorthogonality_matrix,
    census_indices,
    eigenvalues,
    verify_adjoint_bc,
    verify_eigen_residual,
)
from qrcauchy.symbol import appendixA_probe, appendixB_sweep, uniform_estimate_probe

OMEGAS = [math.pi / 2, math.pi, 3 * math.pi / 2]
EPSILONS = [1.0, 1e-2, 1e-4]


@pytest.mark.criterion(1, "spectral exactness")
def test_c1_spectral_exactness(record_property):
    t0 = time.perf_counter()
    char, other = 0.0, 0.0
    for omega in OMEGAS:
        for eps in EPSILONS:
            p = PencilParams(omega, eps)
            pairs = eigenvalues(p, range(-2, 3))
            assert len(pairs) == 10
            for pair in pairs:
                res = verify_eigen_residual(pair, p)
                char = max(char, res["characteristic"])
                other = max(other, res["ode"], res["bc"], verify_adjoint_bc(adjoint(pair), p))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"defining eq {char:.1e}, ode/bc {other:.1e}, {elapsed:.2f}s")
    assert char <= 1e-9 and other <= 1e-10
    assert elapsed < 1.0


@pytest.mark.criterion(2, "biorthogonality")
def test_c2_biorthogonality(record_property):
    t0 = time.perf_counter()
    diag, off = 0.0, 0.0
    for omega in OMEGAS:
        for eps in EPSILONS:
            res = biorthogonality_matrix(PencilParams(omega, eps), range(-2, 3))
            diag, off = max(diag, res.max_diag_rel_error), max(off, res.max_offdiag_rel)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"diag rel {diag:.1e}, offdiag/|d_k| {off:.1e}, {elapsed:.2f}s")
    assert diag <= 1e-8 and off <= 1e-8
    assert elapsed < 10.0


@pytest.mark.criterion(3, "coercivity identity")
def test_c3_coercivity(record_property):
    mesh = generate_structured(unit_square(), 32)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for eps in (1.0, 1e-3, 1e-6):
        system = assemble_qr_source(mesh, eps, np.zeros(mesh.n_nodes))
        for _ in range(100):
            v = system.dof_u.extend(rng.standard_normal(system.n_u))
            mu = system.dof_lambda.extend(rng.standard_normal(system.n_lambda))
            lhs = bilinear_form(system, v, mu)
            rhs = eps * h1_seminorm(FeFunction(mesh, v)) ** 2 + h1_seminorm(FeFunction(mesh, mu)) ** 2
            worst = max(worst, abs(lhs - rhs) / rhs)
    record_property("detail", f"max relative gap {worst:.1e} over 300 pairs")
    assert worst <= 1e-10


@pytest.mark.criterion(4, "uniform discrete stability")
def test_c4_uniform_stability(record_property):
    mesh = generate_structured(unit_square(), 32)
    eps_grid = 10.0 ** -np.arange(0, 7)
    consts = [stability_constant(mesh, e, seed=0)[0] for e in eps_grid]
    spread = max(consts) / min(consts)
    record_property("detail", f"C in [{min(consts):.3g}, {max(consts):.3g}], spread x{spread:.2f}")
    assert spread <= 10.0


@pytest.mark.criterion(5, "compatible-data convergence")
def test_c5_compatible_convergence(record_property):
    t0 = time.perf_counter()
    spec = unit_square(("bottom",))
    mesh = generate_structured(spec, 128)
    f, u_star = fields.compatible_source(spec, "y2_sin")
    errs, ratios = [], []
    for k in range(1, 6):
        eps = 10.0 ** -k
        sol = solve_source(mesh, eps, f.value)
        errs.append(error_norms(sol.u, u_star).h1)
        ratios.append(h1_norm(sol.lam) / math.sqrt(eps))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"H1 errors {errs[0]:.3g} -> {errs[-1]:.3g}, "
                              f"lambda/sqrt(eps) band x{max(ratios) / min(ratios):.2f}, {elapsed:.1f}s")
    assert all(b <= 1.05 * a for a, b in zip(errs, errs[1:]))
    assert max(ratios) <= 10 * min(ratios)
    assert elapsed < 120.0


@pytest.mark.criterion(6, "noise term")
def test_c6_noise_term(record_property):
    mesh = generate_structured(unit_square(), 16)
    f = lambda x, y: np.sin(np.pi * x) * y
    worst = 0.0
    for eps in (1e-1, 1e-3):
        u0 = solve_source(mesh, eps, f).u
        base = h1_norm(solve_noisy(mesh, eps, f, 1e-3, seed=3).u - u0)
        for d in (2e-3, 1e-2, 1e-1):
            e = h1_norm(solve_noisy(mesh, eps, f, d, seed=3).u - u0)
            worst = max(worst, abs(e - base * d / 1e-3) / e)
    eps_list = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
    errs = [h1_norm(solve_noisy(mesh, e, f, 1e-3, seed=3).u - solve_source(mesh, e, f).u) for e in eps_list]
    slope = np.polyfit(np.log(eps_list), np.log(errs), 1)[0]
    record_property("detail", f"linearity gap {worst:.1e}, log-log slope {slope:.3f}")
    assert worst <= 1e-10
    assert slope >= -0.6


@pytest.mark.criterion(7, "discretization rate")
def test_c7_discretization_rate(record_property):
    t0 = time.perf_counter()
    common = dict(eps_list=[1e-2], n_list=[8, 16, 32, 64], delta_list=[0.0], ref_levels=2)
    square = run_sweep(SweepConfig(geometry="square", gamma=["bottom"], **common))
    lshape = run_sweep(SweepConfig(geometry="lshape", gamma=["bottom", "right", "notch_h"], exact="none", **common))
    r_sq = square.rates["disc_h1_rate[eps=0.01]"]["rate"]
    r_l = lshape.rates["disc_h1_rate[eps=0.01]"]["rate"]
    elapsed = time.perf_counter() - t0
    record_property("detail", f"square {r_sq:.3f} (s_used {square.s_used:.2f}), "
                              f"L-shape {r_l:.3f} (s_used {lshape.s_used:.3f}), {elapsed:.0f}s")
    assert square.passed and lshape.passed
    assert r_sq >= 0.85
    assert 4 / 3 - 1 - 0.25 <= r_l <= 1.0
    assert r_l <= r_sq - 0.2
    assert elapsed < 300.0


@pytest.mark.criterion(8, "symbol-lab probes")
def test_c8_symbol_lab(record_property):
    t0 = time.perf_counter()
    omega = math.pi / 2
    taus = np.linspace(-100.0, 100.0, 41)
    a = appendixA_probe(omega, 0.0, taus, seed=0)
    b = appendixB_sweep(omega, 0.3, [1.0, 1e-2, 1e-4], np.linspace(-100.0, 100.0, 201))
    u = uniform_estimate_probe(omega, 0.0, [1.0, 1e-2, 1e-4], taus, seed=0)
    elapsed = time.perf_counter() - t0
    band = u.max_ratio / u.median_ratio
    record_property("detail", f"appendixA max {a.max_ratio:.3f}, appendixB saturates {b.passed}, "
                              f"uniform max/median {band:.2f}, {elapsed:.1f}s")
    assert a.passed and a.max_ratio <= 3.5
    assert b.passed
    assert all(c["saturates_Q1"] and c["saturates_Q2"] for c in b.checks.values())
    assert u.passed and band <= 10.0
    assert elapsed < 60.0


@pytest.mark.criterion(9, "singularity census")
def test_c9_census(record_property):
    omegas = [math.pi / 4, math.pi / 2, math.pi, 3 * math.pi / 2, 7 * math.pi / 4]
    got = [census_indices(w) for w in omegas]
    record_property("detail", str(got))
    assert got == [[], [], [0], [0], [0, 1]]


@pytest.mark.criterion(10, "reproducibility")
def test_c10_reproducibility(tmp_path, record_property):
    cfg = SweepConfig(eps_list=[1e-1, 1e-2], n_list=[8, 16], delta_list=[0.0, 1e-3], seed=11)
    r1, r2 = run_sweep(cfg), run_sweep(cfg)
    same_report = r1.to_csv() == r2.to_csv() and r1.to_json() == r2.to_json()
    mesh = generate_structured(unit_square(("bottom", "right")), 16)
    write_mesh(mesh, tmp_path / "m.txt")
    back = read_mesh(tmp_path / "m.txt")
    same_mesh = all(np.array_equal(getattr(mesh, k), getattr(back, k))
                    for k in ("nodes", "triangles", "boundary_edges", "boundary_tags"))
    same_mesh = same_mesh and mesh.nodes.tobytes() == back.nodes.tobytes()
    record_property("detail", f"reports identical {same_report}, mesh round-trip {same_mesh}")
    assert same_report and same_mesh
