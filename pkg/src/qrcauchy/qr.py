"""Discrete mixed quasi-reversibility systems (source and Cauchy-data forms).

Unknowns are u in V0 (zero on closed Gamma) and lambda in V0~ (zero on closed
Gamma-tilde).  The block matrix is stored in the coercive form

    [  eps K_uu   K_ul ] [u]     [ b_u ]
    [ -K_lu       K_ll ] [l]  =  [ b_l ]

so that x^T A x = eps |u|^2 + |lambda|^2 for any pair; the second row is the
negated constraint (grad u, grad mu) - (grad lambda, grad mu) = (f, mu) + <g1, mu>.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from qrcauchy.fem import (
    DofMap,
    FeFunction,
    SpaceKind,
    assemble_mass,
    assemble_stiffness,
    boundary_edge_geometry,
    boundary_load,
    dofmap,
)
from qrcauchy.geometry import Tag
from qrcauchy.mesh import TriMesh


class QRSolveError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class QRSystem:
    mesh: TriMesh
    epsilon: float
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dof_u: DofMap
    dof_lambda: DofMap
    lifting: np.ndarray        # nodal U_h, zero for the source form
    source: np.ndarray         # nodal f (zeros when absent)
    flux_load: np.ndarray      # nodal <g1, phi_i>
    form: str = "source"

    @property
    def n_u(self) -> int:
        return self.dof_u.n_dofs

    @property
    def n_lambda(self) -> int:
        return self.dof_lambda.n_dofs


@dataclass(eq=False)
class QRSolution:
    u: FeFunction
    lam: FeFunction
    epsilon: float
    system: QRSystem
    residual_report: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        rows = ["x,y,u,lambda"]
        for (x, y), a, b in zip(self.u.mesh.nodes.tolist(), self.u.values.tolist(), self.lam.values.tolist()):
            rows.append(f"{x:.17g},{y:.17g},{a:.17g},{b:.17g}")
        Path(path).write_text("\n".join(rows) + "\n")

    def residuals_json(self, path) -> None:
        Path(path).write_text(json.dumps(_jsonable(self.residual_report), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.floating, float)):
        return float(f"{float(obj):.17g}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def nodal_field(mesh: TriMesh, f) -> np.ndarray:
    """Nodal values from a callable f(x, y), an FeFunction, an ExactField or an array."""
    if f is None:
        return np.zeros(mesh.n_nodes)
    if isinstance(f, FeFunction):
        if f.mesh is not mesh:
            raise ValueError("source lives on a different mesh")
        return f.values.copy()
    func = getattr(f, "value", f)
    if callable(func):
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        vals = np.broadcast_to(np.asarray(func(x, y), dtype=float), x.shape).copy()
    else:
        vals = np.asarray(f, dtype=float)
        if vals.shape != (mesh.n_nodes,):
            raise ValueError(f"nodal field must have {mesh.n_nodes} entries, got shape {vals.shape}")
        vals = vals.copy()
    if not np.all(np.isfinite(vals)):
        raise ValueError("source values must be finite")
    return vals


def _check_eps(epsilon):
    epsilon = float(epsilon)
    if not epsilon > 0 or not np.isfinite(epsilon):
        raise ValueError(f"epsilon must be positive and finite, got {epsilon}")
    return epsilon


def _blocks(mesh: TriMesh, epsilon: float):
    K = assemble_stiffness(mesh)
    du, dl = dofmap(mesh, SpaceKind.V0), dofmap(mesh, SpaceKind.V0_TILDE)
    Ku = K[du.free_nodes]
    Kl = K[dl.free_nodes]
    A = sp.bmat([
        [epsilon * Ku[:, du.free_nodes], Ku[:, dl.free_nodes]],
        [-Kl[:, du.free_nodes], Kl[:, dl.free_nodes]],
    ], format="csr")
    A.sort_indices()
    return K, du, dl, A


def assemble_qr_source(mesh: TriMesh, epsilon, f) -> QRSystem:
    """Source form: eps(grad u, grad v) + (grad v, grad l) = 0, (grad u - grad l, grad mu) = (f, mu)."""
    epsilon = _check_eps(epsilon)
    K, du, dl, A = _blocks(mesh, epsilon)
    fn = nodal_field(mesh, f)
    Mf = assemble_mass(mesh) @ fn
    rhs = np.concatenate([np.zeros(du.n_dofs), -Mf[dl.free_nodes]])
    zeros = np.zeros(mesh.n_nodes)
    return QRSystem(mesh, epsilon, A, rhs, du, dl, zeros, fn, zeros.copy(), "source")


def gamma_edge_ids(mesh: TriMesh) -> np.ndarray:
    return np.flatnonzero(mesh.boundary_tags == Tag.GAMMA.value)


def _flux_values(mesh: TriMesh, g1) -> np.ndarray:
    """Gauss-point flux values (n_gamma_edges, 2) on the Gamma edges."""
    ids = gamma_edge_ids(mesh)
    if g1 is None:
        return np.zeros((len(ids), 2))
    if callable(g1):
        _, _, normal, pts = boundary_edge_geometry(mesh, ids)
        vals = g1(pts[..., 0], pts[..., 1], normal[:, None, 0], normal[:, None, 1])
        vals = np.broadcast_to(np.asarray(vals, dtype=float), (len(ids), 2))
    else:
        arr = np.asarray(g1, dtype=float)
        if arr.shape == (len(mesh.boundary_edges), 2):
            vals = arr[ids]
        elif arr.shape == (len(ids), 2):
            vals = arr
        else:
            raise ValueError("g1 must hold two Gauss values per boundary edge (or per Gamma edge)")
    if not np.all(np.isfinite(vals)):
        raise ValueError("g1 is not finite on some Gamma edge")
    return vals


def assemble_qr_cauchy(mesh: TriMesh, epsilon, g0, g1) -> QRSystem:
    """Cauchy-data form with lifting U_h (g0 on closed Gamma, zero elsewhere).

    ``g0``: nodal array (only closed-Gamma entries are read) or callable f(x, y).
    ``g1``: Gauss-point values per boundary edge, shape (n_bedges, 2), or a
    callable g1(x, y, nx, ny) evaluated at the two Gauss points of each Gamma edge.
    """
    epsilon = _check_eps(epsilon)
    K, du, dl, A = _blocks(mesh, epsilon)
    lifting = np.zeros(mesh.n_nodes)
    gamma_nodes = du.constrained_nodes
    if g0 is not None:
        if callable(getattr(g0, "value", g0)) and not isinstance(g0, np.ndarray):
            func = getattr(g0, "value", g0)
            pts = mesh.nodes[gamma_nodes]
            vals = np.broadcast_to(np.asarray(func(pts[:, 0], pts[:, 1]), dtype=float), (len(gamma_nodes),))
        else:
            arr = np.asarray(g0, dtype=float)
            if arr.shape != (mesh.n_nodes,):
                raise ValueError(f"nodal g0 must have {mesh.n_nodes} entries")
            vals = arr[gamma_nodes]
        bad = ~np.isfinite(vals)
        if np.any(bad):
            node = int(gamma_nodes[np.flatnonzero(bad)[0]])
            raise ValueError(f"g0 is not finite at Gamma node {node} {tuple(mesh.nodes[node])}")
        lifting[gamma_nodes] = vals
    ids = gamma_edge_ids(mesh)
    flux = boundary_load(mesh, ids, _flux_values(mesh, g1))
    KU = K @ lifting
    rhs = np.concatenate([-epsilon * KU[du.free_nodes], -flux[dl.free_nodes] + KU[dl.free_nodes]])
    return QRSystem(mesh, epsilon, A, rhs, du, dl, lifting, np.zeros(mesh.n_nodes), flux, "cauchy")


def bilinear_form(system: QRSystem, v: np.ndarray, mu: np.ndarray, w=None, eta=None) -> float:
    """A_eps((v, mu); (w, eta)) for nodal fields; defaults to the diagonal (w, eta) = (v, mu).

    Values at constrained nodes are ignored.
    """
    x = np.concatenate([np.asarray(v)[system.dof_u.free_nodes], np.asarray(mu)[system.dof_lambda.free_nodes]])
    if w is None:
        y = x
    else:
        y = np.concatenate([np.asarray(w)[system.dof_u.free_nodes], np.asarray(eta)[system.dof_lambda.free_nodes]])
    # test functions index the rows, trial functions the columns
    return float(y @ (system.matrix @ x))


def _residual(A, x, b) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    if nb == 0.0:
        return float(r)
    return float(r / nb)


def solve(system: QRSystem, refine_steps: int = 3, tol: float = 1e-10) -> QRSolution:
    """Sparse LU solve of the coupled block system with a few refinement sweeps."""
    A, b = system.matrix, system.rhs
    if not np.any(b):
        x = np.zeros_like(b)
    else:
        try:
            lu = spla.splu(A.tocsc())
        except RuntimeError as exc:
            raise QRSolveError(f"factorization failed for eps={system.epsilon:g} "
                               f"(n_u={system.n_u}, n_lambda={system.n_lambda}): {exc}") from None
        x = lu.solve(b)
        for _ in range(refine_steps):
            if _residual(A, x, b) <= 1e-2 * tol:
                break
            x = x + lu.solve(b - A @ x)
        if not np.all(np.isfinite(x)):
            raise QRSolveError(f"non-finite solution for eps={system.epsilon:g} "
                               f"(n_u={system.n_u}, n_lambda={system.n_lambda})")
    res = _residual(A, x, b)
    nu = system.n_u
    u = system.lifting + system.dof_u.extend(x[:nu])
    lam = system.dof_lambda.extend(x[nu:])
    sol = QRSolution(FeFunction(system.mesh, u), FeFunction(system.mesh, lam), system.epsilon, system)
    sol.residual_report = {"algebraic_residual": res, "epsilon": system.epsilon,
                           "n_u": nu, "n_lambda": system.n_lambda, "form": system.form}
    if res > tol:
        sol.residual_report["warning"] = f"algebraic residual {res:.3e} above {tol:g}"
    return sol


def _rel(r: np.ndarray, *scales: np.ndarray) -> float:
    s = sum(float(np.linalg.norm(v)) for v in scales)
    n = float(np.linalg.norm(r))
    return n / s if s > 0 else n


def strong_residuals(sol: QRSolution, f=None) -> dict:
    """Weak residuals of the decoupled strong equations against interior hat functions.

    r_u = -(1+eps) Lap u - f, r_l = -(1+eps) Lap l + eps f on nodes free in both
    spaces, plus -Lap(u - l) = f (with the Gamma flux) on every V0~ dof.
    """
    system = sol.system
    mesh = system.mesh
    eps = system.epsilon
    K = assemble_stiffness(mesh)
    fn = system.source if f is None else nodal_field(mesh, f)
    Mf = assemble_mass(mesh) @ fn
    u, lam = sol.u.values, sol.lam.values
    Ku, Kl = K @ u, K @ lam
    # cancellation scales: the same products with absolute values
    absK, absM = abs(K), abs(assemble_mass(mesh))
    sKu, sKl, sMf = absK @ np.abs(u), absK @ np.abs(lam), absM @ np.abs(fn)
    both = np.intersect1d(system.dof_u.free_nodes, system.dof_lambda.free_nodes)
    r_u = (1 + eps) * Ku[both] - Mf[both]
    r_l = (1 + eps) * Kl[both] + eps * Mf[both]
    fl = system.dof_lambda.free_nodes
    r_d = Ku[fl] - Kl[fl] - Mf[fl] - system.flux_load[fl]
    report = {
        "algebraic_residual": sol.residual_report.get("algebraic_residual", np.nan),
        "u_equation": _rel(r_u, (1 + eps) * sKu[both], sMf[both]),
        "lambda_equation": _rel(r_l, (1 + eps) * sKl[both], eps * sMf[both]),
        "difference_equation": _rel(r_d, sKu[fl], sKl[fl], sMf[fl], np.abs(system.flux_load[fl])),
        "n_interior": int(len(both)),
    }
    sol.residual_report.update(report)
    return report


def noisy_source(mesh: TriMesh, f, delta: float, seed: int) -> np.ndarray:
    """f + delta * xi / ||xi||_L2 with a seeded normal nodal field xi."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    fn = nodal_field(mesh, f)
    if delta == 0:
        return fn
    xi = np.random.default_rng(seed).standard_normal(mesh.n_nodes)
    norm = np.sqrt(xi @ (assemble_mass(mesh) @ xi))
    return fn + delta * xi / norm


def solve_noisy(mesh: TriMesh, epsilon, f, delta: float, seed: int = 0) -> QRSolution:
    return solve(assemble_qr_source(mesh, epsilon, noisy_source(mesh, f, delta, seed)))


def solve_source(mesh: TriMesh, epsilon, f) -> QRSolution:
    return solve(assemble_qr_source(mesh, epsilon, f))


def solve_cauchy(mesh: TriMesh, epsilon, g0, g1) -> QRSolution:
    return solve(assemble_qr_cauchy(mesh, epsilon, g0, g1))


__all__ = [
    "QRSolveError", "QRSystem", "QRSolution", "assemble_qr_source", "assemble_qr_cauchy",
    "bilinear_form", "solve", "strong_residuals", "solve_noisy", "noisy_source",
    "solve_source", "solve_cauchy", "nodal_field", "gamma_edge_ids",
]
