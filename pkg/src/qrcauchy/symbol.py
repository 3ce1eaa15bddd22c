"""Finite-difference bench for the one-dimensional slice problems on (0, omega).

Slice problem for lam in C (not an eigenvalue of the pencil):

    -(d^2 + lam^2) u = f1,     -(d^2 + lam^2) l = eps * f2,
    u(0) = 0,  l(omega) = 0,  u'(0) - l'(0) = 0,  eps u'(omega) + l'(omega) = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from qrcauchy.spectrum import PencilParams, eigenvalue


class SymbolError(ValueError):
    pass


def _trapz_norm(values, h: float) -> float:
    w = np.full(len(values), h)
    w[0] = w[-1] = 0.5 * h
    return float(np.sqrt(np.sum(w * np.abs(values) ** 2)))


def grid_l2(values, h: float) -> float:
    return _trapz_norm(values, h)


def grid_h1(values, h: float) -> float:
    d = np.diff(values) / h
    return float(np.sqrt(_trapz_norm(values, h) ** 2 + h * np.sum(np.abs(d) ** 2)))


def on_lattice(beta: float, omega: float, tol: float = 1e-10) -> bool:
    """True when beta = (pi/2 + n pi)/omega for some integer n."""
    x = beta * omega / math.pi - 0.5
    return abs(x - round(x)) * math.pi / omega <= tol


def distance_to_spectrum(lam: complex, params: PencilParams) -> float:
    n0 = int(round(lam.real * params.omega / math.pi - 0.5))
    return min(abs(lam - eigenvalue(n, s, params)) for n in (n0 - 1, n0, n0 + 1) for s in (1, -1))


def default_points(lam: complex, omega: float) -> int:
    """At least 200 points and about 40 points per unit of |lam| * omega."""
    return int(max(200, math.ceil(40 * abs(lam) * omega))) + 1


@dataclass
class SliceProblem:
    omega: float
    epsilon: float
    lam: complex
    f1: np.ndarray
    f2: np.ndarray
    n_points: int = 0

    def __post_init__(self):
        self.f1 = np.asarray(self.f1, dtype=complex)
        self.f2 = np.asarray(self.f2, dtype=complex)
        if self.n_points == 0:
            self.n_points = len(self.f1)
        if self.n_points < 200:
            raise SymbolError(f"n_points must be at least 200, got {self.n_points}")
        if self.f1.shape != (self.n_points,) or self.f2.shape != (self.n_points,):
            raise SymbolError("right-hand sides must be sampled on the n_points grid")
        self.lam = complex(self.lam)

    @property
    def theta(self) -> np.ndarray:
        return np.linspace(0.0, self.omega, self.n_points)

    @property
    def h(self) -> float:
        return self.omega / (self.n_points - 1)

    @classmethod
    def from_functions(cls, omega, epsilon, lam, f1, f2, n_points=None):
        n = n_points or default_points(complex(lam), omega)
        th = np.linspace(0.0, omega, n)
        return cls(omega, epsilon, lam, np.broadcast_to(f1(th), th.shape), np.broadcast_to(f2(th), th.shape), n)


@dataclass
class SliceSolution:
    theta: np.ndarray
    u: np.ndarray
    l: np.ndarray
    residual: float
    problem: SliceProblem

    def d2u(self) -> np.ndarray:
        # ODE identity: u'' = -lam^2 u - f1
        p = self.problem
        return -p.lam ** 2 * self.u - p.f1

    def d2l(self) -> np.ndarray:
        p = self.problem
        return -p.lam ** 2 * self.l - p.epsilon * p.f2


def _slice_matrix(n: int, h: float, lam: complex, eps: float) -> sp.csr_matrix:
    """Unknowns: u_1..u_{n-1} then l_0..l_{n-2} (u_0 = l_{n-1} = 0 eliminated)."""
    m = n - 1
    rows, cols, vals = [], [], []

    def ui(i):  # u_i for i >= 1
        return i - 1

    def li(i):  # l_i for i <= n-2
        return m + i

    diag = 2.0 / h ** 2 - lam ** 2
    off = -1.0 / h ** 2
    eq = 0
    for i in range(1, n - 1):
        # u equation at node i
        for j, c in ((i - 1, off), (i, diag), (i + 1, off)):
            if j >= 1:
                rows.append(eq), cols.append(ui(j)), vals.append(c)
        eq += 1
    for i in range(1, n - 1):
        for j, c in ((i - 1, off), (i, diag), (i + 1, off)):
            if j <= n - 2:
                rows.append(eq), cols.append(li(j)), vals.append(c)
        eq += 1
    # u'(0) - l'(0) = 0, one-sided second order; u_0 = 0
    for j, c in ((1, 4.0), (2, -1.0)):
        rows.append(eq), cols.append(ui(j)), vals.append(c / (2 * h))
    for j, c in ((0, -3.0), (1, 4.0), (2, -1.0)):
        rows.append(eq), cols.append(li(j)), vals.append(-c / (2 * h))
    eq += 1
    # eps u'(omega) + l'(omega) = 0; l_{n-1} = 0
    for j, c in ((n - 1, 3.0), (n - 2, -4.0), (n - 3, 1.0)):
        rows.append(eq), cols.append(ui(j)), vals.append(eps * c / (2 * h))
    for j, c in ((n - 2, -4.0), (n - 3, 1.0)):
        rows.append(eq), cols.append(li(j)), vals.append(c / (2 * h))
    eq += 1
    return sp.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(2 * m, 2 * m))


def _solve_refined(A, b, steps: int = 2):
    """Sparse LU plus a couple of refinement sweeps.

    Returns x and the normwise backward error |Ax - b| / (|A| |x| + |b|) in the
    max norm; the plain |Ax - b|/|b| sits near cond(A) * 1e-16 ~ 1e-10 here.
    """
    if not np.any(b):
        return np.zeros_like(b), 0.0
    lu = spla.splu(A.tocsc())
    x = lu.solve(b)
    for _ in range(steps):
        x = x + lu.solve(b - A @ x)
    r = np.abs(A @ x - b).max()
    scale = spla.norm(A, np.inf) * np.abs(x).max() + np.abs(b).max()
    return x, float(r / scale)


def solve_slice(p: SliceProblem, check_spectrum: bool = True) -> SliceSolution:
    params = PencilParams(p.omega, p.epsilon)
    if check_spectrum:
        dist = distance_to_spectrum(p.lam, params)
        if dist <= 1e-8:
            raise SymbolError(f"lambda = {p.lam} lies within {dist:.1e} of a pencil eigenvalue")
    n, h = p.n_points, p.h
    A = _slice_matrix(n, h, p.lam, p.epsilon)
    b = np.concatenate([p.f1[1:n - 1], p.epsilon * p.f2[1:n - 1], [0.0, 0.0]]).astype(complex)
    x, residual = _solve_refined(A, b)
    u = np.concatenate([[0.0], x[:n - 1]])
    l = np.concatenate([x[n - 1:], [0.0]])
    return SliceSolution(p.theta, u, l, residual, p)


def slice_ratio(sol: SliceSolution) -> float:
    """[sqrt(eps)(|u''| + |lam|^2 |u|) + |l''| + |lam|^2 |l|] / (|f1| + sqrt(eps) |f2|)."""
    p = sol.problem
    h, eps, lam2 = p.h, p.epsilon, abs(p.lam) ** 2
    num = (math.sqrt(eps) * (grid_l2(sol.d2u(), h) + lam2 * grid_l2(sol.u, h))
           + grid_l2(sol.d2l(), h) + lam2 * grid_l2(sol.l, h))
    den = grid_l2(p.f1, h) + math.sqrt(eps) * grid_l2(p.f2, h)
    return num / den


def random_rhs(rng: np.random.Generator, n_modes: int = 8):
    """Smooth random profile on (0, omega): random cosine series, resolution independent."""
    c = rng.standard_normal(n_modes) + 1j * rng.standard_normal(n_modes)

    def make(omega):
        def f(theta):
            k = np.arange(n_modes)[:, None]
            return (c[:, None] * np.cos(k * np.pi * np.asarray(theta)[None, :] / omega)).sum(0)
        return f

    return make


@dataclass
class ProbeTable:
    rows: list                # dicts with epsilon, tau, ratio (and more)
    seed: int
    max_ratio: float
    argmax: tuple
    median_ratio: float
    passed: bool


def _check_beta(beta, omega):
    if on_lattice(beta, omega):
        raise SymbolError(f"beta = {beta} lies on the excluded lattice (pi/2 + n pi)/omega")


def uniform_estimate_probe(omega: float, beta: float, eps_grid, tau_grid, seed: int = 0,
                           band: float = 10.0) -> ProbeTable:
    _check_beta(beta, omega)
    rng = np.random.default_rng(seed)
    rows = []
    for eps in eps_grid:
        make1, make2 = random_rhs(rng), random_rhs(rng)
        for tau in tau_grid:
            lam = complex(beta, tau)
            p = SliceProblem.from_functions(omega, eps, lam, make1(omega), make2(omega))
            sol = solve_slice(p)
            rows.append({"epsilon": float(eps), "tau": float(tau), "ratio": slice_ratio(sol),
                         "residual": sol.residual})
    ratios = np.array([r["ratio"] for r in rows])
    k = int(np.argmax(ratios))
    med = float(np.median(ratios))
    passed = bool(np.all(np.isfinite(ratios)) and ratios.max() <= band * med)
    return ProbeTable(rows, seed, float(ratios.max()), (rows[k]["epsilon"], rows[k]["tau"]), med, passed)


def solve_appendix_a(omega: float, lam: complex, g: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve -(lam^2 + d^2) phi = g with phi(0) = 0, phi'(omega) = 0 (second-order one-sided at omega)."""
    g = np.asarray(g, dtype=complex)
    n = len(g)
    h = omega / (n - 1)
    m = n - 1  # unknowns phi_1..phi_{n-1}
    diag = np.full(m, 2.0 / h ** 2 - lam ** 2, dtype=complex)
    A = sp.diags([np.full(m - 1, -1.0 / h ** 2), diag, np.full(m - 1, -1.0 / h ** 2)], [-1, 0, 1],
                 format="lil", dtype=complex)
    A[m - 1, :] = 0
    A[m - 1, m - 1] = 3.0 / (2 * h)
    A[m - 1, m - 2] = -4.0 / (2 * h)
    A[m - 1, m - 3] = 1.0 / (2 * h)
    b = g[1:].copy()
    b[-1] = 0.0
    x, residual = _solve_refined(A.tocsc(), b)
    return np.concatenate([[0.0], x]), residual


def appendix_a_ratio(omega: float, lam: complex, g: np.ndarray) -> float:
    phi, _ = solve_appendix_a(omega, lam, g)
    h = omega / (len(g) - 1)
    d2 = -lam ** 2 * phi - g
    return (grid_l2(d2, h) + abs(lam) ** 2 * grid_l2(phi, h)) / grid_l2(g, h)


def appendixA_probe(omega: float, beta: float, tau_grid, seed: int = 0, bound: float = 3.5,
                    g=None) -> ProbeTable:
    """Ratio (|phi''| + |lam|^2 |phi|)/|g| on lam = beta + i tau; bound asserted only when beta = 0."""
    _check_beta(beta, omega)
    rng = np.random.default_rng(seed)
    if g is None:
        make = random_rhs(rng)
    else:
        def make(w):
            return g if callable(g) else (lambda th: np.full(np.shape(th), g, dtype=complex))
    rows = []
    for tau in tau_grid:
        lam = complex(beta, tau)
        n = default_points(lam, omega)
        th = np.linspace(0.0, omega, n)
        gv = np.broadcast_to(make(omega)(th), th.shape).astype(complex)
        rows.append({"tau": float(tau), "ratio": appendix_a_ratio(omega, lam, gv)})
    ratios = np.array([r["ratio"] for r in rows])
    k = int(np.argmax(ratios))
    ok = bool(np.all(np.isfinite(ratios)))
    if beta == 0:
        ok = ok and ratios.max() <= bound
    return ProbeTable(rows, seed, float(ratios.max()), (rows[k]["tau"],), float(np.median(ratios)), ok)


def log_q_values(omega: float, beta: float, eps: float, tau) -> tuple[np.ndarray, np.ndarray]:
    """log Q1 and log Q2 without overflow.

    |1 + eps cos^2| = |1 + i sqrt(eps) cos| |1 - i sqrt(eps) cos| and each factor squared
    equals e^{2|tau|omega} A_pm with
    A_pm = eps cos^2(beta w) C^2 + (e^{-|tau| w} pm sqrt(eps) sin(beta w) S)^2,
    C = (1 + e^{-2|tau|w})/2, S = sign(tau)(1 - e^{-2|tau|w})/2.
    """
    tau = np.asarray(tau, dtype=float)
    x = np.abs(tau) * omega
    e1, e2 = np.exp(-x), np.exp(-2 * x)
    C = 0.5 * (1 + e2)
    S = np.sign(tau) * 0.5 * (1 - e2)
    se = math.sqrt(eps)
    cb, sb = math.cos(beta * omega), math.sin(beta * omega)
    a_plus = eps * cb ** 2 * C ** 2 + (e1 + se * sb * S) ** 2
    a_minus = eps * cb ** 2 * C ** 2 + (e1 - se * sb * S) ** 2
    log_prod = np.log(a_plus) + np.log(a_minus)  # log|D|^2 - 4x
    if not np.all(np.isfinite(log_prod)):
        raise SymbolError("overflow in the log-domain evaluation")
    log_q1 = math.log(eps) - 2 * x - log_prod
    log_q2 = 2 * math.log(eps) - log_prod
    return log_q1, log_q2


def direct_q_values(omega: float, beta: float, eps: float, tau):
    tau = np.asarray(tau, dtype=float)
    lam = beta + 1j * tau
    d2 = np.abs(1 + eps * np.cos(lam * omega) ** 2) ** 2
    x = np.abs(tau) * omega
    return eps * np.exp(2 * x) / d2, eps ** 2 * np.exp(4 * x) / d2


@dataclass
class SweepTable:
    rows: list                # dicts epsilon, tau, Q1, Q2 (log-domain values exponentiated)
    checks: dict              # per epsilon: sup ratios and saturation flags
    passed: bool


def _saturates(tau: np.ndarray, q: np.ndarray, rtol: float = 1e-9) -> bool:
    t_max = np.abs(tau).max()
    inner = np.abs(tau) < t_max / 2
    return bool(q[~inner].max() <= (1 + rtol) * q[inner].max())


def appendixB_sweep(omega: float, beta: float, eps_grid, tau_grid) -> SweepTable:
    """Q1 = eps e^{2|tau|w}/|1+eps cos^2|^2 and Q2 = eps^2 e^{4|tau|w}/|1+eps cos^2|^2 on a grid."""
    _check_beta(beta, omega)
    tau = np.asarray(sorted(tau_grid), dtype=float)
    coarse = np.zeros(len(tau), dtype=bool)
    coarse[::2] = True
    rows, checks, ok = [], {}, True
    for eps in eps_grid:
        lq1, lq2 = log_q_values(omega, beta, eps, tau)
        q1, q2 = np.exp(lq1), np.exp(lq2)
        for t, a, b in zip(tau, q1, q2):
            rows.append({"epsilon": float(eps), "tau": float(t), "Q1": float(a), "Q2": float(b)})
        c = {
            "sup_Q1_eps": float((eps * q1).max()),
            "sup_Q2": float(q2.max()),
            "coarse_ratio_Q1": float(q1.max() / q1[coarse].max()),
            "coarse_ratio_Q2": float(q2.max() / q2[coarse].max()),
            "saturates_Q1": _saturates(tau, eps * q1),
            "saturates_Q2": _saturates(tau, q2),
        }
        c["passed"] = bool(c["coarse_ratio_Q1"] <= 10 and c["coarse_ratio_Q2"] <= 10
                           and c["saturates_Q1"] and c["saturates_Q2"])
        ok = ok and c["passed"]
        checks[float(eps)] = c
    return SweepTable(rows, checks, ok)
