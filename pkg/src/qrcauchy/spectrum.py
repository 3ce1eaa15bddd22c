"""Spectral data of the regularized mixed-corner pencil on (0, omega).

Eigenfunctions are kept unnormalized:
    phi(theta) = cos(lam*omega) sin(lam*theta),   psi(theta) = sin(lam*(theta - omega)),
and the adjoint pair uses conj(lam):
    g(theta) = cos(conj(lam)*omega) cos(conj(lam)*(theta - omega)),   h(theta) = cos(conj(lam)*theta).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from qrcauchy.geometry import CornerKind, CornerRecord


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class PencilParams:
    omega: float
    epsilon: float

    def __post_init__(self):
        if not 0 < self.omega < 2 * math.pi:
            raise ValueError(f"omega must lie in (0, 2pi), got {self.omega}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def gamma_eps(self) -> float:
        return math.sqrt(1 + 1 / self.epsilon) + math.sqrt(1 / self.epsilon)

    @property
    def gamma_minus(self) -> float:
        # 1/gamma_eps written without cancellation
        return 1.0 / (math.sqrt(1 + 1 / self.epsilon) + math.sqrt(1 / self.epsilon))

    @property
    def log_gamma(self) -> float:
        # asinh(1/sqrt(eps)) = ln(sqrt(1/eps) + sqrt(1 + 1/eps)), accurate for all eps
        return math.asinh(1 / math.sqrt(self.epsilon))


def real_part(n: int, omega: float) -> float:
    return (math.pi / 2 + n * math.pi) / omega


def d_const(k: int, params: PencilParams) -> float:
    """Biorthogonality constant (-1)^(k+1) (omega/eps) sqrt(1 + 1/eps), any integer k."""
    sign = -1.0 if k % 2 == 0 else 1.0
    return sign * params.omega / params.epsilon * math.sqrt(1 + 1 / params.epsilon)


@dataclass(frozen=True)
class EigenPair:
    n: int
    sign: int
    lam: complex

    @property
    def sign_label(self) -> str:
        return "+" if self.sign > 0 else "-"

    def phi(self, theta, omega):
        lam = self.lam
        return np.cos(lam * omega) * np.sin(lam * np.asarray(theta))

    def dphi(self, theta, omega):
        lam = self.lam
        return lam * np.cos(lam * omega) * np.cos(lam * np.asarray(theta))

    def d2phi(self, theta, omega):
        return -self.lam ** 2 * self.phi(theta, omega)

    def psi(self, theta, omega):
        return np.sin(self.lam * (np.asarray(theta) - omega))

    def dpsi(self, theta, omega):
        return self.lam * np.cos(self.lam * (np.asarray(theta) - omega))

    def d2psi(self, theta, omega):
        return -self.lam ** 2 * self.psi(theta, omega)


@dataclass(frozen=True)
class AdjointPair:
    n: int
    sign: int
    lam: complex  # eigenvalue of the direct pencil; the functions use its conjugate

    def g(self, theta, omega):
        lb = np.conj(self.lam)
        return np.cos(lb * omega) * np.cos(lb * (np.asarray(theta) - omega))

    def dg(self, theta, omega):
        lb = np.conj(self.lam)
        return -lb * np.cos(lb * omega) * np.sin(lb * (np.asarray(theta) - omega))

    def h(self, theta, omega):
        return np.cos(np.conj(self.lam) * np.asarray(theta))

    def dh(self, theta, omega):
        lb = np.conj(self.lam)
        return -lb * np.sin(lb * np.asarray(theta))


def eigenvalue(n: int, sign: int, params: PencilParams) -> complex:
    return complex(math.pi / 2 + n * math.pi, sign * params.log_gamma) / params.omega


def eigenvalues(params: PencilParams, n_range: Iterable[int]) -> list[EigenPair]:
    """Both eigenvalues (+ then -) for every n in ``n_range``."""
    return [EigenPair(int(n), s, eigenvalue(int(n), s, params)) for n in n_range for s in (1, -1)]


def adjoint(pair: EigenPair) -> AdjointPair:
    return AdjointPair(pair.n, pair.sign, pair.lam)


def characteristic(lam, params: PencilParams):
    """1 + eps cos^2(lam omega); vanishes exactly on the spectrum."""
    return 1 + params.epsilon * np.cos(np.asarray(lam) * params.omega) ** 2


def verify_eigen_residual(pair: EigenPair, params: PencilParams, n_samples: int = 50) -> dict:
    """ODE residuals (relative to |lam|^2 |phi|) and the four boundary conditions."""
    w, eps = params.omega, params.epsilon
    th = np.linspace(0.0, w, n_samples)
    lam2 = pair.lam ** 2
    ode = 0.0
    for f, d2f in ((pair.phi, pair.d2phi), (pair.psi, pair.d2psi)):
        vals = f(th, w)
        scale = max(float(np.max(np.abs(lam2 * vals))), 1.0)
        ode = max(ode, float(np.max(np.abs(lam2 * vals + d2f(th, w)))) / scale)
    bc = [
        abs(pair.phi(0.0, w)),
        abs(pair.psi(w, w)),
        abs(pair.dphi(0.0, w) - pair.dpsi(0.0, w)),
        abs(eps * pair.dphi(w, w) + pair.dpsi(w, w)),
    ]
    return {"ode": ode, "bc": float(max(bc)), "characteristic": float(abs(characteristic(pair.lam, params))),
            "max": float(max(ode, max(bc)))}


def verify_adjoint_bc(pair: AdjointPair, params: PencilParams) -> float:
    w, eps = params.omega, params.epsilon
    return float(max(abs(pair.dg(w, w)), abs(pair.dh(0.0, w)),
                     abs(pair.g(w, w) - pair.h(w, w)), abs(eps * pair.g(0.0, w) + pair.h(0.0, w))))


def default_order(params: PencilParams, n_max: int) -> int:
    return int(max(200, math.ceil(20 * (n_max + 1) * (1 + params.log_gamma))))


@functools.lru_cache(maxsize=64)
def _leggauss(order: int):
    return np.polynomial.legendre.leggauss(order)


def _gauss(order: int, a: float, b: float):
    x, w = _leggauss(order)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def pairing(p: EigenPair, q: EigenPair, params: PencilParams, order: int) -> complex:
    """int phi_p conj(g_q) + (1/eps) int psi_p conj(h_q) over (0, omega)."""
    w = params.omega
    th, wt = _gauss(order, 0.0, w)
    aq = adjoint(q)
    first = np.sum(wt * p.phi(th, w) * np.conj(aq.g(th, w)))
    second = np.sum(wt * p.psi(th, w) * np.conj(aq.h(th, w)))
    return complex(first + second / params.epsilon)


def _pairing_matrix(pairs, params: PencilParams, order: int) -> np.ndarray:
    w = params.omega
    th, wt = _gauss(order, 0.0, w)
    phi = np.array([p.phi(th, w) for p in pairs])
    psi = np.array([p.psi(th, w) for p in pairs])
    g = np.array([adjoint(q).g(th, w) for q in pairs])
    h = np.array([adjoint(q).h(th, w) for q in pairs])
    return (phi * wt) @ np.conj(g).T + (psi * wt) @ np.conj(h).T / params.epsilon


def is_excluded(p: EigenPair, q: EigenPair) -> bool:
    """Pairs with j + k = -1 and opposite signs (lam_q = -lam_p) are outside the lemma."""
    return p.n + q.n == -1 and p.sign + q.sign == 0


@dataclass
class BiorthogonalityResult:
    pairs: list                # EigenPair list indexing rows and columns
    matrix: np.ndarray         # complex pairings, NaN at excluded entries
    expected: np.ndarray       # delta delta d_k
    excluded: dict             # (row, col) -> pairing value
    order: int
    max_diag_rel_error: float
    max_offdiag_rel: float


def biorthogonality_matrix(params: PencilParams, n_range: Iterable[int], order: int | None = None,
                           tol: float = 1e-10) -> BiorthogonalityResult:
    pairs = eigenvalues(params, n_range)
    n_max = max(abs(p.n) for p in pairs)
    order = order or default_order(params, n_max)
    size = len(pairs)
    coarse, fine = _pairing_matrix(pairs, params, order), _pairing_matrix(pairs, params, 2 * order)
    mat = np.full((size, size), np.nan, dtype=complex)
    expected = np.zeros((size, size))
    excluded = {}
    diag_err, off_err = 0.0, 0.0
    for a, p in enumerate(pairs):
        dk = d_const(p.n, params)
        for b, q in enumerate(pairs):
            val, check = coarse[a, b], fine[a, b]
            if abs(val - check) > tol * abs(dk):
                raise QuadratureError(
                    f"quadrature not converged for (k={p.n}, j={q.n}, nu={p.sign_label}, mu={q.sign_label}): "
                    f"orders {order} and {2 * order} differ by {abs(val - check):.3e}")
            if is_excluded(p, q):
                excluded[(a, b)] = check
                continue
            mat[a, b] = check
            if a == b:
                expected[a, b] = dk
                diag_err = max(diag_err, abs(check - dk) / abs(dk))
            else:
                off_err = max(off_err, abs(check) / abs(dk))
    return BiorthogonalityResult(pairs, mat, expected, excluded, order, diag_err, off_err)


@dataclass(frozen=True)
class SingularExponent:
    k: int
    sign: int
    lam: complex
    branch: str = "mixed"


def singularity_census(corner: CornerRecord | float, params: PencilParams | None = None,
                       tol: float = 1e-12) -> list[SingularExponent]:
    """Pencil exponents with 0 < Re lam < 1 at a MIXED corner (r^lam in H^1, not H^2)."""
    if isinstance(corner, CornerRecord):
        if corner.kind is not CornerKind.MIXED:
            raise ValueError(f"corner {corner.index} is {corner.kind.value}, not MIXED; "
                             "use classical_census for same-type corners")
        omega = corner.omega
    else:
        omega = float(corner)
    if params is None:
        params = PencilParams(omega, 1.0)
    elif abs(params.omega - omega) > 1e-14:
        params = PencilParams(omega, params.epsilon)
    out = []
    k = 0
    while real_part(k, omega) < 1 - tol:
        for s in (1, -1):
            out.append(SingularExponent(k, s, eigenvalue(k, s, params)))
        k += 1
    return out


def census_indices(omega: float) -> list[int]:
    return sorted({e.k for e in singularity_census(omega)})


def classical_census(corner: CornerRecord, tol: float = 1e-12) -> list[SingularExponent]:
    """Same-type corners: exponents k pi / omega below 1 (sin or cos angular profiles)."""
    if corner.kind is CornerKind.MIXED:
        raise ValueError("classical_census handles GAMMA and GAMMA_TILDE corners only")
    out = []
    k = 1
    while k * math.pi / corner.omega < 1 - tol:
        out.append(SingularExponent(k, 0, complex(k * math.pi / corner.omega, 0.0), "classical"))
        k += 1
    return out


@dataclass(frozen=True)
class SingularCoefficient:
    value: complex
    refinement_change: float
    n_r: int
    n_theta: int


def singular_coefficient(f1: Callable, f2: Callable, pair: EigenPair, params: PencilParams,
                         radius: float = 1.0, r_min: float = 0.0, n_r: int = 64, n_theta: int = 64,
                         panels: int = 8, rtol: float = 1e-6) -> SingularCoefficient:
    """c = [(f1, r^-conj(lam) g) + (f2, r^-conj(lam) h)] / (2 lam d_k) over the truncated cone.

    ``f1``, ``f2`` are polar callables f(r, theta).  The integral is done with
    composite Gauss-Legendre in r (``panels`` panels) and theta; the result at
    doubled resolution must agree within ``rtol``.
    """
    if radius <= r_min:
        raise ValueError("radius must exceed r_min")
    if pair.lam.real >= 2 and r_min == 0.0:
        raise ValueError("weight r^(1 - Re lam) is not integrable at the vertex; pass r_min > 0")

    def integral(nr, nt):
        edges = np.linspace(r_min, radius, panels + 1)
        rs, wr = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            x, w = _gauss(nr, a, b)
            rs.append(x)
            wr.append(w)
        r, wr = np.concatenate(rs), np.concatenate(wr)
        th, wt = _gauss(nt, 0.0, params.omega)
        R, T = np.meshgrid(r, th, indexing="ij")
        W = np.outer(wr, wt)
        adj = adjoint(pair)
        weight = R ** (-pair.lam) * R
        a = np.sum(W * np.asarray(f1(R, T)) * weight * np.conj(adj.g(T, params.omega)))
        b = np.sum(W * np.asarray(f2(R, T)) * weight * np.conj(adj.h(T, params.omega)))
        return complex(a + b) / (2 * pair.lam * d_const(pair.n, params))

    coarse = integral(n_r, n_theta)
    fine = integral(2 * n_r, 2 * n_theta)
    scale = abs(fine)
    change = abs(fine - coarse) / scale if scale > 0 else abs(fine - coarse)
    if change > rtol:
        raise QuadratureError(f"singular coefficient not converged under refinement (relative change {change:.2e}); "
                              "the weight may not be integrable for this support")
    return SingularCoefficient(fine, change, 2 * n_r, 2 * n_theta)


def spectrum_rows(params: PencilParams, n_range: Iterable[int]) -> list[dict]:
    rows = []
    for p in eigenvalues(params, n_range):
        res = verify_eigen_residual(p, params)
        rows.append({"n": p.n, "sign": p.sign_label, "re_lambda": p.lam.real, "im_lambda": p.lam.imag,
                     "residual": max(res["max"], res["characteristic"]), "d_k": d_const(p.n, params)})
    return rows
