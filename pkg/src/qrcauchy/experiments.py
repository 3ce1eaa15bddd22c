"""Sweeps over (epsilon, h, delta): error decomposition, rate fits, parameter coupling."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from qrcauchy import fields
from qrcauchy.fem import FeFunction, assemble_mass, assemble_stiffness, error_norms, h1_norm
from qrcauchy.geometry import classify_corners, named_geometry, regularity_exponent
from qrcauchy.mesh import generate_structured, refine_with_transfer
from qrcauchy.qr import QRSolveError, assemble_qr_source, noisy_source, solve, strong_residuals


class ConfigError(ValueError):
    pass


class CouplingError(ValueError):
    pass


@dataclass
class CouplingRule:
    """eps = c * delta^p and h = c_h * eps^q."""

    c: float = 1.0
    p: float = 1.0
    c_h: float = 1.0
    q: float = 1.5


@dataclass
class SweepConfig:
    geometry: str = "square"
    gamma: list = field(default_factory=lambda: ["bottom"])
    exact: str = "auto"       # compatible u* name, or "none" for f = 1 without exact solution
    eps_list: list = field(default_factory=lambda: [1e-2])
    n_list: list = field(default_factory=lambda: [8, 16])
    delta_list: list = field(default_factory=lambda: [0.0])
    seed: int = 0
    slack: float = 0.01
    ref_levels: int = 2
    coupling: CouplingRule | None = None
    rate_tol: float = 0.15

    def __post_init__(self):
        if isinstance(self.coupling, dict):
            self.coupling = CouplingRule(**self.coupling)
        if isinstance(self.gamma, str):
            self.gamma = [g for g in self.gamma.split(",") if g]
        for name in ("eps_list", "n_list"):
            vals = getattr(self, name)
            if not vals or any(v <= 0 for v in vals):
                raise ConfigError(f"{name} must be a nonempty list of positive numbers")
        if not self.delta_list or any(d < 0 for d in self.delta_list):
            raise ConfigError("delta_list must be a nonempty list of nonnegative numbers")
        ns = sorted(int(n) for n in self.n_list)
        if len(ns) > 8:
            raise ConfigError("at most 8 mesh levels")
        if any(b != 2 * a for a, b in zip(ns, ns[1:])):
            raise ConfigError("n_list must double from level to level (nested meshes), e.g. [8, 16, 32]")
        if not 0 <= self.ref_levels <= 4:
            raise ConfigError("ref_levels must lie in [0, 4]")
        self.n_list = ns
        self.eps_list = sorted((float(e) for e in self.eps_list), reverse=True)
        self.delta_list = sorted(float(d) for d in self.delta_list)

    @classmethod
    def from_json(cls, text: str) -> "SweepConfig":
        data = json.loads(text)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "SweepConfig":
        return cls.from_json(Path(path).read_text())


def fit_rate(pairs) -> tuple[float, float]:
    """Least-squares slope of log(error) against log(scale), with r^2."""
    arr = np.asarray(list(pairs), dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] != 2:
        raise ValueError("fit_rate needs at least two (scale, error) pairs")
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ValueError("scales and errors must be positive and finite")
    x, y = np.log(arr[:, 0]), np.log(arr[:, 1])
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(r2)


def coupling_limits(rule: CouplingRule, s_used: float) -> list[str]:
    """Messages for every violated limit condition (empty when the rule is admissible)."""
    problems = []
    if not rule.p < 2:
        problems.append(f"lim delta/sqrt(eps(delta)) = 0 requires p < 2 (got p = {rule.p:g})")
    if not rule.p > 0:
        problems.append(f"eps(delta) -> 0 requires p > 0 (got p = {rule.p:g})")
    if not s_used > 1:
        problems.append(f"regularity exponent must exceed 1 (got s = {s_used:g})")
    else:
        q_min = 1.0 / (s_used - 1.0)
        if not rule.q > q_min:
            problems.append(f"lim h^(s-1)/eps = 0 requires q > 1/(s-1) = {q_min:.6g} (got q = {rule.q:g})")
    if rule.c <= 0 or rule.c_h <= 0:
        problems.append("coupling constants must be positive")
    return problems


def couple_parameters(delta: float, rule: CouplingRule, s_used: float) -> tuple[float, float]:
    problems = coupling_limits(rule, s_used)
    if problems:
        raise CouplingError("; ".join(problems))
    if delta <= 0:
        raise CouplingError("delta must be positive")
    eps = rule.c * delta ** rule.p
    return eps, rule.c_h * eps ** rule.q


@dataclass
class SweepReport:
    rows: list
    rates: dict
    config: dict
    s_used: float
    notes: list
    checks: dict = field(default_factory=dict)
    coupled: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """Hard assertions only; rate flags are advisory."""
        return all(self.checks.values())

    COLUMNS = ("epsilon", "h", "n", "delta", "seed", "status", "total_l2", "total_h1", "noise_h1",
               "disc_h1", "reg_l2", "reg_h1", "u_h1", "lambda_h1", "lambda_noisy_h1",
               "residual", "strong_residual", "cond1_est")

    def column(self, name, **where):
        return [r[name] for r in self.rows if all(r[k] == v for k, v in where.items())]

    def to_csv(self, path=None) -> str:
        lines = ["# " + n for n in self.notes]
        lines.append(",".join(self.COLUMNS))
        for r in self.rows:
            lines.append(",".join(_fmt(r[c]) for c in self.COLUMNS))
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    def summary(self) -> dict:
        return {"rates": self.rates, "s_used": self.s_used, "config": self.config, "notes": self.notes,
                "checks": self.checks, "passed": self.passed, "coupled": self.coupled}

    def to_json(self, path=None) -> str:
        text = json.dumps(_clean(self.summary()), indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float):
        return float(f"{obj:.17g}") if math.isfinite(obj) else str(obj)
    return obj


def _problem(config: SweepConfig):
    spec = named_geometry(config.geometry, config.gamma)
    if config.exact == "none":
        return spec, (lambda x, y: np.ones_like(x)), None
    f, u = fields.compatible_source(spec, config.exact)
    return spec, f.value, u


def _mesh_chain(spec, config: SweepConfig):
    """Nested meshes for every n in n_list plus the reference, with prolongations to it."""
    mesh = generate_structured(spec, config.n_list[0])
    chain = [mesh]
    steps = []
    for _ in range(len(config.n_list) - 1 + config.ref_levels):
        mesh, P = refine_with_transfer(mesh)
        chain.append(mesh)
        steps.append(P)
    ref = chain[-1]
    to_ref = []
    for k in range(len(config.n_list)):
        P = None
        for S in steps[k:]:
            P = S if P is None else (S @ P).tocsr()
        to_ref.append(P)
    return chain[:len(config.n_list)], ref, to_ref


def _cond_estimate(system) -> float:
    try:
        lu = spla.splu(system.matrix.tocsc())
    except RuntimeError:
        return math.inf
    n = system.matrix.shape[0]
    inv = spla.LinearOperator((n, n), matvec=lu.solve, rmatvec=lambda b: lu.solve(b, trans="T"),
                              dtype=float)
    # onenormest draws from the global numpy stream; pin it so reports are reproducible
    state = np.random.get_state()
    np.random.seed(0)
    try:
        est = spla.onenormest(inv)
    finally:
        np.random.set_state(state)
    return float(spla.norm(system.matrix, 1) * est)


def _run_eps(config: SweepConfig, eps: float) -> list[dict]:
    spec, f, exact = _problem(config)
    meshes, ref, to_ref = _mesh_chain(spec, config)
    rows = []
    try:
        ref_sol = solve(assemble_qr_source(ref, eps, f))
        u_ref = ref_sol.u
        ref_error = None
    except QRSolveError as exc:
        u_ref, ref_error = None, str(exc)
    if exact is not None and u_ref is not None:
        reg = error_norms(u_ref, exact)
        reg_l2, reg_h1 = reg.l2, reg.h1
    else:
        reg_l2 = reg_h1 = math.nan
    for n, mesh, P in zip(config.n_list, meshes, to_ref):
        base = dict(epsilon=eps, h=mesh.h, n=n, seed=config.seed)
        try:
            system = assemble_qr_source(mesh, eps, f)
            sol = solve(system)
            strong = strong_residuals(sol)
            cond = _cond_estimate(system)
        except QRSolveError as exc:
            for d in config.delta_list:
                rows.append(_failed_row(base, d, str(exc)))
            continue
        u_fine = FeFunction(ref, P @ sol.u.values)
        disc = error_norms(u_fine, u_ref).h1 if u_ref is not None else math.nan
        xi = noisy_source(mesh, np.zeros(mesh.n_nodes), 1.0, config.seed)  # unit-L2 noise direction
        noise_sol = solve(assemble_qr_source(mesh, eps, xi))
        for d in config.delta_list:
            # by linearity u^delta = u + delta * w with w the unit-noise response
            noisy_u = FeFunction(ref, P @ (sol.u.values + d * noise_sol.u.values))
            noise = FeFunction(ref, P @ (d * noise_sol.u.values))
            if exact is not None:
                tot = error_norms(noisy_u, exact)
                tot_l2, tot_h1 = tot.l2, tot.h1
            else:
                tot_l2 = tot_h1 = math.nan
            lam_noisy = FeFunction(mesh, sol.lam.values + d * noise_sol.lam.values)
            rows.append(dict(
                base, delta=d, status="ok" if ref_error is None else f"reference failed: {ref_error}",
                total_l2=tot_l2, total_h1=tot_h1,
                noise_h1=error_norms(noise, FeFunction(ref, np.zeros(ref.n_nodes))).h1,
                disc_h1=disc, reg_l2=reg_l2, reg_h1=reg_h1,
                u_h1=h1_norm(sol.u), lambda_h1=h1_norm(sol.lam), lambda_noisy_h1=h1_norm(lam_noisy),
                residual=sol.residual_report["algebraic_residual"],
                strong_residual=max(strong["u_equation"], strong["lambda_equation"], strong["difference_equation"]),
                cond1_est=cond,
            ))
    return rows


def _failed_row(base, delta, message):
    row = dict(base, delta=delta, status="failed: " + message.replace(",", ";"))
    for c in SweepReport.COLUMNS:
        row.setdefault(c, math.nan)
    return row


def run_sweep(config: SweepConfig, jobs: int = 1) -> SweepReport:
    spec = named_geometry(config.geometry, config.gamma)
    s_used = regularity_exponent(classify_corners(spec), config.slack).s_used
    if config.coupling is not None:
        problems = coupling_limits(config.coupling, s_used)
        if problems:
            raise CouplingError("; ".join(problems))
    if jobs > 1 and len(config.eps_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_eps, [config] * len(config.eps_list), config.eps_list))
    else:
        parts = [_run_eps(config, e) for e in config.eps_list]
    rows = [r for part in parts for r in part]
    rows.sort(key=lambda r: (-r["epsilon"], -r["h"], r["delta"], r["seed"]))
    predicted = min(1.0, s_used - 1.0)
    # corners limiting s below 2 pollute quasi-uniform meshes: wider band
    tol = config.rate_tol if s_used >= 2.0 - 2 * config.slack else max(config.rate_tol, 0.25)
    rates = {}
    for eps in config.eps_list:
        pts = [(r["h"], r["disc_h1"]) for r in rows
               if r["epsilon"] == eps and r["delta"] == config.delta_list[0] and r["status"] == "ok"]
        pts = [p for p in pts if p[1] > 0 and math.isfinite(p[1])]
        if len(pts) >= 2:
            rate, r2 = fit_rate(pts)
            rates[f"disc_h1_rate[eps={eps:.6g}]"] = {"rate": rate, "r2": r2, "predicted": predicted,
                                                     "tolerance": tol, "passed": abs(rate - predicted) <= tol}
    for n in config.n_list:
        for d in config.delta_list:
            if d == 0:
                continue
            pts = [(r["epsilon"], r["noise_h1"]) for r in rows if r["n"] == n and r["delta"] == d and r["status"] == "ok"]
            if len(pts) >= 2:
                rate, r2 = fit_rate(pts)
                rates[f"noise_eps_slope[n={n},delta={d:.6g}]"] = {"rate": rate, "r2": r2, "bound": -0.6,
                                                                   "passed": rate >= -0.6}
    checks = {
        "norms_nonnegative": all(not (r[c] < 0) for r in rows for c in SweepReport.COLUMNS[6:]
                                 if isinstance(r[c], float)),
        "triangle": not _triangle_failures(rows),
        "noise_linear": _noise_linear(rows),
        "keys_unique": len({(r["epsilon"], r["h"], r["delta"], r["seed"]) for r in rows}) == len(rows),
    }
    coupled = []
    if config.coupling is not None:
        for d in config.delta_list:
            if d > 0:
                e, h = couple_parameters(d, config.coupling, s_used)
                coupled.append({"delta": d, "epsilon": e, "h": h})
    notes = [
        f"reference: same-eps solve {config.ref_levels} uniform refinements finer than the finest mesh "
        "(disc_h1 is measured vs-reference; bias O(h_ref^(s-1)/eps))",
        "all norms evaluated on the reference mesh with the exact nested prolongation",
        "triangle check: total_h1 <= noise_h1 + disc_h1 + reg_h1 + 1e-8",
    ]
    cfg = asdict(config)
    return SweepReport(rows, rates, cfg, s_used, notes, checks, coupled)


def _triangle_failures(rows, slack: float = 1e-8) -> list[dict]:
    bad = []
    for r in rows:
        if r["status"] != "ok" or not math.isfinite(r["total_h1"]):
            continue
        if r["total_h1"] > r["noise_h1"] + r["disc_h1"] + r["reg_h1"] + slack:
            bad.append(r)
    return bad


def triangle_violations(report: SweepReport, slack: float = 1e-8) -> list[dict]:
    return _triangle_failures(report.rows, slack)


def _noise_linear(rows, rtol: float = 1e-10) -> bool:
    groups = {}
    for r in rows:
        if r["status"] == "ok" and r["delta"] > 0:
            groups.setdefault((r["epsilon"], r["h"], r["seed"]), []).append(r["noise_h1"] / r["delta"])
    return all(max(v) - min(v) <= rtol * max(v) for v in groups.values())


@dataclass
class MonitorSummary:
    best_mu: float
    constant: float
    rms_log_residual: float
    monotone: bool
    flagged: bool
    eps: list
    errors: list


def logarithmic_monitor(report, mu_grid=None, tolerance: float = 0.05) -> MonitorSummary:
    """Fit err(eps) ~ C (log(1/eps))^(-mu) over mu in (0, 1); check monotone decrease.

    ``report`` is a SweepReport (column reg_l2) or a sequence of (eps, error).
    Monotone means every step toward smaller eps grows the error by at most
    ``tolerance`` and the error decreases overall.
    """
    if isinstance(report, SweepReport):
        by_eps = {}
        for r in report.rows:
            if r["status"] == "ok" and math.isfinite(r["reg_l2"]):
                by_eps.setdefault(r["epsilon"], r["reg_l2"])
        data = sorted(by_eps.items(), reverse=True)
    else:
        data = sorted(((float(e), float(v)) for e, v in report), reverse=True)
    if len(data) < 3:
        raise ValueError("logarithmic_monitor needs at least 3 epsilon values")
    eps = np.array([d[0] for d in data])
    err = np.array([d[1] for d in data])
    if np.any(eps >= 1) or np.any(eps <= 0):
        raise ValueError("epsilon values must lie in (0, 1)")
    if np.any(err <= 0):
        raise ValueError("errors must be positive")
    mu_grid = np.linspace(0.001, 0.999, 999) if mu_grid is None else np.asarray(mu_grid)
    ll = np.log(np.log(1.0 / eps))
    le = np.log(err)
    best = (math.inf, 0.0, 0.0)
    for mu in mu_grid:
        logc = np.mean(le + mu * ll)
        res = float(np.sqrt(np.mean((le - (logc - mu * ll)) ** 2)))
        if res < best[0]:
            best = (res, float(mu), float(np.exp(logc)))
    steps_ok = all(b <= (1 + tolerance) * a for a, b in zip(err, err[1:]))
    monotone = bool(steps_ok and err[-1] < err[0])
    return MonitorSummary(best[1], best[2], best[0], monotone, not monotone, eps.tolist(), err.tolist())


def stability_constant(mesh, epsilon: float, seed: int = 0, k: int = 1) -> tuple[float, np.ndarray]:
    """Estimate C(eps) = sup_f (sqrt(eps)||u||_H1 + ||lambda||_H1) / ||f||_L2 on a mesh.

    Lanczos finds the source maximising the stacked norm of (sqrt(eps) u, lambda);
    the sum norm is evaluated at that source (within a factor sqrt(2) of the sup).
    Returns (constant, maximising source with unit L2 norm).
    """
    system = assemble_qr_source(mesh, epsilon, np.zeros(mesh.n_nodes))
    lu = spla.splu(system.matrix.tocsc())
    M = assemble_mass(mesh).tocsr()
    G = (assemble_mass(mesh) + assemble_stiffness(mesh)).tocsr()
    du, dl = system.dof_u, system.dof_lambda
    free_l = dl.free_nodes
    Gu = G[du.free_nodes][:, du.free_nodes]
    Gl = G[free_l][:, free_l]
    Mf = M[free_l]
    nu = du.n_dofs
    n = mesh.n_nodes
    w = math.sqrt(epsilon)

    def forward(fv):
        x = lu.solve(np.concatenate([np.zeros(nu), -(Mf @ fv)]))
        return x[:nu], x[nu:]

    def normal_op(fv):
        # T^T G T f with G = diag(eps Gu, Gl)
        u, lam = forward(fv)
        y = lu.solve(np.concatenate([epsilon * (Gu @ u), Gl @ lam]), trans="T")
        return -(Mf.T @ y[nu:])

    op = spla.LinearOperator((n, n), matvec=normal_op, dtype=float)
    v0 = np.random.default_rng(seed).standard_normal(n)
    vals, vecs = spla.eigsh(op, k=k, M=M.tocsc(), which="LM", v0=v0, tol=1e-8,
                            Minv=spla.LinearOperator((n, n), matvec=spla.splu(M.tocsc()).solve, dtype=float))
    f = vecs[:, np.argmax(vals)]
    u, lam = forward(f)
    fnorm = math.sqrt(f @ (M @ f))
    sumnorm = (w * math.sqrt(u @ (Gu @ u)) + math.sqrt(lam @ (Gl @ lam))) / fnorm
    return float(sumnorm), f / fnorm
