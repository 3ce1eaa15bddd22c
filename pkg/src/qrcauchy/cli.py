"""Command-line entry point: qrcauchy <subcommand> [options]."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from qrcauchy import fields, spectrum, symbol
from qrcauchy.experiments import ConfigError, CouplingError, SweepConfig, run_sweep
from qrcauchy.fem import error_norms
from qrcauchy.geometry import CornerKind, GeometryError, PolygonSpec, classify_corners, named_geometry, regularity_exponent
from qrcauchy.mesh import MeshError, generate_structured, read_mesh, refine_levels, validate, write_mesh
from qrcauchy.qr import QRSolveError, assemble_qr_cauchy, assemble_qr_source, noisy_source, solve, strong_residuals

STRONG_TOL = 1e-8


class UsageError(Exception):
    pass


def _g(x) -> str:
    return f"{x:.17g}"


def _json(obj) -> str:
    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(type(o).__name__)
    return json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n"


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {path}")
    return p


def _omega(args) -> float:
    if args.omega_degrees is not None:
        return math.radians(args.omega_degrees)
    if args.omega is None:
        raise UsageError("give --omega (radians) or --omega-degrees")
    return args.omega


def _n_range(text: str) -> range:
    try:
        lo, hi = (int(t) for t in text.split(":"))
    except ValueError:
        raise UsageError(f"--n-range expects lo:hi, got {text!r}") from None
    if hi < lo:
        raise UsageError("--n-range needs lo <= hi")
    return range(lo, hi + 1)


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _spec(args) -> PolygonSpec:
    if getattr(args, "spec", None):
        return PolygonSpec.load(_existing(args.spec))
    return named_geometry(args.geometry, [g for g in args.gamma.split(",") if g])


def _add_geometry(p):
    p.add_argument("--geometry", default="square", choices=["square", "lshape"])
    p.add_argument("--gamma", default="bottom", help="comma-separated Gamma edge names")
    p.add_argument("--spec", help="polygon JSON file (overrides --geometry/--gamma)")


def _add_omega(p):
    p.add_argument("--omega", type=float, help="corner angle in radians")
    p.add_argument("--omega-degrees", type=float, help="corner angle in degrees")


def cmd_mesh_gen(args) -> int:
    spec = _spec(args)
    mesh = generate_structured(spec, args.n)
    if args.refine:
        mesh, _ = refine_levels(mesh, args.refine)
    validate(mesh)
    out = _out_dir(args)
    write_mesh(mesh, out / "mesh.txt")
    info = {"n_nodes": mesh.n_nodes, "n_triangles": mesh.n_triangles, "h": mesh.h, "min_angle": mesh.min_angle()}
    (out / "mesh.json").write_text(_json(info))
    print(f"mesh: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles, h = {_g(mesh.h)}")
    return 0


def cmd_solve(args) -> int:
    spec = _spec(args)
    mesh = read_mesh(_existing(args.mesh)) if args.mesh else generate_structured(spec, args.n)
    exact = None
    if args.exact in fields.HARMONIC_NAMES:
        exact = fields.harmonic_catalog(args.exact)
        data = fields.cauchy_data_from(exact, spec, mesh)
        if args.delta > 0:
            data = data.with_g0_noise(args.delta, args.seed)
        system = assemble_qr_cauchy(mesh, args.eps, data.g0, data.g1)
    elif args.exact in fields.COMPATIBLE_NAMES:
        f, exact = fields.compatible_source(spec, args.exact)
        system = assemble_qr_source(mesh, args.eps, noisy_source(mesh, f.value, args.delta, args.seed))
    else:
        raise UsageError(f"unknown --exact {args.exact!r}; choose from "
                         f"{', '.join(fields.HARMONIC_NAMES + fields.COMPATIBLE_NAMES)}")
    sol = solve(system)
    strong = strong_residuals(sol)
    report = dict(sol.residual_report)
    report["strong"] = strong
    if exact is not None:
        err = error_norms(sol.u, exact)
        report["error_l2"], report["error_h1"] = err.l2, err.h1
    out = _out_dir(args)
    sol.to_csv(out / "solution.csv")
    (out / "residuals.json").write_text(_json(report))
    worst = max(strong["u_equation"], strong["lambda_equation"], strong["difference_equation"])
    print(f"algebraic residual {_g(report['algebraic_residual'])}, strong residual {_g(worst)}")
    if "error_h1" in report:
        print(f"H1 error {_g(report['error_h1'])}")
    ok = report["algebraic_residual"] <= 1e-10 and worst <= STRONG_TOL
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    config = SweepConfig.load(_existing(args.config))
    if args.seed is not None:
        config.seed = args.seed
    try:
        report = run_sweep(config, jobs=args.jobs)
    except CouplingError as exc:
        print(f"coupling rule rejected: {exc}", file=sys.stderr)
        return 1
    out = _out_dir(args)
    report.to_csv(out / "sweep.csv")
    report.to_json(out / "summary.json")
    for key, val in report.rates.items():
        print(f"{key}: rate {_g(val['rate'])} (r2 {val['r2']:.4f})")
    for key, val in report.checks.items():
        print(f"check {key}: {'pass' if val else 'FAIL'}")
    return 0 if report.passed else 1


def cmd_spectrum(args) -> int:
    params = spectrum.PencilParams(_omega(args), args.eps)
    rows = spectrum.spectrum_rows(params, _n_range(args.n_range))
    cols = ("n", "sign", "re_lambda", "im_lambda", "residual", "d_k")
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(_g(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols))
    text = "\n".join(lines) + "\n"
    out = _out_dir(args)
    (out / "spectrum.csv").write_text(text)
    print(text, end="")
    return 0 if all(r["residual"] <= 1e-10 for r in rows) else 1


def _write_rows(path, rows, cols):
    lines = [",".join(cols)] + [",".join(_g(r[c]) for c in cols) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def cmd_verify_symbol(args) -> int:
    omega = _omega(args)
    eps = _floats(args.eps)
    tau = np.linspace(-args.tau_max, args.tau_max, args.n_tau)
    out = _out_dir(args)
    summary = {}
    if args.probe in ("uniform", "all"):
        t = symbol.uniform_estimate_probe(omega, args.beta, eps, tau[::max(1, args.n_tau // 9)], seed=args.seed)
        summary["uniform"] = {"max_ratio": t.max_ratio, "median_ratio": t.median_ratio, "passed": t.passed,
                              "seed": t.seed}
        _write_rows(out / "uniform.csv", t.rows, ("epsilon", "tau", "ratio"))
    if args.probe in ("appendixA", "all"):
        t = symbol.appendixA_probe(omega, 0.0, tau[::max(1, args.n_tau // 9)], seed=args.seed)
        summary["appendixA"] = {"max_ratio": t.max_ratio, "passed": t.passed, "seed": t.seed}
        _write_rows(out / "appendixA.csv", t.rows, ("tau", "ratio"))  # no epsilon in this slice problem
    if args.probe in ("appendixB", "all"):
        t = symbol.appendixB_sweep(omega, args.beta, eps, tau)
        summary["appendixB"] = {"checks": {_g(k): v for k, v in t.checks.items()}, "passed": t.passed}
        _write_rows(out / "appendixB.csv", t.rows, ("epsilon", "tau", "Q1", "Q2"))
    (out / "symbol.json").write_text(_json(summary))
    for name, s in summary.items():
        print(f"{name}: {'pass' if s['passed'] else 'FAIL'}")
    return 0 if all(s["passed"] for s in summary.values()) else 1


def cmd_census(args) -> int:
    rows = []
    if args.omega is not None or args.omega_degrees is not None:
        omega = _omega(args)
        rows.append({"corner": None, "omega": omega, "kind": "MIXED", "indices": spectrum.census_indices(omega)})
    else:
        spec = _spec(args)
        corners = classify_corners(spec)
        for c in corners:
            idx = spectrum.census_indices(c.omega) if c.kind is CornerKind.MIXED else \
                sorted({e.k for e in spectrum.classical_census(c)})
            rows.append({"corner": c.index, "omega": c.omega, "kind": c.kind.value, "indices": idx})
        rep = regularity_exponent(corners, args.slack)
        print(f"s_used = {_g(rep.s_used)}")
    out = _out_dir(args)
    (out / "census.json").write_text(_json(rows))
    for r in rows:
        print(f"corner {r['corner']}: omega {_g(r['omega'])} {r['kind']} singular indices {r['indices']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrcauchy", description="Mixed quasi-reversibility for the Cauchy problem")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.set_defaults(func=func)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None if name == "sweep" else 0)
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        return p

    p = add("mesh-gen", cmd_mesh_gen, "generate a structured triangulation")
    _add_geometry(p)
    p.add_argument("--n", type=int, default=16, help="divisions per unit length")
    p.add_argument("--refine", type=int, default=0, help="extra uniform refinements")

    p = add("solve", cmd_solve, "solve one QR system")
    _add_geometry(p)
    p.add_argument("--exact", default="exp_cos", help="harmonic field (Cauchy form) or compatible source name")
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--mesh", help="mesh file instead of a generated mesh")
    p.add_argument("--delta", type=float, default=0.0, help="noise level")

    p = add("sweep", cmd_sweep, "run an (eps, h, delta) sweep from a JSON config")
    p.add_argument("--config", required=True)

    p = add("spectrum", cmd_spectrum, "pencil eigenvalues at a mixed corner")
    _add_omega(p)
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--n-range", default="-2:2")

    p = add("verify-symbol", cmd_verify_symbol, "finite-difference probes of the operator symbol")
    _add_omega(p)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--eps", default="1,1e-2,1e-4")
    p.add_argument("--tau-max", type=float, default=100.0)
    p.add_argument("--n-tau", type=int, default=201)
    p.add_argument("--probe", default="all", choices=["uniform", "appendixA", "appendixB", "all"])

    p = add("census", cmd_census, "singular exponents with 0 < Re lambda < 1 per corner")
    _add_omega(p)
    _add_geometry(p)
    p.add_argument("--slack", type=float, default=0.01)
    return parser


def _glue_negative_values(argv):
    # argparse would read "-2:2" as an option flag
    out, it = [], iter(argv)
    for a in it:
        if a in ("--n-range",):
            nxt = next(it, None)
            out.append(a if nxt is None else f"{a}={nxt}")
        else:
            out.append(a)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = _glue_negative_values(sys.argv[1:] if argv is None else list(argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError, GeometryError, MeshError, fields.CatalogError, symbol.SymbolError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (QRSolveError, spectrum.QuadratureError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
