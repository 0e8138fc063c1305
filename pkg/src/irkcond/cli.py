"""Command line entry point: ``irkcond {tableau,analyze,sweep,scaling,step,dump}``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import assemble, write_triplets
from .bounds import analyze
from .diffusion import builtin_field, element_averages
from .experiments import (
    ConfigError,
    RunConfig,
    build_mesh,
    fit_slope,
    load_config,
    run_sweep,
    scaling_comparison,
    scaling_csv,
    sweep_csv,
)
from .metric import metric_csv, metric_element_data
from .rk import builtin_tableau, gamma_stats, integrate, kron_system, parse_tableau, real_jordan
from .solver import SolverConfig, gmres

log = logging.getLogger("irkcond")


def _add_common(p: argparse.ArgumentParser, multi: bool) -> None:
    p.add_argument("--config", type=Path, help="key = value config file; flags override it")
    p.add_argument("--mesh", help="uniform, graded, perturbed, mapped or file")
    p.add_argument("--mesh-file", action="append", dest="mesh_files", help="mesh text file (repeatable)")
    p.add_argument("--mesh-param", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--dim", type=int)
    p.add_argument("--field", help="identity, rotated_anisotropic or piecewise_constant")
    p.add_argument("--field-param", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--quadrature-order", type=int)
    p.add_argument("--solver", choices=("direct", "cg", "gmres"))
    p.add_argument("--tol", type=float)
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--log-solves", action="store_true", default=None)
    nargs = "+" if multi else None
    p.add_argument("--n", type=int, nargs=nargs)
    p.add_argument("--method", dest="methods", nargs=nargs)
    p.add_argument("--dt", nargs=nargs, help="numbers or 'h' for dt = N^(-1/d)")
    p.add_argument("--P", dest="P", nargs=nargs, help="none, M, M_D, M_lump, M_D+dtA_D (alias jacobi)")


def _kv(pairs: list[str]) -> dict:
    import json

    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"expected KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v
    return out


def _config(args, defaults: RunConfig | None = None) -> RunConfig:
    cfg = defaults or RunConfig()
    if args.config is not None:
        cfg = load_config(args.config.read_text(), cfg)
    upd = {}
    for key in ("mesh", "dim", "field", "quadrature_order", "out", "log_solves"):
        val = getattr(args, key, None)
        if val is not None:
            upd[key] = val
    for key in ("n", "methods", "dt", "P", "mesh_files"):
        val = getattr(args, key, None)
        if val is not None:
            upd[key] = val
    if args.mesh_param:
        upd["mesh_params"] = {**cfg.mesh_params, **_kv(args.mesh_param)}
    if args.field_param:
        upd["field_params"] = {**cfg.field_params, **_kv(args.field_param)}
    for key in ("workers",):
        if getattr(args, key, None) is not None:
            upd[key] = getattr(args, key)
    if getattr(args, "timing", None):
        upd["record_timing"] = True
    solver_upd = {}
    if args.solver is not None:
        solver_upd["method"] = args.solver
    if args.tol is not None:
        solver_upd["tol"] = args.tol
    if solver_upd:
        upd["solver"] = replace(cfg.solver, **solver_upd)
    if upd.get("mesh_files") and "mesh" not in upd:
        upd["mesh"] = "file"
    return replace(cfg, **upd)


def _tableau(name: str, path: Path | None = None):
    if path is not None:
        return parse_tableau(path.read_text(), name=path.stem)
    return builtin_tableau(name)


def _single(cfg: RunConfig):
    point = cfg.mesh_files[0] if cfg.mesh == "file" else cfg.n[0]
    mesh = build_mesh(cfg, point)
    fld = builtin_field(cfg.field, mesh.dim, **cfg.field_params)
    return mesh, fld


def cmd_tableau(args) -> int:
    tab = _tableau(args.name, args.file)
    print(f"{tab.name} (s={tab.s})")
    print(gamma_stats(tab.gamma).format())
    fac = real_jordan(tab.gamma)
    for blk in fac.blocks:
        print(f"block alpha={blk.alpha!r} beta={blk.beta!r}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _config(args, RunConfig(n=(8,), methods=("radau1a3",), dt=(1e-3,), P=("none",)))
    mesh, fld = _single(cfg)
    tab = _tableau(cfg.methods[0], args.tableau_file)
    report = analyze(mesh, fld, tab, cfg.dt[0].resolve(mesh), cfg.P[0], quadrature_order=cfg.quadrature_order)
    print(report)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    rows = run_sweep(cfg)
    if cfg.out is None:
        sys.stdout.write(sweep_csv(rows))
    else:
        print(f"wrote {len(rows)} rows to {cfg.out}")
    if args.slope:
        groups = {}
        for r in rows:
            groups.setdefault((r.method, r.dt_policy, r.dt if r.dt_policy == "fixed" else None, r.P), []).append(r)
        for (method, pol, dt, P), grp in groups.items():
            if len(grp) >= 3:
                label = pol if dt is None else f"dt={dt!r}"
                print(f"slope {method} {label} P={P}: {fit_slope(grp):.4f}", file=sys.stderr)
    return 0


def cmd_scaling(args) -> int:
    cfg = _config(args, RunConfig(mesh="graded", mesh_params={"beta": 3.0}, n=(16,), methods=("euler",),
                                  dt=(1e-1, 1e-3, 1e-5), P=("none", "M_D", "M_D+dtA_D")))
    rows = scaling_comparison(cfg)
    if cfg.out is None:
        sys.stdout.write(scaling_csv(rows))
    else:
        Path(cfg.out).write_text(scaling_csv(rows))
        print(f"wrote {len(rows)} rows to {cfg.out}")
    return 0


def _initial_state(mesh) -> np.ndarray:
    x = mesh.vertices[mesh.interior_vertices]
    return np.prod(np.sin(math.pi * x), axis=1)


def cmd_step(args) -> int:
    cfg = _config(args, RunConfig(n=(8,), methods=("radau1a3",), dt=(1e-2,), P=("none",)))
    mesh, fld = _single(cfg)
    fem = assemble(mesh, element_averages(fld, mesh, cfg.quadrature_order))
    tab = _tableau(cfg.methods[0], args.tableau_file)
    dt = cfg.dt[0].resolve(mesh)
    u0 = _initial_state(mesh)
    u = integrate(fem.M, fem.A, u0, dt, args.steps, tab, strategy=args.strategy, solver_cfg=cfg.solver)
    print(f"method={tab.name} strategy={args.strategy} dt={dt!r} steps={args.steps}")
    print(f"final l2 norm = {float(np.linalg.norm(u))!r}")
    print(f"final M norm = {float(math.sqrt(u @ (fem.M @ u)))!r}")
    if cfg.log_solves:
        op = kron_system(fem.M, fem.A, dt, tab.gamma)
        rhs = -np.kron(np.ones(tab.s), fem.A @ u0)
        _, stats = gmres(op, rhs, tol=cfg.solver.tol)
        line = "method,iterations,relative_residual,eisenstat_factor,converged\n" + stats.csv_row() + "\n"
        if cfg.out:
            with open(cfg.out, "a") as fh:
                fh.write(line)
        else:
            sys.stdout.write(line)
    return 0


def cmd_dump(args) -> int:
    cfg = _config(args, RunConfig(n=(4,), methods=("euler",), dt=(1e-3,), P=("none",)))
    mesh, fld = _single(cfg)
    averages = element_averages(fld, mesh, cfg.quadrature_order)
    out = Path(args.directory)
    out.mkdir(parents=True, exist_ok=True)
    fem = assemble(mesh, averages)
    (out / "M.txt").write_text(write_triplets(fem.M))
    (out / "A.txt").write_text(write_triplets(fem.A))
    (out / "metric.csv").write_text(metric_csv(metric_element_data(mesh, averages)))
    print(f"wrote M.txt, A.txt, metric.csv to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irkcond", description="Conditioning of implicit RK stage systems for FE diffusion")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tableau", help="print eigenvalue and singular value data of a tableau")
    p.add_argument("name")
    p.add_argument("--file", type=Path, help="custom tableau text block")
    p.set_defaults(func=cmd_tableau)

    p = sub.add_parser("analyze", help="bounds and exact values for one instance")
    _add_common(p, multi=False)
    p.add_argument("--tableau-file", type=Path)
    p.set_defaults(func=cmd_analyze)

    for name, func, help_ in (("sweep", cmd_sweep, "bound-vs-exact sweep"),
                              ("scaling", cmd_scaling, "diagonal scaling comparison")):
        p = sub.add_parser(name, help=help_)
        _add_common(p, multi=True)
        p.add_argument("--workers", type=int)
        p.add_argument("--timing", action="store_true", help="record wall-clock seconds per row")
        if name == "sweep":
            p.add_argument("--slope", action="store_true", help="print log-log slopes of exact vs N")
        p.set_defaults(func=func)

    p = sub.add_parser("step", help="time-integrate and report the final-state norm")
    _add_common(p, multi=False)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--strategy", choices=("successive", "simultaneous", "dirk"), default="successive")
    p.add_argument("--tableau-file", type=Path)
    p.set_defaults(func=cmd_step)

    p = sub.add_parser("dump", help="write M, A triplets and per-element metric CSV")
    _add_common(p, multi=False)
    p.add_argument("directory")
    p.set_defaults(func=cmd_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
