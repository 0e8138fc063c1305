"""Sweeps over meshes, time steps, preconditioners and methods, with CSV output."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .assembly import FEMatrices, assemble, canonical_preconditioner
from .bounds import (
    PositivityError,
    d_min_of,
    euler_bounds,
    irk_bounds,
    lambda_D,
    preconditioned_eig_data,
    psi_D,
    psi_E,
)
from .diffusion import builtin_field, element_averages
from .mesh import (
    SimplicialMesh,
    generate_graded,
    generate_mapped_anisotropic,
    generate_perturbed,
    generate_uniform,
    load_mesh,
)
from .metric import metric_element_data
from .rk import builtin_tableau, gamma_stats
from .solver import SolverConfig, eisenstat_factor, gmres
from .spectral import KronOperator, kappa_tilde, preconditioned_matrices, preconditioned_operator

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "SweepError",
    "BoundViolation",
    "DtPolicy",
    "RunConfig",
    "SweepRow",
    "ScalingRow",
    "CSV_COLUMNS",
    "parse_dt_policy",
    "load_config",
    "build_mesh",
    "run_sweep",
    "sweep_csv",
    "fit_slope",
    "log_slope",
    "scaling_comparison",
    "scaling_csv",
]

CSV_COLUMNS = (
    "method", "mesh", "n", "N", "N_vi", "dt_policy", "dt", "P",
    "exact", "bound_irk", "bound_euler", "psi_E", "psi_D", "dt_max", "seconds",
)
SOLVE_COLUMNS = ("gmres_iterations", "gmres_residual", "eisenstat_factor")
SCALING_COLUMNS = ("method", "mesh", "n", "N", "dt_policy", "dt", "P", "kappa_none", "kappa_P", "ratio")


class ConfigError(ValueError):
    pass


class SweepError(RuntimeError):
    pass


class BoundViolation(AssertionError):
    pass


@dataclass(frozen=True)
class DtPolicy:
    """``fixed`` with a value, or ``h_coupled`` meaning ``dt = N^{-1/d}``."""

    kind: str
    value: float | None = None

    def __post_init__(self):
        if self.kind == "fixed":
            if self.value is None or not self.value > 0:
                raise ConfigError(f"fixed time step must be positive, got {self.value!r}")
        elif self.kind != "h_coupled":
            raise ConfigError(f"unknown dt policy {self.kind!r}")

    def resolve(self, mesh: SimplicialMesh) -> float:
        if self.kind == "fixed":
            return float(self.value)
        return float(mesh.n_elements ** (-1.0 / mesh.dim))

    @property
    def label(self) -> str:
        return self.kind


def parse_dt_policy(spec) -> DtPolicy:
    if isinstance(spec, DtPolicy):
        return spec
    if isinstance(spec, (int, float)):
        return DtPolicy("fixed", float(spec))
    text = str(spec).strip().lower()
    if text in ("h", "h_coupled", "n^-1/d", "coupled"):
        return DtPolicy("h_coupled")
    try:
        return DtPolicy("fixed", float(text))
    except ValueError:
        raise ConfigError(f"cannot parse dt policy {spec!r}") from None


def _tuple(v):
    if v is None:
        return ()
    if isinstance(v, (str, bytes, int, float)):
        return (v,)
    return tuple(v)


@dataclass(frozen=True)
class RunConfig:
    """Experiment grid: mesh family, diffusion field, methods, time-step policies, preconditioners."""

    mesh: str = "uniform"
    dim: int = 2
    n: tuple[int, ...] = (4, 8, 16, 32, 64)
    mesh_params: dict = dc_field(default_factory=dict)
    mesh_files: tuple[str, ...] = ()
    field: str = "identity"
    field_params: dict = dc_field(default_factory=dict)
    methods: tuple[str, ...] = ("euler", "radau1a3")
    dt: tuple[DtPolicy, ...] = (DtPolicy("fixed", 1e-1), DtPolicy("fixed", 1e-3), DtPolicy("fixed", 1e-5))
    P: tuple[str, ...] = ("none", "M_D+dtA_D")
    quadrature_order: int = 2
    solver: SolverConfig = SolverConfig(method="gmres")
    out: str | None = None
    record_timing: bool = False
    log_solves: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "n", tuple(int(v) for v in _tuple(self.n)))
        object.__setattr__(self, "mesh_files", tuple(str(v) for v in _tuple(self.mesh_files)))
        object.__setattr__(self, "methods", tuple(str(v) for v in _tuple(self.methods)))
        object.__setattr__(self, "dt", tuple(parse_dt_policy(v) for v in _tuple(self.dt)))
        object.__setattr__(self, "P", tuple(canonical_preconditioner(str(v)) for v in _tuple(self.P)))
        if self.mesh == "file":
            if not self.mesh_files:
                raise ConfigError("mesh = file needs mesh_files")
        elif not self.n:
            raise ConfigError("sweep list n is empty")
        if any(v < 1 for v in self.n):
            raise ConfigError("subdivision counts must be >= 1")
        if not self.methods or not self.dt or not self.P:
            raise ConfigError("methods, dt and P must be non-empty")
        for m in self.methods:
            builtin_tableau(m)
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def sweep_points(self) -> tuple:
        return self.mesh_files if self.mesh == "file" else self.n

    def mesh_label(self) -> str:
        if not self.mesh_params:
            return self.mesh
        inner = ";".join(f"{k}={self.mesh_params[k]}" for k in sorted(self.mesh_params))
        return f"{self.mesh}({inner})"


_CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def load_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines; values are JSON when they parse as JSON, else strings.

    Solver settings use the keys ``solver``, ``tol``, ``max_iter`` and ``restart``.
    """
    values: dict = {}
    solver_kw: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        try:
            parsed = json.loads(val)
        except json.JSONDecodeError:
            parsed = val
        if key in ("tol", "max_iter", "restart"):
            solver_kw[key] = parsed
        elif key == "solver":
            solver_kw["method"] = parsed
        elif key in _CONFIG_KEYS:
            values[key] = parsed
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    base = base or RunConfig()
    if solver_kw:
        values["solver"] = replace(base.solver, **solver_kw)
    try:
        return replace(base, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------- rows


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class SweepRow:
    method: str
    mesh: str
    n: int
    N: int
    N_vi: int
    dt_policy: str
    dt: float
    P: str
    exact: float
    bound_irk: float
    bound_euler: float
    psi_E: float
    psi_D: float
    dt_max: float
    seconds: float
    solve: tuple | None = None

    def csv(self) -> str:
        vals = [getattr(self, c) for c in CSV_COLUMNS]
        if self.solve is not None:
            vals += list(self.solve)
        return ",".join(_fmt(v) for v in vals)


@dataclass(frozen=True)
class ScalingRow:
    method: str
    mesh: str
    n: int
    N: int
    dt_policy: str
    dt: float
    P: str
    kappa_none: float
    kappa_P: float

    @property
    def ratio(self) -> float:
        return self.kappa_none / self.kappa_P

    def csv(self) -> str:
        return ",".join(_fmt(getattr(self, c)) for c in SCALING_COLUMNS)


# ---------------------------------------------------------------- mesh setup


MESH_BUILDERS = {
    "uniform": lambda dim, n, **kw: generate_uniform(dim, n),
    "graded": lambda dim, n, **kw: generate_graded(dim, n, float(kw.get("beta", kw.get("grading_exponent", 3.0)))),
    "perturbed": lambda dim, n, **kw: generate_perturbed(dim, n, **kw),
    "mapped": lambda dim, n, **kw: generate_mapped_anisotropic(n, dim=dim, **kw),
}


def build_mesh(config: RunConfig, point) -> SimplicialMesh:
    if config.mesh == "file":
        return load_mesh(Path(point).read_text())
    try:
        builder = MESH_BUILDERS[config.mesh]
    except KeyError:
        raise ConfigError(f"unknown mesh generator {config.mesh!r}") from None
    return builder(config.dim, int(point), **config.mesh_params)


@dataclass
class _Instance:
    mesh: SimplicialMesh
    fem: FEMatrices
    metric: object
    d_min: float
    lam_D: float
    label_n: int


def _setup(config: RunConfig, point, index: int) -> _Instance:
    mesh = build_mesh(config, point)
    fld = builtin_field(config.field, mesh.dim, **config.field_params)
    averages = element_averages(fld, mesh, config.quadrature_order)
    fem = assemble(mesh, averages)
    metric = metric_element_data(mesh, averages)
    lam, _ = lambda_D(mesh, fem, fld)
    n_label = index if config.mesh == "file" else int(point)
    return _Instance(mesh, fem, metric, d_min_of(fld, averages), lam, n_label)


# ---------------------------------------------------------------- sweep


def _sweep_point(config: RunConfig, index: int, point) -> list[SweepRow]:
    inst = _setup(config, point, index)
    mesh = inst.mesh
    rows = []
    for policy in config.dt:
        dt = policy.resolve(mesh)
        big, _ = psi_D(mesh, inst.metric, dt)
        pe = psi_E(mesh)
        for kind in config.P:
            eig = preconditioned_eig_data(inst.fem, dt, kind)
            euler = euler_bounds(mesh, inst.fem, inst.metric, dt, kind, d_min=inst.d_min, lam_D=inst.lam_D)
            for name in config.methods:
                tab = builtin_tableau(name)
                stats = gamma_stats(tab.gamma)
                start = time.perf_counter()
                try:
                    bound, dt_max = irk_bounds(eig, stats, dt)
                except PositivityError as exc:
                    log.info("skipping %s n=%s dt=%g P=%s: %s", name, point, dt, kind, exc)
                    continue
                op = preconditioned_operator(inst.fem, dt, tab.gamma, kind)
                exact = kappa_tilde(op).kappa_tilde
                solve = None
                if config.log_solves:
                    solve = _log_solve(op, config)
                seconds = time.perf_counter() - start if config.record_timing else 0.0
                if bound.value < exact * (1 - 1e-8):
                    raise BoundViolation(
                        f"{name} n={point} dt={dt!r} P={kind}: bound {bound.value!r} < exact {exact!r}"
                    )
                rows.append(SweepRow(
                    method=name, mesh=config.mesh_label(), n=inst.label_n, N=mesh.n_elements,
                    N_vi=mesh.n_interior, dt_policy=policy.label, dt=dt, P=kind, exact=float(exact),
                    bound_irk=bound.value, bound_euler=euler.value, psi_E=pe, psi_D=big,
                    dt_max=float(dt_max), seconds=float(seconds), solve=solve,
                ))
    return rows


def _log_solve(op, config: RunConfig) -> tuple:
    rhs = op @ np.ones(op.shape[0])
    summary = kappa_tilde(op)
    _, stats = gmres(op, rhs, tol=config.solver.tol, max_iter=config.solver.max_iter,
                     restart=config.solver.restart, check_eisenstat=config.solver.restart is None,
                     spectral_data=(summary.sigma_max, summary.lambda_min))
    return stats.iterations, stats.relative_residual, eisenstat_factor(summary.sigma_max, summary.lambda_min)


def _run_points(config: RunConfig, fn) -> list:
    points = list(enumerate(config.sweep_points))

    def task(item):
        index, point = item
        try:
            return fn(config, index, point)
        except (BoundViolation, ConfigError):
            raise
        except Exception as exc:
            raise SweepError(f"sweep point {point!r}: {type(exc).__name__}: {exc}") from exc

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            chunks = list(pool.map(task, points))
    else:
        chunks = [task(p) for p in points]
    return [row for chunk in chunks for row in chunk]


def run_sweep(config: RunConfig) -> list[SweepRow]:
    """One row per (sweep point, dt policy, P, method), in config order.

    Rows whose method loses positivity at the given ``dt`` are skipped and logged.
    """
    rows = _run_points(config, _sweep_point)
    if config.out:
        Path(config.out).write_text(sweep_csv(rows))
    return rows


def sweep_csv(rows: Iterable[SweepRow]) -> str:
    rows = list(rows)
    header = list(CSV_COLUMNS)
    if rows and rows[0].solve is not None:
        header += list(SOLVE_COLUMNS)
    return "\n".join([",".join(header)] + [r.csv() for r in rows]) + "\n"


# ---------------------------------------------------------------- slopes


def log_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.log(np.asarray(xs, dtype=float))
    y = np.log(np.asarray(ys, dtype=float))
    if len(x) < 3:
        raise ValueError("need at least 3 points for a slope fit")
    if np.ptp(x) <= 1e-12 * max(1.0, np.abs(x).max()):
        raise ValueError("x values are degenerate")
    return float(np.polyfit(x, y, 1)[0])


def fit_slope(rows, x: str = "N", y: str = "exact") -> float:
    """Log-log slope of attribute ``y`` against ``x`` over ``rows``."""
    rows = list(rows)
    get = (lambda r, k: r[k]) if rows and isinstance(rows[0], dict) else getattr
    return log_slope([get(r, x) for r in rows], [get(r, y) for r in rows])


# ---------------------------------------------------------------- diagonal scaling


def _scaling_point(config: RunConfig, index: int, point) -> list[ScalingRow]:
    inst = _setup(config, point, index)
    rows = []
    for policy in config.dt:
        dt = policy.resolve(inst.mesh)
        for name in config.methods:
            gamma = builtin_tableau(name).gamma
            base = kappa_tilde(preconditioned_operator(inst.fem, dt, gamma, "none")).kappa_tilde
            for kind in config.P:
                if kind == "none":
                    continue
                Mt, At = preconditioned_matrices(inst.fem, dt, kind)
                val = kappa_tilde(KronOperator(Mt, At, dt, gamma)).kappa_tilde
                rows.append(ScalingRow(name, config.mesh_label(), inst.label_n, inst.mesh.n_elements,
                                       policy.label, dt, kind, float(base), float(val)))
    return rows


def scaling_comparison(config: RunConfig) -> list[ScalingRow]:
    """``kappa`` without and with each diagonal preconditioner and their ratio."""
    if "none" not in config.P or not ({"M_D", "M_D+dtA_D"} & set(config.P)):
        raise ConfigError("scaling comparison needs P = none and at least one of M_D, M_D+dtA_D")
    rows = _run_points(config, _scaling_point)
    if config.out:
        Path(config.out).write_text(scaling_csv(rows))
    return rows


def scaling_csv(rows: Iterable[ScalingRow]) -> str:
    return "\n".join([",".join(SCALING_COLUMNS)] + [r.csv() for r in rows]) + "\n"
