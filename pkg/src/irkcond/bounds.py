"""Closed-form conditioning bounds evaluated on concrete instances.

Two kinds of bounds live here.  *Explicit-constant* bounds take exact extremal
eigenvalues of ``P^{-1/2} M P^{-1/2}`` and ``P^{-1/2} A P^{-1/2}`` and are
certified upper bounds for the RK system.  *Generic-constant* bounds are
``<~`` estimates written in mesh quantities; they are evaluated with all hidden
constants set to one and are only meaningful as scaling laws.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import FEMatrices, assemble, canonical_preconditioner
from .diffusion import DiffusionField, element_averages
from .mesh import SimplicialMesh, vertex_patches
from .metric import MetricElementData, metric_element_data
from .rk import ButcherTableau, GammaStats, gamma_stats, real_jordan
from .spectral import KronOperator, kappa_tilde, preconditioned_matrices, preconditioned_operator, sym_extremal_eigs

log = logging.getLogger(__name__)

__all__ = [
    "PositivityError",
    "EigData",
    "Bound",
    "BoundReport",
    "psi_E",
    "psi_D",
    "patch_metric_factors",
    "lambda_D",
    "d_min_of",
    "preconditioned_eig_data",
    "euler_bounds",
    "irk_bounds",
    "jordan_block_bound",
    "stiffness_lambda_min_bound",
    "stiffness_lambda_min_bounds",
    "mass_eig_bounds",
    "analyze",
]


class PositivityError(ValueError):
    """``dt`` is at or beyond the positivity threshold of the symmetric part."""


@dataclass(frozen=True)
class EigData:
    """Extremal eigenvalues of ``P^{-1/2} M P^{-1/2}`` (m) and ``P^{-1/2} A P^{-1/2}`` (a)."""

    m_min: float
    m_max: float
    a_min: float
    a_max: float


@dataclass(frozen=True)
class Bound:
    value: float
    formula: str
    explicit_constant: bool

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))

    @property
    def generic_constant(self) -> bool:
        return not self.explicit_constant


# ---------------------------------------------------------------- nonuniformity factors


def psi_E(mesh: SimplicialMesh) -> float:
    """Euclidean nonuniformity factor built from ``|K_bar| / |K|``."""
    d = mesh.dim
    ratio = (mesh.domain_volume / mesh.n_elements) / mesh.volumes
    if d == 1:
        return 1.0
    if d == 2:
        return float(1.0 + math.log(ratio.max()))
    return float(np.mean(ratio ** ((d - 2) / 2.0)) ** (2.0 / d))


def _metric_sums(metric: MetricElementData):
    vol = metric.volumes
    return float(np.sum(vol * metric.r)), float(vol.sum())


def psi_D(mesh: SimplicialMesh, metric: MetricElementData, dt: float) -> tuple[float, float]:
    """``(Psi_D, psi_D)``, the ``dt``-dependent nonuniformity factors in the metric ``D^{-1}``.

    Uses ``h^{-2} (h / a_K)^2 = r_K`` so the factors are written in ``r_K``.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    d = mesh.dim
    r = metric.r
    weighted, omega = _metric_sums(metric)
    small = (1.0 + dt * r.max()) / (1.0 + dt * weighted / omega)
    if d == 1:
        big = 1.0 + dt * weighted
    elif d == 2:
        big = (1.0 + abs(math.log(small))) * (1.0 + dt * weighted)
    else:
        h = metric.h_avg
        big = 1.0 + dt * h**-2 * float(np.sum(metric.volumes * (h / metric.a_metric) ** d)) ** (2.0 / d)
    return float(big), float(small)


def patch_metric_factors(mesh: SimplicialMesh, metric: MetricElementData) -> tuple[np.ndarray, np.ndarray]:
    """Per interior vertex ``sum_{K in omega_j} |K| r_K`` and ``|omega_j|``."""
    patches = vertex_patches(mesh)
    weighted = np.zeros(mesh.n_vertices)
    np.add.at(weighted, mesh.elements.ravel(), np.repeat(metric.volumes * metric.r, mesh.dim + 1))
    iv = mesh.interior_vertices
    return weighted[iv], patches.volumes[iv]


def d_min_of(field: DiffusionField | None, averages=None) -> float:
    """Analytic ``d_min`` of the field, else the smallest eigenvalue over the element averages."""
    if field is not None and field.d_min is not None:
        return float(field.d_min)
    if averages is None:
        raise ValueError("d_min unknown: pass element averages")
    return float(np.linalg.eigvalsh(averages.tensors)[:, 0].min())


def _is_unit_cube(mesh: SimplicialMesh) -> bool:
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    return bool(np.allclose(lo, 0.0, atol=1e-12) and np.allclose(hi, 1.0, atol=1e-12)
                and abs(mesh.domain_volume - 1.0) < 1e-10)


def lambda_D(mesh: SimplicialMesh, fem: FEMatrices, field: DiffusionField | None = None) -> tuple[float, str]:
    """Smallest eigenvalue of ``-div(D grad)`` with its source tag.

    ``d pi^2`` for ``D = I`` on the unit cube, else the discrete surrogate
    ``lambda_min(A, M)``.
    """
    if field is not None and field.name == "identity" and _is_unit_cube(mesh):
        return mesh.dim * math.pi**2, "analytic"
    return float(sym_extremal_eigs(fem.A, fem.M).lambda_min), "discrete"


# ---------------------------------------------------------------- eigenvalue bounds


def mass_eig_bounds(mesh: SimplicialMesh, kind: str, *, dt: float = 0.0, metric: MetricElementData | None = None):
    """Lower/upper bounds on the spectrum of ``P^{-1/2} M P^{-1/2}``.

    Returns ``(lower, upper)`` as :class:`Bound` objects; ``None`` where none is stated.
    """
    kind = canonical_preconditioner(kind)
    d = mesh.dim
    iv = mesh.interior_vertices
    om = vertex_patches(mesh).volumes[iv]
    if kind == "none":
        return (Bound(om.min() / ((d + 1) * (d + 2)), "mass-lower", True), Bound(om.max() / (d + 1), "mass-upper", True))
    if kind == "M":
        return Bound(1.0, "mass-lower", True), Bound(1.0, "mass-upper", True)
    upper = Bound(1.0 + d / 2.0, "mass-upper", True)
    if kind == "M_D":
        return Bound(0.5, "mass-lower", True), upper
    if kind == "M_lump":
        return Bound(1.0 / (d + 2), "mass-lower", True), upper
    if metric is None:
        return None, upper
    weighted, om = patch_metric_factors(mesh, metric)
    return Bound(1.0 / (1.0 + dt * float((weighted / om).max())), "mass-lower", False), upper


def stiffness_lambda_min_bound(mesh: SimplicialMesh, d_min: float) -> float:
    """``d_min N^{-1} Psi_E^{-1}`` (generic constant)."""
    if d_min <= 0:
        raise ValueError("d_min must be positive")
    return d_min / (mesh.n_elements * psi_E(mesh))


def stiffness_lambda_min_bounds(mesh, kind, *, d_min, dt=0.0, metric=None, lam_D=None) -> Bound:
    """Lower bound on ``lambda_min(P^{-1/2} A P^{-1/2})`` per preconditioner (generic constant)."""
    kind = canonical_preconditioner(kind)
    if kind == "none":
        return Bound(stiffness_lambda_min_bound(mesh, d_min), "stiffness-lower", False)
    if kind in ("M", "M_D", "M_lump"):
        return Bound(float(lam_D), "stiffness-lower", False)
    big, _ = psi_D(mesh, metric, dt)
    return Bound(d_min / big, "stiffness-lower", False)


def preconditioned_eig_data(fem: FEMatrices, dt: float, kind: str, **kw) -> EigData:
    Mt, At = preconditioned_matrices(fem, dt, kind)
    m = sym_extremal_eigs(Mt, **kw)
    a = sym_extremal_eigs(At, **kw)
    return EigData(m.lambda_min, m.lambda_max, a.lambda_min, a.lambda_max)


# ---------------------------------------------------------------- Euler bounds


def euler_bounds(
    mesh: SimplicialMesh,
    fem: FEMatrices | None,
    metric: MetricElementData,
    dt: float,
    kind: str,
    *,
    d_min: float,
    lam_D: float | None = None,
    limit: str | None = None,
) -> Bound:
    """Generic-constant bound on ``kappa(P^{-1/2} (M + dt A) P^{-1/2})``.

    ``limit='mass'`` gives the ``dt -> 0`` form and ``limit='stiffness'`` the
    ``dt -> infinity`` form of the same estimate.
    """
    kind = canonical_preconditioner(kind)
    d, N = mesh.dim, mesh.n_elements
    weighted, om = patch_metric_factors(mesh, metric)
    F = weighted / om
    om_min = om.min()
    psiE = psi_E(mesh)
    if kind in ("M", "M_D", "M_lump") and lam_D is None:
        if fem is None:
            raise ValueError("lam_D or fem needed for this preconditioner")
        lam_D = float(sym_extremal_eigs(fem.A, fem.M).lambda_min)

    if limit not in (None, "mass", "stiffness"):
        raise ValueError(f"unknown limit {limit!r}")

    if kind == "none":
        if limit == "mass":
            return Bound(float(om.max() / om_min), "euler-plain-mass-limit", False)
        if limit == "stiffness":
            return Bound(float(psiE / d_min * (N * weighted).max()), "euler-plain-stiffness-limit", False)
        num = float(((om / om_min) * (1.0 + dt * F)).max())
        den = 1.0 + dt * d_min / (N * om_min * psiE)
        return Bound(num / den, "euler-plain", False)

    if kind in ("M", "M_D", "M_lump"):
        if limit == "mass":
            return Bound(1.0, "euler-mass-scaled", False)
        if limit == "stiffness":
            return Bound(float(F.max()) / lam_D, "euler-mass-scaled", False)
        return Bound((1.0 + dt * float(F.max())) / (1.0 + dt * lam_D), "euler-mass-scaled", False)

    # Jacobi
    if limit == "mass":
        return Bound(1.0, "euler-jacobi", False)
    h = metric.h_avg
    vol = metric.volumes
    if limit == "stiffness":
        ratio2 = (h / metric.a_metric) ** 2
        base = h**-2 / d_min
        if d == 1:
            val = base * float(np.sum(vol * ratio2))
        elif d == 2:
            small = float(ratio2.max() / np.sum(vol / mesh.domain_volume * ratio2))
            val = base * (1.0 + abs(math.log(small))) * float(np.sum(vol * ratio2))
        else:
            val = base * float(np.sum(vol * (h / metric.a_metric) ** d)) ** (2.0 / d)
        return Bound(val, "euler-jacobi-stiffness-limit", False)
    big, _ = psi_D(mesh, metric, dt)
    return Bound(1.0 / (1.0 / (1.0 + dt * float(F.max())) + dt * d_min / big), "euler-jacobi", False)


# ---------------------------------------------------------------- RK bounds


def irk_bounds(eig: EigData, stats: GammaStats, dt: float) -> tuple[Bound, float]:
    """Certified bound on ``kappa_tilde`` of the preconditioned stage system and ``dt_max``.

    Raises
    ------
    PositivityError
        If ``lambda_min((Gamma + Gamma^T)/2) < 0`` and ``dt >= dt_max``.
    """
    lam = stats.lambda_min_sym
    num = eig.m_max + dt * stats.sigma_max * eig.a_max
    if lam >= 0:
        return Bound(num / (eig.m_min + dt * lam * eig.a_min), "irk-coercive", True), math.inf
    dt_max = eig.m_min / (-lam * eig.a_max)
    if dt >= dt_max:
        raise PositivityError(f"dt = {dt:.6g} >= dt_max = {dt_max:.6g}; symmetric part may be indefinite")
    return Bound(num / (eig.m_min + dt * lam * eig.a_max), "irk-indefinite", True), dt_max


def jordan_block_bound(eig: EigData, alpha: float, beta: float, dt: float) -> Bound:
    """Certified bound for one real Jordan block ``I (x) M + dt C (x) A`` (``beta = 0`` for 1x1)."""
    if alpha < -1e-12:
        raise ValueError("alpha must be nonnegative")
    alpha = max(alpha, 0.0)
    num = eig.m_max + dt * math.hypot(alpha, beta) * eig.a_max
    return Bound(num / (eig.m_min + dt * alpha * eig.a_min), "irk-block", True)


# ---------------------------------------------------------------- report


@dataclass
class BoundReport:
    """All bounds for one ``(mesh, D, dt, P, tableau)`` instance with exact companions."""

    method: str
    P: str
    dt: float
    N: int
    N_vi: int
    psi_E: float
    psi_D: float
    psi_D_small: float
    lambda_D: float
    lambda_D_source: str
    d_min: float
    eig: EigData
    euler: Bound
    irk: Bound | None
    dt_max: float
    exact: float | None
    jordan: list[tuple[float, float, Bound, float | None]] = field(default_factory=list)
    eig_bounds: dict[str, Bound | None] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [
            f"method={self.method} P={self.P} dt={self.dt!r} N={self.N} N_vi={self.N_vi}",
            f"psi_E={self.psi_E!r} psi_D={self.psi_D!r} psi_D_small={self.psi_D_small!r}",
            f"lambda_D={self.lambda_D!r} ({self.lambda_D_source}) d_min={self.d_min!r}",
            f"eig: m=[{self.eig.m_min!r}, {self.eig.m_max!r}] a=[{self.eig.a_min!r}, {self.eig.a_max!r}]",
            f"euler bound ({self.euler.formula}, generic constant) = {self.euler.value!r}",
        ]
        if self.irk is not None:
            out.append(f"irk bound ({self.irk.formula}, explicit constant) = {self.irk.value!r}")
        out.append(f"dt_max={self.dt_max!r}")
        if self.exact is not None:
            out.append(f"exact kappa_tilde = {self.exact!r}")
        for alpha, beta, bnd, ex in self.jordan:
            tail = "" if ex is None else f" exact={ex!r}"
            out.append(f"block alpha={alpha!r} beta={beta!r}: bound={bnd.value!r}{tail}")
        for name, b in self.eig_bounds.items():
            if b is not None:
                flag = "explicit" if b.explicit_constant else "generic"
                out.append(f"{name} ({b.formula}, {flag}) = {b.value!r}")
        out += [f"note: {n}" for n in self.notes]
        return out

    def __str__(self) -> str:
        return "\n".join(self.lines())


def analyze(
    mesh: SimplicialMesh,
    field: DiffusionField,
    tableau: ButcherTableau,
    dt: float,
    P_kind: str = "none",
    *,
    quadrature_order: int = 2,
    exact: bool = True,
    fem: FEMatrices | None = None,
    averages=None,
) -> BoundReport:
    """Evaluate every bound on one instance and, if ``exact``, the exact ``kappa_tilde`` values."""
    kind = canonical_preconditioner(P_kind)
    averages = averages if averages is not None else element_averages(field, mesh, quadrature_order)
    fem = fem if fem is not None else assemble(mesh, averages)
    metric = metric_element_data(mesh, averages)
    dmin = d_min_of(field, averages)
    lam, lam_src = lambda_D(mesh, fem, field)
    big, small = psi_D(mesh, metric, dt)
    eig = preconditioned_eig_data(fem, dt, kind)
    stats = gamma_stats(tableau.gamma)
    notes = []
    if lam_src == "discrete":
        notes.append("lambda_D is the discrete surrogate lambda_min(A, M)")
    if kind == "M":
        notes.append("P = M realized with a dense M^(-1/2)")
    try:
        irk, dt_max = irk_bounds(eig, stats, dt)
    except PositivityError as exc:
        irk, dt_max = None, eig.m_min / (-stats.lambda_min_sym * eig.a_max)
        notes.append(str(exc))
    exact_val = None
    if exact and irk is not None:
        exact_val = kappa_tilde(preconditioned_operator(fem, dt, tableau.gamma, kind)).kappa_tilde
    jordan = []
    Mt, At = preconditioned_matrices(fem, dt, kind)
    for blk in real_jordan(tableau.gamma).blocks:
        bnd = jordan_block_bound(eig, blk.alpha, blk.beta, dt)
        ex = None
        if exact:
            ex = kappa_tilde(KronOperator(Mt, At, dt, blk.matrix)).kappa_tilde
        jordan.append((blk.alpha, blk.beta, bnd, ex))
    m_lo, m_hi = mass_eig_bounds(mesh, kind, dt=dt, metric=metric)
    return BoundReport(
        method=tableau.name,
        P=kind,
        dt=dt,
        N=mesh.n_elements,
        N_vi=mesh.n_interior,
        psi_E=psi_E(mesh),
        psi_D=big,
        psi_D_small=small,
        lambda_D=lam,
        lambda_D_source=lam_src,
        d_min=dmin,
        eig=eig,
        euler=euler_bounds(mesh, fem, metric, dt, kind, d_min=dmin, lam_D=lam),
        irk=irk,
        dt_max=dt_max,
        exact=exact_val,
        jordan=jordan,
        eig_bounds={
            "lambda_min(PMP) lower": m_lo,
            "lambda_max(PMP) upper": m_hi,
            "lambda_min(PAP) lower": stiffness_lambda_min_bounds(
                mesh, kind, d_min=dmin, dt=dt, metric=metric, lam_D=lam
            ),
        },
        notes=notes,
    )
