"""Linear solvers: sparse LU, preconditioned CG and full GMRES."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SolverError",
    "SingularMatrixError",
    "NonConvergenceError",
    "IndefiniteError",
    "EisenstatViolation",
    "SolverConfig",
    "SolveStats",
    "direct_solve",
    "cg",
    "gmres",
    "eisenstat_factor",
    "preconditioner_diagonal_for",
]


class SolverError(RuntimeError):
    pass


class SingularMatrixError(SolverError):
    pass


class NonConvergenceError(SolverError):
    def __init__(self, message: str, stats: "SolveStats"):
        super().__init__(f"{message}: relative residual {stats.relative_residual:.3e} after {stats.iterations} iterations")
        self.stats = stats


class IndefiniteError(SolverError):
    pass


class EisenstatViolation(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """``method`` is ``direct``, ``cg`` or ``gmres``; ``max_iter=None`` means ``10 n``."""

    method: str = "direct"
    tol: float = 1e-10
    max_iter: int | None = None
    restart: int | None = None

    def __post_init__(self):
        if self.method not in ("direct", "cg", "gmres"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class SolveStats:
    method: str
    iterations: int = 0
    relative_residual: float = 0.0
    history: list[float] = field(default_factory=list)
    eisenstat_factor: float | None = None
    converged: bool = True
    note: str = ""

    def csv_row(self) -> str:
        fac = "" if self.eisenstat_factor is None else repr(self.eisenstat_factor)
        return f"{self.method},{self.iterations},{self.relative_residual!r},{fac},{int(self.converged)}"


def _as_apply(op):
    if callable(op) and not hasattr(op, "shape"):
        return op
    if isinstance(op, np.ndarray) or sp.issparse(op):
        return lambda x: op @ x
    return op.matvec


def direct_solve(S, b) -> np.ndarray:
    """Solve ``S x = b`` by LU (sparse or dense) with one step of iterative refinement.

    Raises
    ------
    SingularMatrixError
        On a zero pivot or when the backward error stays above ``1e-10``.
    """
    b = np.asarray(b, dtype=float)
    try:
        if sp.issparse(S):
            solve = spla.splu(sp.csc_matrix(S)).solve
        else:
            S = np.asarray(S, dtype=float)
            lu = sla.lu_factor(S, check_finite=True)
            if np.any(np.diag(lu[0]) == 0.0):
                raise SingularMatrixError("matrix is singular (zero pivot)")
            solve = lambda r: sla.lu_solve(lu, r)  # noqa: E731
        x = solve(b)
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("matrix is singular (non-finite solution)")
        x = x + solve(b - S @ x)
    except (RuntimeError, sla.LinAlgError) as exc:
        if isinstance(exc, SingularMatrixError):
            raise
        raise SingularMatrixError(f"matrix is singular: {exc}") from None
    norm_s = spla.norm(S, np.inf) if sp.issparse(S) else np.linalg.norm(S, np.inf)
    scale = np.linalg.norm(b, np.inf) + norm_s * np.linalg.norm(x, np.inf)
    if not np.all(np.isfinite(x)) or (scale > 0 and np.linalg.norm(S @ x - b, np.inf) > 1e-10 * scale):
        raise SingularMatrixError("direct solve residual too large; matrix is numerically singular")
    return x


def _prec_apply(P):
    """``r -> P^{-1} r`` for a diagonal array, a callable, a matrix, or ``None``."""
    if P is None:
        return lambda r: r
    if callable(P) and not hasattr(P, "shape"):
        return P
    if isinstance(P, np.ndarray) and P.ndim == 1:
        if (P <= 0).any():
            raise ValueError("preconditioner diagonal must be positive")
        return lambda r: r / P
    if sp.issparse(P) or isinstance(P, np.ndarray):
        solve = spla.splu(sp.csc_matrix(P)).solve
        return solve
    raise TypeError(f"unsupported preconditioner {type(P)!r}")


def cg(S, b, P=None, tol: float = 1e-10, max_iter: int | None = None, x0=None) -> tuple[np.ndarray, SolveStats]:
    """Preconditioned conjugate gradients for symmetric positive definite ``S``.

    ``P`` may be a positive diagonal (array), a matrix or a callable applying
    ``P^{-1}``.  Convergence is ``||b - S x|| <= tol ||b||``.

    Raises
    ------
    IndefiniteError
        When a search direction has nonpositive curvature.
    NonConvergenceError
        When ``max_iter`` is exhausted.
    """
    apply = _as_apply(S)
    precond = _prec_apply(P)
    b = np.asarray(b, dtype=float)
    n = len(b)
    max_iter = 10 * n if max_iter is None else max_iter
    nb = np.linalg.norm(b)
    stats = SolveStats("cg")
    if nb == 0:
        return np.zeros(n), stats
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - apply(x)
    z = precond(r)
    p = z.copy()
    rz = float(r @ z)
    stats.history.append(np.linalg.norm(r) / nb)
    for k in range(1, max_iter + 1):
        if stats.history[-1] <= tol:
            break
        q = apply(p)
        curv = float(p @ q)
        if curv <= 0:
            raise IndefiniteError(f"nonpositive curvature p^T S p = {curv:.3e} at iteration {k}")
        step = rz / curv
        x += step * p
        r -= step * q
        z = precond(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        stats.iterations = k
        stats.history.append(np.linalg.norm(r) / nb)
    stats.relative_residual = float(np.linalg.norm(b - apply(x)) / nb)
    if stats.history[-1] > tol:
        stats.converged = False
        raise NonConvergenceError("CG did not converge", stats)
    return x, stats


def eisenstat_factor(sigma_max: float, lambda_min_sym: float) -> float:
    """``(1 - lambda_min^2 / sigma_max^2)^{1/2}``; ``nan`` if the symmetric part is not positive."""
    if lambda_min_sym <= 0 or sigma_max <= 0:
        return math.nan
    return math.sqrt(max(0.0, 1.0 - (lambda_min_sym / sigma_max) ** 2))


def _givens(a: float, b: float) -> tuple[float, float]:
    if b == 0.0:
        return 1.0, 0.0
    r = math.hypot(a, b)
    return a / r, b / r


def gmres(
    op,
    b,
    P=None,
    tol: float = 1e-10,
    max_iter: int | None = None,
    restart: int | None = None,
    x0=None,
    *,
    check_eisenstat: bool = False,
    spectral_data: tuple[float, float] | None = None,
) -> tuple[np.ndarray, SolveStats]:
    """Full (or restarted) GMRES: Gram-Schmidt Arnoldi with reorthogonalization, Givens rotations.

    Parameters
    ----------
    P :
        ``None``, a positive diagonal array (applied symmetrically as
        ``P^{-1/2} Op P^{-1/2}``), or a matrix/callable (left preconditioning).
    check_eisenstat : bool
        Assert ``||r_k|| <= f^k ||r_0|| (1 + 1e-6)`` at every iteration, where
        ``f`` is the convergence factor of the iterated operator.  ``f`` comes
        from ``spectral_data = (sigma_max, lambda_min_sym)`` when given, else
        it is computed exactly.

    Returns
    -------
    x, stats
        ``stats.history`` holds ``||r_k|| / ||r_0||`` of the iterated system.
    """
    apply = _as_apply(op)
    b = np.asarray(b, dtype=float)
    n = len(b)
    max_iter = 10 * n if max_iter is None else max_iter
    note = ""
    if P is None:
        eff, rhs, back, start = apply, b, (lambda y: y), (lambda x: x)
    elif isinstance(P, np.ndarray) and P.ndim == 1:
        if (P <= 0).any():
            raise ValueError("preconditioner diagonal must be positive")
        dsc = 1.0 / np.sqrt(P)
        eff = lambda y: dsc * apply(dsc * y)  # noqa: E731
        rhs, back, start = dsc * b, (lambda y: dsc * y), (lambda x: x / dsc)
        note = "symmetric diagonal scaling"
    else:
        pinv = _prec_apply(P)
        eff = lambda y: pinv(apply(y))  # noqa: E731
        rhs, back, start = pinv(b), (lambda y: y), (lambda x: x)
        note = "left preconditioning"
    stats = SolveStats("gmres", note=note)

    factor = None
    if check_eisenstat:
        if spectral_data is None:
            from scipy.sparse.linalg import LinearOperator

            from .spectral import kappa_tilde

            summary = kappa_tilde(LinearOperator((n, n), matvec=eff, rmatvec=_rmat(op, P), dtype=float))
            spectral_data = (summary.sigma_max, summary.lambda_min)
        factor = eisenstat_factor(*spectral_data)
        stats.eisenstat_factor = factor

    nb = np.linalg.norm(rhs)
    if nb == 0:
        return np.zeros(n), stats
    y = np.zeros(n) if x0 is None else start(np.array(x0, dtype=float))
    m = max_iter if restart is None else min(restart, max_iter)
    r0_norm = None
    total = 0
    while True:
        r = rhs - eff(y)
        beta = np.linalg.norm(r)
        if r0_norm is None:
            r0_norm = beta
            stats.history.append(1.0)
        if beta <= tol * nb or total >= max_iter:
            break
        Q = [r / beta]
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        j = 0
        for j in range(m):
            w = eff(Q[j])
            for _ in range(2):
                for i in range(j + 1):
                    hij = float(w @ Q[i])
                    H[i, j] += hij
                    w = w - hij * Q[i]
            hnext = np.linalg.norm(w)
            H[j + 1, j] = hnext
            for i in range(j):
                a, c = H[i, j], H[i + 1, j]
                H[i, j], H[i + 1, j] = cs[i] * a + sn[i] * c, -sn[i] * a + cs[i] * c
            cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            res = abs(g[j + 1])
            stats.history.append(res / r0_norm)
            if factor is not None and not math.isnan(factor):
                limit = factor**total * (1 + 1e-6)
                if res / r0_norm > limit:
                    raise EisenstatViolation(
                        f"iteration {total}: ||r||/||r0|| = {res / r0_norm:.6e} exceeds factor^n = {limit:.6e}"
                    )
            happy = hnext <= 1e-14 * beta
            if res <= tol * nb or total >= max_iter or happy:
                break
            Q.append(w / hnext)
        k = j + 1
        coef = sla.solve_triangular(H[:k, :k], g[:k])
        y = y + np.column_stack(Q[:k]) @ coef
        if abs(g[k]) <= tol * nb or total >= max_iter:
            break
    x = back(y)
    stats.iterations = total
    stats.relative_residual = float(np.linalg.norm(rhs - eff(y)) / nb)
    if stats.history[-1] * r0_norm > tol * nb:
        stats.converged = False
        raise NonConvergenceError("GMRES did not converge", stats)
    return x, stats


def _rmat(op, P):
    rmv = op.rmatvec if hasattr(op, "rmatvec") else (lambda x: op.T @ x)
    if P is None:
        return rmv
    if isinstance(P, np.ndarray) and P.ndim == 1:
        w = 1.0 / np.sqrt(P)
        return lambda y: w * rmv(w * y)
    raise ValueError("Eisenstat check with a non-diagonal preconditioner needs explicit spectral_data")


def preconditioner_diagonal_for(M, A, dt: float, kind) -> np.ndarray | None:
    """Diagonal preconditioner from assembled matrices: ``none``, ``M_D`` or ``M_D+dtA_D``.

    An explicit positive array is passed through, which is how a lumped mass
    diagonal (which needs the mesh) is supplied.
    """
    if kind is None or isinstance(kind, np.ndarray):
        return kind
    from .assembly import canonical_preconditioner

    kind = canonical_preconditioner(kind)
    if kind == "none":
        return None
    if kind == "M_D":
        return np.asarray(M.diagonal(), dtype=float)
    if kind == "M_D+dtA_D":
        return np.asarray(M.diagonal() + dt * A.diagonal(), dtype=float)
    raise ValueError(f"{kind} cannot be built from M and A alone; pass its diagonal explicitly")
