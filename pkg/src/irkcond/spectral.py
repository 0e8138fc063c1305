"""Extremal eigenvalues, largest singular values and condition numbers.

Operators up to ``dense_threshold`` rows are converted to dense arrays and
handled by LAPACK.  Larger ones go through a Lanczos iteration with full
reorthogonalization; the lower end of a symmetric spectrum is obtained from
Lanczos on the inverse using a sparse LU factorization.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.linalg import LinearOperator

from .assembly import FEMatrices, canonical_preconditioner

log = logging.getLogger(__name__)

__all__ = [
    "DENSE_THRESHOLD",
    "SpectralError",
    "ConvergenceError",
    "SpectralSummary",
    "LanczosResult",
    "lanczos",
    "sym_extremal_eigs",
    "sigma_max",
    "kappa",
    "kappa_tilde",
    "symmetric_part",
    "KronOperator",
    "preconditioned_matrices",
    "preconditioned_operator",
]

DENSE_THRESHOLD = 2000


class SpectralError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SpectralSummary:
    """Extremal spectral data of one operator.

    Iterating yields ``(lambda_min, lambda_max)`` so the summary can be unpacked
    like a pair.
    """

    lambda_min: float = math.nan
    lambda_max: float = math.nan
    sigma_max: float = math.nan
    method: str = "dense"
    residual: float = 0.0
    iterations: int = 0

    @property
    def kappa(self) -> float:
        return self.lambda_max / self.lambda_min

    @property
    def kappa_tilde(self) -> float:
        return self.sigma_max / self.lambda_min

    def __iter__(self):
        yield self.lambda_min
        yield self.lambda_max


# ---------------------------------------------------------------- helpers


def _shape(op) -> int:
    n, m = op.shape
    if n != m:
        raise SpectralError(f"operator must be square, got {op.shape}")
    return n


def _to_dense(op) -> np.ndarray:
    if isinstance(op, np.ndarray):
        return np.asarray(op, dtype=float)
    if sp.issparse(op):
        return op.toarray()
    if hasattr(op, "to_dense"):
        return op.to_dense()
    eye = np.eye(op.shape[1])
    return np.column_stack([op.matvec(eye[:, k]) for k in range(op.shape[1])])


def _matvec(op):
    if isinstance(op, np.ndarray) or sp.issparse(op):
        return lambda x: op @ x
    return op.matvec


def _rmatvec(op):
    if isinstance(op, np.ndarray) or sp.issparse(op):
        return lambda x: op.T @ x
    return op.rmatvec


def _factorize(op):
    """Return an ``x -> op^{-1} x`` callable, or ``None`` if there is no sparse form."""
    if sp.issparse(op):
        mat = op
    elif hasattr(op, "to_sparse"):
        mat = op.to_sparse()
    elif isinstance(op, np.ndarray):
        lu = sla.lu_factor(op)
        return lambda x: sla.lu_solve(lu, x)
    else:
        return None
    lu = spla.splu(sp.csc_matrix(mat))
    return lu.solve


# ---------------------------------------------------------------- Lanczos


@dataclass(frozen=True)
class LanczosResult:
    theta_min: float
    theta_max: float
    residual_min: float
    residual_max: float
    iterations: int
    converged: bool
    ritz: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))


def _default_iters(n: int) -> int:
    return int(min(n, max(30, math.ceil(5 * math.sqrt(n)))))


def lanczos(
    apply,
    n: int,
    *,
    inner=None,
    which: str = "both",
    tol: float = 1e-8,
    max_iter: int | None = None,
    seed: int = 0,
) -> LanczosResult:
    """Lanczos with full reorthogonalization for an operator self-adjoint in ``<x, y> = x^T B y``.

    Parameters
    ----------
    apply : callable
        ``x -> Op x``.
    inner : callable, optional
        ``x -> B x``; Euclidean inner product when omitted.
    which : {"both", "max", "min"}
        Ends of the spectrum that must converge.
    tol : float
        Relative accuracy target for the extremal Ritz values, using the
        ``min(r, r^2 / gap)`` error estimate.
    """
    bmul = inner if inner is not None else (lambda x: x)
    max_iter = _default_iters(n) if max_iter is None else int(min(max_iter, n))
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    bv = bmul(v)
    nrm = math.sqrt(float(v @ bv))
    V = np.empty((max_iter + 1, n))
    BV = np.empty((max_iter + 1, n))
    V[0], BV[0] = v / nrm, bv / nrm
    alpha, beta = [], []
    theta = np.array([0.0])
    res_lo = res_hi = math.inf
    converged = False
    k = 0
    for k in range(max_iter):
        w = apply(V[k])
        a = float(w @ BV[k])
        alpha.append(a)
        w = w - a * V[k]
        if k > 0:
            w = w - beta[-1] * V[k - 1]
        for _ in range(2):
            w = w - V[: k + 1].T @ (BV[: k + 1] @ w)
        bw = bmul(w)
        b = math.sqrt(max(float(w @ bw), 0.0))
        if k == 0:
            theta, s = np.array([a]), np.ones((1, 1))
        else:
            theta, s = sla.eigh_tridiagonal(np.array(alpha), np.array(beta))
        scale = max(abs(theta[0]), abs(theta[-1]), 1e-300)
        breakdown = b <= 1e-14 * scale
        res = b * np.abs(s[-1, :])
        gap_lo = theta[1] - theta[0] if len(theta) > 1 else 0.0
        gap_hi = theta[-1] - theta[-2] if len(theta) > 1 else 0.0
        res_lo = _err(res[0], gap_lo)
        res_hi = _err(res[-1], gap_hi)
        ok_lo = res_lo <= tol * max(abs(theta[0]), 1e-300)
        ok_hi = res_hi <= tol * max(abs(theta[-1]), 1e-300)
        done = {"both": ok_lo and ok_hi, "max": ok_hi, "min": ok_lo}[which]
        if breakdown or (done and k >= 1) or (done and n == 1):
            converged = True
            if breakdown:
                res_lo = res_hi = 0.0
            break
        beta.append(b)
        V[k + 1], BV[k + 1] = w / b, bw / b
    return LanczosResult(
        theta_min=float(theta[0]),
        theta_max=float(theta[-1]),
        residual_min=float(res_lo),
        residual_max=float(res_hi),
        iterations=k + 1,
        converged=converged,
        ritz=theta,
    )


def _err(r: float, gap: float) -> float:
    if gap > 0:
        return min(r, r * r / gap)
    return r


# ---------------------------------------------------------------- symmetric eigenvalues


def sym_extremal_eigs(
    S,
    B=None,
    *,
    dense_threshold: int = DENSE_THRESHOLD,
    tol: float = 1e-8,
    max_iter: int | None = None,
    seed: int = 0,
) -> SpectralSummary:
    """Smallest and largest eigenvalue of ``S x = lambda B x`` (``B = I`` when omitted).

    Raises
    ------
    ConvergenceError
        If the iterative path does not reach ``tol``.
    """
    n = _shape(S)
    if B is not None and _shape(B) != n:
        raise SpectralError("S and B differ in size")
    if n <= dense_threshold:
        Sd = _to_dense(S)
        Sd = 0.5 * (Sd + Sd.T)
        if B is None:
            ev = sla.eigvalsh(Sd)
        else:
            Bd = _to_dense(B)
            ev = sla.eigvalsh(Sd, 0.5 * (Bd + Bd.T))
        return SpectralSummary(lambda_min=float(ev[0]), lambda_max=float(ev[-1]), method="dense")

    apply = _matvec(S)
    if B is None:
        inner = None
        fwd = apply
    else:
        inner = _matvec(B)
        bsolve = _factorize(B)
        if bsolve is None:
            raise SpectralError("B needs a sparse or dense form to be factorized")
        fwd = lambda x: bsolve(apply(x))  # noqa: E731
    top = lanczos(fwd, n, inner=inner, which="max", tol=tol, max_iter=max_iter, seed=seed)
    if not top.converged:
        raise ConvergenceError("Lanczos for lambda_max did not converge", top.residual_max, top.iterations)
    iters = top.iterations

    lam_min, res_min = math.nan, math.nan
    ssolve = _factorize(S)
    if ssolve is not None:
        inv_apply = ssolve if B is None else (lambda x: ssolve(inner(x)))
        inv = lanczos(inv_apply, n, inner=inner, which="max", tol=tol, max_iter=max_iter, seed=seed + 1)
        iters += inv.iterations
        # a negative Ritz value at either end proves indefiniteness
        definite = inv.theta_min > 0 and top.theta_min > 0
        if inv.converged and definite:
            lam_min = 1.0 / inv.theta_max
            res_min = inv.residual_max / inv.theta_max**2
        else:
            log.info("inverse Lanczos indicates an indefinite operator; using direct Lanczos for lambda_min")
    if math.isnan(lam_min):
        low = lanczos(fwd, n, inner=inner, which="min", tol=tol, max_iter=max_iter, seed=seed + 2)
        iters += low.iterations
        if not low.converged:
            raise ConvergenceError("Lanczos for lambda_min did not converge", low.residual_min, low.iterations)
        lam_min, res_min = low.theta_min, low.residual_min
    return SpectralSummary(
        lambda_min=float(lam_min),
        lambda_max=top.theta_max,
        method="iterative",
        residual=float(max(top.residual_max, res_min)),
        iterations=iters,
    )


def sigma_max(
    op,
    *,
    dense_threshold: int = DENSE_THRESHOLD,
    tol: float = 1e-8,
    max_iter: int | None = None,
    seed: int = 0,
) -> float:
    """Largest singular value, as ``sqrt(lambda_max(Op^T Op))`` on the iterative path."""
    n = _shape(op)
    if n <= dense_threshold:
        return float(sla.svdvals(_to_dense(op))[0])
    mv, rmv = _matvec(op), _rmatvec(op)
    # squaring halves the relative accuracy of the Ritz value, so tighten tol
    res = lanczos(lambda x: rmv(mv(x)), n, which="max", tol=tol * 1e-2, max_iter=max_iter, seed=seed)
    if not res.converged:
        raise ConvergenceError("Lanczos for sigma_max did not converge", res.residual_max, res.iterations)
    return math.sqrt(res.theta_max)


def symmetric_part(op):
    """``(Op + Op^T)/2`` in the same representation as ``op`` where possible."""
    if isinstance(op, KronOperator):
        return op.symmetric_part()
    if isinstance(op, np.ndarray) or sp.issparse(op):
        return 0.5 * (op + op.T)
    return LinearOperator(op.shape, matvec=lambda x: 0.5 * (op.matvec(x) + op.rmatvec(x)), dtype=float)


def kappa(S, **kw) -> float:
    """Spectral condition number ``lambda_max / lambda_min`` of a symmetric positive definite operator."""
    summary = sym_extremal_eigs(S, **kw)
    if summary.lambda_min <= 0:
        raise SpectralError(f"operator is not positive definite (lambda_min = {summary.lambda_min:.3e})")
    return summary.kappa


def kappa_tilde(op, **kw) -> SpectralSummary:
    """``sigma_max(Op) / lambda_min((Op + Op^T)/2)``.

    Raises
    ------
    SpectralError
        When the symmetric part is not positive definite.
    """
    if isinstance(op, KronOperator):
        lo, hi = op.symmetric_extremal_eigs()
        sym = SpectralSummary(lambda_min=lo, lambda_max=hi, method="kron")
    else:
        sym = sym_extremal_eigs(symmetric_part(op), **kw)
    if sym.lambda_min <= 0:
        raise SpectralError(
            f"symmetric part is not positive definite (lambda_min = {sym.lambda_min:.3e}); "
            "the time step may violate the positivity condition"
        )
    smax = sigma_max(op, **kw)
    return SpectralSummary(
        lambda_min=sym.lambda_min,
        lambda_max=sym.lambda_max,
        sigma_max=smax,
        method=sym.method,
        residual=sym.residual,
        iterations=sym.iterations,
    )


# ---------------------------------------------------------------- Kronecker operator


class KronOperator(LinearOperator):
    """Matrix-free ``I_s (x) M + dt Gamma (x) A`` with symmetric ``M`` and ``A``.

    Vectors are stage-major: ``x = [v_1; ...; v_s]``.
    """

    def __init__(self, M, A, dt: float, gamma):
        gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
        if gamma.shape[0] != gamma.shape[1]:
            raise SpectralError("Gamma must be square")
        if M.shape != A.shape or M.shape[0] != M.shape[1]:
            raise SpectralError("M and A must be square and of equal size")
        self.M, self.A = M, A
        self.dt = float(dt)
        self.gamma = gamma
        self.s = gamma.shape[0]
        self.n_block = M.shape[0]
        size = self.s * self.n_block
        super().__init__(dtype=np.float64, shape=(size, size))

    def _apply(self, x, gamma):
        X = np.asarray(x, dtype=float).reshape(self.s, self.n_block)
        MX = (self.M @ X.T).T
        AX = (self.A @ X.T).T
        return (MX + self.dt * (gamma @ AX)).reshape(-1)

    def _matvec(self, x):
        return self._apply(np.ravel(x), self.gamma)

    def _rmatvec(self, x):
        return self._apply(np.ravel(x), self.gamma.T)

    def _matmat(self, X):
        return np.column_stack([self._matvec(X[:, k]) for k in range(X.shape[1])])

    def _adjoint(self):
        return KronOperator(self.M, self.A, self.dt, self.gamma.T)

    def symmetric_part(self) -> "KronOperator":
        return KronOperator(self.M, self.A, self.dt, 0.5 * (self.gamma + self.gamma.T))

    def symmetric_extremal_eigs(self) -> tuple[float, float]:
        """Exact extremes of the symmetric part.

        With ``Q^T Gs Q = diag(g)`` the symmetric part is orthogonally similar
        to ``blockdiag(M + dt g_i A)``, so only ``N_vi``-sized problems are solved.
        """
        g = np.linalg.eigvalsh(0.5 * (self.gamma + self.gamma.T))
        lo, hi = math.inf, -math.inf
        for gi in g:
            summ = sym_extremal_eigs(self.M + (self.dt * gi) * self.A)
            lo, hi = min(lo, summ.lambda_min), max(hi, summ.lambda_max)
        return lo, hi

    def to_sparse(self) -> sp.csr_matrix:
        eye = sp.identity(self.s, format="csr")
        M = self.M if sp.issparse(self.M) else sp.csr_matrix(self.M)
        A = self.A if sp.issparse(self.A) else sp.csr_matrix(self.A)
        return (sp.kron(eye, M) + self.dt * sp.kron(sp.csr_matrix(self.gamma), A)).tocsr()

    def to_dense(self) -> np.ndarray:
        M = self.M.toarray() if sp.issparse(self.M) else np.asarray(self.M)
        A = self.A.toarray() if sp.issparse(self.A) else np.asarray(self.A)
        return np.kron(np.eye(self.s), M) + self.dt * np.kron(self.gamma, A)


def _inv_sqrt_dense(S) -> np.ndarray:
    w, Q = np.linalg.eigh(_to_dense(S))
    if w[0] <= 0:
        raise SpectralError("P = M is not positive definite")
    return (Q / np.sqrt(w)) @ Q.T


def preconditioned_matrices(fem: FEMatrices, dt: float, kind: str, *, dense_threshold: int = DENSE_THRESHOLD):
    """``(P^{-1/2} M P^{-1/2}, P^{-1/2} A P^{-1/2})`` for the named preconditioner.

    Diagonal kinds keep sparsity.  ``P = M`` forms the dense ``M^{-1/2}`` and is
    therefore limited to ``N_vi <= dense_threshold``.
    """
    kind = canonical_preconditioner(kind)
    if kind == "none":
        return fem.M, fem.A
    if kind == "M":
        if fem.n > dense_threshold:
            raise SpectralError(f"P = M needs a dense M^(-1/2); N_vi = {fem.n} exceeds {dense_threshold}")
        R = _inv_sqrt_dense(fem.M)
        Md = R @ fem.M.toarray() @ R
        Ad = R @ fem.A.toarray() @ R
        return 0.5 * (Md + Md.T), 0.5 * (Ad + Ad.T)
    diag = fem.preconditioner_diagonal(kind, dt)
    scale = sp.diags(1.0 / np.sqrt(diag))
    return (scale @ fem.M @ scale).tocsr(), (scale @ fem.A @ scale).tocsr()


def preconditioned_operator(fem: FEMatrices, dt: float, gamma, kind: str = "none", **kw) -> KronOperator:
    """``(I_s (x) P^{-1/2}) (I_s (x) M + dt Gamma (x) A) (I_s (x) P^{-1/2})`` as a :class:`KronOperator`."""
    Mt, At = preconditioned_matrices(fem, dt, kind, **kw)
    return KronOperator(Mt, At, dt, gamma)
