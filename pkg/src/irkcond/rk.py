"""Butcher tableaux, spectral data of the RK matrix, and implicit RK time steps.

One step of an s-stage method for ``M u' + A u = 0`` solves

    (I_s (x) M + dt Gamma (x) A) v = -(1_s (x) A u^n),   u^{n+1} = u^n + dt sum_k b_k v_k.

The system can be solved at once (:func:`step_simultaneous`) or block by block
after transforming with the real Jordan factorization of ``Gamma``
(:func:`step_successive`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import solver as _solver
from .spectral import KronOperator

__all__ = [
    "TableauError",
    "DefectiveMatrixError",
    "ButcherTableau",
    "BUILTIN_TABLEAUX",
    "builtin_tableau",
    "parse_tableau",
    "GammaStats",
    "gamma_stats",
    "JordanBlock",
    "RealJordanFactorization",
    "real_jordan",
    "stability_function",
    "kron_system",
    "step_simultaneous",
    "step_successive",
    "euler_step",
    "dirk_step",
    "integrate",
]


class TableauError(ValueError):
    pass


class DefectiveMatrixError(TableauError):
    pass


@dataclass(frozen=True)
class ButcherTableau:
    """Coefficients ``(Gamma, b, c)`` of an s-stage Runge-Kutta method."""

    gamma: np.ndarray
    b: np.ndarray
    c: np.ndarray
    name: str = "custom"
    order: int | None = None

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        s = g.shape[0]
        if g.shape != (s, s) or b.shape != (s,) or c.shape != (s,):
            raise TableauError(f"inconsistent tableau shapes {g.shape}, {b.shape}, {c.shape}")
        for arr in (g, b, c):
            arr.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def s(self) -> int:
        return self.gamma.shape[0]

    @property
    def is_lower_triangular(self) -> bool:
        return bool(np.all(np.triu(self.gamma, 1) == 0.0))

    def consistency_errors(self) -> tuple[float, float]:
        """``max |Gamma 1 - c|`` and ``|sum b - 1|``."""
        return float(np.abs(self.gamma.sum(axis=1) - self.c).max()), float(abs(self.b.sum() - 1.0))


def _gauss4():
    r = math.sqrt(3.0) / 6.0
    g = [[0.25, 0.25 - r], [0.25 + r, 0.25]]
    return ButcherTableau(g, [0.5, 0.5], [0.5 - r, 0.5 + r], "gauss4", 4)


def _gauss6():
    r = math.sqrt(15.0)
    g = [
        [5 / 36, 2 / 9 - r / 15, 5 / 36 - r / 30],
        [5 / 36 + r / 24, 2 / 9, 5 / 36 - r / 24],
        [5 / 36 + r / 30, 2 / 9 + r / 15, 5 / 36],
    ]
    return ButcherTableau(g, [5 / 18, 4 / 9, 5 / 18], [0.5 - r / 10, 0.5, 0.5 + r / 10], "gauss6", 6)


def _radau2a5():
    q = math.sqrt(6.0)
    g = [
        [(88 - 7 * q) / 360, (296 - 169 * q) / 1800, (-2 + 3 * q) / 225],
        [(296 + 169 * q) / 1800, (88 + 7 * q) / 360, (-2 - 3 * q) / 225],
        [(16 - q) / 36, (16 + q) / 36, 1 / 9],
    ]
    return ButcherTableau(g, g[2], [(4 - q) / 10, (4 + q) / 10, 1.0], "radau2a5", 5)


BUILTIN_TABLEAUX = {
    "euler": lambda: ButcherTableau([[1.0]], [1.0], [1.0], "euler", 1),
    "gauss4": _gauss4,
    "gauss6": _gauss6,
    "radau1a3": lambda: ButcherTableau(
        np.array([[3.0, -3.0], [3.0, 5.0]]) / 12.0, [0.25, 0.75], [0.0, 2 / 3], "radau1a3", 3
    ),
    "radau2a5": _radau2a5,
    "lobatto3a4": lambda: ButcherTableau(
        [[0.0, 0.0, 0.0], [5 / 24, 1 / 3, -1 / 24], [1 / 6, 2 / 3, 1 / 6]],
        [1 / 6, 2 / 3, 1 / 6],
        [0.0, 0.5, 1.0],
        "lobatto3a4",
        4,
    ),
}


def builtin_tableau(name: str) -> ButcherTableau:
    try:
        return BUILTIN_TABLEAUX[name.strip().lower()]()
    except KeyError:
        raise TableauError(f"unknown tableau {name!r}; choose from {sorted(BUILTIN_TABLEAUX)}") from None


def parse_tableau(text: str, name: str = "custom") -> ButcherTableau:
    """Read ``s``, then ``s`` rows of ``Gamma``, then ``b``, then ``c`` (whitespace separated).

    ``#`` starts a comment.  Fractions such as ``1/3`` are accepted.
    """
    tokens = []
    for line in text.splitlines():
        tokens += line.split("#", 1)[0].split()
    if not tokens:
        raise TableauError("empty tableau")

    def num(tok):
        try:
            if "/" in tok:
                p, q = tok.split("/")
                return float(p) / float(q)
            return float(tok)
        except (ValueError, ZeroDivisionError):
            raise TableauError(f"bad number {tok!r}") from None

    try:
        s = int(tokens[0])
    except ValueError:
        raise TableauError(f"stage count must be an integer, got {tokens[0]!r}") from None
    need = 1 + s * s + 2 * s
    if s < 1 or len(tokens) != need:
        raise TableauError(f"expected {need} numbers for s={s}, got {len(tokens)}")
    vals = [num(t) for t in tokens[1:]]
    g = np.array(vals[: s * s]).reshape(s, s)
    return ButcherTableau(g, vals[s * s : s * s + s], vals[s * s + s :], name)


# ---------------------------------------------------------------- spectral data


@dataclass(frozen=True)
class GammaStats:
    eigenvalues: np.ndarray
    sigma_max: float
    sigma_min: float
    lambda_min_sym: float

    def format(self) -> str:
        eig = ", ".join(_fmt_complex(z) for z in self.eigenvalues)
        return (
            f"eigenvalues: {eig}\n"
            f"sigma_max: {self.sigma_max:.4f}\n"
            f"sigma_min: {self.sigma_min:.4f}\n"
            f"lambda_min_sym: {self.lambda_min_sym:.4f}"
        )


def _fmt_complex(z: complex) -> str:
    if abs(z.imag) < 1e-12:
        return f"{z.real:.4f}"
    return f"{z.real:.4f}{'+' if z.imag >= 0 else '-'}{abs(z.imag):.4f}i"


def _sorted_eigs(g: np.ndarray) -> np.ndarray:
    ev = np.linalg.eigvals(g)
    ev = np.where(np.abs(ev.imag) < 1e-12, ev.real + 0j, ev)
    return ev[np.lexsort((ev.imag, -ev.real))]


def gamma_stats(gamma) -> GammaStats:
    """Eigenvalues, extreme singular values and ``lambda_min((Gamma + Gamma^T)/2)``.

    Raises
    ------
    TableauError
        If an eigenvalue has real part below ``-1e-9``.
    """
    g = np.atleast_2d(np.asarray(getattr(gamma, "gamma", gamma), dtype=float))
    if g.shape[0] > 8:
        raise TableauError("at most 8 stages are supported")
    ev = _sorted_eigs(g)
    if (ev.real < -1e-9).any():
        raise TableauError(f"RK matrix has an eigenvalue with negative real part: {ev}")
    sv = np.linalg.svd(g, compute_uv=False)
    lam = float(np.linalg.eigvalsh(0.5 * (g + g.T))[0])
    return GammaStats(eigenvalues=ev, sigma_max=float(sv[0]), sigma_min=float(sv[-1]), lambda_min_sym=lam)


@dataclass(frozen=True)
class JordanBlock:
    """A real ``1x1`` block ``[mu]`` or a ``2x2`` block ``[[alpha, beta], [-beta, alpha]]``."""

    alpha: float
    beta: float = 0.0

    @property
    def size(self) -> int:
        return 1 if self.beta == 0.0 else 2

    @property
    def matrix(self) -> np.ndarray:
        if self.size == 1:
            return np.array([[self.alpha]])
        return np.array([[self.alpha, self.beta], [-self.beta, self.alpha]])

    @property
    def modulus(self) -> float:
        return math.hypot(self.alpha, self.beta)


@dataclass(frozen=True)
class RealJordanFactorization:
    """``Gamma = T blockdiag(blocks) T^{-1}`` with real ``T``."""

    T: np.ndarray
    blocks: tuple[JordanBlock, ...]
    T_inv: np.ndarray = field(repr=False, default=None)

    def block_diagonal(self) -> np.ndarray:
        s = self.T.shape[0]
        J = np.zeros((s, s))
        k = 0
        for blk in self.blocks:
            J[k : k + blk.size, k : k + blk.size] = blk.matrix
            k += blk.size
        return J

    def reconstruct(self) -> np.ndarray:
        return self.T @ self.block_diagonal() @ self.T_inv

    def offsets(self) -> list[int]:
        out, k = [], 0
        for blk in self.blocks:
            out.append(k)
            k += blk.size
        return out


def real_jordan(gamma, spacing_tol: float = 1e-8) -> RealJordanFactorization:
    """Real block-diagonal form from the complex eigendecomposition.

    For ``lambda = alpha + i beta`` with eigenvector ``v_r + i v_i`` the columns
    ``[v_r, v_i]`` span an invariant subspace on which ``Gamma`` acts as
    ``[[alpha, beta], [-beta, alpha]]``.

    Raises
    ------
    DefectiveMatrixError
        If two eigenvalues are closer than ``spacing_tol`` (possible Jordan chain).
    """
    g = np.atleast_2d(np.asarray(getattr(gamma, "gamma", gamma), dtype=float))
    s = g.shape[0]
    ev, vec = np.linalg.eig(g)
    scale = max(1.0, float(np.abs(ev).max()))
    for i in range(s):
        for j in range(i + 1, s):
            if abs(ev[i] - ev[j]) < spacing_tol * scale:
                raise DefectiveMatrixError(f"eigenvalues {ev[i]} and {ev[j]} coincide; Jordan chains unsupported")
    order = np.lexsort((-ev.imag, -ev.real))
    cols, blocks, used = [], [], set()
    for i in order:
        if i in used:
            continue
        lam = ev[i]
        if abs(lam.imag) <= 1e-12 * scale:
            v = vec[:, i].real
            cols.append(v / np.linalg.norm(v))
            blocks.append(JordanBlock(float(lam.real)))
            used.add(i)
            continue
        # pair with the conjugate and use the member with positive imaginary part
        j = int(np.argmin(np.abs(ev - np.conj(lam)) + np.where(np.arange(s) == i, np.inf, 0.0)))
        k = i if lam.imag > 0 else j
        used.update((i, j))
        v = vec[:, k]
        v = v / np.linalg.norm(v)
        cols += [v.real, v.imag]
        blocks.append(JordanBlock(float(ev[k].real), float(ev[k].imag)))
    T = np.column_stack(cols)
    T_inv = np.linalg.inv(T)
    fac = RealJordanFactorization(T=T, blocks=tuple(blocks), T_inv=T_inv)
    resid = np.linalg.norm(fac.reconstruct() - g)
    if resid > 1e-10 * max(np.linalg.norm(g), 1.0):
        raise DefectiveMatrixError(f"real Jordan reconstruction residual {resid:.3e} too large")
    return fac


def stability_function(tableau: ButcherTableau, z: complex) -> complex:
    """``R(z) = 1 + z b^T (I - z Gamma)^{-1} 1``."""
    s = tableau.s
    return complex(1.0 + z * tableau.b @ np.linalg.solve(np.eye(s) - z * tableau.gamma, np.ones(s)))


# ---------------------------------------------------------------- time steps


def kron_system(M, A, dt: float, gamma) -> KronOperator:
    return KronOperator(M, A, dt, gamma)


def _finish(u, dt, b, V):
    return u + dt * (b @ V)


def step_simultaneous(M, A, dt: float, tableau: ButcherTableau, u, solver_cfg: _solver.SolverConfig | None = None):
    """One step solving the full ``s N_vi`` stage system."""
    cfg = solver_cfg or _solver.SolverConfig()
    u = np.asarray(u, dtype=float)
    n, s = len(u), tableau.s
    op = KronOperator(M, A, dt, tableau.gamma)
    rhs = -np.tile(A @ u, s)
    if cfg.method == "direct":
        v = _solver.direct_solve(op.to_sparse(), rhs)
    else:
        v, _ = _solver.gmres(op, rhs, tol=cfg.tol, max_iter=cfg.max_iter, restart=cfg.restart)
    return _finish(u, dt, tableau.b, v.reshape(s, n))


def _block_solve(M, A, dt, blk: JordanBlock, rhs, cfg):
    if blk.size == 1:
        S = (M + (dt * blk.alpha) * A).tocsc() if sp.issparse(M) else M + dt * blk.alpha * A
        if cfg.method == "direct":
            return _solver.direct_solve(S, rhs)
        return _solver.cg(S, rhs, tol=cfg.tol, max_iter=cfg.max_iter)[0]
    op = KronOperator(M, A, dt, blk.matrix)
    if cfg.method == "direct":
        return _solver.direct_solve(op.to_sparse(), rhs)
    return _solver.gmres(op, rhs, tol=cfg.tol, max_iter=cfg.max_iter, restart=cfg.restart)[0]


def step_successive(
    M,
    A,
    dt: float,
    tableau: ButcherTableau,
    u,
    solver_cfg: _solver.SolverConfig | None = None,
    factorization: RealJordanFactorization | None = None,
):
    """One step solving one system per real Jordan block.

    With ``w = (T^{-1} (x) I) v`` the stage system decouples into
    ``M + dt mu A`` for real eigenvalues and ``I_2 (x) M + dt C (x) A`` for pairs.
    """
    cfg = solver_cfg or _solver.SolverConfig()
    u = np.asarray(u, dtype=float)
    n, s = len(u), tableau.s
    fac = factorization or real_jordan(tableau.gamma)
    au = A @ u
    # right-hand side -(T^{-1} 1) (x) A u
    coef = -fac.T_inv @ np.ones(s)
    W = np.empty((s, n))
    for blk, k in zip(fac.blocks, fac.offsets()):
        rhs = np.concatenate([coef[k + i] * au for i in range(blk.size)])
        W[k : k + blk.size] = _block_solve(M, A, dt, blk, rhs, cfg).reshape(blk.size, n)
    V = fac.T @ W
    return _finish(u, dt, tableau.b, V)


def euler_step(M, A, dt: float, u, P_kind: str = "none", solver_cfg: _solver.SolverConfig | None = None):
    """Implicit Euler, ``(M + dt A) u^{n+1} = M u^n``, solved by preconditioned CG."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    cfg = solver_cfg or _solver.SolverConfig(method="cg")
    u = np.asarray(u, dtype=float)
    S = (M + dt * A).tocsr() if sp.issparse(M) else M + dt * A
    rhs = M @ u
    if cfg.method == "direct":
        return _solver.direct_solve(S, rhs)
    pdiag = _solver.preconditioner_diagonal_for(M, A, dt, P_kind)
    x, _ = _solver.cg(S, rhs, P=pdiag, tol=cfg.tol, max_iter=cfg.max_iter)
    return x


def dirk_step(M, A, dt: float, tableau: ButcherTableau, u, solver_cfg: _solver.SolverConfig | None = None):
    """Diagonally implicit step by forward substitution over the stages.

    Stage ``k`` solves ``(M + dt g_kk A) v_k = -A (u + dt sum_{j<k} g_kj v_j)``.
    """
    if not tableau.is_lower_triangular:
        raise TableauError("dirk_step needs a lower triangular Gamma")
    cfg = solver_cfg or _solver.SolverConfig()
    u = np.asarray(u, dtype=float)
    s, g = tableau.s, tableau.gamma
    V = np.zeros((s, len(u)))
    for k in range(s):
        rhs = -(A @ (u + dt * (g[k, :k] @ V[:k])))
        S = (M + (dt * g[k, k]) * A)
        S = S.tocsc() if sp.issparse(S) else S
        if cfg.method == "direct":
            V[k] = _solver.direct_solve(S, rhs)
        else:
            V[k] = _solver.cg(S, rhs, tol=cfg.tol, max_iter=cfg.max_iter)[0]
    return _finish(u, dt, tableau.b, V)


def integrate(M, A, u0, dt: float, n_steps: int, tableau: ButcherTableau, *, strategy: str = "successive",
              solver_cfg: _solver.SolverConfig | None = None):
    """Take ``n_steps`` constant steps; returns the final state."""
    u = np.asarray(u0, dtype=float)
    if strategy == "successive":
        fac = real_jordan(tableau.gamma)
        for _ in range(n_steps):
            u = step_successive(M, A, dt, tableau, u, solver_cfg, fac)
    elif strategy == "simultaneous":
        for _ in range(n_steps):
            u = step_simultaneous(M, A, dt, tableau, u, solver_cfg)
    elif strategy == "dirk":
        for _ in range(n_steps):
            u = dirk_step(M, A, dt, tableau, u, solver_cfg)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return u
