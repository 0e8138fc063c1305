"""Diffusion tensor fields and their element averages."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import roots_jacobi

from .mesh import ElementGeometry, SimplicialMesh

__all__ = [
    "FieldError",
    "NotPositiveDefiniteError",
    "DiffusionField",
    "ElementAverages",
    "builtin_field",
    "simplex_quadrature",
    "element_averages",
    "element_average",
]


class FieldError(ValueError):
    pass


class NotPositiveDefiniteError(FieldError):
    pass


@dataclass(frozen=True)
class DiffusionField:
    """Symmetric positive definite tensor field ``D(x)``.

    ``evaluator`` maps an array of points of shape ``(m, dim)`` to tensors of
    shape ``(m, dim, dim)``.  ``d_min``/``d_max`` are analytic eigenvalue
    bounds when known.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    dim: int
    d_min: float | None = None
    d_max: float | None = None
    name: str = "custom"

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[-1] != self.dim:
            pts = pts.reshape(-1, self.dim)
        return self.evaluator(pts)

    def check(self, points, *, sym_tol: float = 1e-14) -> None:
        """Raise unless ``D`` is symmetric and positive definite (and within its bounds) at ``points``."""
        vals = self(points)
        asym = np.abs(vals - np.swapaxes(vals, 1, 2)).max(initial=0.0)
        if asym > sym_tol * max(1.0, np.abs(vals).max(initial=0.0)):
            raise FieldError(f"{self.name}: tensor not symmetric (max asymmetry {asym:.3e})")
        try:
            np.linalg.cholesky(vals)
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError(f"{self.name}: tensor not positive definite") from None
        if self.d_min is not None or self.d_max is not None:
            eig = np.linalg.eigvalsh(vals)
            slack = 1e-12 * np.abs(eig).max()
            if self.d_min is not None and eig.min() < self.d_min - slack:
                raise FieldError(f"{self.name}: eigenvalue {eig.min()} below d_min={self.d_min}")
            if self.d_max is not None and eig.max() > self.d_max + slack:
                raise FieldError(f"{self.name}: eigenvalue {eig.max()} above d_max={self.d_max}")


def _identity(dim):
    def ev(pts):
        return np.broadcast_to(np.eye(dim), (len(pts), dim, dim)).copy()

    return ev


def _rotated_anisotropic(major, minor):
    def ev(pts):
        theta = np.pi * np.sin(pts[:, 0]) * np.cos(pts[:, 1])
        c, s = np.cos(theta), np.sin(theta)
        rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
        out = rot @ np.diag([major, minor]) @ np.swapaxes(rot, 1, 2)
        return 0.5 * (out + np.swapaxes(out, 1, 2))

    return ev


def _piecewise_constant(dim, split, axis, left, right):
    lo = np.diag(np.broadcast_to(np.asarray(left, dtype=float), (dim,)))
    hi = np.diag(np.broadcast_to(np.asarray(right, dtype=float), (dim,)))

    def ev(pts):
        side = pts[:, axis] < split
        return np.where(side[:, None, None], lo, hi)

    return ev, min(np.diag(lo).min(), np.diag(hi).min()), max(np.diag(lo).max(), np.diag(hi).max())


def builtin_field(name: str, dim: int = 2, **params) -> DiffusionField:
    """Return one of the built-in fields.

    ``identity``
        ``D = I`` in any dimension.
    ``rotated_anisotropic``
        2d rotation by ``theta = pi sin(x) cos(y)`` of ``diag(major, minor)``,
        defaults ``major=10``, ``minor=0.1``.
    ``piecewise_constant``
        ``diag(left)`` for ``x[axis] < split`` and ``diag(right)`` elsewhere;
        ``left``/``right`` may be scalars or per-axis lists.
        Defaults ``split=0.5, axis=0, left=1, right=10``.
    """
    if name == "identity":
        return DiffusionField(_identity(dim), dim, 1.0, 1.0, name)
    if name == "rotated_anisotropic":
        if dim != 2:
            raise FieldError("rotated_anisotropic is a 2d field")
        major = float(params.get("major", 10.0))
        minor = float(params.get("minor", 0.1))
        return DiffusionField(_rotated_anisotropic(major, minor), 2, min(major, minor), max(major, minor), name)
    if name == "piecewise_constant":
        ev, lo, hi = _piecewise_constant(
            dim,
            float(params.get("split", 0.5)),
            int(params.get("axis", 0)),
            params.get("left", 1.0),
            params.get("right", 10.0),
        )
        if lo <= 0:
            raise NotPositiveDefiniteError("piecewise_constant values must be positive")
        return DiffusionField(ev, dim, float(lo), float(hi), name)
    raise FieldError(f"unknown field {name!r}")


_DEGREE2 = {
    1: ([[0.5 - 0.5 / math.sqrt(3), 0.5 + 0.5 / math.sqrt(3)],
         [0.5 + 0.5 / math.sqrt(3), 0.5 - 0.5 / math.sqrt(3)]], [0.5, 0.5]),
    2: ([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]], [1 / 3] * 3),
}
_A3, _B3 = 0.5854101966249685, 0.1381966011250105
_DEGREE2[3] = ([[_A3, _B3, _B3, _B3], [_B3, _A3, _B3, _B3], [_B3, _B3, _A3, _B3], [_B3, _B3, _B3, _A3]], [0.25] * 4)


def _collapsed_rule(dim, degree):
    # Stroud conical product: Gauss-Jacobi in collapsed coordinates
    npts = degree // 2 + 1
    axes = []
    for k in range(dim):
        alpha = dim - 1 - k
        t, w = roots_jacobi(npts, alpha, 0.0)
        axes.append(((t + 1.0) / 2.0, w / 2.0 ** (alpha + 1)))
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    wgrids = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    u = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    lam = np.empty((len(u), dim + 1))
    remaining = np.ones(len(u))
    for k in range(dim):
        lam[:, k + 1] = u[:, k] * remaining
        remaining = remaining * (1.0 - u[:, k])
    lam[:, 0] = remaining
    return lam, w / w.sum()


def simplex_quadrature(dim: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points ``(m, dim+1)`` and weights summing to one, exact to ``degree``."""
    if degree < 1:
        raise ValueError("quadrature degree must be >= 1")
    if degree == 1:
        return np.full((1, dim + 1), 1.0 / (dim + 1)), np.ones(1)
    if degree == 2:
        pts, wts = _DEGREE2[dim]
        return np.array(pts), np.array(wts)
    return _collapsed_rule(dim, degree)


@dataclass(frozen=True)
class ElementAverages:
    """Per-element mean tensors ``D_K`` with inverses and ``sqrt(det(D_K^{-1}))``."""

    tensors: np.ndarray
    inverses: np.ndarray
    sqrt_det_inv: np.ndarray
    cholesky: np.ndarray

    def __len__(self) -> int:
        return len(self.tensors)


def _from_tensors(tensors: np.ndarray) -> ElementAverages:
    tensors = 0.5 * (tensors + np.swapaxes(tensors, 1, 2))
    try:
        chol = np.linalg.cholesky(tensors)
    except np.linalg.LinAlgError:
        bad = [k for k, t in enumerate(tensors) if np.linalg.eigvalsh(t).min() <= 0]
        raise NotPositiveDefiniteError(f"element average not positive definite on element(s) {bad[:5]}") from None
    diag = np.diagonal(chol, axis1=1, axis2=2)
    return ElementAverages(
        tensors=tensors,
        inverses=np.linalg.inv(tensors),
        sqrt_det_inv=1.0 / np.prod(diag, axis=1),
        cholesky=chol,
    )


def element_averages(field: DiffusionField, mesh: SimplicialMesh, quadrature_order: int = 2) -> ElementAverages:
    """``D_K = |K|^{-1} int_K D dx`` on every element, by a simplex rule of the given degree."""
    if field.dim != mesh.dim:
        raise FieldError(f"field is {field.dim}d but mesh is {mesh.dim}d")
    bary, wts = simplex_quadrature(mesh.dim, quadrature_order)
    pts = np.einsum("qi,kid->kqd", bary, mesh.vertices[mesh.elements])
    vals = field(pts.reshape(-1, mesh.dim)).reshape(mesh.n_elements, len(wts), mesh.dim, mesh.dim)
    return _from_tensors(np.einsum("q,kqij->kij", wts, vals))


def element_average(field: DiffusionField, geometry: ElementGeometry, quadrature_order: int = 2) -> np.ndarray:
    """Average of ``field`` over one element."""
    bary, wts = simplex_quadrature(field.dim, quadrature_order)
    vals = field(bary @ geometry.vertices)
    return _from_tensors(np.einsum("q,qij->ij", wts, vals)[None]).tensors[0]
