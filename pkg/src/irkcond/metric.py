"""Element geometry measured in the metric ``D_K^{-1}``, and reference-simplex constants."""

from __future__ import annotations

import io
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .assembly import basis_gradients
from .diffusion import ElementAverages
from .mesh import SimplicialMesh

__all__ = [
    "ReferenceConstants",
    "reference_constants",
    "MetricElementData",
    "metric_element_data",
    "jacobian_metric_eigs",
    "metric_csv",
    "metric_heights_from_gradients",
]


@dataclass(frozen=True)
class ReferenceConstants:
    """Constants of the unit-volume equilateral reference simplex.

    Attributes
    ----------
    h_hat, rho_hat, a_hat :
        Diameter, in-diameter and minimal height.
    c_grad :
        ``|grad phi_hat|^2`` of a reference basis function, which equals
        ``a_hat**-2``; this is the constant for which the diagonal-entry
        sandwich ``c sum |K| lmin(B_K) <= A_jj <= c sum |K| lmax(B_K)`` holds.
    c_grad_closed_form :
        ``(d+1)/d (d!/sqrt(d+1))^{2/d}``, the closed form quoted with that
        sandwich in the literature.  It evaluates to ``a_hat**2``, not
        ``a_hat**-2``; the two agree only for ``d = 1``.
    """

    dim: int
    h_hat: float
    rho_hat: float
    a_hat: float
    c_grad: float
    c_grad_closed_form: float


def reference_constants(dim: int) -> ReferenceConstants:
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    d = dim
    base = math.factorial(d) / math.sqrt(d + 1)
    h_hat = math.sqrt(2.0) * base ** (1.0 / d)
    a_hat = math.sqrt((d + 1) / (2.0 * d)) * h_hat
    return ReferenceConstants(
        dim=d,
        h_hat=h_hat,
        rho_hat=math.sqrt(2.0 / (d * (d + 1))) * h_hat,
        a_hat=a_hat,
        c_grad=1.0 / a_hat**2,
        c_grad_closed_form=(d + 1) / d * base ** (2.0 / d),
    )


@dataclass(frozen=True)
class MetricElementData:
    """Per-element metric diameters ``h_K`` and minimal heights ``a_K`` plus global averages.

    ``r = a_K**-2``; ``metric_volume`` is ``|Omega|_{D^{-1}}`` and ``h_avg`` the
    average metric element size ``(|Omega|_{D^{-1}} / N)^{1/d}``.
    """

    dim: int
    volumes: np.ndarray
    h_metric: np.ndarray
    a_metric: np.ndarray
    metric_volume: float
    h_avg: float

    @property
    def r(self) -> np.ndarray:
        return self.a_metric**-2

    @property
    def n_elements(self) -> int:
        return len(self.volumes)


def _facet_areas(pts: np.ndarray) -> np.ndarray:
    """(d-1)-volumes of the facets opposite each vertex; ``pts`` is ``(N, d+1, d)``."""
    n_el, nv, d = pts.shape
    if d == 1:
        return np.ones((n_el, nv))
    out = np.empty((n_el, nv))
    for i in range(nv):
        facet = np.delete(pts, i, axis=1)
        edges = facet[:, 1:, :] - facet[:, :1, :]
        gram = edges @ np.swapaxes(edges, 1, 2)
        out[:, i] = np.sqrt(np.abs(np.linalg.det(gram))) / math.factorial(d - 1)
    return out


def metric_element_data(mesh: SimplicialMesh, averages: ElementAverages) -> MetricElementData:
    """Metric diameters and heights of every element.

    The simplex is mapped by ``L^T`` with ``L L^T = D_K^{-1}`` so Euclidean
    quantities of the image are metric quantities of ``K``.  The diameter is the
    longest mapped edge; the height opposite vertex ``i`` is ``d |K'| / |F_i'|``.
    """
    d = mesh.dim
    chol_inv = np.linalg.cholesky(averages.inverses)
    pts = np.einsum("kji,kvj->kvi", chol_inv, mesh.vertices[mesh.elements])
    pairs = itertools.combinations(range(d + 1), 2)
    h = np.max([np.linalg.norm(pts[:, i] - pts[:, j], axis=1) for i, j in pairs], axis=0)
    vol = np.abs(np.linalg.det(np.swapaxes(pts[:, 1:] - pts[:, :1], 1, 2))) / math.factorial(d)
    heights = d * vol[:, None] / _facet_areas(pts)
    a = heights.min(axis=1)
    if (a <= 0).any():
        raise ValueError(f"degenerate element {int(np.argmax(a <= 0))} (zero metric height)")
    metric_volume = float(np.sum(mesh.volumes * averages.sqrt_det_inv))
    return MetricElementData(
        dim=d,
        volumes=np.asarray(mesh.volumes),
        h_metric=h,
        a_metric=a,
        metric_volume=metric_volume,
        h_avg=(metric_volume / mesh.n_elements) ** (1.0 / d),
    )


def metric_heights_from_gradients(mesh: SimplicialMesh, averages: ElementAverages) -> np.ndarray:
    """Minimal metric heights via ``1 / max_i |grad lambda_i|_{D_K}``; independent of the facet route."""
    g = basis_gradients(mesh)
    norms = np.sqrt(np.einsum("kid,kde,kie->ki", g, averages.tensors, g))
    return 1.0 / norms.max(axis=1)


def jacobian_metric_eigs(mesh: SimplicialMesh, averages: ElementAverages) -> tuple[np.ndarray, np.ndarray]:
    """Extremal eigenvalues of ``F_K'^{-1} D_K F_K'^{-T}`` per element."""
    finv = np.linalg.inv(mesh.jacobians)
    b = finv @ averages.tensors @ np.swapaxes(finv, 1, 2)
    eig = np.linalg.eigvalsh(0.5 * (b + np.swapaxes(b, 1, 2)))
    return eig[:, 0], eig[:, -1]


def metric_csv(data: MetricElementData) -> str:
    buf = io.StringIO()
    buf.write("element,vol,h_metric,a_metric,ratio\n")
    for k in range(data.n_elements):
        h, a = float(data.h_metric[k]), float(data.a_metric[k])
        buf.write(f"{k + 1},{float(data.volumes[k])!r},{h!r},{a!r},{h / a!r}\n")
    return buf.getvalue()
