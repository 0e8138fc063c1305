"""Linear finite element matrices with Dirichlet vertices eliminated.

All matrices are ``N_vi x N_vi`` and indexed by ``mesh.dof_index``.  Full
matrices come back as CSR; diagonal ones (``M_D``, ``A_D``, ``M_lump``) as
DIA, which is how callers tell them apart.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .diffusion import ElementAverages
from .mesh import SimplicialMesh, vertex_patches

__all__ = [
    "PRECONDITIONERS",
    "FEMatrices",
    "basis_gradients",
    "assemble_mass",
    "assemble_stiffness",
    "assemble",
    "diagonal_part",
    "lumped_mass",
    "is_diagonal",
    "write_triplets",
    "read_triplets",
    "canonical_preconditioner",
    "mass_diagonal_formula",
]


def basis_gradients(mesh: SimplicialMesh) -> np.ndarray:
    """Constant gradients of the barycentric basis, shape ``(N, d+1, d)``."""
    inv = np.linalg.inv(mesh.edge_matrices)
    return np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)


def _restrict(mesh: SimplicialMesh, local: np.ndarray) -> sp.csr_matrix:
    dof = mesh.dof_index[mesh.elements]
    nloc = mesh.dim + 1
    rows = np.repeat(dof, nloc, axis=1).ravel()
    cols = np.tile(dof, (1, nloc)).ravel()
    vals = local.reshape(len(local), -1).ravel()
    keep = (rows >= 0) & (cols >= 0)
    n = mesh.n_interior
    out = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    out.sum_duplicates()
    out.sort_indices()
    return out


def assemble_mass(mesh: SimplicialMesh) -> sp.csr_matrix:
    """Consistent mass matrix ``M_kj = int phi_k phi_j``."""
    d = mesh.dim
    ref = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    return _restrict(mesh, mesh.volumes[:, None, None] * ref[None])


def assemble_stiffness(mesh: SimplicialMesh, averages: ElementAverages) -> sp.csr_matrix:
    """Stiffness matrix ``A_kj = int grad phi_k . D_K grad phi_j`` with ``D`` frozen at its element mean."""
    g = basis_gradients(mesh)
    local = mesh.volumes[:, None, None] * np.einsum("kid,kde,kje->kij", g, averages.tensors, g)
    local = 0.5 * (local + np.swapaxes(local, 1, 2))
    return _restrict(mesh, local)


def diagonal_part(S) -> sp.dia_matrix:
    return sp.diags(S.diagonal(), 0, format="dia")


def lumped_mass(mesh: SimplicialMesh) -> sp.dia_matrix:
    """Row-sum lumping of the global mass matrix, restricted to interior vertices.

    The row sums are taken before Dirichlet columns are dropped, which gives
    ``(M_lump)_jj = |omega_j| / (d+1)``.
    """
    patches = vertex_patches(mesh).volumes
    return sp.diags(patches[mesh.interior_vertices] / (mesh.dim + 1), 0, format="dia")


def is_diagonal(S) -> bool:
    return sp.issparse(S) and S.format == "dia"


PRECONDITIONERS = ("none", "M", "M_D", "M_lump", "M_D+dtA_D")

_ALIASES = {
    "none": "none", "i": "none", "identity": "none",
    "m": "M", "mass": "M",
    "m_d": "M_D", "md": "M_D",
    "m_lump": "M_lump", "mlump": "M_lump", "lump": "M_lump",
    "m_d+dta_d": "M_D+dtA_D", "jacobi": "M_D+dtA_D", "md+dtad": "M_D+dtA_D",
}


def canonical_preconditioner(kind: str) -> str:
    """Normalize a preconditioner name (``jacobi`` -> ``M_D+dtA_D`` and so on)."""
    try:
        return _ALIASES[kind.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown preconditioner {kind!r}; choose from {PRECONDITIONERS}") from None


@dataclass(frozen=True)
class FEMatrices:
    """Mass and stiffness matrices of one (mesh, field) pair plus their diagonal derivatives."""

    mesh: SimplicialMesh
    M: sp.csr_matrix
    A: sp.csr_matrix

    @cached_property
    def M_D(self) -> sp.dia_matrix:
        return diagonal_part(self.M)

    @cached_property
    def A_D(self) -> sp.dia_matrix:
        return diagonal_part(self.A)

    @cached_property
    def M_lump(self) -> sp.dia_matrix:
        return lumped_mass(self.mesh)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def preconditioner_diagonal(self, kind: str, dt: float) -> np.ndarray | None:
        """Diagonal of ``P`` for the diagonal kinds, ``None`` for ``none``.

        ``P = M`` is not diagonal and raises ``ValueError`` here.
        """
        kind = canonical_preconditioner(kind)
        if kind == "none":
            return None
        if kind == "M_D":
            diag = self.M_D.diagonal()
        elif kind == "M_lump":
            diag = self.M_lump.diagonal()
        elif kind == "M_D+dtA_D":
            diag = self.M_D.diagonal() + dt * self.A_D.diagonal()
        else:
            raise ValueError("P = M is not diagonal")
        if (diag <= 0).any():
            raise ValueError(f"preconditioner {kind} has a nonpositive diagonal entry")
        return diag


def assemble(mesh: SimplicialMesh, averages: ElementAverages) -> FEMatrices:
    return FEMatrices(mesh=mesh, M=assemble_mass(mesh), A=assemble_stiffness(mesh, averages))


def write_triplets(S) -> str:
    """Coordinate format: ``N_vi nnz`` header, then ``i j value`` lines (1-based, both triangles)."""
    coo = sp.coo_matrix(S)
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{coo.shape[0]} {coo.nnz}"]
    lines += [f"{coo.row[k] + 1} {coo.col[k] + 1} {float(coo.data[k])!r}" for k in order]
    return "\n".join(lines) + "\n"


def read_triplets(text: str) -> sp.csr_matrix:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    n, nnz = int(rows[0][0]), int(rows[0][1])
    body = rows[1:]
    if len(body) != nnz:
        raise ValueError(f"expected {nnz} entries, found {len(body)}")
    i = np.array([int(r[0]) - 1 for r in body], dtype=np.int64)
    j = np.array([int(r[1]) - 1 for r in body], dtype=np.int64)
    v = np.array([float(r[2]) for r in body])
    return sp.csr_matrix((v, (i, j)), shape=(n, n))


def mass_diagonal_formula(mesh: SimplicialMesh) -> np.ndarray:
    """``2 |omega_j| / ((d+1)(d+2))`` for every interior vertex."""
    d = mesh.dim
    return 2.0 * vertex_patches(mesh).volumes[mesh.interior_vertices] / ((d + 1) * (d + 2))

