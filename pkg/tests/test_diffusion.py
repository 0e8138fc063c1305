import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irkcond.diffusion import (
    DiffusionField,
    FieldError,
    NotPositiveDefiniteError,
    builtin_field,
    element_average,
    element_averages,
    simplex_quadrature,
)
from irkcond.mesh import SimplicialMesh, generate_perturbed, generate_uniform


def test_identity_field():
    f = builtin_field("identity", 3)
    np.testing.assert_array_equal(f([0.3, 0.2, 0.9])[0], np.eye(3))
    assert f.d_min == f.d_max == 1.0


def test_rotated_anisotropic_origin():
    f = builtin_field("rotated_anisotropic")
    np.testing.assert_allclose(f([0.0, 0.0])[0], np.diag([10.0, 0.1]), atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_rotated_anisotropic_spectrum(x, y):
    f = builtin_field("rotated_anisotropic")
    np.testing.assert_allclose(np.linalg.eigvalsh(f([x, y])[0]), [0.1, 10.0], rtol=1e-12)
    f.check(np.array([[x, y]]))


def test_unknown_field():
    with pytest.raises(FieldError):
        builtin_field("nope")


def test_piecewise_constant():
    f = builtin_field("piecewise_constant", 2, left=2.0, right=[3.0, 5.0])
    np.testing.assert_allclose(f([0.1, 0.5])[0], 2 * np.eye(2))
    np.testing.assert_allclose(f([0.9, 0.5])[0], np.diag([3.0, 5.0]))
    assert (f.d_min, f.d_max) == (2.0, 5.0)
    with pytest.raises(NotPositiveDefiniteError):
        builtin_field("piecewise_constant", 2, left=-1.0)


def test_check_rejects_indefinite():
    bad = DiffusionField(lambda p: np.tile(np.diag([1.0, -1.0]), (len(p), 1, 1)), 2)
    with pytest.raises(NotPositiveDefiniteError):
        bad.check(np.zeros((1, 2)))


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_quadrature_degree_two(dim):
    bary, w = simplex_quadrature(dim, 2)
    assert w.sum() == pytest.approx(1.0)
    # exact mean of x_i x_j over the reference simplex in barycentric form
    for i in range(dim + 1):
        for j in range(dim + 1):
            exact = (2.0 if i == j else 1.0) / ((dim + 1) * (dim + 2))
            assert np.sum(w * bary[:, i] * bary[:, j]) == pytest.approx(exact, rel=1e-13)


def test_linear_field_average_is_centroid():
    mesh = generate_perturbed(2, 4, 0.2, 3)

    def ev(p):
        out = np.empty((len(p), 2, 2))
        out[:, 0, 0] = 2 + p[:, 0]
        out[:, 1, 1] = 3 + p[:, 1]
        out[:, 0, 1] = out[:, 1, 0] = 0.5 * p[:, 0] - 0.2 * p[:, 1]
        return out

    f = DiffusionField(ev, 2)
    av = element_averages(f, mesh, 2)
    centroids = mesh.vertices[mesh.elements].mean(axis=1)
    np.testing.assert_allclose(av.tensors, ev(centroids), rtol=1e-13)


def test_constant_field_exact():
    mesh = generate_uniform(3, 2)
    f = DiffusionField(lambda p: np.tile(np.diag([1.0, 2.0, 4.0]), (len(p), 1, 1)), 3)
    av = element_averages(f, mesh, 1)
    np.testing.assert_array_equal(av.tensors, np.tile(np.diag([1.0, 2.0, 4.0]), (mesh.n_elements, 1, 1)))


def test_small_element_taylor_consistency():
    f = builtin_field("rotated_anisotropic")
    mesh = generate_uniform(2, 1)
    for eps in (1e-2, 1e-3):
        pts = 0.5 + eps * (mesh.vertices - 0.5)
        tiny = SimplicialMesh(pts, mesh.elements, mesh.boundary_vertices)
        dk = element_average(f, tiny.element_geometry(0))
        assert np.abs(dk - f([0.5, 0.5])[0]).max() < 50 * eps


def test_average_invariants(square8):
    mesh, _, _, _ = square8
    av = element_averages(builtin_field("rotated_anisotropic"), mesh)
    np.testing.assert_allclose(av.inverses @ av.tensors, np.broadcast_to(np.eye(2), av.tensors.shape), atol=1e-12)
    np.testing.assert_allclose(av.sqrt_det_inv**2, 1 / np.linalg.det(av.tensors), rtol=1e-12)
    np.testing.assert_allclose(av.tensors, np.swapaxes(av.tensors, 1, 2), atol=1e-14)


def test_identity_metric_volume(square8):
    mesh, _, av, _ = square8
    assert np.sum(mesh.volumes * av.sqrt_det_inv) == pytest.approx(1.0, rel=1e-13)
