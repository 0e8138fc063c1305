import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irkcond.assembly import assemble, basis_gradients
from irkcond.diffusion import DiffusionField, builtin_field, element_averages
from irkcond.mesh import SimplicialMesh, generate_graded, generate_perturbed, generate_uniform, reference_simplex, vertex_patches
from irkcond.metric import (
    jacobian_metric_eigs,
    metric_csv,
    metric_element_data,
    metric_heights_from_gradients,
    reference_constants,
)


def _const(dim, mat):
    mat = np.asarray(mat, dtype=float)
    return DiffusionField(lambda p: np.tile(mat, (len(p), 1, 1)), dim)


def test_reference_constants_2d():
    rc = reference_constants(2)
    assert rc.h_hat == pytest.approx(1.519671, abs=1e-6)
    assert rc.rho_hat == pytest.approx(0.877383, abs=1e-6)
    assert rc.a_hat == pytest.approx(1.316074, abs=1e-6)
    assert rc.c_grad_closed_form == pytest.approx(math.sqrt(3), abs=1e-12)


def test_reference_constants_1d():
    rc = reference_constants(1)
    assert rc.h_hat == pytest.approx(1.0) and rc.a_hat == pytest.approx(1.0)
    assert rc.c_grad == pytest.approx(1.0) and rc.c_grad_closed_form == pytest.approx(1.0)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_reference_constant_relations(d):
    rc = reference_constants(d)
    assert rc.rho_hat <= rc.a_hat <= rc.h_hat
    assert rc.rho_hat == pytest.approx(math.sqrt(2 / (d * (d + 1))) * rc.h_hat)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_reference_constants_measured(d):
    ref = reference_simplex(d)
    mesh = SimplicialMesh(ref, np.arange(d + 1)[None, :], np.arange(d + 1))
    av = element_averages(builtin_field("identity", d), mesh)
    data = metric_element_data(mesh, av)
    rc = reference_constants(d)
    assert data.h_metric[0] == pytest.approx(rc.h_hat, rel=1e-12)
    assert data.a_metric[0] == pytest.approx(rc.a_hat, rel=1e-12)
    # squared gradient of one measured reference basis function
    g = basis_gradients(mesh)[0]
    np.testing.assert_allclose(np.sum(g**2, axis=1), rc.c_grad, rtol=1e-12)


def test_h_avg_uniform_n4():
    mesh = generate_uniform(2, 4)
    data = metric_element_data(mesh, element_averages(builtin_field("identity", 2), mesh))
    assert data.h_avg == pytest.approx((1 / 32) ** 0.5, rel=1e-13)


def test_scaling_by_4():
    mesh = generate_perturbed(2, 4, 0.1, 1)
    base = metric_element_data(mesh, element_averages(builtin_field("identity", 2), mesh))
    av4 = element_averages(_const(2, 4 * np.eye(2)), mesh)
    four = metric_element_data(mesh, av4)
    np.testing.assert_allclose(four.h_metric, base.h_metric / 2, rtol=1e-13)
    np.testing.assert_allclose(mesh.volumes * av4.sqrt_det_inv, mesh.volumes / 4, rtol=1e-13)


def test_metric_csv_format(square8):
    mesh, _, av, _ = square8
    lines = metric_csv(metric_element_data(mesh, av)).splitlines()
    assert lines[0] == "element,vol,h_metric,a_metric,ratio"
    assert len(lines) == mesh.n_elements + 1


def _fields(dim):
    out = [builtin_field("identity", dim)]
    if dim == 2:
        out.append(builtin_field("rotated_anisotropic"))
    else:
        q, _ = np.linalg.qr(np.arange(1.0, dim * dim + 1).reshape(dim, dim) + np.eye(dim))
        out.append(_const(dim, q @ np.diag(np.geomspace(0.1, 10, dim)) @ q.T))
    return out


meshes = st.one_of(
    st.builds(generate_uniform, st.integers(1, 3), st.integers(2, 4)),
    st.builds(generate_graded, st.integers(1, 3), st.integers(2, 4), st.floats(1.0, 3.0)),
    st.builds(generate_perturbed, st.integers(1, 3), st.integers(2, 4), st.floats(0.0, 0.2), st.integers(0, 99)),
)


@settings(max_examples=30, deadline=None)
@given(meshes, st.integers(0, 1))
def test_sandwich_inequalities(mesh, which):
    d = mesh.dim
    field = _fields(d)[which]
    av = element_averages(field, mesh)
    data = metric_element_data(mesh, av)
    rc = reference_constants(d)
    F = mesh.jacobians
    assert (data.h_metric >= data.a_metric * (1 - 1e-12)).all() and (data.a_metric > 0).all()
    n1 = np.linalg.norm(np.swapaxes(F, 1, 2) @ av.inverses @ F, ord=2, axis=(1, 2))
    h2 = data.h_metric**2
    assert (h2 / rc.h_hat**2 <= n1 * (1 + 1e-10)).all()
    assert (n1 <= h2 / rc.rho_hat**2 * (1 + 1e-10)).all()
    lo, hi = jacobian_metric_eigs(mesh, av)
    a2 = data.a_metric**2
    assert (rc.a_hat**2 / a2 <= hi * (1 + 1e-10)).all()
    assert (hi <= d**2 * rc.a_hat**2 / a2 * (1 + 1e-10)).all()
    np.testing.assert_allclose(metric_heights_from_gradients(mesh, av), data.a_metric, rtol=1e-10)
    # diagonal stiffness entries against per-patch sums
    A = assemble(mesh, av).A.diagonal()
    patches = vertex_patches(mesh)
    for k, v in enumerate(mesh.interior_vertices):
        els = patches.elements[v]
        lower = rc.c_grad * np.sum(mesh.volumes[els] * lo[els])
        upper = rc.c_grad * np.sum(mesh.volumes[els] * hi[els])
        assert lower * (1 - 1e-10) <= A[k] <= upper * (1 + 1e-10)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0.1, 10), st.floats(0.1, 10))
def test_rigid_motion_invariance(theta, d1, d2):
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    pts = np.array([[0.0, 0.0], [1.0, 0.2], [0.3, 0.8]])
    tensor = np.diag([d1, d2])
    base = SimplicialMesh(pts, np.array([[0, 1, 2]]), [0, 1, 2])
    moved = SimplicialMesh(pts @ rot.T + [0.4, -1.0], np.array([[0, 1, 2]]), [0, 1, 2])
    a = metric_element_data(base, element_averages(_const(2, tensor), base))
    b = metric_element_data(moved, element_averages(_const(2, rot @ tensor @ rot.T), moved))
    assert b.h_metric[0] == pytest.approx(a.h_metric[0], rel=1e-12)
    assert b.a_metric[0] == pytest.approx(a.a_metric[0], rel=1e-12)


def test_uniform_metric_ratio_bounded():
    ratios = []
    for n in (4, 8, 16, 32):
        mesh = generate_uniform(2, n)
        data = metric_element_data(mesh, element_averages(builtin_field("identity", 2), mesh))
        ratios.append((data.h_metric / data.a_metric).max())
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)
