import math
from types import SimpleNamespace

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from irkcond.assembly import assemble
from irkcond.bounds import (
    Bound,
    EigData,
    PositivityError,
    analyze,
    d_min_of,
    euler_bounds,
    irk_bounds,
    jordan_block_bound,
    lambda_D,
    mass_eig_bounds,
    preconditioned_eig_data,
    psi_D,
    psi_E,
    stiffness_lambda_min_bound,
)
from irkcond.diffusion import builtin_field, element_averages
from irkcond.experiments import log_slope
from irkcond.mesh import generate_graded, generate_perturbed, generate_uniform, vertex_patches
from irkcond.metric import metric_element_data
from irkcond.rk import builtin_tableau, gamma_stats, real_jordan
from irkcond.spectral import KronOperator, SpectralError, kappa, kappa_tilde, preconditioned_matrices, preconditioned_operator, sym_extremal_eigs


def _setup(mesh, name="identity"):
    f = builtin_field(name, mesh.dim)
    av = element_averages(f, mesh)
    fem = assemble(mesh, av)
    return f, av, fem, metric_element_data(mesh, av)


def test_psi_E_values():
    assert psi_E(generate_uniform(2, 6)) == pytest.approx(1.0)
    assert psi_E(generate_uniform(3, 2)) == pytest.approx(1.0)
    assert psi_E(generate_uniform(1, 5)) == 1.0
    fake = SimpleNamespace(dim=2, n_elements=4, domain_volume=1.0,
                           volumes=np.array([0.25 / math.e**2, 0.25, 0.25, 0.5 - 0.25 / math.e**2]))
    assert psi_E(fake) == pytest.approx(3.0)


def test_psi_D_zero_dt():
    mesh = generate_perturbed(2, 6, 0.2, 4)
    _, _, _, met = _setup(mesh)
    assert psi_D(mesh, met, 0.0) == pytest.approx((1.0, 1.0))


def test_psi_D_1d_dt_h2():
    mesh = generate_uniform(1, 10)
    _, _, _, met = _setup(mesh)
    big, small = psi_D(mesh, met, 0.01)
    assert big == pytest.approx(2.0, rel=1e-12)
    assert small == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("dt", [1e-5, 0.1, 10.0])
def test_small_psi_D_uniform(dt):
    mesh = generate_uniform(2, 8)
    _, _, _, met = _setup(mesh)
    assert psi_D(mesh, met, dt)[1] == pytest.approx(1.0, rel=1e-12)


def test_psi_D_negative_dt():
    mesh = generate_uniform(1, 3)
    with pytest.raises(ValueError):
        psi_D(mesh, _setup(mesh)[3], -1.0)


def test_cond1_mass_limit():
    mesh = generate_graded(2, 6, 2.0)
    f, av, fem, met = _setup(mesh)
    om = vertex_patches(mesh).volumes[mesh.interior_vertices]
    want = om.max() / om.min()
    assert euler_bounds(mesh, fem, met, 1e-14, "none", d_min=1.0).value == pytest.approx(want, rel=1e-10)
    assert euler_bounds(mesh, fem, met, 0.1, "none", d_min=1.0, limit="mass").value == pytest.approx(want)


def test_cond_bounds_dt_zero_constant():
    for n in (4, 8, 16):
        mesh = generate_uniform(2, n)
        f, av, fem, met = _setup(mesh)
        for kind in ("M_D", "M_lump", "M", "jacobi"):
            assert euler_bounds(mesh, fem, met, 0.0, kind, d_min=1.0, lam_D=2 * math.pi**2).value == pytest.approx(1.0)


def test_cond2_grows_like_N():
    vals, Ns = [], []
    for n in (8, 16, 32):
        mesh = generate_uniform(2, n)
        f, av, fem, met = _setup(mesh)
        vals.append(euler_bounds(mesh, fem, met, 0.1, "M_D", d_min=1.0, lam_D=2 * math.pi**2).value)
        Ns.append(mesh.n_elements)
    assert log_slope(Ns, vals) == pytest.approx(1.0, abs=0.1)


def test_cond1_monotone_in_dt():
    mesh = generate_graded(2, 6, 2.5)
    f, av, fem, met = _setup(mesh)
    dts = np.geomspace(1e-6, 10, 25)
    vals = [euler_bounds(mesh, fem, met, dt, "none", d_min=1.0).value for dt in dts]
    assert (np.diff(vals) >= -1e-12 * np.abs(vals[1:])).all()


def test_stiffness_limits():
    mesh = generate_uniform(2, 8)
    f, av, fem, met = _setup(mesh)
    for kind in ("none", "M_D", "jacobi"):
        b = euler_bounds(mesh, fem, met, 1.0, kind, d_min=1.0, lam_D=2 * math.pi**2, limit="stiffness")
        assert b.value > 0 and not b.explicit_constant
    assert euler_bounds(mesh, fem, met, 1.0, "jacobi", d_min=1.0, limit="stiffness").formula == "euler-jacobi-stiffness-limit"
    with pytest.raises(ValueError):
        euler_bounds(mesh, fem, met, 1.0, "none", d_min=1.0, limit="huge")


def test_stiffness_lambda_min_bound():
    ratios = []
    for n in (4, 8, 16):
        mesh = generate_uniform(2, n)
        f, av, fem, met = _setup(mesh)
        bound = stiffness_lambda_min_bound(mesh, 1.0)
        assert bound == pytest.approx(1.0 / mesh.n_elements)
        ratios.append(sym_extremal_eigs(fem.A).lambda_min / bound)
    assert min(ratios) >= 0.5 * ratios[0]
    mesh = generate_uniform(2, 4)
    assert stiffness_lambda_min_bound(mesh, 2.0) == pytest.approx(2 * stiffness_lambda_min_bound(mesh, 1.0))
    graded = generate_graded(2, 4, 3.0)
    assert psi_E(graded) > 1
    assert stiffness_lambda_min_bound(graded, 1.0) < stiffness_lambda_min_bound(mesh, 1.0)
    with pytest.raises(ValueError):
        stiffness_lambda_min_bound(mesh, 0.0)


def test_lambda_D_policy():
    mesh = generate_uniform(2, 6)
    f, av, fem, met = _setup(mesh)
    assert lambda_D(mesh, fem, f) == (pytest.approx(2 * math.pi**2), "analytic")
    g = builtin_field("rotated_anisotropic")
    fem2 = assemble(mesh, element_averages(g, mesh))
    val, src = lambda_D(mesh, fem2, g)
    assert src == "discrete"
    assert val == pytest.approx(sla.eigh(fem2.A.toarray(), fem2.M.toarray(), eigvals_only=True)[0], rel=1e-10)


def test_d_min_fallback():
    mesh = generate_uniform(2, 3)
    f = builtin_field("identity", 2)
    av = element_averages(f, mesh)
    assert d_min_of(f, av) == 1.0
    assert d_min_of(None, av) == pytest.approx(1.0)


def test_mass_eig_bounds_hold():
    mesh = generate_perturbed(2, 6, 0.2, 7)
    f, av, fem, met = _setup(mesh, "rotated_anisotropic")
    for kind in ("none", "M", "M_D", "M_lump", "jacobi"):
        lo, hi = mass_eig_bounds(mesh, kind, dt=0.01, metric=met)
        Mt, _ = preconditioned_matrices(fem, 0.01, kind)
        ex = sym_extremal_eigs(Mt)
        if lo.explicit_constant:
            assert ex.lambda_min >= lo.value * (1 - 1e-10)
        assert ex.lambda_max <= hi.value * (1 + 1e-10)


def test_radau_no_restriction(square8):
    mesh, f, av, fem = square8
    eig = preconditioned_eig_data(fem, 0.1, "none")
    bound, dt_max = irk_bounds(eig, gamma_stats(builtin_tableau("radau1a3").gamma), 0.1)
    assert bound.formula == "irk-coercive" and bound.explicit_constant and dt_max == math.inf


def test_lobatto_dt_max(line10):
    mesh, f, av, fem = line10
    stats = gamma_stats(builtin_tableau("lobatto3a4").gamma)
    eig = preconditioned_eig_data(fem, 0.0, "none")
    m = np.linalg.eigvalsh(fem.M.toarray())
    a = np.linalg.eigvalsh(fem.A.toarray())
    want = m[0] / (-stats.lambda_min_sym * a[-1])
    bound, dt_max = irk_bounds(eig, stats, 0.5 * want)
    assert dt_max == pytest.approx(want, rel=1e-10)
    assert bound.formula == "irk-indefinite"
    assert want == pytest.approx(m[0] / (0.0736 * a[-1]), rel=1e-3)
    with pytest.raises(PositivityError):
        irk_bounds(eig, stats, 1.01 * want)


def test_euler_reduces():
    eig = EigData(0.5, 2.0, 3.0, 40.0)
    bound, _ = irk_bounds(eig, gamma_stats(np.array([[1.0]])), 0.1)
    assert bound.value == pytest.approx((2.0 + 0.1 * 40.0) / (0.5 + 0.1 * 3.0))


def test_jordan_block_bound_forms():
    eig = EigData(0.5, 2.0, 3.0, 40.0)
    a = jordan_block_bound(eig, 0.3, 0.0, 0.1)
    b, _ = irk_bounds(eig, gamma_stats(np.array([[0.3]])), 0.1)
    assert a.value == pytest.approx(b.value)
    assert jordan_block_bound(eig, 0.3, 0.2, 0.0).value == pytest.approx(4.0)
    alpha, beta = 1 / 3, math.sqrt(2) / 6
    assert math.hypot(alpha, beta) == pytest.approx(0.40825, abs=1e-5)
    with pytest.raises(ValueError):
        jordan_block_bound(eig, -0.5, 0.1, 0.1)


def test_bound_flags():
    b = Bound(np.float64(2.0), "euler-plain", False)
    assert isinstance(b.value, float) and b.generic_constant


def test_generic_scaling_slope():
    for kind in ("none", "M_D", "M_lump", "jacobi"):
        ex, bd = [], []
        for n in (4, 8, 16, 32):
            mesh = generate_uniform(2, n)
            f, av, fem, met = _setup(mesh)
            Mt, At = preconditioned_matrices(fem, 0.1, kind)
            ex.append(kappa(Mt + 0.1 * At))
            bd.append(euler_bounds(mesh, fem, met, 0.1, kind, d_min=1.0, lam_D=2 * math.pi**2).value)
        assert 0.8 <= log_slope(bd, ex) <= 1.2


def test_jacobi_stiffness_trend():
    def ratios(n):
        mesh = generate_uniform(2, n)
        f, av, fem, met = _setup(mesh)
        out = []
        for dt in (0.1, 1e-3, mesh.n_elements ** -0.5):
            _, At = preconditioned_matrices(fem, dt, "jacobi")
            out.append(sym_extremal_eigs(At).lambda_min * psi_D(mesh, met, dt)[0])
        return out

    c = min(min(ratios(n)) for n in (4, 8, 16))
    assert min(ratios(32)) >= 0.8 * c


def test_analyze_report(square8):
    mesh, f, av, fem = square8
    rep = analyze(mesh, f, builtin_tableau("radau2a5"), 1e-3, "M_D", fem=fem, averages=av)
    assert rep.irk.value >= rep.exact * (1 - 1e-8)
    for alpha, beta, bnd, ex in rep.jordan:
        assert bnd.value >= ex * (1 - 1e-8)
    text = str(rep)
    assert "irk-indefinite" in text and "exact kappa_tilde" in text
    rep = analyze(mesh, f, builtin_tableau("lobatto3a4"), 10.0, "none", fem=fem, averages=av)
    assert rep.irk is None and any("dt_max" in n for n in rep.notes)


methods = st.sampled_from(["euler", "gauss4", "gauss6", "radau1a3", "radau2a5", "lobatto3a4"])
kinds = st.sampled_from(["none", "M", "M_D", "M_lump", "jacobi"])
mesh_st = st.one_of(
    st.builds(generate_uniform, st.just(2), st.integers(2, 6)),
    st.builds(generate_graded, st.integers(1, 2), st.integers(2, 6), st.floats(1.0, 3.0)),
    st.builds(generate_perturbed, st.integers(1, 2), st.integers(2, 6), st.floats(0.0, 0.2), st.integers(0, 99)),
)


@settings(max_examples=60, deadline=None)
@given(mesh_st, methods, kinds, st.floats(-6, 1))
def test_explicit_bounds_dominate(mesh, name, kind, logdt):
    dt = 10.0**logdt
    field = builtin_field("rotated_anisotropic" if mesh.dim == 2 else "identity", mesh.dim)
    av = element_averages(field, mesh)
    fem = assemble(mesh, av)
    tab = builtin_tableau(name)
    eig = preconditioned_eig_data(fem, dt, kind)
    try:
        bound, _ = irk_bounds(eig, gamma_stats(tab.gamma), dt)
    except PositivityError:
        return
    exact = kappa_tilde(preconditioned_operator(fem, dt, tab.gamma, kind)).kappa_tilde
    assert bound.value >= exact * (1 - 1e-8)
    Mt, At = preconditioned_matrices(fem, dt, kind)
    for blk in real_jordan(tab.gamma).blocks:
        ex = kappa_tilde(KronOperator(Mt, At, dt, blk.matrix)).kappa_tilde
        assert jordan_block_bound(eig, blk.alpha, blk.beta, dt).value >= ex * (1 - 1e-8)
