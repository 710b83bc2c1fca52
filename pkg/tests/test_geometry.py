import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import special_ortho_group

from cibend.gallery import cylinder, ellipsoid, graph, instantiate, plane, product, sphere
from cibend.geometry import (AmbientSpace, GeometryError, SearchConfig, conformal_s_nullity,
                             evaluate_frame, normal_span_check, sphere_grid)


def fd_derivatives(chart, u, h=1e-4):
    """First and second partials of the chart values by central differences."""
    val = lambda x: chart.jet(x, 1).value  # noqa: E731
    n = chart.nvars
    E = np.eye(n) * h
    d1 = np.array([(val(u + E[i]) - val(u - E[i])) / (2 * h) for i in range(n)])
    d2 = np.array([[(val(u + E[i] + E[j]) - val(u + E[i] - E[j]) - val(u - E[i] + E[j])
                     + val(u - E[i] - E[j])) / (4 * h * h) for j in range(n)] for i in range(n)])
    return d1, d2


CHARTS = [plane(2, 4), sphere(3), cylinder(3), ellipsoid(), ellipsoid((1, 1.2, 1.5, 1.9, 2.4)),
          ellipsoid((1, 1.3, 1.7, 2.1, 2.6), lift=(0.3, -0.5, 0.8, 0.1, -0.4)),
          product(1, 2), graph(3)]


@pytest.mark.parametrize("chart", CHARTS, ids=lambda c: c.name)
def test_metric_and_christoffels_against_finite_differences(chart):
    for u in chart.sample(3, seed=11):
        fr = evaluate_frame(chart, u)
        d1, d2 = fd_derivatives(chart, u)
        g = d1 @ d1.T
        assert np.allclose(fr.g, g, atol=1e-7)
        gamma = np.einsum("kl,ijm,lm->kij", np.linalg.inv(g), d2, d1)
        assert np.allclose(fr.gamma, gamma, atol=1e-5)
        # normal part of the second derivatives is alpha
        tang = np.einsum("kij,km->ijm", fr.gamma, fr.df)
        assert np.allclose(fr.alpha_vec, d2 - tang, atol=1e-5)


@pytest.mark.parametrize("chart", CHARTS, ids=lambda c: c.name)
def test_frame_residuals(chart):
    for u in chart.sample(5, seed=3):
        fr = evaluate_frame(chart, u)
        assert fr.orthonormality_residual < 1e-13
        assert fr.tangency_residual < 1e-13
        assert fr.gauss_residual < 1e-12
        assert fr.codazzi_residual < 1e-12
        assert np.allclose(fr.onb.T @ fr.g @ fr.onb, np.eye(fr.n), atol=1e-13)


def test_plane_is_flat():
    fr = evaluate_frame(plane(2, 3), [0.1, -0.3])
    assert np.allclose(fr.g, np.eye(2))
    assert np.abs(fr.alpha).max() == 0
    assert np.abs(fr.riemann).max() == 0


def test_unit_sphere_inward_normal_has_identity_shape_operator():
    fr = evaluate_frame(sphere(2), [1.0, 2.0])
    # alpha_vec = -g f, so A_N = I for N = -f
    A_inward = fr.ginv @ np.einsum("ijm,m->ij", fr.alpha_vec, -fr.f)
    assert np.allclose(A_inward, np.eye(2), atol=1e-13)


def test_cylinder_principal_curvatures():
    for u in cylinder(2).sample(4, seed=1):
        fr = evaluate_frame(cylinder(2), u)
        k = np.sort(np.abs(np.linalg.eigvalsh(fr.shape_ops_onb()[0])))
        assert np.allclose(k, [0, 1], atol=1e-13)


def test_ellipsoid_gaussian_curvature_closed_form():
    a, b, c = 1.0, 1.3, 1.7
    ch = ellipsoid((a, b, c))
    for u in ch.sample(6, seed=5):
        fr = evaluate_frame(ch, u)
        x, y, z = fr.f
        K = 1.0 / (a * a * b * b * c * c * (x * x / a**4 + y * y / b**4 + z * z / c**4) ** 2)
        sect = np.einsum("l,l->", fr.riemann[0, 1, 1], fr.g[0]) / np.linalg.det(fr.g)
        assert sect == pytest.approx(K, rel=1e-11)


def test_graph_second_fundamental_form_closed_form():
    ch = graph(2, curvatures=(0.4, 0.9), cubic=0.3)
    for u in ch.sample(4, seed=2):
        fr = evaluate_frame(ch, u)
        grad = np.array([0.4, 0.9]) * u + 0.15 * u * u
        hess = np.diag([0.4, 0.9] + 0.3 * u)
        w = np.sqrt(1 + grad @ grad)
        assert np.allclose(fr.g, np.eye(2) + np.outer(grad, grad), atol=1e-14)
        assert np.allclose(np.abs(fr.alpha[0]), np.abs(hess / w), atol=1e-13)


def test_ellipsoid_distinct_principal_curvatures():
    ch = instantiate("ellipsoid", axes=(1, 1.3, 1.7, 2.1)).chart
    for u in ch.sample(5, seed=8):
        k = np.linalg.eigvalsh(evaluate_frame(ch, u).shape_ops_onb()[0])
        assert np.diff(np.sort(k)).min() > 1e-3


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_ambient_rotation_invariance(seed):
    ch = ellipsoid((1, 1.2, 1.5, 1.9))
    Q = special_ortho_group.rvs(4, random_state=seed)
    u = ch.sample(1, seed)[0]
    a, b = evaluate_frame(ch, u), evaluate_frame(ch.rotated(Q), u)
    assert np.allclose(a.g, b.g, atol=1e-13)
    assert np.allclose(a.riemann, b.riemann, atol=1e-11)
    ka = np.linalg.eigvalsh(a.shape_ops_onb()[0])
    kb = np.linalg.eigvalsh(b.shape_ops_onb()[0])
    assert np.allclose(np.sort(np.abs(ka)), np.sort(np.abs(kb)), atol=1e-12)


def test_lorentz_ambient_signs():
    amb = AmbientSpace(4, 1)
    assert amb.signs.tolist() == [-1, 1, 1, 1]
    assert amb.inner([1, 1, 0, 0], [1, 1, 0, 0]) == 0


def test_domain_and_rank_errors():
    with pytest.raises(GeometryError):
        evaluate_frame(sphere(2), [0.0, 1.0])
    with pytest.raises(GeometryError):
        evaluate_frame(sphere(2), [0.0, 1.0], check_domain=False)   # pole: rank drop
    with pytest.raises(ValueError):
        AmbientSpace(3, 2)


def test_sphere_grid_is_unit():
    G = sphere_grid(3, 50, seed=1)
    assert G.shape == (50, 3)
    assert np.allclose(np.linalg.norm(G, axis=1), 1)


@pytest.mark.parametrize("name,params,expected", [
    ("plane", {"n": 3, "m": 5}, 3),
    ("sphere", {"n": 4}, 4),
    ("cylinder", {"n": 3}, 2),
    ("ellipsoid", {"axes": (1, 1.3, 1.7, 2.1)}, 1),
])
def test_nullity_closed_form(name, params, expected):
    e = instantiate(name, **params)
    for u in e.chart.sample(2, seed=4):
        r = conformal_s_nullity(evaluate_frame(e.chart, u), 1)
        assert r.estimate == expected and not r.unstable


def test_plane_nullity_zero_zeta():
    r = conformal_s_nullity(evaluate_frame(plane(2, 4), [0.1, 0.2]), 2)
    assert r.estimate == 2
    assert np.allclose(r.zeta, 0)


def test_codimension_two_nullities_and_witness():
    e = instantiate("product", n1=1, n2=2)
    fr = evaluate_frame(e.chart, e.chart.sample(1, 2)[0])
    r1, r2 = conformal_s_nullity(fr, 1), conformal_s_nullity(fr, 2)
    # S^1 x S^2 sits in a round sphere: the umbilic normal gives nu_1 = 3, and
    # zeta = N_2 / r_2 leaves the S^2 directions in the kernel for s = 2
    assert (r1.estimate, r2.estimate) == (3, 2)
    # the witness really has that kernel: A_U - c I annihilates it (orthonormal basis)
    for r in (r1, r2):
        A = np.einsum("ar,aij->rij", r.U, fr.shape_ops_onb())
        c = r.U.T @ r.zeta
        M = A - np.einsum("r,ij->rij", c, np.eye(fr.n))
        assert r.kernel.shape[1] == r.estimate
        assert np.abs(M @ r.kernel).max() < 1e-10


def test_nullity_search_budget_is_configurable():
    fr = evaluate_frame(ellipsoid(), [1.0, 1.2, 2.0])
    r = conformal_s_nullity(fr, 1, SearchConfig(grid_size=20, draws=10, refine_iters=5))
    assert r.estimate == 1


def test_normal_span_examples():
    fr = evaluate_frame(plane(3, 5), [0.1, 0.2, 0.3])
    assert normal_span_check(fr, [1, 0, 0], [1, 0, 0]) == (False, 0)
    sph = evaluate_frame(sphere(4), sphere(4).sample(1, 1)[0])
    Z = sph.onb[:, 0]
    assert normal_span_check(sph, Z, Z)[1] == 0
    ell = instantiate("ellipsoid", axes=(1, 1.2, 1.5, 1.9, 2.4)).chart
    fr = evaluate_frame(ell, ell.sample(1, 3)[0])
    Z1, Z2 = fr.onb[:, 0], fr.onb[:, 1]
    assert normal_span_check(fr, Z1, Z2) == (True, 1)
