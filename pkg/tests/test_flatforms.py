import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import subspace_angles

from cibend.bending import associated_pair
from cibend.flatforms import (FlatFormError, IndefBilinearForm, IndefInnerSpace,
                              PartialIsometry, _real_minus_one_gap, build_theta, cayley_skew,
                              decompose_flat, extend_isometry, flat_fixture, flatness_residual,
                              inverse_cayley, kernel_span_isotropic, nullity_residual,
                              random_partial_isometry, recover_triviality_from_null_theta,
                              rigidity_check)
from cibend.gallery import ConformalKillingData, instantiate, standard_suite
from cibend.geometry import evaluate_frame
from cibend.triviality import closed_form_certificate, make_conformal_killing


def loop_residuals(gamma: IndefBilinearForm):
    """Quadruple-loop oracle: (flatness, nullity) residuals relative to |gamma|^2."""
    c, sig = gamma.components, gamma.space.signature
    n = gamma.n
    flat = null = 0.0
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for l in range(n):
                    ik_jl = il_jk = 0.0
                    for A, s in enumerate(sig):
                        ik_jl = ik_jl + s * c[A, i, k] * c[A, j, l]
                        il_jk = il_jk + s * c[A, i, l] * c[A, j, k]
                    flat = max(flat, abs(ik_jl - il_jk))
                    null = max(null, abs(ik_jl))
    nrm = np.abs(c).max(initial=0.0)
    if nrm == 0:
        return 0.0, 0.0
    return flat / nrm**2, null / nrm**2


def small_form(seed):
    rng = np.random.default_rng(seed)
    kind = seed % 4
    q, n = int(rng.integers(1, 3)), int(rng.integers(1, 4))
    sig = tuple(int(s) for s in rng.choice([1, -1], 2 * q))
    N = len(sig)
    if kind == 0:
        comps = rng.standard_normal((N, n, n))
    elif kind == 1:      # rank one along a single vector: flat
        lam, w = rng.standard_normal(n), rng.standard_normal(N)
        comps = np.einsum("A,i,j->Aij", w, lam, lam)
    elif kind == 2:      # values on an isotropic line of the neutral space: null
        sig = (1,) * q + (-1,) * q
        u = np.zeros(N)
        u[0] = u[q] = 1.0
        comps = np.einsum("A,ij->Aij", u, rng.integers(-3, 4, (n, n)).astype(float))
    else:                # small integers, often exactly flat or null by accident
        comps = rng.integers(-1, 2, (N, n, n)).astype(float)
    return IndefBilinearForm(IndefInnerSpace(sig), comps)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6))
def test_predicates_match_loop_oracle_exactly(seed):
    g = small_form(seed)
    flat, null = loop_residuals(g)
    assert flatness_residual(g) == flat
    assert nullity_residual(g) == null


def test_simple_forms():
    sp = IndefInnerSpace.neutral(2)
    zero = IndefBilinearForm(sp, np.zeros((4, 3, 3)))
    assert flatness_residual(zero) == 0 and nullity_residual(zero) == 0
    lam = np.array([1.0, -2.0, 0.5])
    w = np.array([0.0, 1.0, 0.0, 0.0])
    r1 = IndefBilinearForm(sp, np.einsum("A,i,j->Aij", w, lam, lam))
    assert flatness_residual(r1) == 0
    ks = kernel_span_isotropic(r1)
    assert (ks.span.shape[1], ks.isotropic.shape[1], ks.kernel.shape[1]) == (1, 0, 2)
    ks0 = kernel_span_isotropic(zero)
    assert ks0.kernel.shape[1] == 3 and ks0.span.shape[1] == 0
    dense = IndefBilinearForm(sp, np.random.default_rng(1).standard_normal((4, 3, 3)))
    assert flatness_residual(dense) > 0.01


def test_indefinite_space_validation():
    with pytest.raises(FlatFormError):
        IndefInnerSpace((1, 0))
    with pytest.raises(FlatFormError):
        IndefBilinearForm(IndefInnerSpace.neutral(1), np.zeros((3, 2, 2)))


# -- theta ------------------------------------------------------------------------

def test_theta_of_gallery_bendings_is_flat_null_with_trivial_kernel():
    for e in standard_suite():
        fr = evaluate_frame(e.chart, e.chart.sample(1, 17)[0])
        for name, b in e.bendings.items():
            be = associated_pair(fr, b)
            th = build_theta(fr, be)
            assert flatness_residual(th) <= 1e-8 * be.scale
            assert kernel_span_isotropic(th).kernel.shape[1] == 0
            if name != "phi_f_x1sq":
                assert nullity_residual(th) <= 1e-9 * be.scale


def test_theta_of_zero_bending_on_plane():
    e = instantiate("plane", n=2, m=3)
    fr = evaluate_frame(e.chart, [0.2, 0.4])
    th = build_theta(fr, associated_pair(fr, e.bendings["zero"]))
    c = th.components
    assert np.abs(c[0]).max() == 0 and np.abs(c[2]).max() == 0
    assert np.allclose(c[1], np.eye(2)) and np.allclose(c[3], np.eye(2))
    assert th.space.signature == (1, 1, -1, -1)
    assert nullity_residual(th) == 0


def test_theta_is_null_for_every_phi_f_on_the_round_sphere():
    """With alpha = -<,> f and beta = Hess phi f, each pairing of theta is
    -<X,Y> Hess(Z,W) - <Z,W> Hess(X,Y) + <X,Y> Hess(Z,W) + <Z,W> Hess(X,Y) = 0,
    so theta cannot separate x1^2 f from trivial bendings on the sphere."""
    e = instantiate("sphere", n=4)
    fr = evaluate_frame(e.chart, e.chart.sample(1, 2)[0])
    be = associated_pair(fr, e.bendings["phi_f_x1sq"])
    th = build_theta(fr, be)
    assert nullity_residual(th) <= 1e-12
    assert build_theta(fr, be).norm() > 0.1


def test_perturbed_beta_breaks_flatness():
    e = instantiate("ellipsoid", axes=(1, 1.2, 1.5, 1.9, 2.4))
    fr = evaluate_frame(e.chart, e.chart.sample(1, 0)[0])
    be = associated_pair(fr, e.bendings["inversion"])
    d = np.random.default_rng(5).standard_normal(be.beta.shape)
    be2 = be.perturbed(d_beta=d / np.linalg.norm(d))
    assert flatness_residual(build_theta(fr, be2)) > 1e-3


# -- decomposition ----------------------------------------------------------------

@pytest.mark.parametrize("p", [2, 3, 4, 5])
def test_decomposition_fixtures(p):
    for ell in range(1, p):
        for rank in range(1, p - ell + 1):
            n = 2 * p + 2
            g = flat_fixture(p, ell, rank, n, seed=[p, ell, rank])
            d = decompose_flat(g)
            assert d.ell == ell
            assert d.checks["S1_equals_isotropic_angle"] <= 1e-8
            assert d.checks["gamma1_null_residual"] <= 1e-8
            assert d.dims["kernel_gamma2"] >= n - 2 * p + 2 * ell
            # W1 + W2 is an orthogonal splitting of the value space
            J = g.space.J
            assert np.abs(d.basis_W1.T @ J @ d.basis_W2).max() < 1e-10
            # the isotropic part really is S cap S-perp
            ks = kernel_span_isotropic(g)
            assert np.max(subspace_angles(d.basis_W1[:, :ell], ks.isotropic)) < 1e-8


def test_decomposition_preconditions():
    null = IndefBilinearForm(IndefInnerSpace.neutral(2),
                             np.einsum("A,ij->Aij", np.array([1.0, 0, 1.0, 0]), np.eye(6)))
    with pytest.raises(FlatFormError, match="null"):
        decompose_flat(null)
    with pytest.raises(FlatFormError, match="N\\(gamma\\)"):
        decompose_flat(IndefBilinearForm(IndefInnerSpace.neutral(2), np.zeros((4, 6, 6))))
    dense = IndefBilinearForm(IndefInnerSpace.neutral(2),
                              np.random.default_rng(0).standard_normal((4, 6, 6)))
    with pytest.raises(FlatFormError, match="not flat"):
        decompose_flat(dense)
    with pytest.raises(FlatFormError, match="neutral"):
        decompose_flat(IndefBilinearForm(IndefInnerSpace((1, 1, -1)), np.zeros((3, 5, 5))))
    with pytest.raises(FlatFormError):
        flat_fixture(2, 2, 1, 6)


# -- isometry extension and Cayley ------------------------------------------------------

def check_extension(T0, T):
    N = T0.N
    assert np.abs(T.T @ T - np.eye(N)).max() <= 1e-10
    assert np.abs(T @ T0.domain_basis - T0.images).max() <= 1e-10
    assert _real_minus_one_gap(T) > 1e-6


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 8), st.data())
def test_extension_property(N, data):
    k = data.draw(st.integers(1, N))
    seed = data.draw(st.integers(0, 10**6))
    T0 = random_partial_isometry(N, k, seed)
    check_extension(T0, extend_isometry(T0, seed=seed))


def test_extension_fixtures():
    T = extend_isometry(PartialIsometry(np.eye(3)[:, :2], np.eye(3)[:, :2]))
    assert np.allclose(T, np.eye(3), atol=1e-12)
    T = extend_isometry(PartialIsometry([[1.0], [0.0]], [[0.0], [1.0]]))
    assert np.allclose(T, [[0, -1], [1, 0]], atol=1e-12)
    assert np.allclose(np.sort_complex(np.linalg.eigvals(T)), [-1j, 1j])
    T = extend_isometry(PartialIsometry(np.eye(4)[:, :1], np.eye(4)[:, :1]))
    assert _real_minus_one_gap(T) > 1e-6


def test_extension_preconditions():
    with pytest.raises(FlatFormError, match="-1"):
        extend_isometry(PartialIsometry([[1.0], [0.0]], [[-1.0], [0.0]]))
    with pytest.raises(FlatFormError, match="Gram"):
        extend_isometry(PartialIsometry([[1.0], [0.0]], [[2.0], [0.0]]))


def test_cayley_fixtures():
    assert np.abs(cayley_skew(np.eye(3))).max() == 0
    K = cayley_skew(np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert np.allclose(K, [[0, 1], [-1, 0]], atol=1e-15)
    with pytest.raises(FlatFormError):
        cayley_skew(-np.eye(2))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10**6))
def test_cayley_round_trip(N, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((N, N))
    T = inverse_cayley(A - A.T)
    K = cayley_skew(T)
    assert np.abs(K + K.T).max() <= 1e-10
    assert np.abs(inverse_cayley(K) - T).max() <= 1e-9


# -- recovery and rigidity --------------------------------------------------------------

@pytest.mark.parametrize("axes", [(1, 1.2, 1.5, 1.9, 2.4), (1, 1.2, 1.5, 1.9, 2.4, 2.8)])
def test_recovery_matches_closed_form(axes):
    e = instantiate("ellipsoid", axes=axes)
    m = len(axes)
    for seed in range(3):
        data = ConformalKillingData.random(m, seed=seed)
        fr = evaluate_frame(e.chart, e.chart.sample(1, seed)[0])
        be = associated_pair(fr, make_conformal_killing(data))
        cert = recover_triviality_from_null_theta(fr, be)
        ref = closed_form_certificate(fr, data, be)
        assert np.abs(cert.C[0] - ref.C[0]).max() <= 1e-6
        assert np.abs(cert.delta[0] - ref.delta[0]).max() <= 1e-6
        assert cert.residual_beta <= 1e-7
        assert cert.trivial


def test_recovery_of_zero_bending():
    e = instantiate("ellipsoid", axes=(1, 1.2, 1.5, 1.9, 2.4))
    fr = evaluate_frame(e.chart, e.chart.sample(1, 0)[0])
    cert = recover_triviality_from_null_theta(fr, associated_pair(fr, e.bendings["zero"]))
    assert np.abs(cert.C[0]).max() < 1e-12 and np.abs(cert.delta[0]).max() < 1e-12


def test_recovery_rejects_the_sphere():
    e = instantiate("sphere", n=5)
    fr = evaluate_frame(e.chart, e.chart.sample(1, 0)[0])
    with pytest.raises(FlatFormError, match="nu_1"):
        recover_triviality_from_null_theta(fr, associated_pair(fr, e.bendings["rotation"]))


def test_rigidity_verdicts():
    e = instantiate("ellipsoid", axes=(1, 1.2, 1.5, 1.9, 2.4, 2.8))
    fr = evaluate_frame(e.chart, e.chart.sample(1, 0)[0])
    be = associated_pair(fr, e.bendings["conformal_killing"])
    assert rigidity_check(fr, be).verdict == "trivial with certificate"
    d = np.random.default_rng(0).standard_normal(be.beta.shape)
    assert rigidity_check(fr, be.perturbed(d_beta=d)).verdict == "not a bending-consistent pair"
    s = instantiate("sphere", n=5)
    fs = evaluate_frame(s.chart, s.chart.sample(1, 0)[0])
    assert rigidity_check(fs, associated_pair(fs, s.bendings["rotation"])).verdict \
        == "hypotheses not met"
    with pytest.raises(FlatFormError, match="dimension"):
        small = instantiate("ellipsoid")
        f3 = evaluate_frame(small.chart, small.chart.sample(1, 0)[0])
        rigidity_check(f3, associated_pair(f3, small.bendings["zero"]))
