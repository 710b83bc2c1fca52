"""Associated tensors of a conformal infinitesimal bending and their residuals.

Component conventions (coordinate basis d_i, normal frame xi_a):

* ``L[l]``          ambient vector L(d_l) = T_* d_l - rho f_* d_l
* ``lxi[l, a]``     <L(d_l), xi_a>
* ``Y[a, k]``       k-th coordinate of the tangent vector Y(xi_a)
* ``beta[a, i, j]`` xi_a-component of beta(d_i, d_j)
* ``E[i, a, b]``    xi_b-component of E(d_i, xi_a)
* ``hess[i, j]``    Hess rho(d_i, d_j)
* ``nabla_beta[k, a, i, j]``, ``nabla_E[k, i, a, b]``, ``nabla_hess[k, i, j]``
  covariant derivative along d_k of the tensors above.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .geometry import PointFrame
from .jets import MultiJet, jet_einsum


class BendingError(ValueError):
    pass


@dataclass
class BendingEval:
    frame: PointFrame
    T_jet: MultiJet
    rho_jet: MultiJet
    L_jet: MultiJet          # (n, m), order 2
    lxi_jet: MultiJet        # (n, p), order 2
    beta_jet: MultiJet       # (p, n, n), order 1
    E_jet: MultiJet          # (n, p, p), order 1
    hess_jet: MultiJet       # (n, n), order 1
    grad_jet: MultiJet       # (n,) gradient vector field of rho, order 2
    B: np.ndarray            # (n, n, m) ambient values of B(d_i, d_j)
    Y: np.ndarray
    beta: np.ndarray
    E: np.ndarray
    rho: float
    drho: np.ndarray
    grad_rho: np.ndarray
    hess: np.ndarray
    H: np.ndarray            # H[l, i]: l-th coordinate of nabla_{d_i} grad rho
    B_ops: np.ndarray        # B_ops[a, l, i]: (B_{xi_a})^l_i
    nabla_beta: np.ndarray
    nabla_E: np.ndarray
    nabla_hess: np.ndarray
    scale: float
    bending_residual: float
    inf_residual: float
    tam_residual: float
    symmetry_residual: float
    anti_residual: float

    @property
    def is_bending(self) -> bool:
        return self.bending_residual <= 1e-8 * self.scale

    def perturbed(self, d_beta=None, d_E=None) -> "BendingEval":
        """Copy with beta and/or E shifted by tensors whose coordinate
        components are constant near the point; derived quantities are
        recomputed."""
        fr = self.frame
        beta_jet, E_jet = self.beta_jet, self.E_jet
        if d_beta is not None:
            d_beta = np.asarray(d_beta, dtype=float)
            d_beta = (d_beta + np.swapaxes(d_beta, 1, 2)) / 2
            beta_jet = beta_jet + MultiJet.constant(d_beta, fr.n, beta_jet.order)
        if d_E is not None:
            E_jet = E_jet + MultiJet.constant(np.asarray(d_E, dtype=float), fr.n, E_jet.order)
        out = replace(self, beta_jet=beta_jet, E_jet=E_jet)
        _fill_derived(out)
        return out


def _bending_form(frame: PointFrame, dT: np.ndarray, rho: float) -> np.ndarray:
    """<T_* d_i, f_* d_j> + <f_* d_i, T_* d_j> - 2 rho g_ij."""
    s = frame.signs
    M = np.einsum("im,jm->ij", dT, frame.df * s)
    return M + M.T - 2.0 * rho * frame.g


def bending_residual(frame: PointFrame, bend, order: int = 1):
    """(max |bending condition|, rho inferred from the trace of the condition).

    ``bend`` is a BendingChart or a ``(T_jet, rho_jet)`` pair evaluated at the
    frame's point.
    """
    T, rho = _jets(frame, bend, order)
    dT = T.gradient().value
    r = float(rho.value)
    res = _bending_form(frame, dT, r)
    M = np.einsum("im,jm->ij", dT, frame.df * frame.signs)
    inferred = float(np.einsum("ij,ij->", frame.ginv, M + M.T)) / (2 * frame.n)
    return float(np.abs(res).max()), inferred


def _jets(frame: PointFrame, bend, order: int):
    if isinstance(bend, tuple):
        T, rho = bend
        if T.nvars != frame.n:
            raise BendingError("bending jets and frame have different variable counts")
        return T.truncate(min(order, T.order)), rho.truncate(min(order, rho.order))
    fj = frame.chart.jet(frame.u, order) if order != 3 else frame.f_jet
    T, rho = bend.func(fj)
    if T.shape != (frame.m,):
        raise BendingError(f"bending field has shape {T.shape}, expected ({frame.m},)")
    return T, rho


def associated_pair(frame: PointFrame, bend) -> BendingEval:
    """Associated tensors, covariant derivatives and invariant residuals."""
    T, rho = _jets(frame, bend, 3)
    fr = frame
    s, eps = fr.signs, fr.eps
    dT = T.gradient()                                       # (n, m) order 2
    L = dT - fr.df_jet * rho                                # (n, m) order 2
    if fr.p:
        lxi = jet_einsum("lm,am->la", L, fr.xi_jet * s)     # (n, p) order 2
    else:
        lxi = MultiJet.constant(np.zeros((fr.n, 0)), fr.n, 2)
    dL = L.gradient()                                       # [i, j, m] = d_i L_j, order 1
    Bj = dL - jet_einsum("kij,km->ijm", fr.gamma_jet, L.truncate(1))
    if fr.p:
        beta = jet_einsum("ijm,am->aij", Bj, fr.xi_jet.truncate(1) * s) * eps[:, None, None]
    else:
        beta = MultiJet.constant(np.zeros((0, fr.n, fr.n)), fr.n, 1)
    Yj = -jet_einsum("kl,la->ak", fr.ginv_jet, lxi)         # (p, n) order 2
    # E[i,a,b] = sum_k Y[a,k] alpha[b,i,k] + sum_k A[a,k,i] eps_b lxi[k,b]
    E = (jet_einsum("ak,bik->iab", Yj.truncate(1), fr.alpha_jet)
         + jet_einsum("aki,kb->iab", fr.shape_jet, lxi.truncate(1) * eps))
    drho = rho.gradient()                                   # order 2
    hess = drho.gradient() - jet_einsum("kij,k->ij", fr.gamma_jet, drho.truncate(1))
    grad = jet_einsum("lk,k->l", fr.ginv_jet, drho)

    B = Bj.value
    # tangency identity: <B_ij, f_k> = -sum_a alpha^a_ij lxi[k,a] + d_j rho g_ik - g_ij d_k rho
    dr = drho.value
    lhs = np.einsum("ijm,km->ijk", B, fr.df * s)
    rhs = (-np.einsum("aij,ka->ijk", fr.alpha, lxi.value)
           + np.einsum("j,ik->ijk", dr, fr.g) - np.einsum("ij,k->ijk", fr.g, dr))
    inf = L.value @ (fr.df * s).T

    bv, Ev, hv = beta.value, E.value, hess.value
    scale = max(1.0, float(np.abs(fr.alpha).max(initial=0.0)),
                float(np.abs(bv).max(initial=0.0)), float(np.abs(hv).max()))
    anti = np.einsum("iab,b->iab", Ev, eps) + np.einsum("iba,a->iab", Ev, eps)
    be = BendingEval(
        frame=fr, T_jet=T, rho_jet=rho, L_jet=L, lxi_jet=lxi, beta_jet=beta, E_jet=E,
        hess_jet=hess, grad_jet=grad, B=B, Y=Yj.value, beta=bv, E=Ev,
        rho=float(rho.value), drho=dr, grad_rho=grad.value, hess=hv,
        H=fr.ginv @ hv, B_ops=None, nabla_beta=None, nabla_E=None, nabla_hess=None,
        scale=scale,
        bending_residual=float(np.abs(_bending_form(fr, dT.value, float(rho.value))).max()),
        inf_residual=float(np.abs(inf + inf.T).max()),
        tam_residual=float(np.abs(lhs - rhs).max()) / scale,
        symmetry_residual=float(np.abs(bv - np.swapaxes(bv, 1, 2)).max(initial=0.0)) / scale,
        anti_residual=float(np.abs(anti).max(initial=0.0)) / scale,
    )
    _fill_derived(be)
    return be


def _fill_derived(be: BendingEval) -> None:
    """Values and covariant derivatives that depend on beta, E and Hess."""
    fr = be.frame
    G, cn = fr.gamma, fr.conn
    be.beta, be.E = be.beta_jet.value, be.E_jet.value
    bv, Ev, hv = be.beta, be.E, be.hess
    be.B_ops = np.einsum("lk,akj->alj", fr.ginv, bv * fr.eps[:, None, None])
    db = be.beta_jet.gradient().value                      # [k, a, i, j]
    be.nabla_beta = (db - np.einsum("lki,alj->kaij", G, bv) - np.einsum("lkj,ail->kaij", G, bv)
                     + np.einsum("bij,kba->kaij", bv, cn))
    dE = be.E_jet.gradient().value                         # [k, i, a, b]
    be.nabla_E = (dE - np.einsum("lki,lab->kiab", G, Ev) - np.einsum("kac,icb->kiab", cn, Ev)
                  + np.einsum("iac,kcb->kiab", Ev, cn))
    dh = be.hess_jet.gradient().value
    be.nabla_hess = dh - np.einsum("lki,lj->kij", G, hv) - np.einsum("lkj,il->kij", G, hv)
    be.scale = max(1.0, float(np.abs(fr.alpha).max(initial=0.0)),
                   float(np.abs(bv).max(initial=0.0)), float(np.abs(hv).max()))


def gauss_tensor(fr: PointFrame, beta, hess) -> np.ndarray:
    """G[i,j,k,l]: the first equation of system (S) paired with d_l, X=d_i, Y=d_j, Z=d_k."""
    a, e, g = fr.alpha, fr.eps, fr.g
    ip = lambda A, B, spec: np.einsum(spec, A * e[:, None, None], B)  # noqa: E731
    return (ip(a, beta, "ail,ajk->ijkl") + ip(beta, a, "ail,ajk->ijkl")
            - ip(a, beta, "ajl,aik->ijkl") - ip(beta, a, "ajl,aik->ijkl")
            + np.einsum("jk,il->ijkl", hess, g) - np.einsum("ik,jl->ijkl", g, hess)
            - np.einsum("ik,jl->ijkl", hess, g) + np.einsum("jk,il->ijkl", g, hess))


def codazzi_tensor(fr: PointFrame, be: BendingEval, E=None, psi=None) -> np.ndarray:
    """C[i,j,k,b]: second equation of system (S), xi_b component, X=d_i, Y=d_j, Z=d_k.

    ``psi[i, b]`` replaces the term alpha(X, grad rho) when given.
    """
    E = be.E if E is None else E
    a, g, nb = fr.alpha, fr.g, be.nabla_beta
    if psi is None:
        psi = np.einsum("bil,l->ib", a, be.grad_rho)
    lhs = np.einsum("ibjk->ijkb", nb) - np.einsum("jbik->ijkb", nb)
    rhs = (np.einsum("aik,jab->ijkb", a, E) - np.einsum("ajk,iab->ijkb", a, E)
           + np.einsum("jk,ib->ijkb", g, psi) - np.einsum("ik,jb->ijkb", g, psi))
    return lhs - rhs


def ricci_tensor(fr: PointFrame, be: BendingEval) -> np.ndarray:
    """R[i,j,a,b]: third equation of system (S) with X=d_i, Y=d_j, eta=xi_a, xi_b component."""
    nE, A, Bo, a, b = be.nabla_E, fr.shape_ops, be.B_ops, fr.alpha, be.beta
    lhs = nE - np.einsum("jiab->ijab", nE)
    rhs = (np.einsum("bil,alj->ijab", b, A) - np.einsum("ali,blj->ijab", A, b)
           + np.einsum("bil,alj->ijab", a, Bo) - np.einsum("ali,blj->ijab", Bo, a))
    return lhs - rhs


def system_S_residual(frame: PointFrame, be: BendingEval):
    """(gauss, codazzi, ricci) residuals of system (S), each relative to scale."""
    sc = be.scale
    mx = lambda t: float(np.abs(t).max(initial=0.0)) / sc  # noqa: E731
    return (mx(gauss_tensor(frame, be.beta, be.hess)), mx(codazzi_tensor(frame, be)),
            mx(ricci_tensor(frame, be)))


def hypersurface_tensors(frame: PointFrame, be: BendingEval):
    """(B as a symmetric matrix in an orthonormal tangent basis, gauss, codazzi)."""
    if frame.p != 1:
        raise BendingError(f"hypersurface tensors need codimension 1, got {frame.p}")
    E, g = frame.onb, frame.g
    b_low = be.beta[0] * frame.eps[0]
    Bmat = E.T @ b_low @ E
    r_gauss = float(np.abs(gauss_tensor(frame, be.beta, be.hess)).max()) / be.scale
    # (nabla_i B)_jl - (nabla_j B)_il + (A grad rho)_j g_il - (A grad rho)_i g_jl
    nb = be.nabla_beta[:, 0] * frame.eps[0]
    agr = frame.alpha[0] @ be.grad_rho * frame.eps[0]
    cod = (nb - np.swapaxes(nb, 0, 1) + np.einsum("j,il->ijl", agr, g)
           - np.einsum("i,jl->ijl", agr, g))
    return Bmat, r_gauss, float(np.abs(cod).max()) / be.scale


def variation_check(chart, bend, t_steps: Sequence[float], points, rho_offset: float = 0.0,
                    ) -> float:
    """Max over points and basis pairs of |d/dt|_0 exp(-2 t rho) <F_t* d_i, F_t* d_j>|.

    F_t = f + t T. The derivative is taken by central differences at each
    positive step in ``t_steps`` and Richardson-extrapolated in h^2.
    """
    hs = sorted({abs(float(t)) for t in t_steps if t != 0}, reverse=True)
    if not hs:
        raise BendingError("t_steps must contain nonzero steps")
    s = chart.ambient.signs
    worst = 0.0
    for u in np.atleast_2d(points):
        fj = chart.jet(u, 1)
        T, rho = bend.func(fj)
        df, dT = fj.gradient().value, T.gradient().value
        r = float(rho.value) + rho_offset

        def gamma(t):
            d = df + t * dT
            return np.exp(-2 * t * r) * (d * s) @ d.T

        table = [(gamma(h) - gamma(-h)) / (2 * h) for h in hs]
        for k in range(1, len(hs)):        # Neville extrapolation to h = 0
            ratio = [(hs[i] / hs[i + k]) ** 2 for i in range(len(hs) - k)]
            table = [(ratio[i] * table[i + 1] - table[i]) / (ratio[i] - 1)
                     for i in range(len(table) - 1)]
        worst = max(worst, float(np.abs(table[0]).max()))
    return worst


def admissible_noise(frame: PointFrame, rng, size: float = 1.0) -> np.ndarray:
    """Random E-shaped tensor satisfying the antisymmetry condition, Frobenius
    norm ``size`` in an orthonormal tangent basis."""
    n, p, eps = frame.n, frame.p, frame.eps
    D = rng.standard_normal((n, p, p))
    D = D - np.swapaxes(D, 1, 2)
    D *= size / max(np.linalg.norm(D), 1e-300)
    # xi_b components with <D(X,xi_a), xi_b> skew: component = eps_b * skew
    D = D * eps[None, None, :]
    # orthonormal-basis slots -> coordinate slots
    return np.einsum("ji,jab->iab", np.linalg.inv(frame.onb), D)


def unique_E_residual(frame: PointFrame, be: BendingEval, E_alt) -> float:
    """Smallest relative residual of the generalized Codazzi equation over all psi,
    with E replaced by ``E_alt``."""
    n, p = frame.n, frame.p
    base = codazzi_tensor(frame, be, E=E_alt, psi=np.zeros((n, p)))
    # residual(psi) = base - (g_jk psi[i,b] - g_ik psi[j,b]); linear in psi
    cols = []
    for i0 in range(n):
        for b0 in range(p):
            e = np.zeros((n, p))
            e[i0, b0] = 1.0
            cols.append((np.einsum("jk,ib->ijkb", frame.g, e)
                         - np.einsum("ik,jb->ijkb", frame.g, e)).ravel())
    M = np.array(cols).T
    sol, *_ = np.linalg.lstsq(M, base.ravel(), rcond=None)
    r = base.ravel() - M @ sol
    return float(np.abs(r).max()) / be.scale
