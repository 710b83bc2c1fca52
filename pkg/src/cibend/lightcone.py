"""Light-cone lift of a Euclidean immersion and the hat-tensor identities.

The lift is F = Psi o f with Psi(x) = v + C x - |x|^2 w / 2, which lands in
the slice <., w> = 1 of the light cone of Lorentz space (metric
diag(-1, 1, ..., 1)).  Normal components of F are taken over the
non-orthonormal basis

    N_a = Psi_* xi_a (a < p),   N_p = F,   N_{p+1} = w,

whose pairing matrix is diag(eps) plus the hyperbolic block [[0, 1], [1, 0]];
its dual basis is written down explicitly (F and w are dual to each other).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import expm

from .bending import BendingEval
from .geometry import AmbientSpace, GeometryError, ImmersionChart, PointFrame, evaluate_frame
from .jets import MultiJet, jet_einsum, linear, stack


class LightConeError(ValueError):
    pass


def lorentz_metric(dim: int) -> np.ndarray:
    return np.diag(AmbientSpace(dim, 1).signs)


@dataclass(frozen=True)
class LightConeModel:
    m: int
    v: np.ndarray
    w: np.ndarray
    C_iso: np.ndarray

    @classmethod
    def standard(cls, m: int) -> "LightConeModel":
        v = np.zeros(m + 2)
        v[:2] = 0.5
        w = np.zeros(m + 2)
        w[:2] = (-1.0, 1.0)
        return cls(m, v, w, np.eye(m + 2)[:, 2:])

    @classmethod
    def random(cls, m: int, seed: int, spread: float = 0.5) -> "LightConeModel":
        """The standard model moved by a random Lorentz transformation and a
        random rotation of the Euclidean factor."""
        rng = np.random.default_rng(seed)
        G = lorentz_metric(m + 2)
        S = rng.standard_normal((m + 2, m + 2)) * spread
        lor = expm(G @ (S - S.T))
        Q, _ = np.linalg.qr(rng.standard_normal((m, m)))
        base = cls.standard(m)
        return cls(m, lor @ base.v, lor @ base.w, lor @ base.C_iso @ Q)

    @property
    def metric(self) -> np.ndarray:
        return lorentz_metric(self.m + 2)

    def inner(self, a, b):
        return AmbientSpace(self.m + 2, 1).inner(a, b)

    def invariant_residual(self) -> float:
        G = self.metric
        ip = lambda a, b: float(a @ G @ b)  # noqa: E731
        r = [abs(ip(self.v, self.v)), abs(ip(self.w, self.w)), abs(ip(self.v, self.w) - 1)]
        r.append(float(np.abs(self.C_iso.T @ G @ self.C_iso - np.eye(self.m)).max()))
        r.append(float(np.abs(self.C_iso.T @ G @ np.stack([self.v, self.w], 1)).max()))
        return max(r)

    def validate(self, tol: float = 1e-12) -> None:
        if self.v.shape != (self.m + 2,) or self.w.shape != (self.m + 2,):
            raise LightConeError("v and w must have m+2 components")
        if self.C_iso.shape != (self.m + 2, self.m):
            raise LightConeError("C_iso must be an (m+2) x m matrix")
        r = self.invariant_residual()
        if r > tol:
            raise LightConeError(f"invalid light-cone model (invariant residual {r:.2e})")

    def push(self, x, vec):
        """Psi_* at the point x applied to vectors along the last axis."""
        vec = np.asarray(vec, dtype=float)
        return vec @ self.C_iso.T - np.einsum("...m,m->...", vec, x)[..., None] * self.w


def psi_embed(model: LightConeModel, x, jets: bool = False):
    """Psi(x); ``x`` may be an m-vector or a jet of shape (m,).  With
    ``jets=True`` a plain vector is promoted to a jet in its own coordinates."""
    if not isinstance(x, MultiJet):
        x = np.asarray(x, dtype=float)
        if x.shape != (model.m,):
            raise LightConeError(f"point must have {model.m} coordinates")
        if not jets:
            return model.v + model.C_iso @ x - 0.5 * float(x @ x) * model.w
        x = MultiJet.variables(x, 3)
    sq = (x * x).sum()
    return linear(model.C_iso, x) + (model.v - sq * 0.5 * model.w)


def psi_checks(model: LightConeModel, x) -> dict:
    """Residuals of the embedding properties of Psi at x."""
    model.validate()
    P = psi_embed(model, x, jets=True)
    G = model.metric
    val = P.value
    dP = P.gradient().value                                  # (m, m+2)
    d2P = P.gradient().gradient().value                      # (m, m, m+2)
    gram = dP @ G @ dP.T
    tang = np.einsum("ijs,ks->ijk", d2P @ G, dP)             # tangent components (Gram = I)
    sff = d2P - np.einsum("ijk,ks->ijs", tang, dP)
    target = -np.einsum("ij,s->ijs", np.eye(model.m), model.w)
    return {
        "norm": abs(float(val @ G @ val)),
        "pairing": abs(float(val @ G @ model.w) - 1.0),
        "isometry": float(np.abs(gram - np.eye(model.m)).max()),
        "sff": float(np.abs(sff - target).max()),
    }


def lift_chart(model: LightConeModel, chart: ImmersionChart) -> ImmersionChart:
    if chart.ambient.neg_index != 0:
        raise LightConeError("the light-cone lift needs a Euclidean chart")
    if chart.ambient.dim != model.m:
        raise LightConeError(f"model is for R^{model.m}, chart lives in R^{chart.ambient.dim}")
    base = chart.func
    return ImmersionChart(chart.nvars, AmbientSpace(model.m + 2, 1),
                          lambda x: psi_embed(model, base(x)), chart.domain,
                          "lift(" + chart.name + ")", dict(chart.params))


@dataclass
class LiftFrame:
    model: LightConeModel
    base: PointFrame
    lifted: PointFrame
    N_jet: MultiJet            # (p+2, m+2), order 2: Psi_* xi_a, F, w
    pairing: np.ndarray        # <N_A, N_B>
    dual: np.ndarray           # dual[A]: ambient vector with <N_B, dual[A]> = delta_AB
    alpha_F: np.ndarray        # (n, n, m+2) from the lifted frame
    alpha_F_pushed: np.ndarray  # (n, n, m+2) from Psi_* alpha - g w
    shape_F: np.ndarray        # (A^F_F)^l_i
    shape_w: np.ndarray
    dual_route_residual: float
    shape_F_residual: float
    shape_w_residual: float
    pairing_residual: float

    @property
    def scale(self) -> float:
        return self.base.scale


def _normal_basis(model: LightConeModel, base: PointFrame) -> MultiJet:
    f = base.f_jet.truncate(2)
    rows = []
    if base.p:
        xi = base.xi_jet
        proj = jet_einsum("am,m->a", xi, f).reshape(base.p, 1)
        pushed = linear(model.C_iso, xi) - proj * model.w[None, :]
        rows += [pushed[a] for a in range(base.p)]
    rows += [psi_embed(model, f), MultiJet.constant(model.w, base.n, 2)]
    return stack(rows, axis=0)


def lift_frame(model: LightConeModel, chart: ImmersionChart, u, seed_order=None) -> LiftFrame:
    model.validate()
    base = evaluate_frame(chart, u, seed_order=seed_order)
    if not base.is_euclidean:
        raise LightConeError("the light-cone lift needs a Euclidean chart")
    lifted = evaluate_frame(lift_chart(model, chart), u)
    G = model.metric
    p = base.p
    N = _normal_basis(model, base)
    Nv = N.value
    pairing = Nv @ G @ Nv.T
    expected = np.zeros((p + 2, p + 2))
    expected[:p, :p] = np.diag(base.eps)
    expected[p, p + 1] = expected[p + 1, p] = 1.0
    # explicit dual basis: eps_a N_a for the pushed frame, w for F and F for w
    dual = np.concatenate([Nv[:p] * base.eps[:, None], Nv[p + 1:p + 2], Nv[p:p + 1]])

    aF = lifted.alpha_vec
    pushed = model.push(base.f, base.alpha_vec) - np.einsum("ij,s->ijs", base.g, model.w)
    lowF = np.einsum("ijs,s->ij", aF @ G, Nv[p])
    loww = np.einsum("ijs,s->ij", aF @ G, model.w)
    shape_F, shape_w = base.ginv @ lowF, base.ginv @ loww
    n = base.n
    return LiftFrame(
        model=model, base=base, lifted=lifted, N_jet=N, pairing=pairing, dual=dual,
        alpha_F=aF, alpha_F_pushed=pushed, shape_F=shape_F, shape_w=shape_w,
        dual_route_residual=float(np.abs(aF - pushed).max()) / base.scale,
        shape_F_residual=float(np.abs(shape_F + np.eye(n)).max()),
        shape_w_residual=float(np.abs(shape_w).max()),
        pairing_residual=float(np.abs(pairing - expected).max()),
    )


# ---------------------------------------------------------------------------
# hat tensors
# ---------------------------------------------------------------------------

@dataclass
class HatPair:
    """Components over the F-normal basis: ``beta_hat[A, i, j]``,
    ``E_hat[i, A, B]`` (N_B-component of E_hat(d_i, N_A)), ``alpha_F[A, i, j]``."""
    beta_hat_jet: MultiJet
    E_hat_jet: MultiJet
    alpha_F_jet: MultiJet
    conn_F: np.ndarray         # conn_F[i, A, B]: N_B-component of nabla'-perp_i N_A
    pairing: np.ndarray

    @property
    def beta_hat(self) -> np.ndarray:
        return self.beta_hat_jet.value

    @property
    def E_hat(self) -> np.ndarray:
        return self.E_hat_jet.value

    @property
    def alpha_F(self) -> np.ndarray:
        return self.alpha_F_jet.value

    def symmetry_residual(self) -> float:
        b = self.beta_hat
        return float(np.abs(b - np.swapaxes(b, 1, 2)).max())

    def anti_residual(self) -> float:
        low = self.E_hat @ self.pairing
        return float(np.abs(low + np.swapaxes(low, 1, 2)).max())

    def E_on_F(self, p: int) -> float:
        return float(np.abs(self.E_hat[:, p, :]).max())

    def perturbed(self, d_beta_hat) -> "HatPair":
        d = np.asarray(d_beta_hat, dtype=float)
        d = (d + np.swapaxes(d, 1, 2)) / 2
        j = self.beta_hat_jet
        return replace(self, beta_hat_jet=j + MultiJet.constant(d, j.nvars, j.order))


def hat_pair(lift: LiftFrame, be: BendingEval) -> HatPair:
    base = lift.base
    if be.frame is not base and not np.allclose(be.frame.u, base.u):
        raise LightConeError("bending evaluated at a different point than the lift")
    n, p = base.n, base.p
    G = lift.model.metric
    N = lift.N_jet
    Nv = N.value
    dual_jet = stack([N[a] * base.eps[a] for a in range(p)] + [N[p + 1], N[p]], axis=0)

    d2F = lift.lifted.f_jet.gradient().gradient()            # (n, n, m+2), order 1
    alpha_F = jet_einsum("ijs,As->Aij", d2F, dual_jet.truncate(1) * np.diag(G))

    o1 = 1
    zeros = lambda *s: MultiJet.constant(np.zeros(s), n, o1)  # noqa: E731
    beta_hat = stack([be.beta_jet[a] for a in range(p)]
                     + [-be.hess_jet, zeros(n, n)], axis=0)

    grad = be.grad_jet.truncate(o1)
    psi = jet_einsum("bil,l->ib", base.alpha_jet, grad)      # alpha(d_i, grad rho) components
    rows = []
    for a in range(p):
        # E_hat(d_i, N_a) = sum_b E[i,a,b] N_b - <alpha(d_i, grad rho), xi_a> F
        rows.append(stack([be.E_jet[:, a, b] for b in range(p)]
                          + [-psi[:, a] * base.eps[a], zeros(n)], axis=1))
    rows.append(zeros(n, p + 2))                                  # E_hat(., F) = 0
    rows.append(stack([psi[:, b] for b in range(p)] + [zeros(n), zeros(n)], axis=1))
    E_hat = stack(rows, axis=1)                                   # (n, p+2, p+2)

    dN = N.gradient().value                                       # (n, p+2, m+2)
    conn_F = np.einsum("iAs,Bs->iAB", dN @ G, dual_jet.value)
    return HatPair(beta_hat_jet=beta_hat, E_hat_jet=E_hat, alpha_F_jet=alpha_F,
                   conn_F=conn_F, pairing=Nv @ G @ Nv.T)


def _gauss(fr: PointFrame, hp: HatPair) -> np.ndarray:
    """[i,j,k,l]: <A_{bh(Y,Z)}X + Bh_{aF(Y,Z)}X - (X<->Y), d_l> with X,Y,Z = d_i,d_j,d_k."""
    a, b, P = hp.alpha_F, hp.beta_hat, hp.pairing
    t = (np.einsum("Ail,AB,Bjk->ijkl", a, P, b) + np.einsum("Ail,AB,Bjk->ijkl", b, P, a))
    return t - np.swapaxes(t, 0, 1)


def _nabla_beta(fr: PointFrame, hp: HatPair) -> np.ndarray:
    G, b = fr.gamma, hp.beta_hat
    db = hp.beta_hat_jet.gradient().value
    return (db - np.einsum("lki,Alj->kAij", G, b) - np.einsum("lkj,Ail->kAij", G, b)
            + np.einsum("Bij,kBA->kAij", b, hp.conn_F))


def _nabla_E(fr: PointFrame, hp: HatPair) -> np.ndarray:
    G, E, c = fr.gamma, hp.E_hat, hp.conn_F
    dE = hp.E_hat_jet.gradient().value
    return (dE - np.einsum("lki,lAB->kiAB", G, E) - np.einsum("kAC,iCB->kiAB", c, E)
            + np.einsum("iAC,kCB->kiAB", E, c))


def _codazzi(fr: PointFrame, hp: HatPair) -> np.ndarray:
    nb, a, E = _nabla_beta(fr, hp), hp.alpha_F, hp.E_hat
    lhs = np.einsum("iBjk->ijkB", nb) - np.einsum("jBik->ijkB", nb)
    rhs = np.einsum("Aik,jAB->ijkB", a, E) - np.einsum("Ajk,iAB->ijkB", a, E)
    return lhs - rhs


def _ricci(fr: PointFrame, hp: HatPair) -> np.ndarray:
    """[i,j,A,B]: N_B-component of the Ricci-type identity with zeta = N_A."""
    nE = _nabla_E(fr, hp)
    a, b, P, gi = hp.alpha_F, hp.beta_hat, hp.pairing, fr.ginv
    A_ops = np.einsum("lk,Ckj,CA->Alj", gi, a, P)
    B_ops = np.einsum("lk,Ckj,CA->Alj", gi, b, P)
    lhs = nE - np.einsum("jiAB->ijAB", nE)
    rhs = (np.einsum("Bil,Alj->ijAB", b, A_ops) - np.einsum("Ali,Blj->ijAB", A_ops, b)
           + np.einsum("Bil,Alj->ijAB", a, B_ops) - np.einsum("Ali,Blj->ijAB", B_ops, a))
    return lhs - rhs


def _hess_identity(fr: PointFrame, be: BendingEval) -> float:
    nh = be.nabla_hess                                       # [k, i, j]
    lhs = np.einsum("jik->ijk", nh) - np.einsum("ijk->ijk", nh)   # (nabla_Y H)(X,Z) - (nabla_X H)(Y,Z)
    Rg = np.einsum("jikl,k,lz->ijz", fr.riemann, be.grad_rho, fr.g)
    al = fr.alpha * fr.eps[:, None, None]
    ag = np.einsum("bil,l->bi", fr.alpha, be.grad_rho)       # alpha(d_i, grad rho)
    via_alpha = (np.einsum("bjz,bi->ijz", al, ag) - np.einsum("bj,biz->ijz", ag * fr.eps[:, None],
                                                               fr.alpha))
    return max(float(np.abs(lhs - Rg).max()), float(np.abs(lhs - via_alpha).max()))


def hat_system_residual(model: LightConeModel, lift: LiftFrame, be: BendingEval,
                        hat: HatPair = None):
    """(gauss, codazzi, ricci_xi, ricci_w, ricci_F, hess) residuals relative to scale.

    ``hat`` defaults to the hat pair built from ``be``; pass a modified one to
    test sensitivity.
    """
    if lift.model is not model:
        raise LightConeError("lift was computed with a different model")
    fr = lift.base
    hp = hat_pair(lift, be) if hat is None else hat
    p, sc = fr.p, be.scale
    mx = lambda t: float(np.abs(t).max(initial=0.0)) / sc  # noqa: E731
    ric = _ricci(fr, hp)
    return (mx(_gauss(fr, hp)), mx(_codazzi(fr, hp)), mx(ric[:, :, :p]),
            mx(ric[:, :, p + 1]), mx(ric[:, :, p]), _hess_identity(fr, be) / sc)


__all__ = ["LightConeError", "LightConeModel", "psi_embed", "psi_checks", "lift_chart",
           "LiftFrame", "lift_frame", "HatPair", "hat_pair", "hat_system_residual",
           "lorentz_metric", "GeometryError"]
