"""Trivial bendings: closed-form certificates and certificate fitting.

A certificate is a skew operator C on the normal space and a normal vector
delta with beta = C alpha - <,> delta and E(X, xi) = -(nabla-perp_X C) xi,
plus an affine fit rho = <f, v> + lam.

Matrix convention: ``C[b, a]`` is the xi_b component of C xi_a.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bending import BendingEval, associated_pair
from .gallery import ConformalKillingData, conformal_killing
from .geometry import GeometryError, PointFrame, evaluate_frame
from .jets import MultiJet, jet_einsum

TAU_TRIV = 1e-6


class TrivialityError(ValueError):
    pass


@dataclass
class TrivialityCertificate:
    C: list                    # per point (p, p)
    dC: list                   # per point (n, p, p): coordinate partials of C components
    delta: list                # per point (p,)
    residual_beta: float
    residual_E: float
    rho_affine: tuple          # (v_hat, lam_hat)
    residual_rho: float
    scale: float
    tau: float = TAU_TRIV
    notes: list = field(default_factory=list)

    @property
    def trivial(self) -> bool:
        # NaN marks a residual that the producing routine does not check
        lim = self.tau * self.scale
        checked = [r for r in (self.residual_beta, self.residual_E, self.residual_rho)
                   if not np.isnan(r)]
        return max(checked) <= lim

    def to_dict(self) -> dict:
        r = lambda a: np.round(np.asarray(a, dtype=float), 12).tolist()  # noqa: E731
        return {
            "verdict": "trivial" if self.trivial else "nontrivial",
            "residual_beta": self.residual_beta, "residual_E": self.residual_E,
            "residual_rho": self.residual_rho, "scale": self.scale, "tau": self.tau,
            "C": [r(c) for c in self.C], "delta": [r(d) for d in self.delta],
            "v_hat": r(self.rho_affine[0]), "lambda_hat": float(self.rho_affine[1]),
            "notes": list(self.notes),
        }


def make_conformal_killing(data: ConformalKillingData):
    return conformal_killing(data)


def covariant_C(frame: PointFrame, C: np.ndarray, dC: np.ndarray) -> np.ndarray:
    """nablaC[k, b, a]: xi_b component of (nabla-perp_k C) xi_a."""
    cn = frame.conn
    return dC + np.einsum("ca,kcb->kba", C, cn) - np.einsum("kac,bc->kba", cn, C)


def beta_from(frame: PointFrame, C: np.ndarray, delta: np.ndarray) -> np.ndarray:
    return np.einsum("ba,aij->bij", C, frame.alpha) - np.einsum("ij,b->bij", frame.g, delta)


def E_from(frame: PointFrame, C, dC) -> np.ndarray:
    """E[i, a, b] = -(nabla_i C)[b, a]."""
    return -np.einsum("iba->iab", covariant_C(frame, C, dC))


def _closed_form_jets(frame: PointFrame, data: ConformalKillingData):
    if not frame.is_euclidean:
        raise TrivialityError("closed-form certificates need a Euclidean ambient")
    v, D = np.array(data.v), data.D
    xi, f = frame.xi_jet, frame.f_jet.truncate(2)
    xv = (xi * v).sum(axis=-1)                               # <xi_a, v>
    xf = jet_einsum("am,m->a", xi, f)                        # <xi_a, f>
    xDx = jet_einsum("bm,am->ba", xi, _linear(D, xi))        # xi_b . D xi_a
    C = jet_einsum("a,b->ba", xv, xf) - jet_einsum("a,b->ba", xf, xv) + xDx
    return C, xv


def _linear(M, a):
    from .jets import linear
    return linear(M, a)


def closed_form_certificate(frame: PointFrame, data: ConformalKillingData,
                            be: Optional[BendingEval] = None) -> TrivialityCertificate:
    """Certificate read off the conformal Killing data; residuals against ``be``
    (computed from the data if not given)."""
    if be is None:
        be = associated_pair(frame, conformal_killing(data))
    Cj, dj = _closed_form_jets(frame, data)
    C, dC, delta = Cj.value, Cj.gradient().value, dj.value
    rb = float(np.abs(be.beta - beta_from(frame, C, delta)).max(initial=0.0))
    rE = float(np.abs(be.E - E_from(frame, C, dC)).max(initial=0.0))
    rr = abs(be.rho - (float(frame.f @ np.array(data.v)) + data.lam))
    return TrivialityCertificate([C], [dC], [delta], rb / be.scale, rE / be.scale,
                                 (np.array(data.v), data.lam), rr / be.scale, be.scale)


def constancy_residuals(frame: PointFrame, be: BendingEval, delta_jet: MultiJet):
    """(|<alpha, delta> - Hess rho|, |nabla-perp delta + alpha(., grad rho)|), relative."""
    d = delta_jet.value
    c1 = np.einsum("aij,a->ij", frame.alpha * frame.eps[:, None, None], d) - be.hess
    nd = delta_jet.gradient().value + np.einsum("a,kab->kb", d, frame.conn)
    c2 = nd + np.einsum("bkl,l->kb", frame.alpha, be.grad_rho)
    return float(np.abs(c1).max()) / be.scale, float(np.abs(c2).max(initial=0.0)) / be.scale


# -- fitting --------------------------------------------------------------------

def _design(frame: PointFrame, isometric: bool):
    """Linear map (C lower triangle, delta) -> beta components over i <= j."""
    p, n = frame.p, frame.n
    low = list(zip(*np.tril_indices(p, -1)))
    iu = np.triu_indices(n)
    cols = []
    for (b, a) in low:
        C = np.zeros((p, p))
        C[b, a], C[a, b] = 1.0, -1.0
        cols.append(beta_from(frame, C, np.zeros(p))[:, iu[0], iu[1]].ravel())
    if not isometric:
        for b in range(p):
            d = np.zeros(p)
            d[b] = 1.0
            cols.append(beta_from(frame, np.zeros((p, p)), d)[:, iu[0], iu[1]].ravel())
    M = np.array(cols).T if cols else np.zeros((p * len(iu[0]), 0))
    return M, low, iu


def _unpack(x, low, p, isometric):
    C = np.zeros((p, p))
    for k, (b, a) in enumerate(low):
        C[b, a], C[a, b] = x[k], -x[k]
    delta = np.zeros(p) if isometric else x[len(low):]
    return C, delta


def _pointwise_fit(frame, be, isometric, tau_rank=1e-10):
    M, low, iu = _design(frame, isometric)
    rhs = be.beta[:, iu[0], iu[1]].ravel()
    if M.shape[0] < M.shape[1]:
        raise TrivialityError(
            f"underdetermined fit: {M.shape[0]} equations for {M.shape[1]} unknowns")
    if M.shape[1] == 0:
        return np.zeros((frame.p, frame.p)), np.zeros(frame.p), float(np.abs(rhs).max()), []
    U, sv, Vt = np.linalg.svd(M, full_matrices=False)
    thr = tau_rank * max(sv.max(initial=0.0), 1.0)
    keep = sv > thr
    x = Vt[keep].T @ ((U[:, keep].T @ rhs) / sv[keep])
    null = [Vt[k] for k in np.where(~keep)[0]]
    if any(np.abs(v[len(low):]).max(initial=0.0) > 1e-8 for v in null):
        raise TrivialityError("underdetermined fit: delta is not determined by beta")
    C, delta = _unpack(x, low, frame.p, isometric)
    res = float(np.abs(M @ x - rhs).max(initial=0.0))
    nullC = [_unpack(v, low, frame.p, True)[0] for v in null]
    return C, delta, res, nullC


def _cluster_offsets(chart, h):
    lo, hi = (np.asarray(b, dtype=float) for b in chart.domain)
    return h * (hi - lo)


def fit_triviality(chart, bend, points, h: float = 1e-3, tau: float = TAU_TRIV,
                   isometric: bool = False) -> TrivialityCertificate:
    """Fit a triviality certificate to the bending at the given chart points.

    For each point a 5-point cluster along every coordinate line (spacing
    ``h`` times the domain width) gives the first partials of C through an
    exact degree-4 interpolant. ``isometric=True`` forces delta = 0.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) == 0:
        raise TrivialityError("need at least one sample point")
    steps = _cluster_offsets(chart, h)
    offs = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    # derivative at 0 of the degree-4 interpolant through offs: fixed weights
    V = np.vander(offs, 5, increasing=True)
    dweights = np.linalg.solve(V.T, np.array([0, 1.0, 0, 0, 0]))
    Cs, dCs, deltas, notes = [], [], [], []
    rb = rE = 0.0
    scale = 1.0
    rows, rhs = [], []
    for u in points:
        fr = evaluate_frame(chart, u)
        be = associated_pair(fr, bend)
        if fr.p == 0:
            raise TrivialityError("codimension must be at least 1")
        scale = max(scale, be.scale)
        C, delta, res, nullC = _pointwise_fit(fr, be, isometric)
        rb = max(rb, res / be.scale)
        dC = np.zeros((fr.n,) + C.shape)
        for k in range(fr.n):
            vals = []
            for s in offs:
                if s == 0:
                    vals.append(C)
                    continue
                uk = u.copy()
                uk[k] += s * steps[k]
                try:
                    frk = evaluate_frame(chart, uk, seed_order=fr.seed_order)
                except GeometryError as exc:
                    raise TrivialityError(f"cluster point failed: {exc}") from None
                bek = associated_pair(frk, bend)
                Ck, dk, _, _ = _pointwise_fit(frk, bek, isometric)
                vals.append(Ck)
                _affine_rows(frk, bek, dk, rows, rhs, isometric)
            dC[k] = np.tensordot(dweights, np.array(vals), axes=1) / steps[k]
        if nullC:
            C, dC = _null_correction(fr, be, C, dC, nullC)
            notes.append(f"C fixed up to a {len(nullC)}-dim null space at {u.tolist()}")
        rE = max(rE, float(np.abs(be.E - E_from(fr, C, dC)).max(initial=0.0)) / be.scale)
        _affine_rows(fr, be, delta, rows, rhs, isometric)
        Cs.append(C)
        dCs.append(dC)
        deltas.append(delta)
    A, y = np.array(rows), np.array(rhs)
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    if isometric:
        v_hat, lam = np.zeros(A.shape[1]), 0.0
        rr = float(np.abs(y).max())
    else:
        v_hat, lam = sol[:-1], float(sol[-1])
        rr = float(np.abs(A @ sol - y).max())
    return TrivialityCertificate(Cs, dCs, deltas, rb, rE, (v_hat, lam), rr / scale, scale,
                                 tau, notes)


def _affine_rows(fr, be, delta, rows, rhs, isometric):
    """Equations rho = <f, v> + lam, d_i rho = <f_i, v>, <xi_a, v> = delta_a."""
    if isometric:
        rows.append(np.zeros(1))
        rhs.append(be.rho)
        for i in range(fr.n):
            rows.append(np.zeros(1))
            rhs.append(be.drho[i])
        return
    rows.append(np.append(fr.f, 1.0))
    rhs.append(be.rho)
    for i in range(fr.n):
        rows.append(np.append(fr.df[i], 0.0))
        rhs.append(be.drho[i])
    for a in range(fr.p):
        rows.append(np.append(fr.xi[a], 0.0))
        rhs.append(delta[a])


def _null_correction(fr, be, C, dC, nullC):
    """Pick values and partials along the undetermined directions of C that best
    match E = -nabla C."""
    n = fr.n
    base = be.E - E_from(fr, C, dC)                       # what the correction must produce
    cols = []
    for N in nullC:                                       # value part: connection terms
        cols.append(E_from(fr, N, np.zeros((n,) + N.shape)).ravel())
    for N in nullC:                                       # derivative part per direction
        for k in range(n):
            dN = np.zeros((n,) + N.shape)
            dN[k] = N
            cols.append(-np.einsum("iba->iab", dN).ravel())
    M = np.array(cols).T
    x, *_ = np.linalg.lstsq(M, base.ravel(), rcond=None)
    q = len(nullC)
    C = C + sum(t * N for t, N in zip(x[:q], nullC))
    dC = dC.copy()
    for r, N in enumerate(nullC):
        for k in range(n):
            dC[k] = dC[k] + x[q + r * n + k] * N
    return C, dC
