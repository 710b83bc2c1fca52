"""Pointwise submanifold geometry of an immersion given by a jet-valued chart.

Index conventions used throughout the package (coordinate basis d_i):

* ``gamma[k, i, j]``      Christoffel symbol Gamma^k_ij
* ``riemann[i, j, k, l]`` l-component of R(d_i, d_j) d_k, with
  R(X, Y) = nabla_X nabla_Y - nabla_Y nabla_X - nabla_[X,Y]
* ``alpha[a, i, j]``      component of alpha(d_i, d_j) along xi_a
* ``conn[i, a, b]``       coefficient of xi_b in nabla-perp_{d_i} xi_a
* ``shape_ops[a, l, i]``  (A_{xi_a})^l_i
* ``nabla_alpha[k, a, i, j]`` component a of (nabla_k alpha)(d_i, d_j)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .jets import MultiJet, jet_einsum, jet_inv_matrix, jet_recip, jet_sqrt

TAU_RANK = 1e-8
TAU_MULT = 1e-6


class GeometryError(ValueError):
    """Raised for rank-deficient or otherwise unusable chart points."""


@dataclass(frozen=True)
class AmbientSpace:
    dim: int
    neg_index: int = 0

    def __post_init__(self):
        if self.neg_index not in (0, 1):
            raise ValueError("neg_index must be 0 (Euclidean) or 1 (Lorentz)")
        if self.dim < 1:
            raise ValueError("ambient dimension must be positive")

    @property
    def signs(self) -> np.ndarray:
        s = np.ones(self.dim)
        s[:self.neg_index] = -1.0
        return s

    def inner(self, a, b):
        return np.sum(np.asarray(a) * np.asarray(b) * self.signs, axis=-1)


@dataclass(frozen=True)
class ImmersionChart:
    """A chart u -> f(u) producing jets of the ambient coordinates.

    ``func`` receives the coordinate jet (shape ``(n,)``) and returns a jet of
    shape ``(m,)``; it must be built from jet arithmetic only.
    """
    nvars: int
    ambient: AmbientSpace
    func: Callable[[MultiJet], MultiJet]
    domain: tuple
    name: str = "chart"
    params: dict = field(default_factory=dict)

    def jet(self, u, order: int = 3) -> MultiJet:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.nvars,):
            raise GeometryError(f"point must have {self.nvars} coordinates")
        out = self.func(MultiJet.variables(u, order))
        if out.shape != (self.ambient.dim,):
            raise GeometryError(
                f"chart returned shape {out.shape}, expected ({self.ambient.dim},)")
        return out

    def contains(self, u, slack: float = 0.0) -> bool:
        lo, hi = (np.asarray(b, dtype=float) for b in self.domain)
        w = hi - lo
        return bool(np.all(u >= lo - slack * w) and np.all(u <= hi + slack * w))

    def sample(self, count: int, seed: int, margin: float = 0.05) -> np.ndarray:
        """Seeded uniform points inside the domain box, away from its faces."""
        lo, hi = (np.asarray(b, dtype=float) for b in self.domain)
        w = hi - lo
        rng = np.random.default_rng(seed)
        return lo + w * (margin + (1 - 2 * margin) * rng.random((count, self.nvars)))

    def rotated(self, Q: np.ndarray) -> "ImmersionChart":
        """The chart composed with a constant linear map of the ambient space."""
        from .jets import linear
        base = self.func
        return ImmersionChart(self.nvars, self.ambient, lambda x: linear(Q, base(x)),
                              self.domain, self.name + "*Q", dict(self.params))


@dataclass
class PointFrame:
    """First, second and third order geometry of an immersion at one point."""
    chart: ImmersionChart
    u: np.ndarray
    n: int
    m: int
    p: int
    signs: np.ndarray          # ambient metric signs
    eps: np.ndarray            # <xi_a, xi_a>
    seed_order: tuple
    # jets (orders in comments)
    f_jet: MultiJet            # 3
    df_jet: MultiJet           # 2, (n, m)
    g_jet: MultiJet            # 2
    ginv_jet: MultiJet         # 2
    gamma_jet: MultiJet        # 1
    xi_jet: MultiJet           # 2, (p, m)
    alpha_jet: MultiJet        # 1, (p, n, n)
    conn_jet: MultiJet         # 1, (n, p, p)
    shape_jet: MultiJet        # 1, (p, n, n)
    # values
    f: np.ndarray
    df: np.ndarray
    d2f: np.ndarray
    d3f: np.ndarray
    g: np.ndarray
    ginv: np.ndarray
    gamma: np.ndarray
    dgamma: np.ndarray
    riemann: np.ndarray
    xi: np.ndarray
    alpha: np.ndarray
    alpha_vec: np.ndarray
    shape_ops: np.ndarray
    conn: np.ndarray
    dconn: np.ndarray
    nabla_alpha: np.ndarray
    onb: np.ndarray            # columns: g-orthonormal tangent basis in coordinates
    scale: float
    orthonormality_residual: float
    tangency_residual: float
    gauss_residual: float
    codazzi_residual: float

    @property
    def is_euclidean(self) -> bool:
        return bool(np.all(self.signs > 0))

    def normal_inner(self, a, b):
        """<u, v> for normal vectors given by xi-frame components (last axis)."""
        return np.sum(np.asarray(a) * np.asarray(b) * self.eps, axis=-1)

    def shape_ops_onb(self) -> np.ndarray:
        """Symmetric matrices of A_{xi_a} in the orthonormal tangent basis."""
        E = self.onb
        return np.einsum("li,alm,mj->aij", E, self.eps[:, None, None] * self.alpha, E)


def _tangent_onb(g: np.ndarray) -> np.ndarray:
    L = np.linalg.cholesky(g)
    return np.linalg.inv(L).T


def _normal_frame(df: MultiJet, ginv: MultiJet, signs: np.ndarray, p: int,
                  seed_order: Optional[Sequence[int]]):
    """Jet-level Gram-Schmidt of the ambient basis projected off the tangent space."""
    nv, order = df.nvars, df.order
    m = df.shape[-1]
    # P[:, s] = e_s - sum_kl f_k g^{kl} <f_l, e_s>
    coef = jet_einsum("kl,lm->km", ginv, df) * signs
    P = MultiJet.constant(np.eye(m), nv, order) - jet_einsum("km,ks->ms", df, coef)
    cols = [P[:, s] for s in range(m)]
    chosen, frame, eps = [], [], []
    for step in range(p):
        best = None
        candidates = [seed_order[step]] if seed_order is not None else range(m)
        for s in candidates:
            if s in chosen:
                continue
            r = cols[s]
            for xb, eb in zip(frame, eps):
                r = r - xb * (((r * xb * signs).sum()) * eb)
            nrm = float((r.value * r.value * signs).sum())
            if best is None or abs(nrm) > abs(best[1]):
                best = (s, nrm, r)
        if best is None or abs(best[1]) < 1e-20:
            raise GeometryError("normal frame construction failed (degenerate seeds)")
        s, nrm, r = best
        e = 1.0 if nrm > 0 else -1.0
        q = (r * r * signs).sum() * e
        frame.append(r * jet_recip(jet_sqrt(q)))
        eps.append(e)
        chosen.append(s)
    from .jets import stack
    return stack(frame, axis=0), np.array(eps), tuple(chosen)


def evaluate_frame(chart: ImmersionChart, u, seed_order: Optional[Sequence[int]] = None,
                   check_domain: bool = True) -> PointFrame:
    """Evaluate all pointwise geometry of ``chart`` at chart point ``u``.

    ``seed_order`` fixes the ambient seeds used for the normal frame; pass
    the value from a nearby frame to get a frame field that is smooth across
    points.
    """
    u = np.asarray(u, dtype=float)
    if check_domain and not chart.contains(u, slack=0.01):
        raise GeometryError(f"point {u} outside chart domain")
    n, m = chart.nvars, chart.ambient.dim
    p = m - n
    if p < 0:
        raise GeometryError("ambient dimension smaller than chart dimension")
    signs = chart.ambient.signs
    fj = chart.jet(u, 3)
    df = fj.gradient()                                      # (n, m), order 2
    sv = np.linalg.svd(df.value, compute_uv=False)
    if sv.min() <= TAU_RANK * max(1.0, sv.max()):
        raise GeometryError(f"rank deficiency at {u}: singular values {sv}")
    g = jet_einsum("im,jm->ij", df, df * signs)
    if np.linalg.eigvalsh(g.value).min() <= 0:
        raise GeometryError(f"induced metric not positive definite at {u}")
    ginv = jet_inv_matrix(g)
    d2f = df.gradient()                                     # (n, n, m), order 1
    c = jet_einsum("ijm,lm->ijl", d2f, df.truncate(1) * signs)
    gamma = jet_einsum("kl,ijl->kij", ginv.truncate(1), c)  # order 1
    if p > 0:
        xi, eps, chosen = _normal_frame(df, ginv, signs, p, seed_order)
        alpha = jet_einsum("ijm,am->aij", d2f, xi.truncate(1) * signs) * eps[:, None, None]
        dxi = xi.gradient()                                 # (n, p, m), order 1
        omega = jet_einsum("iam,bm->iab", dxi, xi.truncate(1) * signs)
        conn = omega * eps[None, None, :]
        shape = jet_einsum("lk,aki->ali", ginv.truncate(1), alpha) * eps[:, None, None]
    else:
        z = lambda *s: MultiJet.constant(np.zeros(s), n, 1)
        xi, eps, chosen = MultiJet.constant(np.zeros((0, m)), n, 2), np.zeros(0), ()
        alpha, conn, shape = z(0, n, n), z(n, 0, 0), z(0, n, n)

    G = gamma.value
    dG = gamma.gradient().value                             # [l, k, i, j] = d_l Gamma^k_ij
    # R[i,j,k,l] = d_i G^l_jk - d_j G^l_ik + G^m_jk G^l_im - G^m_ik G^l_jm
    riemann = (np.einsum("iljk->ijkl", dG) - np.einsum("jlik->ijkl", dG)
               + np.einsum("mjk,lim->ijkl", G, G) - np.einsum("mik,ljm->ijkl", G, G))
    al = alpha.value
    cn = conn.value
    dal = alpha.gradient().value                            # [k, a, i, j]
    nabla_alpha = (dal - np.einsum("lki,alj->kaij", G, al) - np.einsum("lkj,ail->kaij", G, al)
                   + np.einsum("bij,kba->kaij", al, cn))
    gv, giv = g.value, ginv.value
    xv = xi.value
    alpha_vec = np.einsum("aij,am->ijm", al, xv)

    # residuals
    if p > 0:
        gram = np.einsum("am,bm->ab", xv, xv * signs)
        ortho = float(np.abs(gram - np.diag(eps)).max())
        tang = float(np.abs(np.einsum("am,im->ai", xv * signs, df.value)).max())
    else:
        ortho = tang = 0.0
    R_low = np.einsum("ijkm,ml->ijkl", riemann, gv)
    aa = np.einsum("ajl,aik->ijkl", al * eps[:, None, None], al)  # <alpha_jl, alpha_ik>
    # R(d_j, d_i) d_k - A_{alpha(i,k)} d_j + A_{alpha(j,k)} d_i, lowered on d_l
    gauss = (np.einsum("jikl->ijkl", R_low) - aa
             + np.einsum("ail,ajk->ijkl", al * eps[:, None, None], al))
    codazzi = nabla_alpha - np.einsum("jaik->iajk", nabla_alpha)
    scale = max(1.0, float(np.abs(al).max(initial=0.0)), float(np.abs(riemann).max()))

    return PointFrame(
        chart=chart, u=u, n=n, m=m, p=p, signs=signs, eps=eps, seed_order=chosen,
        f_jet=fj, df_jet=df, g_jet=g, ginv_jet=ginv, gamma_jet=gamma, xi_jet=xi,
        alpha_jet=alpha, conn_jet=conn, shape_jet=shape,
        f=fj.value, df=df.value, d2f=d2f.value, d3f=d2f.gradient().value,
        g=gv, ginv=giv, gamma=G, dgamma=dG, riemann=riemann, xi=xv, alpha=al,
        alpha_vec=alpha_vec, shape_ops=shape.value, conn=cn,
        dconn=conn.gradient().value, nabla_alpha=nabla_alpha, onb=_tangent_onb(gv),
        scale=scale, orthonormality_residual=ortho, tangency_residual=tang,
        gauss_residual=float(np.abs(gauss).max()) / scale,
        codazzi_residual=float(np.abs(codazzi).max(initial=0.0)) / scale,
    )


# ---------------------------------------------------------------------------
# conformal s-nullity
# ---------------------------------------------------------------------------

@dataclass
class SearchConfig:
    grid_size: int = 400
    draws: int = 2000
    refine_iters: int = 50
    tau_rank: float = TAU_RANK
    tau_mult: float = TAU_MULT
    seed: int = 0


@dataclass
class NullityResult:
    s: int
    estimate: int
    U: np.ndarray              # (p, s) orthonormal basis, xi-frame components
    zeta: np.ndarray           # (p,) xi-frame components, zeta in span(U)
    kernel: np.ndarray         # (n, estimate) orthonormal-basis components
    unstable: bool = False     # estimate changes when tau_mult is scaled by 10


def sphere_grid(dim: int, count: int, seed: int = 0) -> np.ndarray:
    """Well-spread unit vectors in R^dim, antipodal pairs identified."""
    if dim == 1:
        return np.ones((1, 1))
    if dim == 2:
        t = np.pi * (np.arange(count) + 0.5) / count
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if dim == 3:
        k = np.arange(count) + 0.5
        z = k / count                       # upper hemisphere only
        phi = np.pi * (1 + 5 ** 0.5) * k
        r = np.sqrt(1 - z ** 2)
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    rng = np.random.default_rng([seed, dim, count])
    x = rng.standard_normal((count, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _clusters(eigs: np.ndarray, tol: float) -> list:
    """Chain-cluster sorted eigenvalues; returns (start, stop) index pairs."""
    out, start = [], 0
    for i in range(1, len(eigs) + 1):
        if i == len(eigs) or eigs[i] - eigs[i - 1] > tol:
            out.append((start, i))
            start = i
    return out


def _joint_eigenspace(mats: np.ndarray, tol_abs: float):
    """Largest common eigenspace of commuting-or-not symmetric matrices.

    Recursively splits eigenspaces of the first matrix by the restriction of
    the next one. Returns (basis (n, k), eigenvalue tuple).
    """
    n = mats.shape[-1]
    best = (np.zeros((n, 0)), np.zeros(len(mats)))

    def rec(Y, level, vals):
        nonlocal best
        if level == len(mats):
            if Y.shape[1] > best[0].shape[1]:
                best = (Y, np.array(vals))
            return
        M = Y.T @ mats[level] @ Y
        w, V = np.linalg.eigh((M + M.T) / 2)
        for a, b in _clusters(w, tol_abs):
            if b - a > best[0].shape[1]:
                rec(Y @ V[:, a:b], level + 1, vals + [float(w[a:b].mean())])

    rec(np.eye(n), 0, [])
    return best


def _kernel_witness(mats: np.ndarray, U: np.ndarray, tau_rank: float, scale: float,
                    tol_abs: float):
    """Kernel of alpha_U - <,> zeta for the best joint eigen-cluster of span(U)."""
    A = np.einsum("ar,aij->rij", U, mats)
    Y, c = _joint_eigenspace(A, tol_abs)
    n = mats.shape[-1]
    if Y.shape[1] == 0:
        return 0, np.zeros(U.shape[0]), np.zeros((n, 0))
    # least-squares zeta coefficients on the candidate subspace
    c = np.array([np.trace(Y.T @ Ar @ Y) / Y.shape[1] for Ar in A])
    M = np.concatenate([Ar - cr * np.eye(n) for Ar, cr in zip(A, c)], axis=0)
    _, sv, Vt = np.linalg.svd(M)
    thr = tau_rank * max(sv.max(initial=0.0), scale)
    k = int(np.sum(sv < thr))
    return k, U @ c, Vt[n - k:].T if k else np.zeros((n, 0))


def _spread(mats, U, k, tol_floor):
    """Continuous surrogate: 0 iff span(U) admits a k-dim joint eigenspace."""
    A = np.einsum("ar,aij->rij", U, mats)
    n = A.shape[-1]
    w, V = np.linalg.eigh(A[0])
    nrm = max(np.abs(A).max(), tol_floor)
    best = np.inf
    for i in range(n - k + 1):
        Y = V[:, i:i + k]
        if len(A) == 1:
            val = (w[i + k - 1] - w[i]) / nrm
        else:
            c = [np.trace(Y.T @ Ar @ Y) / k for Ar in A]
            M = np.concatenate([(Ar - cr * np.eye(n)) @ Y for Ar, cr in zip(A, c)], axis=0)
            val = np.linalg.norm(M) / nrm
        best = min(best, val)
    return best


def _refine(mats, U, k, iters, tol_floor):
    """Coordinate descent over Givens rotations of the normal space."""
    p = U.shape[0]
    cur = _spread(mats, U, k, tol_floor)
    step = 0.1
    for _ in range(iters):
        improved = False
        for a in range(p):
            for b in range(a + 1, p):
                for sgn in (1.0, -1.0):
                    t = sgn * step
                    R = np.eye(p)
                    R[a, a] = R[b, b] = math.cos(t)
                    R[a, b], R[b, a] = -math.sin(t), math.sin(t)
                    V = R @ U
                    val = _spread(mats, V, k, tol_floor)
                    if val < cur:
                        U, cur, improved = V, val, True
        if not improved:
            step *= 0.5
            if step < 1e-15:
                break
    return U, cur


def _candidate_frames(p: int, s: int, cfg: SearchConfig):
    if s == 1:
        for eta in sphere_grid(p, cfg.grid_size, cfg.seed):
            yield eta[:, None]
    elif s == p:
        yield np.eye(p)
    else:
        for k in range(cfg.draws):
            rng = np.random.default_rng([cfg.seed, s, k])
            Q, _ = np.linalg.qr(rng.standard_normal((p, s)))
            yield Q


def _nullity_once(mats, p, s, cfg, scale, tau_mult) -> NullityResult:
    n = mats.shape[-1]
    tol_floor = 1e-12 * scale

    def tol_for(U):
        A = np.einsum("ar,aij->rij", U, mats)
        return max(tau_mult * np.abs(np.linalg.eigvalsh(A)).max(initial=0.0), tol_floor)

    best_k, best_U = -1, None
    candidates = list(_candidate_frames(p, s, cfg))
    for U in candidates:
        k, _, _ = _kernel_witness(mats, U, cfg.tau_rank, scale, tol_for(U))
        if k > best_k:
            best_k, best_U = k, U
    # try to climb: refine towards one more dimension than found so far
    can_move = (s == 1 and p > 1) or (1 < s < p)
    target = best_k + 1
    while can_move and target <= n:
        start = min(candidates, key=lambda U: _spread(mats, U, target, tol_floor))
        U, val = _refine(mats, start, target, cfg.refine_iters, tol_floor)
        k, _, _ = _kernel_witness(mats, U, cfg.tau_rank, scale, tol_for(U))
        if k < target:
            break
        best_k, best_U = k, U
        target = k + 1
    k, zeta, ker = _kernel_witness(mats, best_U, cfg.tau_rank, scale, tol_for(best_U))
    return NullityResult(s=s, estimate=k, U=best_U, zeta=zeta, kernel=ker)


def conformal_s_nullity(frame: PointFrame, s: int,
                        search: Optional[SearchConfig] = None) -> NullityResult:
    """Lower bound (exact on resolved maxima) for the conformal s-nullity.

    ``estimate`` is the largest dim N(alpha_U - <,> zeta) found over the
    searched s-dimensional normal subspaces U and zeta in U.
    """
    cfg = search or SearchConfig()
    if not frame.is_euclidean:
        raise GeometryError("conformal s-nullity is defined for Euclidean ambients")
    if not 1 <= s <= frame.p:
        raise GeometryError(f"s must lie in 1..{frame.p}, got {s}")
    mats = frame.shape_ops_onb()
    res = _nullity_once(mats, frame.p, s, cfg, frame.scale, cfg.tau_mult)
    for factor in (10.0, 0.1):
        other = _nullity_once(mats, frame.p, s, cfg, frame.scale, cfg.tau_mult * factor)
        if other.estimate != res.estimate:
            res.unstable = True
    return res


def normal_span_check(frame: PointFrame, Z1, Z2, tol: float = TAU_RANK):
    """Span of alpha(X, Y) over <X,Y> = <X,Z1> = <Y,Z2> = 0.

    ``Z1`` and ``Z2`` are tangent vectors in chart coordinates. Returns
    ``(spans, span_dim)`` where ``spans`` means the span is the whole normal
    space.
    """
    Z1, Z2 = np.asarray(Z1, dtype=float), np.asarray(Z2, dtype=float)
    g = frame.g
    n1, n2 = Z1 @ g @ Z1, Z2 @ g @ Z2
    if n1 <= 0 or n2 <= 0:
        raise GeometryError("Z1 and Z2 must be nonzero")
    same = np.allclose(Z1, Z2)
    if not same and abs(Z1 @ g @ Z2) > 1e-10 * math.sqrt(n1 * n2):
        raise GeometryError("Z1 and Z2 must be equal or orthogonal")
    # orthonormal completion starting with Z1 (and Z2)
    seeds = [Z1] if same else [Z1, Z2]
    basis = []
    for v in seeds + list(frame.onb.T):
        for b in basis:
            v = v - (b @ g @ v) * b
        nv = math.sqrt(max(v @ g @ v, 0.0))
        if nv > 1e-8:
            basis.append(v / nv)
        if len(basis) == frame.n:
            break
    E = np.array(basis).T
    al = np.einsum("li,alm,mj->aij", E, frame.alpha, E)
    n = frame.n
    first = 1 if same else 2         # basis indices >= first are orthogonal to Z1, Z2
    gens = []
    for i in range(n):
        for j in range(n):
            if i == j or i == 0 or (j == 1 and not same) or (j == 0 and same):
                continue
            gens.append(al[:, i, j])
    free = list(range(first, n))
    for i in free[1:]:
        gens.append(al[:, free[0], free[0]] - al[:, i, i])
    if not gens or frame.p == 0:
        return False, 0
    G = np.array(gens).T
    sv = np.linalg.svd(G, compute_uv=False)
    dim = int(np.sum(sv > tol * max(frame.scale, 1.0)))
    return dim == frame.p, dim
