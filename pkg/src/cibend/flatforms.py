"""Symmetric bilinear forms with values in an indefinite inner-product space.

Also hosts the theta form of a bending, isometry extension, the Cayley
transform, certificate recovery from a null theta, and the per-point
rigidity pipeline built on them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import expm, null_space, orth, subspace_angles

from .bending import BendingEval
from .geometry import PointFrame, SearchConfig, TAU_RANK, conformal_s_nullity
from .triviality import TrivialityCertificate, beta_from

TAU_SUB = 1e-8


class FlatFormError(ValueError):
    pass


@dataclass(frozen=True)
class IndefInnerSpace:
    signature: tuple

    def __post_init__(self):
        if any(s not in (1, -1) for s in self.signature):
            raise FlatFormError("signature entries must be +1 or -1")

    @classmethod
    def neutral(cls, q: int) -> "IndefInnerSpace":
        return cls((1,) * q + (-1,) * q)

    @property
    def dim(self) -> int:
        return len(self.signature)

    @property
    def J(self) -> np.ndarray:
        return np.diag(np.array(self.signature, dtype=float))

    @property
    def is_neutral(self) -> bool:
        return sum(self.signature) == 0

    def inner(self, a, b):
        return np.asarray(a) @ self.J @ np.asarray(b)


@dataclass
class IndefBilinearForm:
    """gamma(e_i, e_j) = components[:, i, j]; symmetric in i, j."""
    space: IndefInnerSpace
    components: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        if c.ndim != 3 or c.shape[0] != self.space.dim or c.shape[1] != c.shape[2]:
            raise FlatFormError(f"components must have shape ({self.space.dim}, n, n)")
        self.components = (c + np.swapaxes(c, 1, 2)) / 2

    @property
    def n(self) -> int:
        return self.components.shape[1]

    def norm(self) -> float:
        return float(np.abs(self.components).max(initial=0.0))

    def pairing(self) -> np.ndarray:
        """Q[i, j, k, l] = <gamma(e_i, e_k), gamma(e_j, e_l)>, summed in index order."""
        n = self.n
        Q = np.zeros((n, n, n, n))
        for A, s in enumerate(self.space.signature):
            g = self.components[A]
            Q = Q + (s * g)[:, None, :, None] * g[None, :, None, :]
        return Q

    def mapped(self, M: np.ndarray, space: Optional[IndefInnerSpace] = None):
        """Form with values transformed by the matrix M."""
        return IndefBilinearForm(space or self.space,
                                 np.einsum("AB,Bij->Aij", M, self.components))


def _rel(val: float, gamma: IndefBilinearForm) -> float:
    nrm = gamma.norm()
    return 0.0 if nrm == 0.0 else val / (nrm * nrm)


def flatness_residual(gamma: IndefBilinearForm) -> float:
    Q = gamma.pairing()
    return _rel(float(np.abs(Q - np.swapaxes(Q, 2, 3)).max()), gamma)


def nullity_residual(gamma: IndefBilinearForm) -> float:
    return _rel(float(np.abs(gamma.pairing()).max()), gamma)


def _onb_tensors(frame: PointFrame, be: BendingEval):
    E = frame.onb
    a = np.einsum("li,alm,mj->aij", E, frame.alpha, E)
    b = np.einsum("li,alm,mj->aij", E, be.beta, E)
    h = E.T @ be.hess @ E
    return a, b, h


def build_theta(frame: PointFrame, be: BendingEval) -> IndefBilinearForm:
    """theta = (alpha + beta, I + Hess, alpha - beta, I - Hess) in an orthonormal basis."""
    if not frame.is_euclidean:
        raise FlatFormError("theta is defined for Euclidean ambients")
    a, b, h = _onb_tensors(frame, be)
    eye = np.eye(frame.n)
    comps = np.concatenate([a + b, (eye + h)[None], a - b, (eye - h)[None]])
    return IndefBilinearForm(IndefInnerSpace.neutral(frame.p + 1), comps)


@dataclass
class KernelSpan:
    kernel: np.ndarray         # (n, k) orthonormal columns
    span: np.ndarray           # (N, s)
    isotropic: np.ndarray      # (N, l): S cap S-perp


def kernel_span_isotropic(gamma: IndefBilinearForm, tau: float = TAU_RANK) -> KernelSpan:
    c, n, N = gamma.components, gamma.n, gamma.space.dim
    # X -> gamma(X, .) flattened
    if gamma.norm() == 0:
        return KernelSpan(np.eye(n), np.zeros((N, 0)), np.zeros((N, 0)))
    flat = np.transpose(c, (0, 2, 1)).reshape(N * n, n)
    kernel = null_space(flat, rcond=tau)
    U, sv, _ = np.linalg.svd(c.reshape(N, n * n), full_matrices=False)
    S = U[:, sv > tau * sv.max()]
    G = S.T @ gamma.space.J @ S
    if S.shape[1] == 0:
        iso = np.zeros((N, 0))
    else:
        w, V = np.linalg.eigh(G)
        iso = S @ V[:, np.abs(w) <= tau * max(1.0, np.abs(w).max())]
    return KernelSpan(kernel, S, iso)


@dataclass
class FlatDecomposition:
    ell: int
    basis_W1: np.ndarray       # (N, 2 ell): isotropic part U then its dual U*
    basis_W2: np.ndarray       # (N, N - 2 ell)
    gamma1: IndefBilinearForm  # components in basis_W1 coordinates
    gamma2: IndefBilinearForm  # components in basis_W2 coordinates
    dims: dict
    checks: dict = field(default_factory=dict)


def _restricted_space(basis: np.ndarray, J: np.ndarray) -> tuple:
    """Gram matrix of a basis and an orthonormalizing change of basis."""
    G = basis.T @ J @ basis
    w, V = np.linalg.eigh((G + G.T) / 2)
    if np.abs(w).min(initial=1.0) < 1e-10:
        raise FlatFormError("restricted inner product is degenerate")
    order = np.argsort(-np.sign(w), kind="stable")
    w, V = w[order], V[:, order]
    return basis @ V / np.sqrt(np.abs(w)), tuple(int(s) for s in np.sign(w))


def decompose_flat(gamma: IndefBilinearForm, tau_flat: float = 1e-8) -> FlatDecomposition:
    """Orthogonal splitting W = W1 + W2 with W1 built on S cap S-perp.

    Preconditions (flat, neutral signature with p <= 5, small kernel, not null)
    and both conclusions are checked; a failed conclusion raises.
    """
    sp = gamma.space
    if not sp.is_neutral:
        raise FlatFormError("precondition failed: value space must have neutral signature")
    p, n, J = sp.dim // 2, gamma.n, sp.J
    if p > 5:
        raise FlatFormError(f"precondition failed: p = {p} > 5")
    fr = flatness_residual(gamma)
    if fr > tau_flat:
        raise FlatFormError(f"precondition failed: form is not flat (residual {fr:.3e})")
    ks = kernel_span_isotropic(gamma)
    if ks.kernel.shape[1] > n - 2 * p - 1:
        raise FlatFormError(
            f"precondition failed: dim N(gamma) = {ks.kernel.shape[1]} > n - 2p - 1 = {n - 2 * p - 1}")
    if nullity_residual(gamma) <= tau_flat:
        raise FlatFormError("precondition failed: form is null")
    U = ks.isotropic
    ell = U.shape[1]
    if ell == 0:
        raise FlatFormError("conclusion failed: S cap S-perp is zero for a flat non-null form")
    Y = J @ U @ np.linalg.inv(U.T @ U)
    Y = Y - 0.5 * U @ (Y.T @ J @ Y)
    W1 = np.concatenate([U, Y], axis=1)
    W2 = null_space(W1.T @ J)
    full = np.concatenate([W1, W2], axis=1)
    coeffs = np.linalg.solve(full, gamma.components.reshape(sp.dim, -1))
    c1 = coeffs[:2 * ell].reshape(2 * ell, n, n)
    c2 = coeffs[2 * ell:].reshape(-1, n, n)
    W2o, sig2 = _restricted_space(W2, J)
    c2 = np.linalg.lstsq(W2o, W2 @ c2.reshape(len(c2), -1), rcond=None)[0].reshape(-1, n, n)
    # in (U, Y) coordinates the inner product is [[0, I], [I, 0]]; diagonalize
    R = np.block([[np.eye(ell), np.eye(ell)], [np.eye(ell), -np.eye(ell)]]) / np.sqrt(2)
    g1 = IndefBilinearForm(IndefInnerSpace.neutral(ell), np.einsum("AB,Bij->Aij", R, c1))
    g2 = IndefBilinearForm(IndefInnerSpace(sig2), c2) if len(c2) else None
    # conclusions
    S1 = orth(W1 @ c1.reshape(2 * ell, -1), rcond=TAU_RANK)
    ang = float(np.max(subspace_angles(S1, U))) if S1.shape[1] == ell else np.pi / 2
    k2 = kernel_span_isotropic(g2).kernel.shape[1] if g2 is not None else n
    checks = {
        "S1_equals_isotropic_angle": ang,
        "gamma1_null_residual": nullity_residual(g1),
        "gamma1_nonzero": g1.norm() > 0,
        "gamma2_flat_residual": flatness_residual(g2) if g2 is not None else 0.0,
        "gamma2_kernel_bound": n - 2 * p + 2 * ell,
    }
    dims = {"kernel": ks.kernel.shape[1], "span": ks.span.shape[1],
            "isotropic": ell, "kernel_gamma2": k2}
    failed = []
    if ang > TAU_SUB:
        failed.append(f"S(gamma1) != S cap S-perp (angle {ang:.2e})")
    if checks["gamma1_null_residual"] > tau_flat or not checks["gamma1_nonzero"]:
        failed.append("gamma1 is not a nonzero null form")
    if checks["gamma2_flat_residual"] > tau_flat:
        failed.append("gamma2 is not flat")
    if k2 < n - 2 * p + 2 * ell:
        failed.append(f"dim N(gamma2) = {k2} < {n - 2 * p + 2 * ell}")
    if failed:
        raise FlatFormError("conclusion failed: " + "; ".join(failed))
    return FlatDecomposition(ell, W1, W2, g1, g2, dims, checks)


# -- isometries ------------------------------------------------------------------

@dataclass
class PartialIsometry:
    domain_basis: np.ndarray   # (N, k)
    images: np.ndarray         # (N, k)

    def __post_init__(self):
        self.domain_basis = np.atleast_2d(np.asarray(self.domain_basis, dtype=float))
        self.images = np.atleast_2d(np.asarray(self.images, dtype=float))
        if self.domain_basis.shape != self.images.shape:
            raise FlatFormError("domain basis and images must have the same shape")

    @property
    def N(self) -> int:
        return self.domain_basis.shape[0]

    def validate(self, tol: float = 1e-10) -> None:
        S, I = self.domain_basis, self.images
        if np.linalg.matrix_rank(S) < S.shape[1]:
            raise FlatFormError("precondition failed: domain basis is dependent")
        g0, g1 = S.T @ S, I.T @ I
        if np.abs(g0 - g1).max() > tol * max(1.0, np.abs(g0).max()):
            raise FlatFormError("precondition failed: T0 does not preserve the Gram matrix")
        Q, _ = np.linalg.qr(S)
        T0 = I @ np.linalg.pinv(S)
        smin = np.linalg.svd((T0 + np.eye(self.N)) @ Q, compute_uv=False).min(initial=1.0)
        if smin <= 1e-8:
            raise FlatFormError("precondition failed: T0 has a -1 direction inside S")


def _real_minus_one_gap(T: np.ndarray) -> float:
    ev = np.linalg.eigvals(T)
    rad = max(np.abs(ev).max(), 1e-300)
    real = ev[np.abs(ev.imag) < 1e-8 * rad].real
    return float(np.abs(real + 1).min(initial=2.0))


def extend_isometry(T0: PartialIsometry, seed: int = 0, max_tries: int = 20) -> np.ndarray:
    """Orthogonal T extending T0 whose only possible real eigenvalue is 1.

    Starts from a completion between orthogonal complements and removes the
    -1 eigenspace one dimension at a time by reflections that fix T0(S).
    """
    T0.validate()
    N, k = T0.domain_basis.shape
    Q, R = np.linalg.qr(T0.domain_basis)
    img = T0.images @ np.linalg.inv(R)                 # images of the orthonormal basis
    Qc = null_space(Q.T) if k < N else np.zeros((N, 0))
    Ic = null_space(img.T) if k < N else np.zeros((N, 0))
    rng = np.random.default_rng(seed)
    for attempt in range(max_tries):
        O = np.eye(N - k)
        if attempt:
            O, _ = np.linalg.qr(rng.standard_normal((N - k, N - k)))
        T = img @ Q.T + Ic @ O @ Qc.T
        for _ in range(N):
            Em = null_space(T + np.eye(N), rcond=1e-6)
            if Em.shape[1] == 0:
                break
            P = np.concatenate([img, Em[:, 1:]], axis=1)
            e1 = Em[:, 0]
            Pq = orth(P) if P.shape[1] else np.zeros((N, 0))
            xi = e1 - Pq @ (Pq.T @ e1)
            if np.linalg.norm(xi) < 1e-12:
                break
            xi /= np.linalg.norm(xi)
            T = (np.eye(N) - 2 * np.outer(xi, xi)) @ T
        if (_real_minus_one_gap(T) > 1e-6
                and np.abs(T @ T0.domain_basis - T0.images).max() <= 1e-10
                * max(1.0, np.abs(T0.images).max())):
            return T
    raise FlatFormError("could not build an extension without eigenvalue -1")


def cayley_skew(T: np.ndarray) -> np.ndarray:
    """(I - T)(I + T)^{-1} for an orthogonal T without eigenvalue -1."""
    T = np.asarray(T, dtype=float)
    I = np.eye(len(T))
    if np.linalg.svd(I + T, compute_uv=False).min() <= 1e-10:
        raise FlatFormError("I + T is singular")
    # K (I + T) = I - T  <=>  (I + T)^t K^t = (I - T)^t
    return np.linalg.solve((I + T).T, (I - T).T).T


def inverse_cayley(K: np.ndarray) -> np.ndarray:
    I = np.eye(len(K))
    return np.linalg.solve((I + K).T, (I - K).T).T


# -- recovery and rigidity -----------------------------------------------------------

def _pair_vectors(frame, be):
    """Columns (alpha + beta, g + Hess) and (alpha - beta, g - Hess) over i <= j."""
    a, b, h = _onb_tensors(frame, be)
    n = frame.n
    iu = np.triu_indices(n)
    eye = np.eye(n)
    plus = np.concatenate([(a + b)[:, iu[0], iu[1]], (eye + h)[None, iu[0], iu[1]]])
    minus = np.concatenate([(a - b)[:, iu[0], iu[1]], (eye - h)[None, iu[0], iu[1]]])
    return plus, minus


def recover_triviality_from_null_theta(frame: PointFrame, be: BendingEval,
                                       search: Optional[SearchConfig] = None,
                                       tau_null: float = 1e-8) -> TrivialityCertificate:
    theta = build_theta(frame, be)
    nr = nullity_residual(theta)
    if nr > tau_null * be.scale:
        raise FlatFormError(f"precondition failed: theta is not null (residual {nr:.3e})")
    if frame.n < 4:
        raise FlatFormError(f"precondition failed: n = {frame.n} < 4")
    nu1 = conformal_s_nullity(frame, 1, search).estimate
    if nu1 > frame.n - 3:
        raise FlatFormError(f"precondition failed: nu_1 = {nu1} > n - 3 = {frame.n - 3}")
    plus, minus = _pair_vectors(frame, be)
    S = orth(plus, rcond=TAU_RANK)
    T0 = minus @ np.linalg.pinv(plus, rcond=TAU_RANK)
    T = extend_isometry(PartialIsometry(S, T0 @ S))
    K = cayley_skew(T)
    p = frame.p
    C = K[:p, :p]
    # delta from beta - C alpha = -<,> delta (least squares over all pairs)
    g = frame.g
    resid = be.beta - np.einsum("ba,aij->bij", C, frame.alpha)
    delta = -np.einsum("bij,ij->b", resid, g) / np.einsum("ij,ij->", g, g)
    rb = float(np.abs(be.beta - beta_from(frame, C, delta)).max()) / be.scale
    cert = TrivialityCertificate([C], [None], [delta], rb, float("nan"),
                                 (np.full(frame.m, np.nan), float("nan")), 0.0, be.scale)
    cert.notes.append(f"cayley column c = {np.round(K[:p, p], 12).tolist()}")
    return cert


@dataclass
class RigidityVerdict:
    verdict: str
    nullities: list
    flatness: float
    nullity: float
    certificate: Optional[TrivialityCertificate] = None
    witness: Optional[dict] = None

    def to_dict(self) -> dict:
        out = {"verdict": self.verdict, "nullities": self.nullities,
               "theta_flatness": self.flatness, "theta_nullity": self.nullity}
        if self.certificate is not None:
            c = self.certificate
            out["certificate"] = {"C": np.round(c.C[0], 12).tolist(),
                                  "delta": np.round(c.delta[0], 12).tolist(),
                                  "residual_beta": c.residual_beta}
        if self.witness is not None:
            out["witness"] = {k: (np.round(v, 12).tolist() if isinstance(v, np.ndarray) else v)
                              for k, v in self.witness.items()}
        return out


def rigidity_check(frame: PointFrame, be: BendingEval, search: Optional[SearchConfig] = None,
                   tau: float = 1e-8) -> RigidityVerdict:
    p, n = frame.p, frame.n
    if not 1 <= p <= 4 or n < 2 * p + 3:
        raise FlatFormError(f"dimension precondition failed: need 1 <= p <= 4 and n >= 2p + 3 "
                            f"(n = {n}, p = {p})")
    theta = build_theta(frame, be)
    fl, nl = flatness_residual(theta), nullity_residual(theta)
    if fl > tau * be.scale:
        return RigidityVerdict("not a bending-consistent pair", [], fl, nl)
    nus = [conformal_s_nullity(frame, s, search).estimate for s in range(1, p + 1)]
    if any(nu > n - 2 * s - 1 for s, nu in enumerate(nus, start=1)):
        return RigidityVerdict("hypotheses not met", nus, fl, nl)
    if nl <= tau * be.scale:
        cert = recover_triviality_from_null_theta(frame, be, search, tau)
        return RigidityVerdict("trivial with certificate", nus, fl, nl, certificate=cert)
    return RigidityVerdict("theorem contradiction witness", nus, fl, nl,
                           witness=_contradiction_witness(frame, be, theta))


def _contradiction_witness(frame, be, theta) -> dict:
    """Delta, S, S1, U and zeta from the splitting of a flat non-null theta."""
    dec = decompose_flat(theta)
    a, b, h = _onb_tensors(frame, be)
    n, p = frame.n, frame.p
    Delta = kernel_span_isotropic(dec.gamma2).kernel if dec.gamma2 is not None else np.eye(n)
    plus = np.concatenate([np.einsum("aij,ir->arj", a + b, Delta),
                           np.einsum("ij,ir->rj", np.eye(n) + h, Delta)[None]])
    S = orth(plus.reshape(p + 1, -1), rcond=TAU_RANK)
    base = np.concatenate([np.einsum("aij,ir->arj", a, Delta),
                           np.einsum("ij,ir->rj", np.eye(n), Delta)[None]]).reshape(p + 1, -1)
    S1 = null_space(base.T, rcond=TAU_RANK)
    U = orth(S1[:p], rcond=TAU_RANK)
    zeta = np.zeros(p)
    if U.shape[1] and Delta.shape[1]:
        aU = np.einsum("ar,aij->rij", U, a)
        proj = np.einsum("rij,is->rsj", aU, Delta)
        G = np.einsum("ij,is->sj", np.eye(n), Delta)
        coef = np.einsum("rsj,sj->r", proj, G) / max(np.einsum("sj,sj->", G, G), 1e-300)
        zeta = U @ coef
    return {"ell": dec.ell, "Delta": Delta, "S": S, "S1": S1, "U": U, "zeta": zeta,
            "dims": dec.dims}


# -- seeded fixtures -------------------------------------------------------------------

def flat_fixture(p: int, ell: int, rank: int, n: int, seed=0) -> IndefBilinearForm:
    """A flat, non-null form on R^n with values in the neutral space of dimension 2p.

    The isotropic part has dimension ``ell`` and the spacelike flat part is a
    sum of ``rank`` rank-one terms; the result is scrambled by a random
    isometry of the value space and a random change of basis of R^n.
    """
    if not (1 <= ell and ell + rank <= p and rank >= 1):
        raise FlatFormError("need 1 <= ell, 1 <= rank and ell + rank <= p")
    rng = np.random.default_rng(seed)
    N = 2 * p
    space = IndefInnerSpace.neutral(p)
    comps = np.zeros((N, n, n))
    for k in range(ell):
        u = np.zeros(N)
        u[k] = u[p + k] = 1 / np.sqrt(2)
        A = rng.standard_normal((n, n))
        comps += u[:, None, None] * (A + A.T)
    for k in range(rank):
        lam = rng.standard_normal(n)
        comps[ell + k] += np.outer(lam, lam)
    K = rng.standard_normal((N, N))
    iso = expm(0.3 * space.J @ (K - K.T))
    P = rng.standard_normal((n, n))
    comps = np.einsum("AB,Bij,ik,jl->Akl", iso, comps, P, P)
    return IndefBilinearForm(space, comps)


def random_partial_isometry(N: int, k: int, seed=0) -> PartialIsometry:
    """T0 = O restricted to a random k-dimensional subspace, with O orthogonal
    and free of the eigenvalue -1 (an inverse Cayley transform of a random
    skew matrix)."""
    if not 1 <= k <= N:
        raise FlatFormError("need 1 <= k <= N")
    rng = np.random.default_rng(seed)
    K = rng.standard_normal((N, N)) * rng.uniform(0.2, 2.0)
    O = inverse_cayley(K - K.T)
    S = rng.standard_normal((N, k))
    return PartialIsometry(S, O @ S)
