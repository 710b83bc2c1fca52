"""Closed-form immersions and bendings with known ground truth.

Charts are built from jet arithmetic, so every derivative they expose is exact.
Ground-truth values carry a tag saying how they are known:
``closed-form`` (hand derivation), ``construction`` (true by how the object
is built), or ``numeric`` (established by a sampled check in the test suite).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import AmbientSpace, ImmersionChart
from .jets import MultiJet, jet_cos, jet_sin, stack


class GalleryError(ValueError):
    pass


# -- charts ------------------------------------------------------------------

def _sphere_coords(x: MultiJet, radius: float) -> list:
    """Hyperspherical angles -> points of the round sphere in R^{n+1}."""
    n = x.shape[0]
    s = [jet_sin(x[i]) for i in range(n)]
    c = [jet_cos(x[i]) for i in range(n)]
    out, prod = [], MultiJet.constant(radius, x.nvars, x.order)
    for i in range(n):
        out.append(prod * c[i])
        prod = prod * s[i]
    out.append(prod)
    return out


def _sphere_domain(n: int):
    lo = [0.1] * n
    hi = [math.pi - 0.1] * (n - 1) + [2 * math.pi - 0.1]
    return (tuple(lo), tuple(hi))


def plane(n: int = 2, m: int = 3) -> ImmersionChart:
    if m < n:
        raise GalleryError("plane needs m >= n")

    def f(x):
        zero = MultiJet.constant(0.0, x.nvars, x.order)
        return stack([x[i] for i in range(n)] + [zero] * (m - n))
    return ImmersionChart(n, AmbientSpace(m), f, ((-1.0,) * n, (1.0,) * n),
                          "plane", {"n": n, "m": m})


def sphere(n: int = 2, radius: float = 1.0) -> ImmersionChart:
    if not 1 <= n <= 7:
        raise GalleryError("sphere dimension must be in 1..7")
    return ImmersionChart(n, AmbientSpace(n + 1), lambda x: stack(_sphere_coords(x, radius)),
                          _sphere_domain(n), "sphere", {"n": n, "radius": radius})


def cylinder(n: int = 2, radius: float = 1.0) -> ImmersionChart:
    def f(x):
        return stack([radius * jet_cos(x[0]), radius * jet_sin(x[0])]
                     + [x[i] for i in range(1, n)])
    return ImmersionChart(n, AmbientSpace(n + 1), f,
                          ((0.2,) + (-1.0,) * (n - 1), (2 * math.pi - 0.2,) + (1.0,) * (n - 1)),
                          "cylinder", {"n": n, "radius": radius})


def ellipsoid(axes=(1.0, 1.3, 1.7, 2.1), lift=None) -> ImmersionChart:
    """Ellipsoid with the given semi-axes; ``lift`` adds one ambient coordinate
    ``sum_i lift_i x_i^2`` (x on the unit sphere), raising the codimension to 2."""
    axes = tuple(float(a) for a in axes)
    n = len(axes) - 1
    if n < 1 or min(axes) <= 0:
        raise GalleryError("ellipsoid needs >= 2 positive axes")
    if lift is not None:
        lift = tuple(float(b) for b in lift)
        if len(lift) != n + 1:
            raise GalleryError("lift needs one coefficient per axis")

    def f(x):
        s = _sphere_coords(x, 1.0)
        comps = [a * c for a, c in zip(axes, s)]
        if lift is not None:
            comps.append(sum((b * c * c for b, c in zip(lift, s)),
                             MultiJet.constant(0.0, x.nvars, x.order)))
        return stack(comps)
    m = n + 1 + (lift is not None)
    return ImmersionChart(n, AmbientSpace(m), f, _sphere_domain(n), "ellipsoid",
                          {"axes": axes, "lift": lift})


def product(n1: int = 1, n2: int = 1, r1: float = 1.0, r2: float = 1.5) -> ImmersionChart:
    def f(x):
        a = _sphere_coords(x[:n1], r1)
        b = _sphere_coords(x[n1:], r2)
        return stack(a + b)
    d1, d2 = _sphere_domain(n1), _sphere_domain(n2)
    dom = (d1[0] + d2[0], d1[1] + d2[1])
    return ImmersionChart(n1 + n2, AmbientSpace(n1 + n2 + 2), f, dom, "product",
                          {"n1": n1, "n2": n2, "r1": r1, "r2": r2})


def graph(n: int = 2, curvatures=None, cubic: float = 0.3) -> ImmersionChart:
    """Graph of h(u) = 1/2 sum k_i u_i^2 + (c/6) sum u_i^3 over the box [-1, 1]^n."""
    k = np.asarray(curvatures if curvatures is not None
                   else [0.4 + 0.5 * i for i in range(n)], dtype=float)

    def f(x):
        h = MultiJet.constant(0.0, x.nvars, x.order)
        for i in range(n):
            ui = x[i]
            h = h + 0.5 * k[i] * ui * ui + (cubic / 6.0) * ui * ui * ui
        return stack([x[i] for i in range(n)] + [h])
    return ImmersionChart(n, AmbientSpace(n + 1), f, ((-1.0,) * n, (1.0,) * n), "graph",
                          {"n": n, "curvatures": tuple(k), "cubic": cubic})


# -- bendings ------------------------------------------------------------------

@dataclass(frozen=True)
class BendingChart:
    """Variational field T and conformal factor rho as functions of the chart jet."""
    name: str
    func: Callable          # f-jet (m,) -> (T-jet (m,), rho-jet scalar)
    params: dict = field(default_factory=dict)

    def jets(self, chart: ImmersionChart, u, order: int = 3):
        fj = chart.jet(u, order)
        T, rho = self.func(fj)
        return T, rho

    def __add__(self, other: "BendingChart") -> "BendingChart":
        def f(fj):
            T1, r1 = self.func(fj)
            T2, r2 = other.func(fj)
            return T1 + T2, r1 + r2
        return BendingChart(f"{self.name}+{other.name}", f)

    def scaled(self, c: float) -> "BendingChart":
        def f(fj):
            T, r = self.func(fj)
            return T * c, r * c
        return BendingChart(f"{c}*{self.name}", f)


@dataclass(frozen=True)
class ConformalKillingData:
    """Parameters of a conformal Killing field of R^m.

    ``skew_lower`` holds the strictly lower triangle of the skew part D, so
    D + D^T = 0 holds exactly.
    """
    lam: float
    v: tuple
    w: tuple
    skew_lower: tuple

    @property
    def dim(self) -> int:
        return len(self.v)

    @property
    def D(self) -> np.ndarray:
        m = self.dim
        D = np.zeros((m, m))
        D[np.tril_indices(m, -1)] = self.skew_lower
        return D - D.T

    @classmethod
    def build(cls, m: int, lam=0.0, v=None, w=None, D=None) -> "ConformalKillingData":
        v = np.zeros(m) if v is None else np.asarray(v, dtype=float)
        w = np.zeros(m) if w is None else np.asarray(w, dtype=float)
        D = np.zeros((m, m)) if D is None else np.asarray(D, dtype=float)
        if v.shape != (m,) or w.shape != (m,) or D.shape != (m, m):
            raise GalleryError("conformal Killing data has wrong dimensions")
        if np.abs(D + D.T).max() > 1e-14:
            raise GalleryError("D must be skew-symmetric")
        return cls(float(lam), tuple(v), tuple(w), tuple(D[np.tril_indices(m, -1)]))

    @classmethod
    def random(cls, m: int, seed, scale: float = 1.0) -> "ConformalKillingData":
        rng = np.random.default_rng(seed)
        K = rng.standard_normal((m, m)) * scale
        return cls.build(m, lam=rng.standard_normal() * scale,
                         v=rng.standard_normal(m) * scale * 0.5,
                         w=rng.standard_normal(m) * scale, D=(K - K.T) / 2)


def conformal_killing(data: ConformalKillingData) -> BendingChart:
    v, w, D = np.array(data.v), np.array(data.w), data.D

    def f(fj):
        fv = (fj * v).sum()
        rho = fv + data.lam
        T = fj * rho - (fj * fj).sum() * (0.5 * v) + _apply(D, fj) + w
        return T, rho
    return BendingChart("conformal_killing", f, {"data": data})


def _apply(M, fj):
    from .jets import linear
    return linear(M, fj)


def zero_bending(m: int) -> BendingChart:
    return conformal_killing(ConformalKillingData.build(m))


def translation(m: int, w=None) -> BendingChart:
    w = np.eye(m)[0] if w is None else w
    return _named(conformal_killing(ConformalKillingData.build(m, w=w)), "translation")


def homothety(m: int, lam: float = 1.0) -> BendingChart:
    return _named(conformal_killing(ConformalKillingData.build(m, lam=lam)), "homothety")


def rotation(m: int, seed=0) -> BendingChart:
    rng = np.random.default_rng(seed)
    K = rng.standard_normal((m, m))
    return _named(conformal_killing(ConformalKillingData.build(m, D=(K - K.T) / 2)), "rotation")


def inversion(m: int, v=None) -> BendingChart:
    v = 0.5 * np.eye(m)[-1] if v is None else v
    return _named(conformal_killing(ConformalKillingData.build(m, v=v)), "inversion")


def _named(b: BendingChart, name: str) -> BendingChart:
    return BendingChart(name, b.func, b.params)


def sphere_tangent(m: int, v=None) -> BendingChart:
    """Tangent part v - <v, f> f of a constant field on the unit sphere."""
    v = np.eye(m)[0] if v is None else np.asarray(v, dtype=float)

    def f(fj):
        fv = (fj * v).sum()
        return v - fj * fv, -fv
    return BendingChart("sphere_tangent", f, {"v": tuple(v)})


PHI_CHOICES = ("height", "x1sq", "affine")


def phi_f(m: int, phi: str = "x1sq") -> BendingChart:
    """T = phi * f on a round sphere centred at the origin, rho = phi."""
    if phi not in PHI_CHOICES:
        raise GalleryError(f"phi must be one of {PHI_CHOICES}")
    a = np.linspace(0.3, -0.2, m)

    def f(fj):
        if phi == "height":
            p = fj[m - 1]
        elif phi == "x1sq":
            p = fj[0] * fj[0]
        else:
            p = (fj * a).sum() + 0.7
        return fj * p, p
    return BendingChart(f"phi_f[{phi}]", f, {"phi": phi})


# -- registry -------------------------------------------------------------------

@dataclass
class GalleryEntry:
    name: str
    chart: ImmersionChart
    bendings: dict
    ground_truth: dict          # key -> (value, provenance tag)


def _killing_bendings(m: int) -> dict:
    return {
        "zero": zero_bending(m),
        "translation": translation(m),
        "homothety": homothety(m),
        "rotation": rotation(m),
        "inversion": inversion(m),
        "conformal_killing": conformal_killing(ConformalKillingData.random(m, [7, m])),
    }


def _parse_floats(val, default):
    if val is None:
        return default
    if isinstance(val, str):
        return tuple(float(t) for t in val.replace(",", " ").split())
    return tuple(float(t) for t in val)


def instantiate(name: str, **params) -> GalleryEntry:
    """Build a gallery entry by name. Unknown names or bad parameters raise GalleryError."""
    try:
        return _BUILDERS[name](**params)
    except KeyError:
        raise GalleryError(f"unknown gallery entry {name!r}; known: {sorted(_BUILDERS)}") from None
    except TypeError as exc:
        raise GalleryError(f"bad parameters for {name!r}: {exc}") from None


def _b_plane(n=2, m=3):
    n, m = int(n), int(m)
    ch = plane(n, m)
    return GalleryEntry("plane", ch, _killing_bendings(m),
                        {"nu1": (n, "closed-form"), "trivial": (True, "construction")})


def _b_sphere(n=2, radius=1.0):
    n, radius = int(n), float(radius)
    if not 2 <= n <= 5:
        raise GalleryError("sphere entry supports n in 2..5")
    ch = sphere(n, radius)
    m = n + 1
    b = _killing_bendings(m)
    for phi in PHI_CHOICES:
        b[f"phi_f_{phi}"] = phi_f(m, phi)
    if radius == 1.0:
        b["sphere_tangent"] = sphere_tangent(m)
    return GalleryEntry("sphere", ch, b, {
        "nu1": (n, "closed-form"),
        "principal_curvatures": ((1.0 / radius,) * n, "closed-form"),
        "trivial": (True, "construction"),
        "trivial.phi_f_x1sq": (False, "closed-form"),
        "trivial.phi_f_height": (True, "closed-form"),
        "trivial.phi_f_affine": (True, "closed-form"),
    })


def _b_cylinder(n=2, radius=1.0):
    n, radius = int(n), float(radius)
    ch = cylinder(n, radius)
    return GalleryEntry("cylinder", ch, _killing_bendings(n + 1), {
        "nu1": (n - 1, "closed-form"),
        "principal_curvatures": ((1.0 / radius,) + (0.0,) * (n - 1), "closed-form"),
        "trivial": (True, "construction"),
    })


def _b_ellipsoid(axes=None, lift=None):
    axes = _parse_floats(axes, (1.0, 1.3, 1.7, 2.1))
    lift = _parse_floats(lift, None)
    ch = ellipsoid(axes, lift)
    gt = {"trivial": (True, "construction")}
    if lift is None and len(set(axes)) == len(axes):
        gt["nu1"] = (1, "closed-form")
    elif lift is not None:
        gt["nu1_max"] = (1, "numeric")
    return GalleryEntry("ellipsoid", ch, _killing_bendings(ch.ambient.dim), gt)


def _b_product(n1=1, n2=1, r1=1.0, r2=1.5):
    ch = product(int(n1), int(n2), float(r1), float(r2))
    return GalleryEntry("product", ch, _killing_bendings(ch.ambient.dim),
                        {"trivial": (True, "construction")})


def _b_graph(n=2, curvatures=None, cubic=0.3):
    ch = graph(int(n), _parse_floats(curvatures, None), float(cubic))
    return GalleryEntry("graph", ch, _killing_bendings(ch.ambient.dim),
                        {"trivial": (True, "construction")})


_BUILDERS = {
    "plane": _b_plane,
    "sphere": _b_sphere,
    "cylinder": _b_cylinder,
    "ellipsoid": _b_ellipsoid,
    "product": _b_product,
    "graph": _b_graph,
}

PARAM_DOCS = {
    "plane": "n (int, default 2), m (int >= n, default 3)",
    "sphere": "n (2..5, default 2), radius (default 1)",
    "cylinder": "n (default 2), radius (default 1)",
    "ellipsoid": "axes (n+1 positive floats, default 1 1.3 1.7 2.1), lift (n+1 floats, optional)",
    "product": "n1, n2 (sphere dimensions, default 1 1), r1, r2 (radii, default 1 1.5)",
    "graph": "n (default 2), curvatures (n floats), cubic (default 0.3)",
}


def list_gallery() -> list:
    """Names, parameter documentation and bendings of every gallery entry (defaults)."""
    out = []
    for name in _BUILDERS:
        e = instantiate(name)
        out.append({"name": name, "params": PARAM_DOCS[name],
                     "bendings": sorted(e.bendings),
                     "ground_truth": {k: {"value": v, "provenance": t}
                                      for k, (v, t) in e.ground_truth.items()}})
    return out


def standard_suite() -> list:
    """The chart set exercised by the acceptance checks."""
    return [
        instantiate("plane", n=2, m=4),
        instantiate("sphere", n=2), instantiate("sphere", n=3),
        instantiate("sphere", n=4), instantiate("sphere", n=5),
        instantiate("cylinder", n=3),
        instantiate("ellipsoid", axes=(1.0, 1.3, 1.7, 2.1)),
        instantiate("ellipsoid", axes=(1.0, 1.2, 1.5, 1.9, 2.4)),
        instantiate("ellipsoid", axes=(1.0, 1.2, 1.5, 1.9, 2.4, 2.8)),
        instantiate("ellipsoid", axes=(1.0, 1.3, 1.7, 2.1, 2.6), lift=(0.3, -0.5, 0.8, 0.1, -0.4)),
        instantiate("product", n1=1, n2=2),
        instantiate("graph", n=3),
    ]
