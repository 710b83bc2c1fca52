"""Truncated multivariate Taylor arithmetic (jets) of order <= 3.

Coefficient convention
----------------------
``MultiJet.coeffs[r]`` stores the *partial derivative* ``d^a f`` for the
multi-index ``a`` of rank ``r``, NOT the Taylor coefficient ``d^a f / a!``.
With this convention the product rule is the plain Leibniz formula

    d^c (f g) = sum_{a <= c} binom(c, a) d^a f  d^(c-a) g

and geometric formulas (Christoffel symbols, second fundamental forms)
read the stored values directly.

Multi-indices are ranked by total degree first, so a jet of lower order is
a prefix of a jet of higher order and truncation is slicing.

A jet may be array valued: ``coeffs`` has shape ``(K, *shape)`` where ``K``
is ``binom(nvars + order, order)``. Arithmetic broadcasts over ``shape``
like numpy does.
"""
from __future__ import annotations

import functools
import itertools
import math
from typing import Sequence

import numpy as np

MAX_ORDER = 3
MAX_VARS = 8


class JetError(ValueError):
    pass


@functools.lru_cache(maxsize=None)
def multi_indices(nvars: int, order: int) -> tuple[tuple[int, ...], ...]:
    """All multi-indices with |a| <= order, graded by total degree."""
    out = []
    for d in range(order + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), d):
            a = [0] * nvars
            for v in combo:
                a[v] += 1
            out.append(tuple(a))
    return tuple(out)


@functools.lru_cache(maxsize=None)
def _rank(nvars: int, order: int) -> dict:
    return {a: r for r, a in enumerate(multi_indices(nvars, order))}


def ncoeffs(nvars: int, order: int) -> int:
    return math.comb(nvars + order, order)


@functools.lru_cache(maxsize=None)
def _leibniz_table(nvars: int, order: int):
    idx = multi_indices(nvars, order)
    rank = _rank(nvars, order)
    ia, ib, w, starts = [], [], [], []
    for c in idx:
        starts.append(len(ia))
        for a in itertools.product(*(range(ci + 1) for ci in c)):
            b = tuple(ci - ai for ci, ai in zip(c, a))
            ia.append(rank[a])
            ib.append(rank[b])
            w.append(math.prod(math.comb(ci, ai) for ci, ai in zip(c, a)))
    return (np.array(ia), np.array(ib), np.array(w, dtype=float),
            np.array(starts))


@functools.lru_cache(maxsize=None)
def _diff_table(nvars: int, order: int, var: int) -> np.ndarray:
    rank = _rank(nvars, order)
    src = []
    for a in multi_indices(nvars, order - 1):
        b = list(a)
        b[var] += 1
        src.append(rank[tuple(b)])
    return np.array(src)


def _check_order(order: int) -> None:
    if not 0 <= order <= MAX_ORDER:
        raise JetError(f"jet order must be in 0..{MAX_ORDER}, got {order}")


class MultiJet:
    """Array-valued jet in ``nvars`` variables truncated at ``order``."""

    __slots__ = ("nvars", "order", "coeffs")
    __array_ufunc__ = None

    def __init__(self, nvars: int, coeffs, order: int = MAX_ORDER):
        if not 1 <= nvars <= MAX_VARS:
            raise JetError(f"nvars must be in 1..{MAX_VARS}, got {nvars}")
        _check_order(order)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.ndim == 0 or coeffs.shape[0] != ncoeffs(nvars, order):
            raise JetError(
                f"expected {ncoeffs(nvars, order)} coefficients, "
                f"got shape {coeffs.shape}")
        self.nvars = nvars
        self.order = order
        self.coeffs = coeffs

    # -- construction ----------------------------------------------------
    @classmethod
    def constant(cls, value, nvars: int, order: int = MAX_ORDER) -> "MultiJet":
        value = np.asarray(value, dtype=float)
        c = np.zeros((ncoeffs(nvars, order),) + value.shape)
        c[0] = value
        return cls(nvars, c, order)

    @classmethod
    def variables(cls, point: Sequence[float], order: int = MAX_ORDER) -> "MultiJet":
        """Vector jet ``(u_1, ..., u_n)`` of the coordinate functions at ``point``."""
        point = np.asarray(point, dtype=float)
        n = point.shape[0]
        c = np.zeros((ncoeffs(n, order), n))
        c[0] = point
        if order >= 1:
            c[1:n + 1] = np.eye(n)
        return cls(n, c, order)

    @classmethod
    def from_derivatives(cls, nvars: int, derivs: dict, order: int = MAX_ORDER,
                         shape: tuple = ()) -> "MultiJet":
        """Build a jet from ``{multi_index: partial_derivative}``."""
        rank = _rank(nvars, order)
        c = np.zeros((ncoeffs(nvars, order),) + tuple(shape))
        for a, val in derivs.items():
            c[rank[tuple(a)]] = val
        return cls(nvars, c, order)

    # -- inspection ------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.coeffs.shape[1:]

    @property
    def ndim(self) -> int:
        return self.coeffs.ndim - 1

    @property
    def value(self) -> np.ndarray:
        return self.coeffs[0]

    def derivative(self, a: Sequence[int]) -> np.ndarray:
        """Partial derivative ``d^a`` (multi-index ``a``)."""
        a = tuple(a)
        if sum(a) > self.order:
            raise JetError(f"|{a}| exceeds jet order {self.order}")
        return self.coeffs[_rank(self.nvars, self.order)[a]]

    def tensor(self, k: int) -> np.ndarray:
        """Symmetric array of all k-th partials, shape ``(n,)*k + shape``."""
        if k > self.order:
            raise JetError(f"order {k} not available in a jet of order {self.order}")
        n = self.nvars
        out = np.empty((n,) * k + self.shape)
        rank = _rank(self.nvars, self.order)
        for combo in itertools.product(range(n), repeat=k):
            a = [0] * n
            for v in combo:
                a[v] += 1
            out[combo] = self.coeffs[rank[tuple(a)]]
        return out

    def __repr__(self) -> str:
        return f"MultiJet(nvars={self.nvars}, order={self.order}, shape={self.shape})"

    # -- structural ------------------------------------------------------
    def truncate(self, order: int) -> "MultiJet":
        if order > self.order:
            raise JetError("cannot raise jet order")
        if order == self.order:
            return self
        return MultiJet(self.nvars, self.coeffs[:ncoeffs(self.nvars, order)], order)

    def __getitem__(self, key) -> "MultiJet":
        if not isinstance(key, tuple):
            key = (key,)
        return MultiJet(self.nvars, self.coeffs[(slice(None),) + key], self.order)

    def reshape(self, *shape) -> "MultiJet":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return MultiJet(self.nvars, self.coeffs.reshape((-1,) + tuple(shape)), self.order)

    def transpose(self, *axes) -> "MultiJet":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        return MultiJet(self.nvars, self.coeffs.transpose((0,) + tuple(a + 1 for a in axes)),
                        self.order)

    @property
    def T(self) -> "MultiJet":
        return self.transpose()

    def sum(self, axis=None) -> "MultiJet":
        if axis is None:
            axis = tuple(range(self.ndim))
        elif isinstance(axis, int):
            axis = (axis,)
        axis = tuple((a % self.ndim) + 1 for a in axis)
        return MultiJet(self.nvars, self.coeffs.sum(axis=axis), self.order)

    def diff(self, var: int) -> "MultiJet":
        """Partial derivative in variable ``var``; the order drops by one."""
        if self.order == 0:
            raise JetError("cannot differentiate an order-0 jet")
        return MultiJet(self.nvars, self.coeffs[_diff_table(self.nvars, self.order, var)],
                        self.order - 1)

    def gradient(self) -> "MultiJet":
        """Jet of all first partials; a new leading axis of length nvars."""
        if self.order == 0:
            raise JetError("cannot differentiate an order-0 jet")
        parts = [self.coeffs[_diff_table(self.nvars, self.order, i)]
                 for i in range(self.nvars)]
        return MultiJet(self.nvars, np.stack(parts, axis=1), self.order - 1)

    # -- arithmetic ------------------------------------------------------
    def _coerce(self, other) -> "MultiJet":
        if isinstance(other, MultiJet):
            if other.nvars != self.nvars:
                raise JetError(f"nvars mismatch: {self.nvars} vs {other.nvars}")
            return other
        return MultiJet.constant(other, self.nvars, self.order)

    def __add__(self, other):
        other = self._coerce(other)
        a, b = _align(self, other)
        return MultiJet(self.nvars, _bcast_add(a.coeffs, b.coeffs), a.order)

    __radd__ = __add__

    def __neg__(self):
        return MultiJet(self.nvars, -self.coeffs, self.order)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if isinstance(other, MultiJet):
            return jet_mul(self, other)
        other = np.asarray(other, dtype=float)
        return MultiJet(self.nvars, _expand(self.coeffs, other.ndim) * other, self.order)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, MultiJet):
            return jet_mul(self, jet_recip(other))
        other = np.asarray(other, dtype=float)
        return MultiJet(self.nvars, _expand(self.coeffs, other.ndim) / other, self.order)

    def __rtruediv__(self, other):
        return jet_recip(self) * other

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            return compose(self, _power_derivs(float(k)))
        out = MultiJet.constant(np.ones(self.shape), self.nvars, self.order)
        for _ in range(k):
            out = out * self
        return out


def _align(a: MultiJet, b: MultiJet):
    order = min(a.order, b.order)
    return a.truncate(order), b.truncate(order)


def _expand(c: np.ndarray, ndim: int) -> np.ndarray:
    extra = ndim - (c.ndim - 1)
    if extra <= 0:
        return c
    return c.reshape(c.shape[:1] + (1,) * extra + c.shape[1:])


def _bcast_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    nd = max(a.ndim, b.ndim) - 1
    return _expand(a, nd) + _expand(b, nd)


def jet_mul(a: MultiJet, b: MultiJet) -> MultiJet:
    """Elementwise (broadcasting) product, Leibniz rule truncated at the jet order."""
    if a.nvars != b.nvars:
        raise JetError(f"nvars mismatch: {a.nvars} vs {b.nvars}")
    a, b = _align(a, b)
    ia, ib, w, starts = _leibniz_table(a.nvars, a.order)
    nd = max(a.ndim, b.ndim)
    ca, cb = _expand(a.coeffs, nd), _expand(b.coeffs, nd)
    terms = ca[ia] * cb[ib]
    terms *= w.reshape((-1,) + (1,) * nd)
    return MultiJet(a.nvars, np.add.reduceat(terms, starts, axis=0), a.order)


def jet_einsum(subscripts: str, a: MultiJet, b: MultiJet) -> MultiJet:
    """Contraction of two jets over their array axes, e.g. ``'ij,jk->ik'``.

    Equivalent to forming the elementwise product and summing, but done in
    one pass over the Leibniz table.
    """
    if a.nvars != b.nvars:
        raise JetError(f"nvars mismatch: {a.nvars} vs {b.nvars}")
    a, b = _align(a, b)
    ia, ib, w, starts = _leibniz_table(a.nvars, a.order)
    lhs, out = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    terms = np.einsum(f"z{sa},z{sb},z->z{out}", a.coeffs[ia], b.coeffs[ib], w)
    return MultiJet(a.nvars, np.add.reduceat(terms, starts, axis=0), a.order)


def jet_dot(a: MultiJet, b: MultiJet, metric=None) -> MultiJet:
    """Inner product along the last axis, optionally weighted by signs."""
    if metric is not None:
        b = b * np.asarray(metric, dtype=float)
    return (a * b).sum(axis=-1)


def linear(matrix, a: MultiJet, axis: int = -1) -> MultiJet:
    """Apply a constant matrix along ``axis`` of an array-valued jet."""
    matrix = np.asarray(matrix, dtype=float)
    c = np.moveaxis(a.coeffs, axis if axis < 0 else axis + 1, -1)
    c = c @ matrix.T
    c = np.moveaxis(c, -1, axis if axis < 0 else axis + 1)
    return MultiJet(a.nvars, c, a.order)


def stack(jets: Sequence[MultiJet], axis: int = 0) -> MultiJet:
    jets = list(jets)
    order = min(j.order for j in jets)
    jets = [j.truncate(order) for j in jets]
    ax = axis + 1 if axis >= 0 else axis
    return MultiJet(jets[0].nvars, np.stack([j.coeffs for j in jets], axis=ax), order)


def compose(a: MultiJet, derivs: Sequence) -> MultiJet:
    """``phi(a)`` for a univariate ``phi`` given ``phi^(k)(a0)``, k = 0..order.

    Uses the Taylor expansion of ``phi`` about the value of ``a`` in the
    nilpotent part ``a - a0``, whose powers beyond the jet order vanish.
    """
    d = MultiJet(a.nvars, a.coeffs.copy(), a.order)
    d.coeffs[0] = 0.0
    out = MultiJet.constant(np.broadcast_to(derivs[0], a.shape), a.nvars, a.order)
    power = None
    for k in range(1, a.order + 1):
        power = d if power is None else jet_mul(power, d)
        out = out + power * (np.asarray(derivs[k]) / math.factorial(k))
    return out


def _power_derivs(p: float):
    def f(x):
        out, c = [], 1.0
        for k in range(MAX_ORDER + 1):
            out.append(c * x ** (p - k))
            c *= p - k
        return out
    return f


def _value_check(a: MultiJet, ok, msg: str):
    if not np.all(ok(a.value)):
        raise JetError(msg)


def jet_sqrt(a: MultiJet) -> MultiJet:
    _value_check(a, lambda v: v > 0, "jet_sqrt needs a positive constant term")
    s = np.sqrt(a.value)
    return compose(a, [s, 0.5 / s, -0.25 / s ** 3, 0.375 / s ** 5])


def jet_recip(a: MultiJet) -> MultiJet:
    _value_check(a, lambda v: v != 0, "jet_recip needs a nonzero constant term")
    x = a.value
    return compose(a, [1 / x, -1 / x ** 2, 2 / x ** 3, -6 / x ** 4])


def jet_sin(a: MultiJet) -> MultiJet:
    x = a.value
    return compose(a, [np.sin(x), np.cos(x), -np.sin(x), -np.cos(x)])


def jet_cos(a: MultiJet) -> MultiJet:
    x = a.value
    return compose(a, [np.cos(x), -np.sin(x), -np.cos(x), np.sin(x)])


def jet_exp(a: MultiJet) -> MultiJet:
    e = np.exp(a.value)
    return compose(a, [e, e, e, e])


def jet_inv_matrix(g: MultiJet) -> MultiJet:
    """Inverse of a square-matrix-valued jet by Newton iteration.

    Starting from the inverse of the value, each step doubles the number of
    correct orders, so two steps are exact at order 3.
    """
    n = g.shape[-1]
    x = MultiJet.constant(np.linalg.inv(g.value), g.nvars, g.order)
    eye = np.eye(n)
    steps = 0
    while (1 << steps) <= g.order:
        gx = jet_einsum("ij,jk->ik", g, x)
        x = jet_einsum("ij,jk->ik", x, 2 * eye - gx)
        steps += 1
    return x
