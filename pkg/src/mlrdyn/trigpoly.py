"""Exact trigonometric polynomials in several joint angles.

A :class:`TrigPoly` is a finite sum ``sum_e C_e prod_j sin(t_j)^a_j cos(t_j)^b_j``
with per-joint exponents ``a_j + b_j <= 2`` and array-valued coefficients
``C_e``.  Products, sums, transposes and derivatives are carried out on
the exponent dictionaries, so no fitting is involved anywhere.
"""

from __future__ import annotations

import itertools
from typing import Iterable, Mapping

import numpy as np

# per-joint monomials s^a c^b, a + b <= 2
Z2 = ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))
# same with s^2 rewritten as 1 - c^2
Z2_REDUCED = ((0, 0), (1, 0), (0, 1), (1, 1), (0, 2))

Key = tuple  # tuple of (a, b) pairs, one per joint


def _check_key(key: Key, n: int) -> None:
    if len(key) != n:
        raise ValueError(f"exponent tuple has {len(key)} joints, expected {n}")
    for a, b in key:
        if a < 0 or b < 0 or a + b > 2:
            raise ValueError(f"exponents (sin^{a}, cos^{b}) exceed degree 2")


class TrigPoly:
    """Array-valued trigonometric polynomial in ``n`` joint angles."""

    __slots__ = ("n", "shape", "terms")
    # make ndarray @ TrigPoly defer to __rmatmul__
    __array_ufunc__ = None

    def __init__(self, n: int, terms: Mapping[Key, np.ndarray] | None = None, shape=()):
        self.n = int(n)
        self.shape = tuple(shape)
        self.terms: dict[Key, np.ndarray] = {}
        for key, c in (terms or {}).items():
            key = tuple(tuple(int(x) for x in e) for e in key)
            _check_key(key, self.n)
            c = np.asarray(c, dtype=float)
            if c.shape != self.shape:
                if not self.terms and not shape:
                    self.shape = c.shape
                else:
                    raise ValueError(f"coefficient shape {c.shape} != {self.shape}")
            self._acc(key, c)

    # construction --------------------------------------------------------

    @classmethod
    def constant(cls, n: int, value) -> TrigPoly:
        value = np.asarray(value, dtype=float)
        return cls(n, {((0, 0),) * n: value}, value.shape)

    @classmethod
    def joint(cls, n: int, k: int, const, sin, cos) -> TrigPoly:
        """``const + sin * s_k + cos * c_k`` in joint ``k`` (zero based)."""
        const = np.asarray(const, dtype=float)

        def key(e):
            return tuple(e if j == k else (0, 0) for j in range(n))

        return cls(n, {key((0, 0)): const, key((1, 0)): sin, key((0, 1)): cos}, const.shape)

    def _acc(self, key: Key, c: np.ndarray) -> None:
        if key in self.terms:
            self.terms[key] = self.terms[key] + c
        else:
            self.terms[key] = np.array(c, dtype=float)

    def copy(self) -> TrigPoly:
        return TrigPoly(self.n, {k: v.copy() for k, v in self.terms.items()}, self.shape)

    # algebra -------------------------------------------------------------

    def _like(self, terms: dict, shape) -> TrigPoly:
        out = TrigPoly(self.n, shape=shape)
        out.terms = terms
        return out

    def __add__(self, other) -> TrigPoly:
        if not isinstance(other, TrigPoly):
            other = TrigPoly.constant(self.n, np.broadcast_to(other, self.shape))
        out = self.copy()
        for k, c in other.terms.items():
            out._acc(k, c)
        return out

    __radd__ = __add__

    def __neg__(self) -> TrigPoly:
        return self._like({k: -c for k, c in self.terms.items()}, self.shape)

    def __sub__(self, other) -> TrigPoly:
        return self + (-other if isinstance(other, TrigPoly) else -np.asarray(other))

    def __mul__(self, scalar) -> TrigPoly:
        if isinstance(scalar, TrigPoly):
            return self._product(scalar, np.multiply)
        return self._like({k: c * scalar for k, c in self.terms.items()}, self.shape)

    __rmul__ = __mul__

    def __matmul__(self, other) -> TrigPoly:
        if isinstance(other, TrigPoly):
            return self._product(other, np.matmul)
        other = np.asarray(other, dtype=float)
        terms = {k: c @ other for k, c in self.terms.items()}
        shape = np.zeros(self.shape) @ np.zeros(other.shape)
        return self._like(terms, np.shape(shape))

    def __rmatmul__(self, other) -> TrigPoly:
        other = np.asarray(other, dtype=float)
        terms = {k: other @ c for k, c in self.terms.items()}
        shape = np.zeros(other.shape) @ np.zeros(self.shape)
        return self._like(terms, np.shape(shape))

    def _product(self, other: TrigPoly, op) -> TrigPoly:
        if other.n != self.n:
            raise ValueError("joint counts differ")
        terms: dict[Key, np.ndarray] = {}
        shape = None
        for ka, ca in self.terms.items():
            for kb, cb in other.terms.items():
                key = tuple((a1 + a2, b1 + b2) for (a1, b1), (a2, b2) in zip(ka, kb))
                _check_key(key, self.n)
                c = op(ca, cb)
                shape = c.shape
                if key in terms:
                    terms[key] += c
                else:
                    terms[key] = c
        if shape is None:
            shape = np.shape(op(np.zeros(self.shape), np.zeros(other.shape)))
        return self._like(terms, shape)

    @property
    def T(self) -> TrigPoly:
        return self._like({k: c.T for k, c in self.terms.items()}, self.shape[::-1])

    def __getitem__(self, idx) -> TrigPoly:
        terms = {k: np.asarray(c[idx]) for k, c in self.terms.items()}
        shape = np.shape(np.empty(self.shape)[idx])
        return self._like(terms, shape)

    def reshape(self, *shape) -> TrigPoly:
        terms = {k: c.reshape(*shape) for k, c in self.terms.items()}
        return self._like(terms, np.empty(self.shape).reshape(*shape).shape)

    @staticmethod
    def stack(polys: Iterable[TrigPoly], axis: int = -1) -> TrigPoly:
        polys = list(polys)
        n = polys[0].n
        keys = set().union(*(p.terms for p in polys))
        terms = {}
        for k in keys:
            terms[k] = np.stack(
                [p.terms.get(k, np.zeros(p.shape)) for p in polys], axis=axis
            )
        shape = np.stack([np.empty(p.shape) for p in polys], axis=axis).shape
        out = TrigPoly(n, shape=shape)
        out.terms = terms
        return out

    # calculus and simplification ----------------------------------------

    def derivative(self, k: int) -> TrigPoly:
        """Exact partial derivative with respect to joint ``k`` (zero based)."""
        out: dict[Key, np.ndarray] = {}
        for key, c in self.terms.items():
            a, b = key[k]
            # d(s^a c^b) = a s^(a-1) c^(b+1) - b s^(a+1) c^(b-1)
            for coef, e in ((a, (a - 1, b + 1)), (-b, (a + 1, b - 1))):
                if coef == 0:
                    continue
                nk = key[:k] + (e,) + key[k + 1 :]
                if nk in out:
                    out[nk] = out[nk] + coef * c
                else:
                    out[nk] = coef * c
        return self._like(out, self.shape)

    def reduced(self) -> TrigPoly:
        """Rewrite every ``s_j^2`` as ``1 - c_j^2``; the result is unique."""
        terms = dict(self.terms)
        for j in range(self.n):
            nxt: dict[Key, np.ndarray] = {}
            for key, c in terms.items():
                if key[j] == (2, 0):
                    for e, sgn in (((0, 0), 1.0), ((0, 2), -1.0)):
                        nk = key[:j] + (e,) + key[j + 1 :]
                        nxt[nk] = nxt[nk] + sgn * c if nk in nxt else sgn * c
                else:
                    nxt[key] = nxt[key] + c if key in nxt else c
            terms = nxt
        return self._like(terms, self.shape)

    def pruned(self, tol: float = 0.0) -> TrigPoly:
        keep = {k: c for k, c in self.terms.items() if np.max(np.abs(c), initial=0.0) > tol}
        return self._like(keep, self.shape)

    def degree(self) -> tuple[int, ...]:
        return tuple(
            max((sum(key[j]) for key in self.terms), default=0) for j in range(self.n)
        )

    # evaluation ----------------------------------------------------------

    def __call__(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        s, c = np.sin(theta), np.cos(theta)
        out = np.zeros(self.shape)
        for key, coef in self.terms.items():
            f = 1.0
            for j, (a, b) in enumerate(key):
                f *= s[j] ** a * c[j] ** b
            out = out + f * coef
        return out

    def coefficients(self, basis: TrigBasis) -> np.ndarray:
        """Coefficient array of shape ``self.shape + (basis.size,)``."""
        out = np.zeros(self.shape + (basis.size,))
        for key, c in self.terms.items():
            try:
                q = basis.index[key]
            except KeyError:
                raise ValueError(f"term {key} is not in the basis") from None
            out[..., q] += c
        return out

    def __repr__(self):
        return f"TrigPoly(n={self.n}, shape={self.shape}, terms={len(self.terms)})"


class TrigBasis:
    """Ordered product basis ``prod_j z_{e_j}(theta_j)`` over per-joint monomials.

    ``reduced=False`` uses ``{1, s, c, s^2, sc, c^2}`` per joint (``6**n``
    functions, linearly dependent through ``s^2 + c^2 = 1``);
    ``reduced=True`` drops ``s^2`` (``5**n`` independent functions).
    The first element is always the constant 1.
    """

    def __init__(self, n: int, reduced: bool = False):
        self.n = int(n)
        self.reduced = bool(reduced)
        self.monomials = Z2_REDUCED if reduced else Z2
        self.elements: tuple[Key, ...] = tuple(
            tuple(self.monomials[i] for i in idx)
            for idx in itertools.product(range(len(self.monomials)), repeat=self.n)
        )
        self.index = {e: q for q, e in enumerate(self.elements)}
        # per-joint monomial index of each element, shape (size, n)
        self.exponent_index = np.array(
            list(itertools.product(range(len(self.monomials)), repeat=self.n)), dtype=np.int64
        ).reshape(self.size, self.n)
        self._derivs = [self._derivative_table(k) for k in range(self.n)]

    @property
    def size(self) -> int:
        return len(self.elements)

    def element(self, q: int) -> TrigPoly:
        return TrigPoly(self.n, {self.elements[q]: 1.0})

    def _derivative_table(self, k: int) -> np.ndarray:
        D = np.zeros((self.size, self.size))
        for q, e in enumerate(self.elements):
            d = TrigPoly(self.n, {e: 1.0}).derivative(k)
            if self.reduced:
                d = d.reduced()
            D[q] = d.coefficients(self)
        return D

    def derivative_table(self, k: int) -> np.ndarray:
        """Row ``q`` holds the coefficients of ``d F_q / d theta_k`` in this basis."""
        return self._derivs[k]

    def evaluate(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        s, c = np.sin(theta), np.cos(theta)
        z = np.array([[s[j] ** a * c[j] ** b for a, b in self.monomials] for j in range(self.n)])
        F = np.ones(self.size)
        for j in range(self.n):
            F *= z[j, self.exponent_index[:, j]]
        return F

    def represent(self, p: TrigPoly) -> np.ndarray:
        return (p.reduced() if self.reduced else p).coefficients(self)
