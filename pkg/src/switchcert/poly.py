"""Sparse multivariate polynomials, polynomial maps and switched systems.

A :class:`Polynomial` is an immutable mapping from exponent tuples to
nonzero coefficients.  Coefficients are floats by default; feeding
:class:`fractions.Fraction` coefficients keeps every ring operation exact,
which the certificate verification paths use.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations_with_replacement
from numbers import Number
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponents = tuple  # tuple[int, ...] of length n


class DimensionMismatch(ValueError):
    pass


def grlex_key(e: Sequence[int]) -> tuple:
    """Sort key for graded lexicographic order: ascending degree, ``x1^d`` first within a degree."""
    return (sum(e), tuple(-k for k in e))


def monomial_basis(n: int, d: int, homogeneous: bool = False, mindeg: int = 0) -> list[Exponents]:
    """Exponent vectors of total degree ``d`` (homogeneous) or in ``[mindeg, d]``.

    Order is graded lexicographic: ascending degree, and within a degree
    ``x1^d`` comes first.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if d < 0:
        return []
    degrees = [d] if homogeneous else range(max(mindeg, 0), d + 1)
    out: list[Exponents] = []
    for k in degrees:
        block = []
        for combo in combinations_with_replacement(range(n), k):
            e = [0] * n
            for i in combo:
                e[i] += 1
            block.append(tuple(e))
        block.sort(reverse=True)
        out.extend(block)
    return out


def _add_exp(a: Exponents, b: Exponents) -> Exponents:
    return tuple(i + j for i, j in zip(a, b))


def _is_zero(c) -> bool:
    return c == 0


class Polynomial:
    """Immutable sparse polynomial in ``n`` variables."""

    __slots__ = ("_n", "_terms", "_hash")

    def __init__(self, n: int, terms: Mapping[Exponents, Number] | Iterable = ()):
        if n < 0:
            raise ValueError("n must be nonnegative")
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: dict[Exponents, Number] = {}
        for e, c in items:
            e = tuple(int(k) for k in e)
            if len(e) != n:
                raise DimensionMismatch(f"exponent {e} has length {len(e)}, expected {n}")
            if any(k < 0 for k in e):
                raise ValueError(f"negative exponent in {e}")
            acc[e] = acc.get(e, 0) + c
        self._n = n
        self._terms = {e: c for e, c in acc.items() if not _is_zero(c)}
        self._hash = None

    # construction helpers
    @classmethod
    def zero(cls, n: int) -> "Polynomial":
        return cls(n)

    @classmethod
    def constant(cls, n: int, c: Number) -> "Polynomial":
        return cls(n, {(0,) * n: c})

    @classmethod
    def monomial(cls, e: Sequence[int], c: Number = 1) -> "Polynomial":
        return cls(len(e), {tuple(e): c})

    @classmethod
    def variable(cls, n: int, i: int) -> "Polynomial":
        e = [0] * n
        e[i] = 1
        return cls(n, {tuple(e): 1})

    @classmethod
    def variables(cls, n: int) -> list["Polynomial"]:
        return [cls.variable(n, i) for i in range(n)]

    @classmethod
    def linear_form(cls, a: Sequence[Number]) -> "Polynomial":
        n = len(a)
        return cls(n, {tuple(int(i == j) for j in range(n)): c for i, c in enumerate(a)})

    @classmethod
    def norm_squared_power(cls, n: int, d: int) -> "Polynomial":
        """``(x1^2 + ... + xn^2)^d``."""
        s = cls(n, {tuple(2 * int(i == j) for j in range(n)): 1 for i in range(n)})
        return s ** d

    # basic accessors
    @property
    def n(self) -> int:
        return self._n

    @property
    def terms(self) -> dict[Exponents, Number]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def sorted_terms(self) -> list[tuple[Exponents, Number]]:
        return sorted(self._terms.items(), key=lambda t: grlex_key(t[0]))

    def coeff(self, e: Sequence[int]) -> Number:
        return self._terms.get(tuple(e), 0)

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        if not self._terms:
            return -1
        return max(sum(e) for e in self._terms)

    def mindegree(self) -> int:
        if not self._terms:
            return -1
        return min(sum(e) for e in self._terms)

    def is_homogeneous(self) -> bool:
        return len({sum(e) for e in self._terms}) <= 1

    def max_abs_coeff(self) -> float:
        return max((abs(float(c)) for c in self._terms.values()), default=0.0)

    def is_exact(self) -> bool:
        return all(isinstance(c, (int, Fraction)) for c in self._terms.values())

    # conversions
    def to_float(self) -> "Polynomial":
        return Polynomial(self._n, {e: float(c) for e, c in self._terms.items()})

    def to_exact(self) -> "Polynomial":
        return Polynomial(self._n, {e: Fraction(c) for e, c in self._terms.items()})

    def chop(self, tol: float) -> "Polynomial":
        return Polynomial(self._n, {e: c for e, c in self._terms.items() if abs(c) > tol})

    def embed(self, n_new: int, positions: Sequence[int] | None = None) -> "Polynomial":
        """Re-express in ``n_new`` variables; variable ``i`` goes to ``positions[i]``."""
        if positions is None:
            positions = range(self._n)
        positions = list(positions)
        out = {}
        for e, c in self._terms.items():
            ne = [0] * n_new
            for i, k in enumerate(e):
                ne[positions[i]] += k
            out[tuple(ne)] = c
        return Polynomial(n_new, out)

    # ring operations
    def _check(self, other: "Polynomial") -> None:
        if other._n != self._n:
            raise DimensionMismatch(f"ambient dimensions differ: {self._n} vs {other._n}")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, Number):
            return Polynomial.constant(self._n, other)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for e, c in other._terms.items():
            out[e] = out.get(e, 0) + c
        return Polynomial(self._n, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self._n, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Number):
            return self.scale(other)
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[Exponents, Number] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = _add_exp(e1, e2)
                out[e] = out.get(e, 0) + c1 * c2
        return Polynomial(self._n, out)

    def __rmul__(self, other):
        if isinstance(other, Number):
            return self.scale(other)
        return NotImplemented

    def __truediv__(self, other):
        if isinstance(other, Number):
            if isinstance(other, int) and self.is_exact():
                other = Fraction(other)
            return self.scale(1 / other)
        return NotImplemented

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("only nonnegative integer powers")
        result = Polynomial.constant(self._n, 1)
        base = self
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def scale(self, c: Number) -> "Polynomial":
        return Polynomial(self._n, {e: c * v for e, v in self._terms.items()})

    def __eq__(self, other):
        if isinstance(other, Number):
            other = Polynomial.constant(self._n, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._n == other._n and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self._n, frozenset(self._terms.items())))
        return self._hash

    def allclose(self, other: "Polynomial", atol: float = 1e-9) -> bool:
        return (self - other).max_abs_coeff() <= atol

    # calculus
    def diff(self, i: int) -> "Polynomial":
        out = {}
        for e, c in self._terms.items():
            k = e[i]
            if k:
                ne = list(e)
                ne[i] = k - 1
                out[tuple(ne)] = c * k
        return Polynomial(self._n, out)

    def gradient(self) -> list["Polynomial"]:
        return [self.diff(i) for i in range(self._n)]

    def hessian(self) -> "PolyMatrix":
        g = self.gradient()
        rows = []
        for i in range(self._n):
            row = []
            for j in range(self._n):
                row.append(rows[j][i] if j < i else g[i].diff(j))
            rows.append(row)
        return PolyMatrix(rows)

    # evaluation and composition
    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        """Evaluate at a point (length ``n``) or at a batch of points (shape ``(N, n)``)."""
        if isinstance(x, np.ndarray) and x.ndim == 2:
            return self.eval_many(x)
        x = list(x)
        if len(x) != self._n:
            raise DimensionMismatch(f"point has length {len(x)}, expected {self._n}")
        total = 0
        for e, c in self._terms.items():
            t = c
            for xi, k in zip(x, e):
                if k:
                    t = t * xi ** k
            total = total + t
        return total

    def eval_many(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self._n:
            raise DimensionMismatch(f"points have shape {X.shape}, expected (N, {self._n})")
        if not self._terms:
            return np.zeros(X.shape[0])
        E = np.array(list(self._terms.keys()), dtype=int)
        c = np.array([float(v) for v in self._terms.values()])
        maxdeg = int(E.max()) if E.size else 0
        # powers[k][:, i] = X[:, i] ** k
        powers = np.ones((maxdeg + 1,) + X.shape)
        for k in range(1, maxdeg + 1):
            powers[k] = powers[k - 1] * X
        cols = np.arange(self._n)
        out = np.zeros(X.shape[0])
        for row, coef in zip(E, c):
            out += coef * np.prod(powers[row, :, cols], axis=0)
        return out

    def compose(self, f: "PolynomialMap | Sequence[Polynomial]") -> "Polynomial":
        comps = list(f.components if isinstance(f, PolynomialMap) else f)
        if len(comps) != self._n:
            raise DimensionMismatch(f"map has {len(comps)} components, polynomial has {self._n} variables")
        if not comps:
            return self
        m = comps[0].n
        cache: dict[tuple[int, int], Polynomial] = {}

        def power(i: int, k: int) -> Polynomial:
            if (i, k) not in cache:
                cache[(i, k)] = comps[i] ** k if k <= 1 else power(i, k - 1) * comps[i]
            return cache[(i, k)]

        out = Polynomial.zero(m)
        for e, c in self._terms.items():
            t = Polynomial.constant(m, c)
            for i, k in enumerate(e):
                if k:
                    t = t * power(i, k)
            out = out + t
        return out

    def linear_substitute(self, A: np.ndarray) -> "Polynomial":
        """``p(A x)`` for a square matrix ``A``."""
        return self.compose(PolynomialMap.from_matrix(A))

    # formatting / serialization
    def __repr__(self):
        return f"Polynomial({self._n}, {self.to_string()!r})"

    def to_string(self, names: Sequence[str] | None = None) -> str:
        if not self._terms:
            return "0"
        names = names or [f"x{i + 1}" for i in range(self._n)]
        parts = []
        for e, c in sorted(self._terms.items(), key=lambda t: (-sum(t[0]), grlex_key(t[0])[1])):
            mono = "*".join(
                names[i] if k == 1 else f"{names[i]}^{k}" for i, k in enumerate(e) if k
            )
            parts.append(f"{c}*{mono}" if mono else f"{c}")
        return " + ".join(parts)

    def to_json(self) -> dict:
        return {
            "n": self._n,
            "terms": [{"c": _num_to_json(c), "e": list(e)} for e, c in self.sorted_terms()],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "Polynomial":
        n = int(data["n"])
        return cls(n, [(tuple(t["e"]), _num_from_json(t["c"])) for t in data["terms"]])


def _num_to_json(c):
    if isinstance(c, Fraction):
        return c.numerator if c.denominator == 1 else f"{c.numerator}/{c.denominator}"
    if isinstance(c, int):
        return c
    return float(f"{float(c):.17g}")


def _num_from_json(c):
    if isinstance(c, str):
        return Fraction(c)
    return c


@dataclass(frozen=True)
class PolyMatrix:
    """Rectangular grid of polynomials sharing an ambient dimension."""

    rows: tuple

    def __init__(self, rows: Sequence[Sequence[Polynomial]]):
        rows = tuple(tuple(r) for r in rows)
        if not rows or not rows[0]:
            raise ValueError("empty PolyMatrix")
        width = len(rows[0])
        n = rows[0][0].n
        for r in rows:
            if len(r) != width:
                raise DimensionMismatch("ragged PolyMatrix")
            for p in r:
                if p.n != n:
                    raise DimensionMismatch("entries have different ambient dimensions")
        object.__setattr__(self, "rows", rows)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.rows[0])

    @property
    def n(self) -> int:
        return self.rows[0][0].n

    def __getitem__(self, ij):
        i, j = ij
        return self.rows[i][j]

    def is_symmetric(self, tol: float = 0.0) -> bool:
        r, c = self.shape
        if r != c:
            return False
        return all(
            (self.rows[i][j] - self.rows[j][i]).max_abs_coeff() <= tol
            for i in range(r)
            for j in range(i + 1, r)
        )

    def eval(self, x) -> np.ndarray:
        return np.array([[float(p.eval(x)) for p in row] for row in self.rows])

    @classmethod
    def constant(cls, M: np.ndarray, n: int) -> "PolyMatrix":
        M = np.asarray(M)
        return cls([[Polynomial.constant(n, v) for v in row] for row in M.tolist()])


@dataclass(frozen=True)
class PolynomialMap:
    """Map ``R^n -> R^n`` given by ``n`` component polynomials."""

    components: tuple

    def __init__(self, components: Sequence[Polynomial]):
        comps = tuple(components)
        if not comps:
            raise ValueError("a map needs at least one component")
        n = comps[0].n
        if len(comps) != n or any(c.n != n for c in comps):
            raise DimensionMismatch("component count must equal the ambient dimension")
        object.__setattr__(self, "components", comps)

    @property
    def n(self) -> int:
        return len(self.components)

    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        if isinstance(x, np.ndarray) and x.ndim == 2:
            return np.stack([c.eval_many(x) for c in self.components], axis=1)
        return np.array([float(c.eval(x)) for c in self.components])

    def degree(self) -> int:
        return max(c.degree() for c in self.components)

    def fixes_origin(self) -> bool:
        zero = (0,) * self.n
        return all(c.coeff(zero) == 0 for c in self.components)

    def is_linear(self) -> bool:
        return self.fixes_origin() and all(c.degree() <= 1 for c in self.components)

    def jacobian_at_zero(self) -> np.ndarray:
        n = self.n
        J = np.zeros((n, n))
        for i, c in enumerate(self.components):
            for j in range(n):
                J[i, j] = float(c.coeff(tuple(int(k == j) for k in range(n))))
        return J

    def compose(self, other: "PolynomialMap") -> "PolynomialMap":
        return PolynomialMap([c.compose(other) for c in self.components])

    @classmethod
    def from_matrix(cls, A) -> "PolynomialMap":
        if isinstance(A, (list, tuple)) and A and isinstance(A[0], (list, tuple)):
            rows = A
        else:
            rows = np.asarray(A).tolist()
        n = len(rows)
        if any(len(r) != n for r in rows):
            raise DimensionMismatch("matrix must be square")
        return cls([Polynomial.linear_form(r) for r in rows])

    @classmethod
    def identity(cls, n: int) -> "PolynomialMap":
        return cls(Polynomial.variables(n))

    def to_json(self) -> list:
        return [c.to_json() for c in self.components]

    @classmethod
    def from_json(cls, data) -> "PolynomialMap":
        if isinstance(data, Mapping) and "matrix" in data:
            return cls.from_matrix([[_num_from_json(v) for v in row] for row in data["matrix"]])
        if isinstance(data, Mapping) and "components" in data:
            data = data["components"]
        return cls([Polynomial.from_json(c) for c in data])


@dataclass(frozen=True)
class SwitchedSystem:
    """Difference inclusion ``x+ in conv{f_1(x), ..., f_m(x)}``."""

    modes: tuple
    meta: tuple = ()

    def __init__(self, modes: Sequence[PolynomialMap], meta: Mapping | None = None):
        modes = tuple(m if isinstance(m, PolynomialMap) else PolynomialMap.from_matrix(m) for m in modes)
        if not modes:
            raise ValueError("a switched system needs at least one mode")
        n = modes[0].n
        if any(m.n != n for m in modes):
            raise DimensionMismatch("all modes must share the state dimension")
        for i, m in enumerate(modes):
            if not m.fixes_origin():
                raise ValueError(f"mode {i} does not fix the origin")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "meta", tuple(sorted((meta or {}).items())))

    @property
    def n(self) -> int:
        return self.modes[0].n

    @property
    def m(self) -> int:
        return len(self.modes)

    @property
    def is_linear(self) -> bool:
        return all(f.is_linear() for f in self.modes)

    def matrices(self) -> list[np.ndarray]:
        """Jacobians at the origin (the exact mode matrices for linear systems)."""
        return [f.jacobian_at_zero() for f in self.modes]

    @classmethod
    def from_matrices(cls, matrices: Iterable, meta: Mapping | None = None) -> "SwitchedSystem":
        return cls([PolynomialMap.from_matrix(A) for A in matrices], meta)

    def to_json(self, as_matrices: bool | None = None) -> dict:
        if as_matrices is None:
            as_matrices = self.is_linear
        modes = []
        for f in self.modes:
            if as_matrices and f.is_linear():
                modes.append({"matrix": [[_num_to_json(float(v)) for v in row] for row in f.jacobian_at_zero()]})
            else:
                modes.append(f.to_json())
        return {"n": self.n, "modes": modes, "meta": dict(self.meta)}

    @classmethod
    def from_json(cls, data: Mapping) -> "SwitchedSystem":
        modes = [PolynomialMap.from_json(m) for m in data["modes"]]
        sys = cls(modes, data.get("meta"))
        if "n" in data and int(data["n"]) != sys.n:
            raise DimensionMismatch(f"declared n={data['n']} but modes have dimension {sys.n}")
        return sys


def dumps(obj) -> str:
    """Byte-stable JSON: sorted keys, floats with 17 significant digits."""
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def hessian(p: Polynomial) -> PolyMatrix:
    return p.hessian()


def gradient(p: Polynomial) -> list[Polynomial]:
    return p.gradient()


def compose(p: Polynomial, f) -> Polynomial:
    return p.compose(f)


def count_monomials(n: int, d: int, homogeneous: bool = False) -> int:
    return math.comb(n + d - 1, d) if homogeneous else math.comb(n + d, d)
