"""Sum-of-squares programs compiled to block SDPs, and Gram certificates.

The central objects are :class:`AffinePoly` (a polynomial whose coefficients
are affine in scalar decision variables), :class:`SosProgram` (unknown
polynomials plus sos / sos-matrix / equality constraints) and
:class:`GramCertificate` (the solver-free proof that a concrete polynomial is
a sum of squares).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import sdp
from .poly import (
    DimensionMismatch,
    Exponents,
    PolyMatrix,
    Polynomial,
    grlex_key,
    monomial_basis,
)

logger = logging.getLogger(__name__)

CONST = -1  # variable key of the constant part inside AffinePoly
BORDERLINE_T = 1e-4  # centered optima in (-BORDERLINE_T, -1e-7) are re-solved in primal form


class OddDegree(ValueError):
    pass


class NotSymmetric(ValueError):
    pass


# ---------------------------------------------------------------------------
# certificates and verdicts


def gram_polynomial(n: int, basis: Sequence[Exponents], Q: np.ndarray) -> Polynomial:
    """``z(x)^T Q z(x)`` for the monomial vector ``z`` given by ``basis``."""
    terms: dict[Exponents, float] = {}
    N = len(basis)
    for i in range(N):
        zi = basis[i]
        for j in range(i, N):
            q = Q[i, j] if i == j else 2.0 * Q[i, j]
            if q:
                e = tuple(a + b for a, b in zip(zi, basis[j]))
                terms[e] = terms.get(e, 0.0) + float(q)
    return Polynomial(n, terms)


def psd_project(Q: np.ndarray) -> np.ndarray:
    if Q.size == 0:
        return Q
    w, U = np.linalg.eigh(0.5 * (Q + Q.T))
    return (U * np.maximum(w, 0.0)) @ U.T


@dataclass
class GramCertificate:
    """``p = z^T Q z`` with ``Q`` PSD; verifiable without any solver."""

    n: int
    basis: list
    Q: np.ndarray
    residual: float
    lam_min: float
    poly: Polynomial | None = None
    label: str = ""

    feasible = True

    def gram_poly(self) -> Polynomial:
        return gram_polynomial(self.n, self.basis, self.Q)

    def recompute(self, p: Polynomial | None = None) -> tuple[float, float]:
        p = self.poly if p is None else p
        if p is None:
            raise ValueError("no polynomial attached to the certificate")
        residual = (p.to_float() - self.gram_poly()).max_abs_coeff()
        lam = float(np.linalg.eigvalsh(self.Q)[0]) if self.Q.size else 0.0
        return residual, lam

    def verify(self, p: Polynomial | None = None, tol_residual: float = 1e-6, tol_psd: float = 1e-8) -> bool:
        """Residual within ``tol_residual*(1+max|coeff p|)``, ``lambda_min(Q) >= -tol_psd*(1+||Q||)``."""
        p = self.poly if p is None else p
        if list(self.basis) != sorted(self.basis, key=grlex_key):
            return False
        residual, lam = self.recompute(p)
        scale = 1.0 + p.max_abs_coeff()
        return bool(residual <= tol_residual * scale and lam >= -tol_psd * (1.0 + np.linalg.norm(self.Q)))

    def to_json(self) -> dict:
        out = {
            "n": self.n,
            "basis": [list(e) for e in self.basis],
            "gram": [[float(f"{v:.17g}") for v in row] for row in np.asarray(self.Q).tolist()],
            "residual": float(f"{self.residual:.17g}"),
            "lambda_min": float(f"{self.lam_min:.17g}"),
        }
        if self.poly is not None:
            out["poly"] = self.poly.to_json()
        if self.label:
            out["label"] = self.label
        return out

    @classmethod
    def from_json(cls, d: Mapping) -> "GramCertificate":
        basis = [tuple(e) for e in d["basis"]]
        Q = np.array(d["gram"], dtype=float).reshape(len(basis), len(basis))
        poly = Polynomial.from_json(d["poly"]) if "poly" in d else None
        return cls(int(d["n"]), basis, Q, float(d["residual"]), float(d["lambda_min"]), poly, d.get("label", ""))


@dataclass
class MatrixSosCertificate:
    """Certificate that ``y^T M(x) y`` (variables ``(x, y)``) is sos with a y-bilinear basis."""

    size: int
    gram: GramCertificate

    feasible = True

    @property
    def residual(self) -> float:
        return self.gram.residual

    @property
    def lam_min(self) -> float:
        return self.gram.lam_min

    def verify(self, M: PolyMatrix | None = None, tol_residual: float = 1e-6, tol_psd: float = 1e-8) -> bool:
        nx = self.gram.n - self.size
        for e in self.gram.basis:
            if sum(e[nx:]) != 1:
                return False
        p = scalarize(M) if M is not None else None
        return self.gram.verify(p, tol_residual, tol_psd)

    def to_json(self) -> dict:
        return {"size": self.size, "gram": self.gram.to_json()}

    @classmethod
    def from_json(cls, d: Mapping) -> "MatrixSosCertificate":
        return cls(int(d["size"]), GramCertificate.from_json(d["gram"]))


@dataclass
class Infeasible:
    """Evidence of infeasibility: a dual (moment) functional, when available."""

    reason: str = ""
    moments: dict | None = None  # monomial -> value, for single-polynomial checks
    pairing: float | None = None
    moment_lam_min: float | None = None
    verified: bool = False

    feasible = False


@dataclass
class Unknown:
    """Solver stalled or the returned point failed independent verification."""

    reason: str = ""

    feasible = False


def scalarize(M: PolyMatrix) -> Polynomial:
    """``y^T M(x) y`` as a polynomial in ``(x, y)``."""
    r, c = M.shape
    if r != c:
        raise NotSymmetric("sos matrices must be square")
    n = M.n
    total = Polynomial.zero(n + r)
    for i in range(r):
        for j in range(r):
            if M[i, j].is_zero():
                continue
            yy = [0] * (n + r)
            yy[n + i] += 1
            yy[n + j] += 1
            total = total + M[i, j].embed(n + r) * Polynomial.monomial(yy)
    return total


# ---------------------------------------------------------------------------
# affine polynomial expressions


class AffinePoly:
    """Polynomial whose coefficients are affine functions of decision variables.

    ``terms[e][v]`` is the coefficient of decision variable ``v`` in the
    coefficient of monomial ``e``; ``v == CONST`` holds the constant part.
    """

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: dict | None = None):
        self.n = n
        self.terms: dict[Exponents, dict[int, float]] = terms or {}

    @classmethod
    def from_poly(cls, p: Polynomial) -> "AffinePoly":
        return cls(p.n, {e: {CONST: c} for e, c in p.items()})

    @classmethod
    def coerce(cls, x, n: int) -> "AffinePoly":
        if isinstance(x, AffinePoly):
            return x
        if isinstance(x, Polynomial):
            return cls.from_poly(x)
        return cls.from_poly(Polynomial.constant(n, x))

    def copy(self) -> "AffinePoly":
        return AffinePoly(self.n, {e: dict(v) for e, v in self.terms.items()})

    def _accumulate(self, other: "AffinePoly", factor: float = 1.0) -> None:
        for e, vs in other.terms.items():
            tgt = self.terms.setdefault(e, {})
            for v, c in vs.items():
                tgt[v] = tgt.get(v, 0.0) + factor * c

    def __add__(self, other):
        other = AffinePoly.coerce(other, self.n)
        if other.n != self.n:
            raise DimensionMismatch("ambient dimensions differ")
        out = self.copy()
        out._accumulate(other)
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = AffinePoly.coerce(other, self.n)
        if other.n != self.n:
            raise DimensionMismatch("ambient dimensions differ")
        out = self.copy()
        out._accumulate(other, -1.0)
        return out

    def __rsub__(self, other):
        return AffinePoly.coerce(other, self.n) - self

    def __neg__(self):
        return self * -1.0

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return AffinePoly(self.n, {e: {v: c * other for v, c in vs.items()} for e, vs in self.terms.items()})
        if isinstance(other, Polynomial):
            if other.n != self.n:
                raise DimensionMismatch("ambient dimensions differ")
            out: dict = {}
            for qe, qc in other.items():
                qc = float(qc)
                for e, vs in self.terms.items():
                    key = tuple(a + b for a, b in zip(e, qe))
                    tgt = out.setdefault(key, {})
                    for v, c in vs.items():
                        tgt[v] = tgt.get(v, 0.0) + c * qc
            return AffinePoly(self.n, out)
        return NotImplemented

    __rmul__ = __mul__

    def variables(self) -> set[int]:
        return {v for vs in self.terms.values() for v in vs if v != CONST}

    def support(self) -> list[Exponents]:
        return [e for e, vs in self.terms.items() if any(c != 0 for c in vs.values())]

    def degree(self) -> int:
        s = self.support()
        return max((sum(e) for e in s), default=-1)

    def diff(self, i: int) -> "AffinePoly":
        out = {}
        for e, vs in self.terms.items():
            k = e[i]
            if k:
                ne = list(e)
                ne[i] -= 1
                out[tuple(ne)] = {v: c * k for v, c in vs.items()}
        return AffinePoly(self.n, out)

    def embed(self, n_new: int) -> "AffinePoly":
        pad = (0,) * (n_new - self.n)
        return AffinePoly(n_new, {e + pad: dict(vs) for e, vs in self.terms.items()})

    def compose_linear(self, images: Mapping[Exponents, Polynomial]) -> "AffinePoly":
        """Substitute monomials by given polynomials (e.g. ``x^a -> (A x)^a``)."""
        n_out = next(iter(images.values())).n if images else self.n
        out = AffinePoly(n_out)
        for e, vs in self.terms.items():
            img = images[e]
            for qe, qc in img.items():
                tgt = out.terms.setdefault(qe, {})
                for v, c in vs.items():
                    tgt[v] = tgt.get(v, 0.0) + c * float(qc)
        return out

    def instantiate(self, values: np.ndarray) -> Polynomial:
        out = {}
        for e, vs in self.terms.items():
            s = 0.0
            for v, c in vs.items():
                s += c if v == CONST else c * float(values[v])
            out[e] = s
        return Polynomial(self.n, out)

    def hessian(self) -> list[list["AffinePoly"]]:
        g = [self.diff(i) for i in range(self.n)]
        return [[g[i].diff(j) for j in range(self.n)] for i in range(self.n)]


def scalarize_affine(M: Sequence[Sequence[AffinePoly]]) -> AffinePoly:
    r = len(M)
    n = M[0][0].n
    out = AffinePoly(n + r)
    for i in range(r):
        for j in range(r):
            yy = [0] * (n + r)
            yy[n + i] += 1
            yy[n + j] += 1
            out._accumulate(M[i][j].embed(n + r) * Polynomial.monomial(yy))
    return out


# ---------------------------------------------------------------------------
# Gram basis selection


def gram_basis(support: Iterable[Exponents], n: int, groups: Sequence[Sequence[int]] = ()) -> list[Exponents]:
    """Half-degree basis for a polynomial with the given support.

    Keeps monomials whose total degree, per-variable degrees and per-group
    degrees lie within half the corresponding ranges of the support.  Every
    bound is implied by the Newton polytope, so no sos decomposition is lost.
    """
    support = list(support)
    if not support:
        return []
    degs = [sum(e) for e in support]
    lo, hi = min(degs), max(degs)
    if hi % 2:
        raise OddDegree(f"degree {hi} is odd")
    var_hi = [max(e[i] for e in support) // 2 for i in range(n)]
    var_lo = [-(-min(e[i] for e in support) // 2) for i in range(n)]
    group_bounds = []
    for g in groups:
        gd = [sum(e[i] for i in g) for e in support]
        group_bounds.append((list(g), -(-min(gd) // 2), max(gd) // 2))
    basis = []
    for e in monomial_basis(n, hi // 2, mindeg=-(-lo // 2)):
        if any(e[i] > var_hi[i] or e[i] < var_lo[i] for i in range(n)):
            continue
        if any(not (glo <= sum(e[i] for i in g) <= ghi) for g, glo, ghi in group_bounds):
            continue
        basis.append(e)
    return basis


def bilinear_basis(x_support: Iterable[Exponents], nx: int, ny: int) -> list[Exponents]:
    """``{x^a * y_j}`` with ``x^a`` in the half-degree basis of the entries' support."""
    xs = list(x_support)
    if not xs:
        return []
    degs = [sum(e) for e in xs]
    lo, hi = min(degs), max(degs)
    var_hi = [max(e[i] for e in xs) // 2 for i in range(nx)]
    xb = [e for e in monomial_basis(nx, hi // 2, mindeg=-(-lo // 2)) if all(e[i] <= var_hi[i] for i in range(nx))]
    out = []
    for e in xb:
        for j in range(ny):
            out.append(e + tuple(int(k == j) for k in range(ny)))
    return sorted(out, key=grlex_key)


# ---------------------------------------------------------------------------
# programs


@dataclass
class UnknownPoly:
    """Polynomial with fixed support and one decision variable per monomial."""

    name: str
    n: int
    support: list
    var_ids: list

    @property
    def expr(self) -> AffinePoly:
        return AffinePoly(self.n, {e: {v: 1.0} for e, v in zip(self.support, self.var_ids)})

    def var_of(self, e: Exponents) -> int:
        return self.var_ids[self.support.index(tuple(e))]

    def instantiate(self, values: np.ndarray) -> Polynomial:
        return Polynomial(self.n, {e: float(values[v]) for e, v in zip(self.support, self.var_ids)})


@dataclass
class _SosConstraint:
    name: str
    expr: AffinePoly
    basis: list
    matrix_size: int = 0  # > 0 for scalarized sos-matrix constraints
    multiplier: bool = False  # Gram block used only inside identities


@dataclass
class SosResult:
    status: str  # "feasible" | "infeasible" | "unknown"
    values: dict = field(default_factory=dict)
    certificates: dict = field(default_factory=dict)
    raw: np.ndarray | None = None
    sdp_solution: sdp.SdpSolution | None = None
    reason: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


class SosProgram:
    """Affine sos program: unknown polynomials, sos / sos-matrix / equality constraints."""

    def __init__(self):
        self.unknowns: dict[str, UnknownPoly] = {}
        self.n_vars = 0
        self.sos_constraints: list[_SosConstraint] = []
        self.equalities: list[tuple[str, AffinePoly]] = []
        self.linear: list[tuple[dict, float]] = []
        self.objective: dict[int, float] = {}
        self.identities: list[tuple[str, AffinePoly, list]] = []

    def new_poly(self, name: str, n: int, support: Sequence[Exponents], symmetry: Sequence[Sequence[int]] = ()) -> UnknownPoly:
        if name in self.unknowns:
            raise ValueError(f"duplicate unknown {name!r}")
        support = sorted({tuple(e) for e in support}, key=grlex_key)
        ids = list(range(self.n_vars, self.n_vars + len(support)))
        self.n_vars += len(support)
        u = UnknownPoly(name, n, support, ids)
        self.unknowns[name] = u
        for perm in symmetry:
            sset = set(support)
            for e in support:
                pe = tuple(e[perm[i]] for i in range(n))
                if pe not in sset:
                    raise ValueError("support is not closed under the declared symmetry")
                if pe != e:
                    self.linear.append(({u.var_of(e): 1.0, u.var_of(pe): -1.0}, 0.0))
        return u

    def add_sos(self, expr, name: str = "", basis: Sequence[Exponents] | None = None,
                groups: Sequence[Sequence[int]] = ()) -> None:
        expr = AffinePoly.coerce(expr, getattr(expr, "n", 0))
        if basis is None:
            basis = gram_basis(expr.support(), expr.n, groups)
        name = name or f"sos{len(self.sos_constraints)}"
        self.sos_constraints.append(_SosConstraint(name, expr, sorted(basis, key=grlex_key)))

    def add_sos_matrix(self, M, name: str = "") -> None:
        """``M`` is a square grid of AffinePoly / Polynomial entries; require it to be an sos matrix."""
        r = len(M)
        n = next(e.n for row in M for e in row)
        grid = [[AffinePoly.coerce(M[i][j], n) for j in range(r)] for i in range(r)]
        for i in range(r):
            for j in range(i + 1, r):
                diff = grid[i][j] - grid[j][i]
                if any(abs(c) > 1e-12 for vs in diff.terms.values() for c in vs.values()):
                    raise NotSymmetric(f"entry ({i},{j}) differs from ({j},{i})")
        x_support = {e for row in grid for ent in row for e in ent.support()}
        if x_support and max(sum(e) for e in x_support) % 2:
            raise OddDegree("sos-matrix entries must have even degree")
        scal = scalarize_affine(grid)
        basis = bilinear_basis(x_support, n, r)
        name = name or f"sosmat{len(self.sos_constraints)}"
        self.sos_constraints.append(_SosConstraint(name, scal, basis, matrix_size=r))

    def add_sos_multiplier(self, name: str, n: int, basis: Sequence[Exponents]) -> int:
        """A fresh sos polynomial ``z^T Q z`` over ``basis``, usable only inside :meth:`add_identity`."""
        self.sos_constraints.append(_SosConstraint(name, AffinePoly(n), sorted(basis, key=grlex_key),
                                                   multiplier=True))
        return len(self.sos_constraints) - 1

    def add_identity(self, expr, terms: Sequence[tuple[int, Polynomial]], name: str = "") -> None:
        """Require ``expr + sum_b sigma_b * mult_b == 0`` coefficientwise.

        ``terms`` pairs block indices from :meth:`add_sos_multiplier` with
        fixed polynomials; this avoids a separate unknown per multiplier.
        """
        expr = AffinePoly.coerce(expr, getattr(expr, "n", 0))
        for blk, _ in terms:
            if not self.sos_constraints[blk].multiplier:
                raise ValueError("identity terms must refer to multiplier blocks")
        self.identities.append((name or f"id{len(self.identities)}", expr, list(terms)))

    def add_equality(self, expr, name: str = "") -> None:
        """Require every coefficient of ``expr`` to vanish."""
        expr = AffinePoly.coerce(expr, getattr(expr, "n", 0))
        self.equalities.append((name or f"eq{len(self.equalities)}", expr))

    def add_linear(self, coeffs: Mapping[int, float], rhs: float) -> None:
        self.linear.append((dict(coeffs), float(rhs)))

    def minimize(self, coeffs: Mapping[int, float]) -> None:
        self.objective = dict(coeffs)

    # compilation
    def compile(self) -> tuple[sdp.SdpProblem, list]:
        rows: list[tuple[dict, dict, float]] = []  # (gram entries {(blk,i,j): c}, free {v: c}, rhs)
        for blk, con in enumerate(self.sos_constraints):
            if con.multiplier:
                continue
            pair_rows: dict[Exponents, dict] = {}
            B = con.basis
            for i in range(len(B)):
                for j in range(i, len(B)):
                    e = tuple(a + b for a, b in zip(B[i], B[j]))
                    pair_rows.setdefault(e, {})[(blk, i, j)] = 1.0
            monos = set(pair_rows) | set(con.expr.terms)
            for e in sorted(monos, key=grlex_key):
                vs = con.expr.terms.get(e, {})
                free = {v: -c for v, c in vs.items() if v != CONST and c != 0}
                rhs = vs.get(CONST, 0.0)
                gram = pair_rows.get(e, {})
                if not gram and not free:
                    if abs(rhs) > 0:
                        # monomial unreachable by the Gram basis yet required: keep, yields infeasibility
                        rows.append(({}, {}, rhs))
                    continue
                rows.append((gram, free, rhs))
        for _, expr in self.equalities:
            for e in sorted(expr.terms, key=grlex_key):
                vs = expr.terms[e]
                free = {v: c for v, c in vs.items() if v != CONST and c != 0}
                rhs = -vs.get(CONST, 0.0)
                if not free and rhs == 0:
                    continue
                rows.append(({}, free, rhs))
        for _, expr, terms in self.identities:
            acc: dict[Exponents, list] = {}
            for e, vs in expr.terms.items():
                slot = acc.setdefault(e, [{}, {}, 0.0])
                for v, c in vs.items():
                    if v == CONST:
                        slot[2] -= c
                    elif c != 0:
                        slot[1][v] = slot[1].get(v, 0.0) + c
            for blk, mult in terms:
                B = self.sos_constraints[blk].basis
                mterms = [(me, float(mc)) for me, mc in mult.items() if mc != 0]
                for i in range(len(B)):
                    for j in range(i, len(B)):
                        e0 = tuple(a + b for a, b in zip(B[i], B[j]))
                        for me, mc in mterms:
                            slot = acc.setdefault(tuple(a + b for a, b in zip(e0, me)), [{}, {}, 0.0])
                            slot[0][(blk, i, j)] = slot[0].get((blk, i, j), 0.0) + mc
            for e in sorted(acc, key=grlex_key):
                gram, free, rhs = acc[e]
                if not gram and not free and rhs == 0:
                    continue
                rows.append((gram, free, rhs))
        for coeffs, rhs in self.linear:
            rows.append(({}, dict(coeffs), rhs))

        return self._assemble(rows, center=False)[0], rows

    def _assemble(self, rows, center: bool) -> tuple[sdp.SdpProblem, int | None]:
        """Build the SDP; with ``center`` every Gram block is ``Q' + t*I`` and ``t <= 1`` is maximized."""
        k = len(rows)
        dims = [len(c.basis) for c in self.sos_constraints]
        n_free = self.n_vars + (1 if center else 0)
        t_id = self.n_vars if center else None
        n_rows = k + (1 if center else 0)
        A = [np.zeros((n_rows, d, d)) for d in dims]
        A_free = np.zeros((n_rows, n_free))
        b = np.zeros(n_rows)
        for r, (gram, free, rhs) in enumerate(rows):
            for (blk, i, j), c in gram.items():
                if i == j:
                    A[blk][r, i, i] += c
                    if center:
                        A_free[r, t_id] += c
                else:
                    A[blk][r, i, j] += c
                    A[blk][r, j, i] += c
            for v, c in free.items():
                A_free[r, v] += c
            b[r] = rhs
        C = [np.zeros((d, d)) for d in dims]
        c_free = np.zeros(n_free)
        if center:
            # slack block s = 1 - t
            dims = dims + [1]
            slack = np.zeros((n_rows, 1, 1))
            slack[k, 0, 0] = 1.0
            A.append(slack)
            C.append(np.zeros((1, 1)))
            A_free[k, t_id] = 1.0
            b[k] = 1.0
            c_free[t_id] = -1.0
        else:
            for v, c in self.objective.items():
                c_free[v] = c
        return sdp.SdpProblem(dims, C, A, b, A_free, c_free), t_id

    def _rows(self):
        return self.compile()[1]

    def solve(self, opts: sdp.SdpOptions | None = None, tol_residual: float = 1e-7,
              center: bool | None = None) -> SosResult:
        """Solve and independently re-verify every constraint.

        Without an objective the program is solved in centered form (maximize
        the smallest Gram eigenvalue ``t``, capped at 1): ``t* >= 0`` means
        feasible, and for ``t* < 0`` the dual multipliers give an improving
        ray of the plain feasibility problem, which is checked before
        ``infeasible`` is reported.
        """
        if center is None:
            center = not self.objective and bool(self.sos_constraints)
        plain, rows = self.compile()
        prob, t_id = self._assemble(rows, center) if center else (plain, None)
        try:
            sol = sdp.solve(prob, opts)
            if center and sol.form == "dual" and (opts is None or opts.form == "auto") and sol.w is not None \
                    and -BORDERLINE_T < float(sol.w[t_id]) < -1e-7:
                # near-zero t*: the dual-form Gram matrices are too coarse to decide, refine
                sol = sdp.solve(prob, replace(opts or sdp.SdpOptions(), form="primal"))
        except sdp.IllConditioned as exc:
            return SosResult("unknown", reason=f"ill-conditioned: {exc}")
        if sol.status is sdp.Status.PRIMAL_INFEASIBLE:
            ray = sol.ray[: plain.k] if sol.ray is not None else None
            return self._infeasible(plain, ray, sol)
        if sol.status is not sdp.Status.OPTIMAL:
            # a stalled centered solve often already holds a valid dual ray
            if center and sol.y is not None and sol.w is not None and float(sol.w[t_id]) < -1e-7:
                res = self._infeasible(plain, sol.y[: plain.k], sol, float(sol.w[t_id]))
                if res.status == "infeasible":
                    return res
            return SosResult("unknown", sdp_solution=sol, reason=f"solver status {sol.status.value}")
        values = sol.w if sol.w is not None else np.zeros(0)
        X = sol.X
        if center:
            t_star = float(values[t_id])
            values = values[: self.n_vars]
            X = [Xb + t_star * np.eye(Xb.shape[0]) for Xb in X[:-1]]
            if t_star < -1e-7:
                y = sol.y[: plain.k]
                return self._infeasible(plain, y, sol, t_star)
        res = SosResult("feasible", raw=values, sdp_solution=sol)
        for name, u in self.unknowns.items():
            res.values[name] = u.instantiate(values)
        for blk, con in enumerate(self.sos_constraints):
            if con.multiplier:
                Qc = psd_project(np.asarray(X[blk], dtype=float))
                sigma = gram_polynomial(con.expr.n, con.basis, Qc)
                lam = float(np.linalg.eigvalsh(Qc)[0]) if Qc.size else 0.0
                res.certificates[con.name] = GramCertificate(con.expr.n, list(con.basis), Qc, 0.0, lam, sigma,
                                                             con.name)
                continue
            p = con.expr.instantiate(values)
            cert = make_certificate(p, con.basis, X[blk], label=con.name, tol_residual=tol_residual)
            if cert is None:
                res.status = "unknown"
                res.reason = f"constraint {con.name} failed independent verification"
                logger.debug(res.reason)
                return res
            res.certificates[con.name] = MatrixSosCertificate(con.matrix_size, cert) if con.matrix_size else cert
        for name, expr, terms in self.identities:
            p = expr.instantiate(values)
            scale = 1.0 + p.max_abs_coeff()
            for blk, mult in terms:
                prod = res.certificates[self.sos_constraints[blk].name].poly * mult
                scale = max(scale, 1.0 + prod.max_abs_coeff())
                p = p + prod
            if p.max_abs_coeff() > tol_residual * 10 * scale:
                res.status = "unknown"
                res.reason = f"identity {name} residual {p.max_abs_coeff():.2e}"
                return res
        for name, expr in self.equalities:
            p = expr.instantiate(values)
            scale = 1.0 + max((abs(c) for vs in expr.terms.values() for v, c in vs.items() if v == CONST), default=0.0)
            if p.max_abs_coeff() > tol_residual * 10 * scale:
                res.status = "unknown"
                res.reason = f"equality {name} residual {p.max_abs_coeff():.2e}"
                return res
        return res

    def _infeasible(self, plain: sdp.SdpProblem, ray, sol, t_star: float | None = None) -> SosResult:
        if ray is not None and float(plain.b @ ray) > 0:
            ray = ray / float(plain.b @ ray)
            if sdp.verify_infeasibility_ray(plain, ray, tol_psd=1e-7):
                res = SosResult("infeasible", sdp_solution=sol, reason="verified dual ray")
                res.raw = ray
                return res
        why = "unverified infeasibility ray"
        if t_star is not None:
            why += f" (t*={t_star:.3e})"
        return SosResult("unknown", sdp_solution=sol, reason=why)


def make_certificate(p: Polynomial, basis: Sequence[Exponents], Q: np.ndarray, label: str = "",
                     tol_residual: float = 1e-7) -> GramCertificate | None:
    """Clip ``Q`` to the PSD cone and accept it if ``p - z^T Q z`` stays small."""
    Q = psd_project(np.asarray(Q, dtype=float))
    cert = GramCertificate(p.n, list(basis), Q, 0.0, 0.0, p, label)
    residual, lam = cert.recompute()
    cert.residual, cert.lam_min = residual, lam
    if residual > tol_residual * (1.0 + p.max_abs_coeff()):
        logger.debug("gram residual %.3e too large for %s", residual, label)
        return None
    return cert


# ---------------------------------------------------------------------------
# single-polynomial checks


def _moment_certificate(rows, ray: np.ndarray, basis, p: Polynomial) -> Infeasible:
    """Turn an improving ray into a moment functional and check it independently.

    ``mu = -ray`` pairs negatively with ``p`` while its moment matrix
    ``M(mu)[i, j] = mu(z_i z_j)`` is PSD, which no sum of squares allows.
    """
    mu = -np.asarray(ray)
    moments: dict = {}
    unmatched = False
    for r, (gram, _, _) in enumerate(rows):
        if not gram:
            unmatched = True
            continue
        _, i, j = next(iter(gram))
        moments[tuple(a + b for a, b in zip(basis[i], basis[j]))] = float(mu[r])
    N = len(basis)
    M = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            M[i, j] = moments.get(tuple(a + b for a, b in zip(basis[i], basis[j])), 0.0)
    pairing = sum(float(c) * moments.get(e, 0.0) for e, c in p.items())
    lam = float(np.linalg.eigvalsh(M)[0]) if N else 0.0
    scale = max(1.0, np.abs(M).max(initial=0.0))
    verified = unmatched or (pairing < 0 and lam >= -1e-7 * scale)
    reason = "monomial outside the Gram basis span" if unmatched else "separating moment functional"
    return Infeasible(reason, moments, pairing, lam, verified)


def check_sos(p: Polynomial, basis: Sequence[Exponents] | None = None, groups: Sequence[Sequence[int]] = (),
              opts: sdp.SdpOptions | None = None, tol_residual: float = 1e-7):
    """Search for a Gram certificate of ``p``.

    Returns :class:`GramCertificate`, :class:`Infeasible` (with a moment
    functional separating ``p`` from the sos cone) or :class:`Unknown`.
    """
    if p.is_zero():
        return GramCertificate(p.n, [], np.zeros((0, 0)), 0.0, 0.0, p)
    if p.degree() % 2:
        raise OddDegree(f"degree {p.degree()} is odd")
    p = p.to_float()
    if basis is None:
        basis = gram_basis(p.terms, p.n, groups)
    prog = SosProgram()
    prog.add_sos(AffinePoly.from_poly(p), name="p", basis=basis)
    res = prog.solve(opts, tol_residual=tol_residual)
    if res.feasible:
        return res.certificates["p"]
    if res.status == "infeasible":
        inf = _moment_certificate(prog._rows(), res.raw, prog.sos_constraints[0].basis, p)
        return inf if inf.verified else Unknown("moment functional failed verification")
    return Unknown(res.reason)


def check_sos_matrix(M: PolyMatrix, opts: sdp.SdpOptions | None = None):
    if not M.is_symmetric(1e-12):
        raise NotSymmetric("matrix is not symmetric")
    prog = SosProgram()
    prog.add_sos_matrix([[M[i, j] for j in range(M.shape[1])] for i in range(M.shape[0])], name="M")
    res = prog.solve(opts)
    if res.feasible:
        return res.certificates["M"]
    if res.status == "infeasible":
        return Infeasible(res.reason, verified=True)
    return Unknown(res.reason)


# sos-convexity -------------------------------------------------------------

FORMULATIONS = ("hessian", "gradient", "lambda_half")


def sosconvex_polynomial(p: Polynomial, formulation: str) -> tuple[Polynomial, list]:
    """The 2n-variable polynomial whose sos-ness is tested, plus degree groups.

    ``gradient`` and ``lambda_half`` are returned in shifted variables
    ``(x, h)`` (``y = x + h`` resp. ``x = u - h, y = u + h``); the change of
    variables is invertible, so sos-ness is unaffected, and it exposes the
    zero set ``h = 0`` to the basis pruning.
    """
    n = p.n
    xs = [Polynomial.variable(2 * n, i) for i in range(n)]
    hs = [Polynomial.variable(2 * n, n + i) for i in range(n)]
    P = p.to_float()
    if formulation == "hessian":
        return scalarize(P.hessian()), [list(range(n, 2 * n))]
    if formulation == "gradient":
        shifted = P.compose([x + h for x, h in zip(xs, hs)])
        base = P.embed(2 * n)
        lin = Polynomial.zero(2 * n)
        for i, g in enumerate(P.gradient()):
            lin = lin + g.embed(2 * n) * hs[i]
        return shifted - base - lin, [list(range(n, 2 * n)), list(range(n))]
    if formulation in ("lambda_half", "lambda"):
        plus = P.compose([x + h for x, h in zip(xs, hs)])
        minus = P.compose([x - h for x, h in zip(xs, hs)])
        return (plus + minus) * 0.5 - P.embed(2 * n), [list(range(n, 2 * n)), list(range(n))]
    raise ValueError(f"unknown formulation {formulation!r}")


def check_sosconvex(p: Polynomial, formulation: str = "hessian", opts: sdp.SdpOptions | None = None):
    if p.degree() % 2:
        raise OddDegree(f"degree {p.degree()} is odd")
    if p.degree() <= 1:
        return MatrixSosCertificate(p.n, GramCertificate(2 * p.n, [], np.zeros((0, 0)), 0.0, 0.0,
                                                         Polynomial.zero(2 * p.n)))
    if formulation == "hessian":
        return check_sos_matrix(p.to_float().hessian(), opts)
    g, groups = sosconvex_polynomial(p, formulation)
    if g.is_zero():
        return GramCertificate(g.n, [], np.zeros((0, 0)), 0.0, 0.0, g)
    return check_sos(g.chop(1e-14), groups=groups, opts=opts)


def sos_margin(p: Polynomial, opts: sdp.SdpOptions | None = None) -> tuple[float, GramCertificate | None]:
    """Largest ``eps`` with ``p - eps*(sum x_i^2)^d`` sos, for a form of degree ``2d``."""
    if not p.is_homogeneous() or p.degree() % 2:
        raise ValueError("sos_margin expects an even-degree form")
    d = p.degree() // 2
    prog = SosProgram()
    eps = prog.new_poly("eps", p.n, [(0,) * p.n])
    e_id = eps.var_ids[0]
    expr = AffinePoly.from_poly(p.to_float()) - (eps.expr * Polynomial.norm_squared_power(p.n, d))
    prog.add_sos(expr, name="p")
    prog.minimize({e_id: -1.0})
    res = prog.solve(opts)
    if not res.feasible:
        return -math.inf, None
    return float(res.values["eps"].coeff((0,) * p.n)), res.certificates["p"]
