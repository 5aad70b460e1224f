"""Multiple sos-convex Lyapunov functions whose pointwise maximum is a common Lyapunov function.

For an assignment ``k(i, j)`` we search for forms ``V_1..V_K`` with::

    V_k sos-convex
    V_{k(i,j)}(x) - V_j(A_i x) - eps*|x|^(2d)   sos   for every mode i and index j

Then ``W = max_k V_k`` decreases along every mode: ``W(A_i x) = V_j(A_i x)``
for some ``j``, which is below ``V_{k(i,j)}(x) <= W(x)``.

Indices are 0-based throughout; ``table[i][j]`` is ``k(i, j)``.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import sdp
from .lyap import DEFAULT_MARGIN, _as_matrices, linear_images
from .poly import Polynomial, monomial_basis
from .sosprog import GramCertificate, Infeasible, MatrixSosCertificate, SosProgram, Unknown

logger = logging.getLogger(__name__)

ENUMERATION_CAP = 4096


class EnumerationExhausted(RuntimeError):
    pass


class EnumerationTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Assignment:
    table: tuple  # table[i][j] = k

    def __init__(self, table):
        object.__setattr__(self, "table", tuple(tuple(int(k) for k in row) for row in table))

    @property
    def m(self) -> int:
        return len(self.table)

    @property
    def K(self) -> int:
        return len(self.table[0]) if self.table else 0

    def validate(self, m: int, K: int) -> None:
        if self.m != m or any(len(row) != K for row in self.table):
            raise ValueError(f"assignment must be an {m} x {K} table")
        if any(not 0 <= k < K for row in self.table for k in row):
            raise ValueError(f"assignment entries must lie in 0..{K - 1}")

    def __call__(self, i: int, j: int) -> int:
        return self.table[i][j]

    def to_json(self) -> list:
        return [list(row) for row in self.table]

    @classmethod
    def from_json(cls, data) -> "Assignment":
        if isinstance(data, dict):
            data = data["assignment"]
        return cls(data)


def enumerate_assignments(m: int, K: int):
    """All ``K^(mK)`` tables in lexicographic order of the flattened (row-major) table."""
    for flat in itertools.product(range(K), repeat=m * K):
        yield Assignment([flat[i * K:(i + 1) * K] for i in range(m)])


@dataclass
class MultiLyapunovCertificate:
    Vs: list
    convexity: list  # MatrixSosCertificate per V_k
    decrease: dict  # (i, j) -> GramCertificate
    assignment: Assignment
    matrices: list
    degree: int
    margin: float

    feasible = True

    @property
    def K(self) -> int:
        return len(self.Vs)

    @property
    def n(self) -> int:
        return self.Vs[0].n

    def decrease_polynomial(self, i: int, j: int) -> Polynomial:
        k = self.assignment(i, j)
        ball = Polynomial.norm_squared_power(self.n, self.degree // 2)
        return self.Vs[k] - self.Vs[j].linear_substitute(np.asarray(self.matrices[i])) - ball * self.margin

    def verify(self, tol_residual: float = 1e-6, tol_psd: float = 1e-8) -> bool:
        m, K = len(self.matrices), self.K
        try:
            self.assignment.validate(m, K)
        except ValueError:
            return False
        if len(self.convexity) != K:
            return False
        for V, cert in zip(self.Vs, self.convexity):
            if not V.is_homogeneous() or V.degree() != self.degree:
                return False
            if not cert.verify(V.hessian(), tol_residual, tol_psd):
                return False
        for i in range(m):
            for j in range(K):
                cert = self.decrease.get((i, j))
                if cert is None or not cert.verify(self.decrease_polynomial(i, j), tol_residual, tol_psd):
                    return False
        return True

    def to_json(self) -> dict:
        return {
            "kind": "multi",
            "Vs": [V.to_json() for V in self.Vs],
            "convexity": [c.to_json() for c in self.convexity],
            "decrease": [{"i": i, "j": j, "cert": c.to_json()} for (i, j), c in sorted(self.decrease.items())],
            "assignment": self.assignment.to_json(),
            "matrices": [np.asarray(A).tolist() for A in self.matrices],
            "degree": self.degree,
            "margin": self.margin,
        }

    @classmethod
    def from_json(cls, d) -> "MultiLyapunovCertificate":
        return cls(
            [Polynomial.from_json(v) for v in d["Vs"]],
            [MatrixSosCertificate.from_json(c) for c in d["convexity"]],
            {(int(e["i"]), int(e["j"])): GramCertificate.from_json(e["cert"]) for e in d["decrease"]},
            Assignment.from_json(d["assignment"]),
            [np.array(A, dtype=float) for A in d["matrices"]],
            int(d["degree"]),
            float(d["margin"]),
        )


def eval_max(cert, x) -> float | np.ndarray:
    """``W(x) = max_k V_k(x)``; ``x`` may be a single point or an ``(N, n)`` array."""
    Vs = cert.Vs if hasattr(cert, "Vs") else list(cert)
    x = np.asarray(x, dtype=float)
    n = Vs[0].n
    if x.shape[-1] != n:
        raise ValueError(f"point has dimension {x.shape[-1]}, expected {n}")
    if x.ndim == 1:
        return max(float(V.eval(x)) for V in Vs)
    return np.max(np.stack([V.eval_many(x) for V in Vs]), axis=0)


def sampled_max_decrease(cert: MultiLyapunovCertificate, samples: int = 10_000, seed: int = 0) -> float:
    """Smallest ``W(x) - W(A_i x)`` over random unit vectors and all modes."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((samples, cert.n))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    w = eval_max(cert, X)
    return float(min(np.min(w - eval_max(cert, X @ np.asarray(A).T)) for A in cert.matrices))


def _solve_assignment(mats, K: int, degree: int, assignment: Assignment, margin: float, opts):
    n = mats[0].shape[0]
    prog = SosProgram()
    support = monomial_basis(n, degree, homogeneous=True)
    Vs = [prog.new_poly(f"V{k}", n, support) for k in range(K)]
    for k, V in enumerate(Vs):
        prog.add_sos_matrix(V.expr.hessian(), name=f"convex{k}")
    ball = Polynomial.norm_squared_power(n, degree // 2)
    images = [linear_images(n, support, A) for A in mats]
    for i in range(len(mats)):
        for j in range(K):
            k = assignment(i, j)
            expr = Vs[k].expr - Vs[j].expr.compose_linear(images[i]) - ball * margin
            prog.add_sos(expr, name=f"dec{i}_{j}")
    # one global scale: pinning each V_k separately would not be without loss of generality
    pure = tuple([degree] + [0] * (n - 1))
    prog.add_linear({V.var_of(pure): 1.0 for V in Vs}, float(K))
    res = prog.solve(opts)
    if res.status == "infeasible":
        return Infeasible("no multiple Lyapunov functions for this assignment", verified=True)
    if not res.feasible:
        return Unknown(res.reason)
    cert = MultiLyapunovCertificate(
        [res.values[f"V{k}"] for k in range(K)],
        [res.certificates[f"convex{k}"] for k in range(K)],
        {(i, j): res.certificates[f"dec{i}_{j}"] for i in range(len(mats)) for j in range(K)},
        assignment, mats, degree, margin,
    )
    return cert if cert.verify() else Unknown("certificate failed re-verification")


def synth_multi(matrices, K: int, degree: int, assignment: Assignment | None = None,
                margin: float = DEFAULT_MARGIN, force: bool = False, threads: int = 1,
                opts: sdp.SdpOptions | None = None):
    """Certificate for a given assignment, or the first feasible one in lexicographic order.

    With an explicit ``assignment`` returns the certificate, :class:`Infeasible`
    or :class:`Unknown`. Enumeration raises :class:`EnumerationExhausted` when
    no assignment yields a certificate.
    """
    mats = _as_matrices(matrices)
    if K < 1:
        raise ValueError("K must be >= 1")
    if degree < 2 or degree % 2:
        raise ValueError("degree must be even and >= 2")
    m = len(mats)
    if assignment is not None:
        assignment.validate(m, K)
        return _solve_assignment(mats, K, degree, assignment, margin, opts)
    total = K ** (m * K)
    if total > ENUMERATION_CAP and not force:
        raise EnumerationTooLarge(f"{total} assignments exceed the cap of {ENUMERATION_CAP}; pass force=True")
    verdicts = {"infeasible": 0, "unknown": 0}
    batch = max(1, threads)
    it = enumerate_assignments(m, K)
    with ThreadPoolExecutor(max_workers=batch) as pool:
        while True:
            chunk = list(itertools.islice(it, batch))
            if not chunk:
                break
            results = list(pool.map(lambda a: _solve_assignment(mats, K, degree, a, margin, opts), chunk))
            for res in results:
                if res.feasible:
                    return res
                verdicts["infeasible" if isinstance(res, Infeasible) else "unknown"] += 1
    raise EnumerationExhausted(
        f"all {total} assignments failed at degree {degree} "
        f"({verdicts['infeasible']} infeasible, {verdicts['unknown']} unknown)")


def duplicate(cert: MultiLyapunovCertificate) -> MultiLyapunovCertificate:
    """A ``K+1`` certificate built from a ``K`` one by repeating ``V_K`` (no solve)."""
    K = cert.K
    Vs = cert.Vs + [cert.Vs[-1]]
    convexity = cert.convexity + [cert.convexity[-1]]
    table = [list(row) + [row[K - 1]] for row in cert.assignment.table]
    decrease = dict(cert.decrease)
    for i in range(len(cert.matrices)):
        decrease[(i, K)] = cert.decrease[(i, K - 1)]
    return MultiLyapunovCertificate(Vs, convexity, decrease, Assignment(table), cert.matrices, cert.degree,
                                    cert.margin)
