"""Common (sos-convex) polynomial Lyapunov functions for switched linear systems.

For matrices ``A_1..A_m`` we search for a form ``V`` of degree ``2d`` with::

    V sos-convex            (or merely sos, with ``convex=False``)
    V(x) - V(A_i x) - eps*|x|^(2d)   sos   for every i

and bisect on a scaling ``gamma`` of the matrices to bound the joint spectral
radius from above.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import sdp
from .poly import Polynomial, PolynomialMap, monomial_basis
from .sosprog import (
    AffinePoly,
    GramCertificate,
    Infeasible,
    MatrixSosCertificate,
    SosProgram,
    Unknown,
    scalarize,
)

logger = logging.getLogger(__name__)

DEFAULT_MARGIN = 1e-6


def _as_matrices(matrices) -> list[np.ndarray]:
    mats = [np.atleast_2d(np.asarray(A, dtype=float)) for A in matrices]
    if not mats:
        raise ValueError("at least one matrix required")
    n = mats[0].shape[0]
    for A in mats:
        if A.shape != (n, n):
            raise ValueError("matrices must be square and of equal dimension")
    return mats


def linear_images(n: int, support, A: np.ndarray) -> dict:
    """``x^a -> (A x)^a`` for every exponent in ``support``."""
    comps = PolynomialMap.from_matrix(A).components
    cache: dict = {}

    def power(i, k):
        if (i, k) not in cache:
            cache[(i, k)] = Polynomial.constant(n, 1.0) if k == 0 else power(i, k - 1) * comps[i]
        return cache[(i, k)]

    out = {}
    for e in support:
        t = Polynomial.constant(n, 1.0)
        for i, k in enumerate(e):
            if k:
                t = t * power(i, k)
        out[e] = t
    return out


def decrease_polynomial(V: Polynomial, A: np.ndarray, margin: float) -> Polynomial:
    """``V(x) - V(A x) - margin*|x|^(deg V)``."""
    d = V.degree() // 2
    return V - V.linear_substitute(A) - Polynomial.norm_squared_power(V.n, d) * margin


@dataclass
class LyapunovCertificate:
    V: Polynomial
    matrices: list
    degree: int
    margin: float
    convex: bool
    shape_certificate: GramCertificate | MatrixSosCertificate  # sos-convexity (convex) or sos of V
    decrease_certificates: list

    feasible = True

    def verify(self, tol_residual: float = 1e-6, tol_psd: float = 1e-8) -> bool:
        """Re-check every Gram identity from ``V`` and the matrices alone."""
        if not self.V.is_homogeneous() or self.V.degree() != self.degree:
            return False
        if self.convex:
            if not isinstance(self.shape_certificate, MatrixSosCertificate):
                return False
            ok = self.shape_certificate.verify(self.V.hessian(), tol_residual, tol_psd)
        else:
            ok = self.shape_certificate.verify(self.V, tol_residual, tol_psd)
        if not ok:
            return False
        if len(self.decrease_certificates) != len(self.matrices):
            return False
        for A, cert in zip(self.matrices, self.decrease_certificates):
            if not cert.verify(decrease_polynomial(self.V, np.asarray(A), self.margin), tol_residual, tol_psd):
                return False
        return True

    def sampled_decrease(self, samples: int = 10_000, seed: int = 0) -> float:
        """Smallest ``V(x) - V(A_i x)`` over random unit vectors and all modes."""
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((samples, self.V.n))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        v = self.V.eval_many(X)
        return float(min(np.min(v - self.V.eval_many(X @ np.asarray(A).T)) for A in self.matrices))

    def to_json(self) -> dict:
        return {
            "kind": "lyapunov",
            "V": self.V.to_json(),
            "matrices": [np.asarray(A).tolist() for A in self.matrices],
            "degree": self.degree,
            "margin": self.margin,
            "convex": self.convex,
            "shape": self.shape_certificate.to_json(),
            "decrease": [c.to_json() for c in self.decrease_certificates],
        }

    @classmethod
    def from_json(cls, d) -> "LyapunovCertificate":
        convex = bool(d["convex"])
        shape = MatrixSosCertificate.from_json(d["shape"]) if convex else GramCertificate.from_json(d["shape"])
        return cls(
            Polynomial.from_json(d["V"]),
            [np.array(A, dtype=float) for A in d["matrices"]],
            int(d["degree"]),
            float(d["margin"]),
            convex,
            shape,
            [GramCertificate.from_json(c) for c in d["decrease"]],
        )


def build_program(matrices, degree: int, convex: bool, margin: float, normalization: str = "pin"):
    mats = _as_matrices(matrices)
    if degree < 2 or degree % 2:
        raise ValueError("degree must be even and >= 2")
    n = mats[0].shape[0]
    d = degree // 2
    prog = SosProgram()
    support = monomial_basis(n, degree, homogeneous=True)
    V = prog.new_poly("V", n, support)
    Vx = V.expr
    if convex:
        prog.add_sos_matrix(Vx.hessian(), name="convexity")
    else:
        prog.add_sos(Vx, name="positivity")
    ball = Polynomial.norm_squared_power(n, d)
    for i, A in enumerate(mats):
        VA = Vx.compose_linear(linear_images(n, support, A))
        prog.add_sos(Vx - VA - ball * margin, name=f"decrease{i}")
    pure = [tuple(degree * int(j == i) for j in range(n)) for i in range(n)]
    if normalization == "pin":
        prog.add_linear({V.var_of(pure[0]): 1.0}, 1.0)
    elif normalization == "pin_sum":
        prog.add_linear({V.var_of(e): 1.0 for e in pure}, float(n))
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return prog, mats


def synth_common_lyapunov(matrices, degree: int, convex: bool = True, margin: float = DEFAULT_MARGIN,
                          opts: sdp.SdpOptions | None = None):
    """Return a verified :class:`LyapunovCertificate`, or :class:`Infeasible` / :class:`Unknown`."""
    last = None
    for normalization in ("pin", "pin_sum"):
        prog, mats = build_program(matrices, degree, convex, margin, normalization)
        res = prog.solve(opts)
        if res.status == "infeasible":
            return Infeasible(f"no degree-{degree} {'sos-convex' if convex else 'sos'} Lyapunov function",
                              verified=True)
        if res.feasible:
            shape = res.certificates["convexity" if convex else "positivity"]
            cert = LyapunovCertificate(
                res.values["V"], mats, degree, margin, convex, shape,
                [res.certificates[f"decrease{i}"] for i in range(len(mats))],
            )
            if cert.verify():
                return cert
            last = Unknown("certificate failed re-verification")
        else:
            last = Unknown(res.reason)
        logger.debug("normalization %s gave %s", normalization, last.reason)
    return last


def verdict(result) -> str:
    if getattr(result, "feasible", False):
        return "feasible"
    return "infeasible" if isinstance(result, Infeasible) else "unknown"


@dataclass
class JsrBound:
    matrices: list
    degree: int
    convex: bool
    upper: float
    certificate: LyapunovCertificate | None
    tol: float
    lower_probe: float  # largest tested gamma without a certificate
    lower_verdict: str  # "infeasible" or "unknown" at lower_probe
    history: list = field(default_factory=list)  # (gamma, verdict)

    def to_json(self) -> dict:
        return {
            "kind": "jsr",
            "degree": self.degree,
            "convex": self.convex,
            "upper": self.upper,
            "tol": self.tol,
            "lower_probe": self.lower_probe,
            "lower_verdict": self.lower_verdict,
            "history": [[g, v] for g, v in self.history],
            "certificate": self.certificate.to_json() if self.certificate else None,
        }


def jsr_upper_bound(matrices, degree: int = 2, convex: bool = False, tol_gamma: float = 1e-3,
                    margin: float = DEFAULT_MARGIN, opts: sdp.SdpOptions | None = None,
                    max_doublings: int = 6) -> JsrBound:
    """Smallest ``gamma`` (to ``tol_gamma``) with a certificate for ``{A_i / gamma}``.

    Only certified values are ever returned as the upper bound; stalled
    solves are recorded and treated as "no certificate" for the bracket.
    """
    mats = _as_matrices(matrices)
    history: list = []

    def probe(gamma):
        res = synth_common_lyapunov([A / gamma for A in mats], degree, convex, margin, opts)
        history.append((float(gamma), verdict(res)))
        return res

    g0 = max(float(np.linalg.norm(A, 2)) for A in mats)
    if g0 == 0.0:
        g0 = tol_gamma
    hi = g0
    best = None
    for _ in range(max_doublings + 1):
        res = probe(hi)
        if res.feasible:
            best = res
            break
        hi *= 2.0
    if best is None:
        raise RuntimeError(f"no certificate up to gamma={hi / 2:.6g} at degree {degree}")
    lo, lo_verdict = 0.0, "infeasible"
    while hi - lo > tol_gamma:
        mid = 0.5 * (lo + hi)
        res = probe(mid)
        if res.feasible:
            hi, best = mid, res
        else:
            lo, lo_verdict = mid, verdict(res)
    # scale the certificate back: it certifies {A_i / hi}
    return JsrBound(mats, degree, convex, hi, best, tol_gamma, lo, lo_verdict, history)


def degree_escalation(matrices, convex: bool, max_degree: int, min_degree: int = 2,
                      margin: float = DEFAULT_MARGIN, threads: int = 1,
                      opts: sdp.SdpOptions | None = None) -> dict[int, str]:
    """Verdict (``feasible`` / ``infeasible`` / ``unknown``) for every even degree up to ``max_degree``."""
    if max_degree % 2:
        raise ValueError("max_degree must be even")
    degrees = list(range(max(2, min_degree), max_degree + 1, 2))

    def run(deg):
        return verdict(synth_common_lyapunov(matrices, deg, convex, margin, opts))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            verdicts = list(pool.map(run, degrees))
    else:
        verdicts = [run(deg) for deg in degrees]
    return dict(zip(degrees, verdicts))


def raise_degree(cert: LyapunovCertificate) -> Polynomial:
    """``V * |x|^2``: the candidate used to test degree monotonicity."""
    return cert.V * Polynomial.norm_squared_power(cert.V.n, 1)


def ando_shih_matrices(gamma: float = 1.0) -> list[np.ndarray]:
    """The benchmark pair with JSR 1 whose best common quadratic bound is sqrt(2)."""
    A1 = np.array([[1.0, 0.0], [1.0, 0.0]])
    A2 = np.array([[0.0, 1.0], [0.0, -1.0]])
    return [gamma * A1, gamma * A2]


def similarity(matrices: Sequence[np.ndarray], T: np.ndarray) -> list[np.ndarray]:
    Ti = np.linalg.inv(T)
    return [Ti @ A @ T for A in matrices]


__all__ = [
    "LyapunovCertificate",
    "JsrBound",
    "synth_common_lyapunov",
    "jsr_upper_bound",
    "degree_escalation",
    "decrease_polynomial",
    "ando_shih_matrices",
    "scalarize",
]
