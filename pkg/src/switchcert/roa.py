"""Region-of-attraction certificates for switched polynomial systems.

Two steps: find an sos-convex form ``V`` for the linearized modes, then, with
``V`` fixed, prove that ``{V <= beta}`` lies in the region of attraction by
exhibiting a Positivstellensatz identity::

    -1 = t(x,y) * (|x|^2 y - 1) + sum_a sigma_a(x,y) * prod_k g_k(x)^{a_k}

with ``g_0 = beta - V`` and ``g_i = V(f_i) - V``. ``t`` is free, the
``sigma_a`` are sos, ``y`` is one extra scalar variable.

``combine="per_mode"`` (default) proves one identity per mode using only
``g_0`` and ``g_i``, so every mode decreases on the sublevel set.
``combine="joint"`` is the single identity with all ``2^(m+1)`` products;
it shows that the set where *no* mode decreases is empty, which is weaker.

``method="sprocedure"`` searches, per mode, for sos ``s`` of degree ``2r`` and
sos ``sigma`` with::

    V - V(f_i) - eps*|x|^(2j) - s*(beta - V) = sigma

and rewrites the result as a per-mode identity of the form above (multiply
by ``y^j / eps`` and use ``|x|^(2j) y^j - 1 = (|x|^2 y - 1) * sum_l (|x|^2 y)^l``).
It is one small SDP per mode instead of one with all product terms.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import sdp
from .lyap import jsr_upper_bound, synth_common_lyapunov
from .poly import Polynomial, PolynomialMap, SwitchedSystem, grlex_key, monomial_basis
from .sosprog import (
    GramCertificate,
    Infeasible,
    SosProgram,
    Unknown,
)

logger = logging.getLogger(__name__)

COMBINE_MODES = ("per_mode", "joint")
METHODS = ("auto", "sprocedure", "stengle")
SPROCEDURE_EPS = 1e-6


class NonzeroConstantTerm(ValueError):
    pass


class DegreeCapTooSmall(ValueError):
    pass


class NoFeasibleBeta(RuntimeError):
    pass


class LinearizationNotCertifiedStable(RuntimeError):
    """No sos-convex Lyapunov function found for the linearization up to the degree cap.

    This is not a proof of instability.
    """


def linearize(f: PolynomialMap) -> np.ndarray:
    if not f.fixes_origin():
        raise NonzeroConstantTerm("map does not fix the origin")
    return f.jacobian_at_zero()


def _system(system) -> SwitchedSystem:
    if isinstance(system, SwitchedSystem):
        return system
    return SwitchedSystem(system)


def generators(system: SwitchedSystem, V: Polynomial, beta: float, coord_scale: float = 1.0) -> list[Polynomial]:
    """``[beta - V, V(f_1) - V, ..., V(f_m) - V]`` in the coordinates ``x = coord_scale * z``."""
    V = V.to_float()
    n = V.n
    gens = [Polynomial.constant(n, float(beta)) - V]
    for f in system.modes:
        gens.append(V.compose(f) - V)
    if coord_scale != 1.0:
        z = [Polynomial.variable(n, i) * float(coord_scale) for i in range(n)]
        gens = [g.compose(z) for g in gens]
    return gens


def sublevel_radius(V: Polynomial, beta: float, samples: int = 2048) -> float:
    """Approximate largest ``|x|`` on ``{V <= beta}``, rounded to a power of two.

    Only used to condition the template; any positive value is sound.
    """
    th = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
    if V.n == 2:
        U = np.stack([np.cos(th), np.sin(th)], axis=1)
    else:
        U = np.random.default_rng(0).standard_normal((samples, V.n))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
    vmin = float(np.min(V.eval_many(U)))
    if vmin <= 0:
        return 1.0
    rad = (beta / vmin) ** (1.0 / V.degree())
    return float(2.0 ** round(math.log2(rad)))


def _lift(p: Polynomial, n: int) -> Polynomial:
    return p.embed(n + 1)


def _hyper(n: int) -> Polynomial:
    """``|x|^2 y - 1`` in the variables ``(x, y)``."""
    y = Polynomial.variable(n + 1, n)
    return Polynomial.norm_squared_power(n, 1).embed(n + 1) * y - 1.0


def index_family(gen_ids: Sequence[int], pruned: bool = False) -> list[tuple]:
    """Exponent vectors over ``gen_ids`` (0/1 each); ``pruned`` keeps those with at most one 1."""
    k = len(gen_ids)
    family = [a for a in itertools.product((0, 1), repeat=k)]
    if pruned:
        family = [a for a in family if sum(a) <= 1]
    return sorted(family, key=lambda a: (sum(a), [-v for v in a]))


@dataclass
class TemplatePiece:
    """One Positivstellensatz identity over the generators ``gen_ids``."""

    gen_ids: list
    factors: list  # positive scaling of each generator
    family: list  # exponent vectors a (over gen_ids)
    t: Polynomial | None = None
    sigmas: list = field(default_factory=list)  # GramCertificate per a
    residual: float = math.inf

    def to_json(self) -> dict:
        return {
            "gen_ids": list(self.gen_ids),
            "factors": list(self.factors),
            "family": [list(a) for a in self.family],
            "t": self.t.to_json() if self.t is not None else None,
            "sigmas": [s.to_json() for s in self.sigmas],
            "residual": self.residual,
        }

    @classmethod
    def from_json(cls, d) -> "TemplatePiece":
        return cls(
            [int(i) for i in d["gen_ids"]],
            [float(c) for c in d["factors"]],
            [tuple(int(v) for v in a) for a in d["family"]],
            Polynomial.from_json(d["t"]) if d.get("t") is not None else None,
            [GramCertificate.from_json(s) for s in d["sigmas"]],
            float(d.get("residual", math.inf)),
        )


def piece_identity(piece: TemplatePiece, gens: Sequence[Polynomial], n: int) -> tuple[Polynomial, float]:
    """``t*h + sum sigma_a g^a + 1`` (should vanish) and the coefficient scale of its summands."""
    lifted = [_lift(gens[g] * c, n) for g, c in zip(piece.gen_ids, piece.factors)]
    h = _hyper(n)
    total = piece.t * h if piece.t is not None else Polynomial.zero(n + 1)
    scale = total.max_abs_coeff()
    for a, cert in zip(piece.family, piece.sigmas):
        term = cert.gram_poly()
        for k, ak in enumerate(a):
            if ak:
                term = term * lifted[k]
        scale = max(scale, term.max_abs_coeff())
        total = total + term
    return total + 1.0, max(1.0, scale)


@dataclass
class RoaCertificate:
    system: SwitchedSystem
    V: Polynomial
    beta: float
    r: int  # multipliers have degree <= 2r
    combine: str
    pieces: list
    residual: float = math.inf
    coord_scale: float = 1.0  # identities are stated in z with x = coord_scale * z
    method: str = "stengle"

    feasible = True

    def verify(self, tol_residual: float = 1e-6, tol_psd: float = 1e-8) -> bool:
        """Expand every identity and re-check every Gram matrix; no solver involved."""
        if not self.beta > 0:
            return False
        n = self.system.n
        if not self.coord_scale > 0:
            return False
        gens = generators(self.system, self.V, self.beta, self.coord_scale)
        want = _expected_gen_sets(self.system.m, self.combine)
        if sorted(tuple(p.gen_ids) for p in self.pieces) != sorted(want):
            return False
        worst = 0.0
        for piece in self.pieces:
            if any(not c > 0 for c in piece.factors) or len(piece.sigmas) != len(piece.family):
                return False
            for cert in piece.sigmas:
                if cert.n != n + 1 or _lam_min(cert) < -tol_psd * (1.0 + np.linalg.norm(cert.Q)):
                    return False
                if self.method == "stengle" and any(sum(e) > self.r for e in cert.basis):
                    return False
            ident, scale = piece_identity(piece, gens, n)
            res = ident.max_abs_coeff()
            worst = max(worst, res / scale)
            if res > tol_residual * scale:
                return False
        self.residual = worst
        return True

    def sample_check(self, samples: int = 100_000, seed: int = 0, tol: float = 1e-9) -> tuple[bool, float]:
        """Sample ``{0 < V <= beta}`` and test ``V(f_i(x)) < V(x)`` for every mode."""
        X = sample_sublevel(self.V, self.beta, samples, seed)
        v = self.V.eval_many(X)
        worst = -math.inf
        for f in self.system.modes:
            d = self.V.eval_many(f.eval(X)) - v
            worst = max(worst, float(np.max(d)))
        return worst < tol, worst

    def to_json(self) -> dict:
        return {
            "kind": "roa",
            "system": self.system.to_json(as_matrices=False),
            "V": self.V.to_json(),
            "beta": self.beta,
            "r": self.r,
            "combine": self.combine,
            "pieces": [p.to_json() for p in self.pieces],
            "residual": self.residual,
            "coord_scale": self.coord_scale,
            "method": self.method,
        }

    @classmethod
    def from_json(cls, d) -> "RoaCertificate":
        return cls(
            SwitchedSystem.from_json(d["system"]),
            Polynomial.from_json(d["V"]),
            float(d["beta"]),
            int(d["r"]),
            d.get("combine", "per_mode"),
            [TemplatePiece.from_json(p) for p in d["pieces"]],
            float(d.get("residual", math.inf)),
            float(d.get("coord_scale", 1.0)),
            d.get("method", "stengle"),
        )


def _lam_min(cert: GramCertificate) -> float:
    Q = np.asarray(cert.Q, dtype=float)
    return float(np.linalg.eigvalsh(Q)[0]) if Q.size else 0.0


def _expected_gen_sets(m: int, combine: str) -> list[tuple]:
    if combine == "per_mode":
        return [(0, i) for i in range(1, m + 1)]
    if combine == "joint":
        return [tuple(range(m + 1))]
    raise ValueError(f"unknown combine mode {combine!r}")


def sample_sublevel(V: Polynomial, beta: float, samples: int, seed: int = 0) -> np.ndarray:
    """Uniform points of ``{V <= beta}`` for a positive definite form ``V``."""
    rng = np.random.default_rng(seed)
    n = V.n
    U = rng.standard_normal((samples, n))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    vu = V.eval_many(U)
    if np.any(vu <= 0):
        raise ValueError("V is not positive definite")
    rmax = (beta / vu) ** (1.0 / V.degree())
    rad = rmax * rng.random(samples) ** (1.0 / n)
    return U * rad[:, None]


@dataclass
class StengleProgram:
    program: SosProgram
    pieces: list
    sigma_names: list  # per piece, names of sigma constraints
    t_names: list
    coord_scale: float = 1.0


def build_stengle_template(system, V: Polynomial, beta: float, r: int, pruned: bool = False,
                           combine: str = "per_mode", coord_scale: float | None = None) -> StengleProgram:
    """Sos program for the identity above; affine in ``t`` and ``sigma_a`` only.

    The identity is posed in ``z = x / coord_scale`` (default: the radius of
    ``{V <= beta}``) so that the sublevel set has unit size; the change of
    variables does not affect which sets are certified empty.
    """
    system = _system(system)
    if r < 0:
        raise DegreeCapTooSmall("r must be nonnegative")
    n = system.n
    if coord_scale is None:
        coord_scale = sublevel_radius(V, beta)
    gens = generators(system, V, beta, coord_scale)
    h = _hyper(n)
    prog = SosProgram()
    pieces, sigma_names, t_names = [], [], []
    sigma_basis = monomial_basis(n + 1, r)
    for pi, gen_ids in enumerate(_expected_gen_sets(system.m, combine)):
        factors = []
        lifted = []
        for g in gen_ids:
            c = gens[g].max_abs_coeff()
            c = 1.0 / c if c > 0 else 1.0
            factors.append(c)
            lifted.append(_lift(gens[g] * c, n))
        terms = []
        names = []
        top = 0
        for a in index_family(gen_ids, pruned):
            prod = Polynomial.constant(n + 1, 1.0)
            for k, ak in enumerate(a):
                if ak:
                    prod = prod * lifted[k]
            if prod.is_zero():
                continue
            name = f"p{pi}_sigma_" + "".join(map(str, a))
            terms.append((prog.add_sos_multiplier(name, n + 1, sigma_basis), prod))
            names.append((a, name))
            top = max(top, 2 * r + prod.degree())
        t_deg = top - h.degree()
        if t_deg < 0:
            raise DegreeCapTooSmall(f"multiplier degree 2r={2 * r} leaves no room for t")
        t = prog.new_poly(f"p{pi}_t", n + 1, monomial_basis(n + 1, t_deg))
        prog.add_identity(t.expr * h + 1.0, terms, name=f"p{pi}_identity")
        pieces.append(TemplatePiece(list(gen_ids), factors, [a for a, _ in names]))
        sigma_names.append([nm for _, nm in names])
        t_names.append(t.name)
    return StengleProgram(prog, pieces, sigma_names, t_names, coord_scale)


def _margin_power(V: Polynomial) -> int:
    """Even ``j`` with ``2j >= deg V`` so that ``y^j`` is a square."""
    return 2 * max(1, math.ceil(V.degree() / 4))


def _lift_gram(cert: GramCertificate, n: int, ypow: int, scale: float) -> GramCertificate:
    """``y^(2*ypow) * cert * scale`` as a Gram certificate in ``(x, y)``."""
    basis = [tuple(e) + (ypow,) for e in cert.basis]
    order = sorted(range(len(basis)), key=lambda k: grlex_key(basis[k]))
    Q = np.asarray(cert.Q, dtype=float)[np.ix_(order, order)] * scale
    lam = float(np.linalg.eigvalsh(Q)[0]) if Q.size else 0.0
    return GramCertificate(n + 1, [basis[k] for k in order], Q, 0.0, lam)


def _sprocedure_piece(gens, factors, i: int, n: int, r: int, j: int, pruned: bool, opts):
    g0, gi = gens[0] * factors[0], gens[i] * factors[1]
    prog = SosProgram()
    s = prog.new_poly("s", n, monomial_basis(n, 2 * r))
    prog.add_sos(s.expr, name="s")
    ball = Polynomial.norm_squared_power(n, j)
    prog.add_sos(s.expr * g0 * -1.0 + (gi * -1.0 - ball * SPROCEDURE_EPS), name="sigma")
    res = prog.solve(opts)
    if not res.feasible:
        return res
    inv = 1.0 / SPROCEDURE_EPS
    half = j // 2
    unit = GramCertificate(n, [(0,) * n], np.eye(1), 0.0, 1.0)
    blocks = {(0, 0): _lift_gram(res.certificates["sigma"], n, half, inv),
              (1, 0): _lift_gram(res.certificates["s"], n, half, inv),
              (0, 1): _lift_gram(unit, n, half, inv),
              (1, 1): GramCertificate(n + 1, [(0,) * (n + 1)], np.zeros((1, 1)), 0.0, 0.0)}
    family = index_family((0, i), pruned)
    w = Polynomial.norm_squared_power(n, 1).embed(n + 1) * Polynomial.variable(n + 1, n)
    t = Polynomial.zero(n + 1)
    term = Polynomial.constant(n + 1, 1.0)
    for _ in range(j):
        t = t + term
        term = term * w
    return TemplatePiece([0, i], list(factors), family, t, [blocks[a] for a in family])


def _certify_sprocedure(system, V, beta, r, pruned, opts, tol_residual):
    n = system.n
    coord_scale = sublevel_radius(V, beta)
    gens = generators(system, V, beta, coord_scale)
    j = _margin_power(V)
    pieces = []
    for i in range(1, system.m + 1):
        factors = []
        for g in (0, i):
            c = gens[g].max_abs_coeff()
            factors.append(1.0 / c if c > 0 else 1.0)
        res = _sprocedure_piece(gens, factors, i, n, r, j, pruned, opts)
        if isinstance(res, TemplatePiece):
            pieces.append(res)
        elif res.status == "infeasible":
            return Infeasible(f"no degree-{2 * r} S-procedure multiplier for mode {i - 1} at beta={beta:.6g}",
                              verified=True)
        else:
            return Unknown(res.reason)
    cert = RoaCertificate(system, V.to_float(), float(beta), r, "per_mode", pieces, coord_scale=coord_scale,
                          method="sprocedure")
    for p in pieces:
        ident, scale = piece_identity(p, gens, n)
        p.residual = ident.max_abs_coeff() / scale
    if not cert.verify(tol_residual):
        return Unknown("identity failed re-verification after PSD clipping")
    return cert


def _certify_stengle(system, V, beta, r, pruned, combine, opts, tol_residual):
    tmpl = build_stengle_template(system, V, beta, r, pruned, combine)
    res = tmpl.program.solve(opts)
    if res.status == "infeasible":
        return Infeasible(f"no degree-{2 * r} multipliers at beta={beta:.6g}", verified=True)
    if not res.feasible:
        return Unknown(res.reason)
    pieces = []
    for piece, names, tname in zip(tmpl.pieces, tmpl.sigma_names, tmpl.t_names):
        pieces.append(TemplatePiece(piece.gen_ids, piece.factors, piece.family, res.values[tname],
                                    [res.certificates[nm] for nm in names]))
    cert = RoaCertificate(system, V.to_float(), float(beta), r, combine, pieces, coord_scale=tmpl.coord_scale)
    gens = generators(system, V, beta, tmpl.coord_scale)
    for p in pieces:
        ident, scale = piece_identity(p, gens, system.n)
        p.residual = ident.max_abs_coeff() / scale
    if not cert.verify(tol_residual):
        return Unknown("identity failed re-verification after PSD clipping")
    return cert


def roa_certify(system, V: Polynomial, beta: float, r: int, pruned: bool = False, combine: str = "per_mode",
                opts: sdp.SdpOptions | None = None, tol_residual: float = 1e-6, method: str = "auto"):
    """Certificate that ``{V <= beta}`` is in the region of attraction, else Infeasible / Unknown.

    ``method="auto"`` tries the S-procedure first (per-mode only) and falls
    back to the full template when it does not succeed.
    """
    system = _system(system)
    if not beta > 0:
        raise ValueError("beta must be positive")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if combine not in COMBINE_MODES:
        raise ValueError(f"unknown combine mode {combine!r}")
    if r < 0:
        raise DegreeCapTooSmall("r must be nonnegative")
    if method == "sprocedure" and combine != "per_mode":
        raise ValueError("the S-procedure form only proves per-mode decrease")
    if method != "stengle" and combine == "per_mode":
        res = _certify_sprocedure(system, V, beta, r, pruned, opts, tol_residual)
        if res.feasible or method == "sprocedure":
            return res
    return _certify_stengle(system, V, beta, r, pruned, combine, opts, tol_residual)


@dataclass
class BetaSearch:
    beta: float
    certificate: RoaCertificate
    history: list = field(default_factory=list)  # (beta, verdict)
    capped: bool = False


def roa_maximize_beta(system, V: Polynomial, r: int, tol_rel: float = 1e-2, pruned: bool = False,
                      combine: str = "per_mode", beta0: float = 1.0, cap: float = 2.0 ** 16,
                      floor: float = 1e-9, opts: sdp.SdpOptions | None = None,
                      method: str | None = None) -> BetaSearch:
    """Largest certified ``beta`` up to relative gap ``tol_rel``; doubling/halving from ``beta0``.

    ``method=None`` uses the S-procedure for per-mode search and the full
    template for ``combine="joint"``.
    """
    system = _system(system)
    if method is None:
        method = "sprocedure" if combine == "per_mode" else "stengle"
    history: list = []

    def probe(beta):
        res = roa_certify(system, V, beta, r, pruned, combine, opts, method=method)
        history.append((beta, "feasible" if res.feasible else
                        ("infeasible" if isinstance(res, Infeasible) else "unknown")))
        return res if res.feasible else None

    beta = beta0
    cert = probe(beta)
    if cert is not None:
        lo, best = beta, cert
        hi = None
        while lo < cap:
            nxt = min(2 * lo, cap)
            c = probe(nxt)
            if c is None:
                hi = nxt
                break
            lo, best = nxt, c
        if hi is None:
            return BetaSearch(lo, best, history, capped=True)
    else:
        hi = beta
        lo = best = None
        while hi > floor:
            nxt = hi / 2
            c = probe(nxt)
            if c is not None:
                lo, best = nxt, c
                break
            hi = nxt
        if best is None:
            raise NoFeasibleBeta(f"no certificate down to beta={hi:.3g}")
    while (hi - lo) > tol_rel * lo:
        mid = 0.5 * (lo + hi)
        c = probe(mid)
        if c is None:
            hi = mid
        else:
            lo, best = mid, c
    return BetaSearch(lo, best, history)


@dataclass
class RoaAnalysis:
    V: Polynomial
    beta: float
    certificate: RoaCertificate
    jsr_bound: float
    degree: int


def analyze(system, deg_v: int, r: int, max_deg_v: int | None = None, tol_rel: float = 1e-2,
            combine: str = "per_mode", pruned: bool = False, opts: sdp.SdpOptions | None = None,
            method: str | None = None, cap: float = 2.0 ** 16) -> RoaAnalysis:
    """Linearize, find an sos-convex ``V`` for the linearization, then maximize ``beta``.

    ``V`` is synthesized for the matrices scaled by ``(1 + gamma*)/2`` where
    ``gamma*`` is the certified bound at that degree, which leaves a decrease
    margin for the nonlinear terms.
    """
    system = _system(system)
    mats = [linearize(f) for f in system.modes]
    max_deg_v = deg_v if max_deg_v is None else max_deg_v
    for deg in range(deg_v, max_deg_v + 1, 2):
        try:
            bound = jsr_upper_bound(mats, deg, convex=True, tol_gamma=1e-2, opts=opts)
        except RuntimeError:
            continue
        if bound.upper >= 1.0:
            continue
        gamma = 0.5 * (1.0 + bound.upper)
        res = synth_common_lyapunov([A / gamma for A in mats], deg, True, opts=opts)
        if not res.feasible:
            res = bound.certificate
        V = res.V
        search = roa_maximize_beta(system, V, r, tol_rel, pruned, combine, cap=cap, opts=opts, method=method)
        return RoaAnalysis(V, search.beta, search.certificate, bound.upper, deg)
    raise LinearizationNotCertifiedStable(
        f"no sos-convex Lyapunov function of degree <= {max_deg_v} with JSR bound < 1 for the linearization")


def levelset_rays(V: Polynomial, beta: float, rays: int = 720, tol: float = 1e-12) -> np.ndarray:
    """Points ``r*u`` with ``V(r*u) = beta`` on ``rays`` equally spaced directions (n = 2)."""
    if V.n != 2:
        raise ValueError("level-set export is only defined for n = 2")
    out = np.zeros((rays, 2))
    for k in range(rays):
        th = 2 * math.pi * k / rays
        u = np.array([math.cos(th), math.sin(th)])
        lo, hi = 0.0, 1.0
        while V.eval(hi * u) < beta:
            hi *= 2.0
            if hi > 1e12:
                raise ValueError("V is not radially unbounded along a ray")
        while hi - lo > tol * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if V.eval(mid * u) < beta:
                lo = mid
            else:
                hi = mid
        out[k] = 0.5 * (lo + hi) * u
    return out


def write_levelset_csv(path, V: Polynomial, beta: float, rays: int = 720) -> None:
    pts = levelset_rays(V, beta, rays)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["angle", "x1", "x2"])
        for k, (a, b) in enumerate(pts):
            w.writerow([repr(2 * math.pi * k / rays), repr(float(a)), repr(float(b))])
