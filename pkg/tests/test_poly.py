from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switchcert import corpus
from switchcert.poly import (
    DimensionMismatch,
    Polynomial,
    PolynomialMap,
    SwitchedSystem,
    dumps,
    monomial_basis,
)

x1, x2 = Polynomial.variables(2)


@st.composite
def polynomials(draw, n=2, max_deg=4):
    terms = draw(st.lists(
        st.tuples(st.tuples(*[st.integers(0, max_deg)] * n), st.integers(-9, 9)),
        min_size=0, max_size=6))
    return Polynomial(n, {e: Fraction(c, 1) for e, c in terms if sum(e) <= max_deg})


points = st.lists(st.floats(-2, 2, allow_nan=False), min_size=2, max_size=2)


def _rel(a, b):
    return abs(a - b) / (1.0 + abs(a) + abs(b))


def test_eval_examples():
    assert (x1 ** 2 + x2 ** 2).eval([0, 0]) == 0
    assert (x1 ** 2 * x2 ** 2 + x1 ** 2 + x2 ** 2).eval([1, 1]) == 3
    assert corpus.reference_quartic().eval([1, 0]) == Fraction("19.14")


def test_eval_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        (x1 + x2).eval([1.0, 2.0, 3.0])


def test_compose_examples():
    V = x1 ** 2 + x2 ** 2
    assert V.compose(PolynomialMap.identity(2)) == V
    f1 = corpus.product_maps().modes[0]
    assert V.compose(f1) == x1 ** 2 * x2 ** 2
    A1 = corpus.ando_shih("1").matrices()[0]
    assert (x1 ** 2).compose(PolynomialMap.from_matrix(A1)).allclose(x1 ** 2)


def test_compose_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        (x1 + x2).compose(PolynomialMap([x1]))


def test_hessian_examples():
    H = (x1 ** 2 + x2 ** 2).hessian()
    assert np.array_equal(H.eval([0.3, -1.2]), [[2, 0], [0, 2]])
    H = (x1 ** 2 * x2 ** 2 + x1 ** 2 + x2 ** 2).hessian()
    M = H.eval([2, 2])
    assert np.array_equal(M, [[10, 16], [16, 10]])
    assert np.linalg.det(M) == pytest.approx(-156)
    assert H.is_symmetric()


def test_gradient_of_power_of_linear_form():
    p = Polynomial.linear_form([1, 1]) ** 2
    g = p.gradient()
    assert g[0] == g[1] == 2 * (x1 + x2)


def test_monomial_basis_examples():
    assert monomial_basis(2, 2, homogeneous=True) == [(2, 0), (1, 1), (0, 2)]
    assert len(monomial_basis(3, 2)) == 10
    assert monomial_basis(2, 0) == [(0, 0)]


@pytest.mark.parametrize("n,d", [(1, 3), (2, 4), (3, 3), (4, 2)])
def test_monomial_basis_counts(n, d):
    assert len(monomial_basis(n, d, homogeneous=True)) == comb(n + d - 1, d)
    assert len(monomial_basis(n, d)) == comb(n + d, d)


def test_homogeneity_and_ring_examples():
    assert not (x1 ** 2 * x2 ** 2 + x1 ** 2 + x2 ** 2).is_homogeneous()
    assert corpus.reference_quartic().is_homogeneous()
    assert (x1 + x2) * (x1 - x2) == x1 ** 2 - x2 ** 2


def test_exact_rational_arithmetic():
    p = Fraction(1, 3) * x1 + Fraction(2, 3) * x1
    assert p == x1
    assert p.is_exact()


def test_ring_dimension_mismatch():
    y = Polynomial.variable(3, 0)
    with pytest.raises(DimensionMismatch):
        x1 + y
    with pytest.raises(DimensionMismatch):
        x1 * y


@settings(max_examples=60, deadline=None)
@given(polynomials(), polynomials(), st.lists(points, min_size=5, max_size=5))
def test_ring_axioms_under_evaluation(p, q, xs):
    for x in xs:
        assert _rel(float((p + q).eval(x)), float(p.eval(x)) + float(q.eval(x))) <= 1e-12
        assert _rel(float((p * q).eval(x)), float(p.eval(x)) * float(q.eval(x))) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(polynomials(max_deg=3), polynomials(max_deg=2), polynomials(max_deg=2), points)
def test_compose_respects_evaluation(p, f1, f2, x):
    f = PolynomialMap([f1, f2])
    lhs = float(p.compose(f).eval(x))
    rhs = float(p.eval([float(v) for v in f.eval(np.array(x))]))
    assert _rel(lhs, rhs) <= 1e-10


@settings(max_examples=20, deadline=None)
@given(polynomials(max_deg=4))
def test_hessian_matches_finite_differences(p):
    rng = np.random.default_rng(0)
    H = p.to_float().hessian()
    P = p.to_float()
    h = 1e-5
    for _ in range(20):
        x = rng.uniform(-1, 1, 2)
        num = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                ei, ej = np.eye(2)[i] * h, np.eye(2)[j] * h
                num[i, j] = (P.eval(x + ei + ej) - P.eval(x + ei - ej) - P.eval(x - ei + ej)
                             + P.eval(x - ei - ej)) / (4 * h * h)
        exact = H.eval(x)
        assert np.all(np.abs(num - exact) <= 1e-4 * (1 + np.abs(exact)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.lists(st.integers(-5, 5), min_size=6, max_size=6), points)
def test_euler_identity_for_forms(d, coeffs, x):
    basis = monomial_basis(2, d, homogeneous=True)
    p = Polynomial(2, {e: c for e, c in zip(basis, coeffs)})
    lhs = sum(float(g.eval(x)) * xi for g, xi in zip(p.gradient(), x))
    assert _rel(lhs, d * float(p.eval(x))) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(polynomials(n=2, max_deg=5))
def test_polynomial_json_round_trip(p):
    q = Polynomial.from_json(p.to_json())
    assert q == p
    assert dumps(q.to_json()) == dumps(p.to_json())


def test_float_json_round_trip_is_bit_stable():
    p = Polynomial(2, {(2, 0): 0.1, (1, 1): 1 / 3, (0, 2): 1e-17})
    q = Polynomial.from_json(p.to_json())
    assert all(q.coeff(e) == c for e, c in p.items())


@pytest.mark.parametrize("name", corpus.names())
def test_corpus_systems_round_trip(name):
    doc = corpus.load_json(name)
    sys_ = SwitchedSystem.from_json(doc)
    assert dumps(sys_.to_json()) == dumps(SwitchedSystem.from_json(sys_.to_json()).to_json())
    assert SwitchedSystem.from_json(sys_.to_json()).to_json() == sys_.to_json()


def test_corpus_files_match_builders():
    built = corpus.build_all()
    assert sorted(built) == corpus.names()
    for name, sys_ in built.items():
        assert corpus.path(name).read_text() == dumps(sys_.to_json())


def test_system_rejects_affine_modes():
    with pytest.raises(ValueError):
        SwitchedSystem([PolynomialMap([x1 + 1, x2])])


def test_declared_dimension_checked():
    doc = corpus.load_json("product_maps")
    doc["n"] = 3
    with pytest.raises(DimensionMismatch):
        SwitchedSystem.from_json(doc)
