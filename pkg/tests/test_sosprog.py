import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switchcert import corpus
from switchcert.poly import Polynomial, PolyMatrix, monomial_basis
from switchcert.sosprog import (
    FORMULATIONS,
    GramCertificate,
    Infeasible,
    MatrixSosCertificate,
    NotSymmetric,
    OddDegree,
    SosProgram,
    check_sos,
    check_sos_matrix,
    check_sosconvex,
    sos_margin,
)

import _sosconvex_corpus

x1, x2 = Polynomial.variables(2)
EX41_V = x1 ** 2 * x2 ** 2 + x1 ** 2 + x2 ** 2
MOTZKIN = x1 ** 4 * x2 ** 2 + x1 ** 2 * x2 ** 4 - 3 * x1 ** 2 * x2 ** 2 + 1


def _within_reconstruction_tol(cert, p):
    res = (p.to_float() - cert.gram_poly()).max_abs_coeff()
    return res <= 1e-7 * (1 + p.max_abs_coeff())


def test_square_of_linear_form():
    cert = check_sos((x1 + x2) ** 2)
    assert isinstance(cert, GramCertificate)
    assert cert.basis == [(1, 0), (0, 1)]
    assert np.allclose(cert.Q, [[1, 1], [1, 1]], atol=1e-6)
    assert _within_reconstruction_tol(cert, (x1 + x2) ** 2)


def test_sum_of_squared_monomials():
    cert = check_sos(EX41_V)
    assert cert.feasible and cert.verify(EX41_V)
    assert _within_reconstruction_tol(cert, EX41_V)


def test_motzkin_is_nonnegative_but_not_sos():
    res = check_sos(MOTZKIN)
    assert isinstance(res, Infeasible) and res.verified
    assert res.pairing < 0
    g = np.linspace(-2, 2, 201)
    X = np.array([(a, b) for a in g for b in g])
    assert MOTZKIN.to_float().eval_many(X).min() >= -1e-12


def test_odd_degree_rejected():
    with pytest.raises(OddDegree):
        check_sos(x1 ** 3 + x2 ** 2)
    with pytest.raises(OddDegree):
        check_sosconvex(x1 ** 3)


def test_sos_matrix_examples():
    I2 = PolyMatrix.constant(np.eye(2), 2)
    assert isinstance(check_sos_matrix(I2), MatrixSosCertificate)
    H = (x1 ** 4 + x2 ** 4).to_float().hessian()
    cert = check_sos_matrix(H)
    assert cert.feasible and cert.verify(H)
    assert all(sum(e[2:]) == 1 for e in cert.gram.basis)  # y-bilinear basis
    assert isinstance(check_sos_matrix(EX41_V.to_float().hessian()), Infeasible)


def test_sos_matrix_must_be_symmetric():
    M = PolyMatrix([[x1 ** 2, x1], [x2, x2 ** 2]])
    with pytest.raises(NotSymmetric):
        check_sos_matrix(M)


@pytest.mark.parametrize("formulation", FORMULATIONS)
def test_sosconvex_examples(formulation):
    assert check_sosconvex(x1 ** 2 + x2 ** 2, formulation).feasible
    assert isinstance(check_sosconvex(EX41_V, formulation), Infeasible)


def test_published_quartic_is_sosconvex():
    V = corpus.reference_quartic()
    cert = check_sosconvex(V, "hessian")
    assert isinstance(cert, MatrixSosCertificate)
    assert cert.verify(V.to_float().hessian())


def test_program_scalar_unknown_with_bound():
    prog = SosProgram()
    c = prog.new_poly("c", 2, [(0, 0)])
    q = x1 ** 2 + x2 ** 2
    prog.add_sos(c.expr * q - q, name="lower")
    prog.add_sos(Polynomial.constant(2, 2.0) - c.expr, name="upper")
    res = prog.solve()
    assert res.feasible
    cval = float(res.values["c"].coeff((0, 0)))
    assert 1 - 1e-6 <= cval <= 2 + 1e-6
    assert res.certificates["lower"].verify(q * cval - q)


def test_program_contraction_quadratic():
    prog = SosProgram()
    V = prog.new_poly("V", 2, monomial_basis(2, 2, homogeneous=True))
    half = {e: Polynomial.monomial(e, 0.5 ** sum(e)) for e in V.support}
    prog.add_sos(V.expr - V.expr.compose_linear(half), name="decrease")
    prog.add_sos(V.expr - (x1 ** 2 + x2 ** 2), name="lower")
    res = prog.solve()
    assert res.feasible
    v = res.values["V"]
    assert res.certificates["decrease"].verify(v - v.compose([x1 * 0.5, x2 * 0.5]))


def test_program_infeasible_is_reported_as_infeasible():
    prog = SosProgram()
    c = prog.new_poly("c", 2, [(0, 0)])
    prog.add_sos(c.expr * (x1 ** 2) - (x1 ** 2 + x2 ** 2), name="impossible")
    res = prog.solve()
    assert res.status == "infeasible"


def test_duplicate_unknown_rejected():
    prog = SosProgram()
    prog.new_poly("a", 1, [(0,)])
    with pytest.raises(ValueError):
        prog.new_poly("a", 1, [(0,)])


def test_sos_margin_of_norm_power():
    eps, cert = sos_margin(Polynomial.norm_squared_power(2, 2))
    assert eps == pytest.approx(1.0, abs=1e-6)


def test_certificate_json_round_trip():
    cert = check_sos(EX41_V)
    back = GramCertificate.from_json(cert.to_json())
    assert back.verify(EX41_V)
    mcert = check_sosconvex(corpus.reference_quartic())
    assert MatrixSosCertificate.from_json(mcert.to_json()).verify(corpus.reference_quartic().to_float().hessian())


def test_tampered_certificate_fails_verification():
    cert = check_sos(EX41_V)
    Q = cert.Q.copy()
    Q[0, 0] += 1e-3
    bad = GramCertificate(cert.n, cert.basis, Q, 0.0, 0.0)
    assert not bad.verify(EX41_V)


@st.composite
def sos_polynomials(draw):
    """Sums of squares of random quadratics in two variables."""
    k = draw(st.integers(1, 3))
    basis = monomial_basis(2, 2)
    p = Polynomial.zero(2)
    for _ in range(k):
        coeffs = draw(st.lists(st.integers(-3, 3), min_size=len(basis), max_size=len(basis)))
        q = Polynomial(2, {e: c for e, c in zip(basis, coeffs)})
        p = p + q * q
    return p


@settings(max_examples=25, deadline=None)
@given(sos_polynomials())
def test_sos_feasible_means_nonnegative_samples(p):
    cert = check_sos(p)
    assert cert.feasible
    assert _within_reconstruction_tol(cert, p) or cert.verify(p)
    X = np.random.default_rng(0).uniform(-3, 3, (10_000, 2))
    vals = p.to_float().eval_many(X)
    assert vals.min() >= -1e-6 * (1 + np.abs(vals).max())


def test_sosconvex_forms_are_sos():
    items = _sosconvex_corpus.build(count=12, seed=7)
    for p, convex in items:
        if check_sosconvex(p).feasible:
            assert check_sos(p).feasible


def test_formulations_agree_on_small_corpus():
    for p, convex in _sosconvex_corpus.build(count=18, seed=11):
        verdicts = {f: check_sosconvex(p, f).feasible for f in FORMULATIONS}
        assert set(verdicts.values()) == {convex}, (p, verdicts)


def test_corpus_nonconvex_members_have_hessian_witness():
    rng = np.random.default_rng(0)
    for p, convex in _sosconvex_corpus.build():
        if not convex:
            assert _sosconvex_corpus.hessian_witness(p, rng, tries=500) < 0
