import logging
import math

import numpy as np
import pytest

from switchcert import corpus
from switchcert.lyap import (
    DEFAULT_MARGIN,
    JsrBound,
    LyapunovCertificate,
    ando_shih_matrices,
    decrease_polynomial,
    degree_escalation,
    jsr_upper_bound,
    raise_degree,
    similarity,
    synth_common_lyapunov,
    verdict,
)
from switchcert.poly import Polynomial, dumps
from switchcert.roa import linearize
from switchcert.sosprog import Infeasible, check_sos, check_sosconvex

x1, x2 = Polynomial.variables(2)
log = logging.getLogger(__name__)


def _linearizations():
    return [linearize(f) for f in corpus.two_mode_quadratic().modes]


def _common_quadratic_margin(mats, P):
    """Smallest eigenvalue of P - A^T P A over the modes."""
    return min(np.linalg.eigvalsh(P - A.T @ P @ A).min() for A in mats)


def test_contraction_admits_the_unit_quadratic():
    cert = synth_common_lyapunov([0.5 * np.eye(2)], 2, convex=True)
    assert isinstance(cert, LyapunovCertificate) and cert.verify()
    V = x1 ** 2 + x2 ** 2
    assert check_sos(decrease_polynomial(V, 0.5 * np.eye(2), DEFAULT_MARGIN)).feasible
    assert check_sosconvex(V).feasible


def test_scaled_pair_quadratic_infeasible_quartic_feasible():
    mats = ando_shih_matrices(0.8)
    assert isinstance(synth_common_lyapunov(mats, 2, convex=True), Infeasible)
    assert isinstance(synth_common_lyapunov(mats, 2, convex=False), Infeasible)
    cert = synth_common_lyapunov(mats, 4, convex=False)
    assert cert.feasible and cert.verify()
    assert cert.sampled_decrease() >= DEFAULT_MARGIN * (1 - 1e-3)


def test_linearizations_admit_common_quadratic():
    mats = _linearizations()
    assert np.allclose(mats[0], [[-0.25, -0.25], [-1, 0]])
    assert np.allclose(mats[1], [[0.75, 0.75], [-0.5, 0.25]])
    # Oracle independent of the sos machinery: an explicit P found by grid search.
    P = np.array([[1.0, 0.24], [0.24, 0.79]])
    assert _common_quadratic_margin(mats, P) > 8e-3
    cert = synth_common_lyapunov(mats, 2, convex=True)
    assert cert.feasible and cert.verify()
    cert4 = synth_common_lyapunov(mats, 4, convex=True)
    assert cert4.feasible and cert4.verify()


def test_published_quartic_decreases_along_linearizations():
    V = corpus.reference_quartic().to_float()
    for A in _linearizations():
        assert check_sos(decrease_polynomial(V, A, 0.0)).feasible


def test_invalid_degree_rejected():
    with pytest.raises(ValueError):
        synth_common_lyapunov([np.eye(2) * 0.5], 3)
    with pytest.raises(ValueError):
        degree_escalation([np.eye(2) * 0.5], False, 5)


@pytest.mark.parametrize("seed", range(3))
def test_single_matrix_bound_matches_spectral_radius(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 3))
    rho = max(abs(np.linalg.eigvals(A)))
    tol = 1e-3
    bound = jsr_upper_bound([A], degree=2, tol_gamma=tol)
    assert rho - tol <= bound.upper <= rho * 1.05
    assert bound.certificate.verify()


def test_quadratic_jsr_bound_is_sqrt2():
    bound = jsr_upper_bound(ando_shih_matrices(), degree=2)
    assert abs(bound.upper - math.sqrt(2)) <= 2e-3
    assert bound.lower_verdict == "infeasible"
    assert bound.upper - bound.lower_probe <= bound.tol
    scaled = [A / bound.upper for A in ando_shih_matrices()]
    assert all(np.allclose(a, b) for a, b in zip(bound.certificate.matrices, scaled))


def test_quartic_jsr_bound_near_one():
    bound = jsr_upper_bound(ando_shih_matrices(), degree=4, convex=False)
    assert 1.0 - bound.tol <= bound.upper <= 1.05
    assert bound.certificate.verify()


def test_bisection_history_is_monotone():
    bound = jsr_upper_bound(ando_shih_matrices(), degree=2, tol_gamma=1e-2)
    feas = [g for g, v in bound.history if v == "feasible"]
    infeas = [g for g, v in bound.history if v != "feasible"]
    assert max(infeas) < min(feas)


def test_jsr_bound_json():
    bound = jsr_upper_bound([0.5 * np.eye(2)], degree=2, tol_gamma=1e-2)
    doc = bound.to_json()
    assert doc["kind"] == "jsr" and doc["certificate"]["kind"] == "lyapunov"
    assert isinstance(bound, JsrBound)


def test_degree_escalation_tables():
    assert degree_escalation(ando_shih_matrices(0.8), convex=False, max_degree=4)[4] == "feasible"
    assert degree_escalation(ando_shih_matrices(0.5), convex=True, max_degree=2) == {2: "feasible"}
    table = degree_escalation(ando_shih_matrices(0.999), convex=True, max_degree=4, threads=2)
    assert table == {2: "infeasible", 4: "infeasible"}


@pytest.mark.parametrize("gamma", corpus.ANDO_SHIH_GAMMAS)
def test_similarity_invariance_of_verdicts(gamma):
    mats = corpus.ando_shih(gamma).matrices()
    base = verdict(synth_common_lyapunov(mats, 2, convex=True))
    rng = np.random.default_rng(int(float(gamma) * 100))
    for _ in range(5):
        while True:
            T = rng.standard_normal((2, 2))
            if np.linalg.cond(T) < 10:
                break
        assert verdict(synth_common_lyapunov(similarity(mats, T), 2, convex=True)) == base


def test_degree_monotonicity_nonconvex():
    mats = ando_shih_matrices(0.6)
    cert = synth_common_lyapunov(mats, 2, convex=False)
    assert cert.feasible
    W = raise_degree(cert)
    # V*|x|^2 stays sos; the degree-4 program must then be feasible too.
    assert check_sos(W).feasible
    assert synth_common_lyapunov(mats, 4, convex=False).feasible


def test_degree_monotonicity_convex_logged():
    mats = ando_shih_matrices(0.6)
    cert = synth_common_lyapunov(mats, 2, convex=True)
    W = raise_degree(cert)
    log.info("V*|x|^2 sos-convex: %s", check_sosconvex(W).feasible)
    assert synth_common_lyapunov(mats, 4, convex=True).feasible


def test_certificate_json_round_trip_and_tamper():
    cert = synth_common_lyapunov(ando_shih_matrices(0.6), 2, convex=True)
    doc = cert.to_json()
    back = LyapunovCertificate.from_json(doc)
    assert back.verify()
    assert dumps(back.to_json()) == dumps(doc)
    doc["matrices"][0][0][0] *= 3
    assert not LyapunovCertificate.from_json(doc).verify()
