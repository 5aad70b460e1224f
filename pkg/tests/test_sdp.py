import numpy as np
import pytest

from switchcert import sdp
from switchcert.sdp import DimensionError, SdpOptions, SdpProblem, Status, kkt_residuals, verify_infeasibility_ray

from _sdp_gen import infeasible, strictly_feasible

FORMS = ["auto", "dual", "primal"]


@pytest.mark.parametrize("form", FORMS)
def test_min_eigenvalue_program(form):
    prob = SdpProblem([2], [np.diag([1.0, 2.0])], [np.eye(2)[None]], [1.0])
    sol = sdp.solve(prob, SdpOptions(form=form))
    assert sol.status is Status.OPTIMAL
    assert sol.primal_objective == pytest.approx(1.0, abs=1e-7)
    assert np.allclose(sol.X[0], np.diag([1.0, 0.0]), atol=1e-6)


@pytest.mark.parametrize("form", FORMS)
def test_negative_trace_is_infeasible(form):
    prob = SdpProblem([3], [np.zeros((3, 3))], [np.eye(3)[None]], [-1.0])
    sol = sdp.solve(prob, SdpOptions(form=form))
    assert sol.status is Status.PRIMAL_INFEASIBLE
    assert verify_infeasibility_ray(prob, sol.ray)


def test_linearly_inconsistent_constraints():
    A = np.stack([np.eye(2), np.eye(2)])
    prob = SdpProblem([2], [np.eye(2)], [A], [1.0, 2.0])
    sol = sdp.solve(prob)
    assert sol.status is Status.PRIMAL_INFEASIBLE
    assert verify_infeasibility_ray(prob, sol.ray)


def test_unbounded_free_objective():
    prob = SdpProblem([1], [np.eye(1)], [np.eye(1)[None]], [1.0], A_free=np.zeros((1, 1)), c_free=[1.0])
    assert sdp.solve(prob).status is Status.DUAL_INFEASIBLE


@pytest.mark.parametrize("form", FORMS)
@pytest.mark.parametrize("seed", range(8))
def test_random_feasible_recovers_kkt_point(form, seed):
    rng = np.random.default_rng(seed)
    prob = strictly_feasible(rng, blocks=(5, 3), k=8, n_free=seed % 3)
    sol = sdp.solve(prob, SdpOptions(form=form))
    assert sol.status is Status.OPTIMAL
    r_p, r_d, gap = kkt_residuals(prob, sol.X, sol.w, sol.y)
    assert max(r_p, r_d, gap) <= 1e-7
    # weak duality, minimization convention
    assert sol.primal_objective >= sol.dual_objective - 1e-7 * (1 + abs(sol.primal_objective))
    for Xb in sol.X:
        assert np.linalg.eigvalsh(Xb)[0] >= -1e-8 * (1 + np.linalg.norm(Xb))


@pytest.mark.parametrize("form", FORMS)
@pytest.mark.parametrize("seed", range(5))
def test_constructed_infeasible_returns_verified_ray(form, seed):
    prob, _ = infeasible(np.random.default_rng(100 + seed), blocks=(4, 3), k=6)
    sol = sdp.solve(prob, SdpOptions(form=form))
    assert sol.status is Status.PRIMAL_INFEASIBLE
    assert verify_infeasibility_ray(prob, sol.ray)


def test_ray_verifier_rejects_non_rays():
    prob = SdpProblem([2], [np.eye(2)], [np.eye(2)[None]], [1.0])
    assert not verify_infeasibility_ray(prob, np.array([1.0]))  # A* y = I is not NSD
    assert not verify_infeasibility_ray(prob, np.array([0.0]))


def test_dimension_errors():
    with pytest.raises(DimensionError):
        SdpProblem([2], [np.eye(3)], [np.eye(2)[None]], [1.0])
    with pytest.raises(DimensionError):
        SdpProblem([2], [np.eye(2)], [np.array([[[0.0, 1.0], [0.0, 0.0]]])], [1.0])
    with pytest.raises(DimensionError):
        SdpProblem([2], [np.eye(2)], [np.eye(2)[None]], [1.0], A_free=np.ones((1, 2)), c_free=[1.0])


def test_stalls_when_iterations_exhausted():
    prob = strictly_feasible(np.random.default_rng(3), blocks=(6,), k=10)
    sol = sdp.solve(prob, SdpOptions(max_iter=1, form="dual"))
    assert sol.status is Status.STALLED


def test_unknown_form_rejected():
    prob = SdpProblem([1], [np.eye(1)], [np.eye(1)[None]], [1.0])
    with pytest.raises(ValueError):
        sdp.solve(prob, SdpOptions(form="sideways"))


def test_debug_dump_lists_nonzeros():
    prob = SdpProblem([2], [np.diag([1.0, 2.0])], [np.eye(2)[None]], [1.0])
    text = prob.dump()
    assert "rhs 1 1" in text
    assert len([ln for ln in text.splitlines() if ln and not ln.startswith("#")]) >= 5
