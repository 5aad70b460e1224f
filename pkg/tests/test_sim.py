import csv

import numpy as np
import pytest

from switchcert import corpus
from switchcert.poly import Polynomial, PolynomialMap, SwitchedSystem
from switchcert.sim import (
    BoxRegion,
    FixedWeights,
    GreedyWorstCase,
    RandomHull,
    RandomHull2,
    RandomVertex,
    SublevelRegion,
    falsify,
    jensen_gaps,
    make_policy,
    monitor_decrease,
    simulate,
)

x1, x2 = Polynomial.variables(2)
W = x1 ** 2 + x2 ** 2
NONCONVEX_V = x1 ** 2 * x2 ** 2 + x1 ** 2 + x2 ** 2


def test_equal_weights_diverge_from_three_three():
    traj = simulate(corpus.product_maps(), [3, 3], FixedWeights([0.5, 0.5]))
    assert np.array_equal(traj.states[:3], [[3, 3], [4.5, 4.5], [10.125, 10.125]])
    assert traj.verdict == "diverged"
    assert np.all(traj.weights == 0.5)


def test_vertex_switching_collapses_axis_points():
    sys_ = corpus.product_maps()
    traj = simulate(sys_, [2, 3], RandomVertex(seed=0))
    assert traj.verdict == "converged" and traj.steps == 2
    assert np.array_equal(traj.states[1], [6, 0]) or np.array_equal(traj.states[1], [0, 6])
    assert np.array_equal(traj.final, [0, 0])


@pytest.mark.parametrize("policy", [RandomHull(seed=1), RandomHull2(seed=1)])
def test_two_mode_quadratic_small_start_converges(policy):
    traj = simulate(corpus.two_mode_quadratic(), [0.2, 0.4], policy)
    assert traj.verdict == "converged"


def test_budget_verdict():
    rot = SwitchedSystem([PolynomialMap.from_matrix([[0.0, -1.0], [1.0, 0.0]])])
    traj = simulate(rot, [1, 0], FixedWeights([1.0]), max_steps=50)
    assert traj.verdict == "budget" and traj.steps == 50


def test_recorded_weights_reproduce_states():
    sys_ = corpus.two_mode_quadratic()
    traj = simulate(sys_, [0.3, -0.2], RandomHull(seed=4), max_steps=200)
    for k in range(traj.steps):
        x = traj.states[k]
        nxt = sum(w * f.eval(x) for w, f in zip(traj.weights[k], sys_.modes))
        assert np.array_equal(nxt, traj.states[k + 1])
        assert np.all(traj.weights[k] >= 0) and abs(traj.weights[k].sum() - 1) < 1e-12


def test_same_seed_same_trajectory():
    sys_ = corpus.two_mode_quadratic()
    a = simulate(sys_, [0.2, 0.4], RandomHull(seed=9))
    b = simulate(sys_, [0.2, 0.4], RandomHull(seed=9))
    assert np.array_equal(a.states, b.states) and np.array_equal(a.weights, b.weights)
    c = simulate(sys_, [0.2, 0.4], RandomHull(seed=10))
    assert not np.array_equal(a.weights[:1], c.weights[:1])


def test_falsify_box_examples():
    sys_ = corpus.product_maps()
    assert falsify(sys_, BoxRegion([-1, -1], [1, 1]), trials=200, policy_family="vertex") is None
    wit = falsify(sys_, BoxRegion([2, 2], [4, 4]), trials=10, policy_family="fixed")
    assert wit is not None and wit.reason == "diverged"
    assert wit.trajectory.verdict == "diverged"


def test_falsify_finds_nothing_inside_certified_region():
    cert_beta = corpus.SHIPPED_ROA_BETA
    V = corpus.reference_quartic().to_float()
    region = SublevelRegion(V, cert_beta)
    assert falsify(corpus.two_mode_quadratic(), region, trials=1000, policy_family="hull") is None


def test_falsify_is_reproducible():
    sys_ = corpus.product_maps()
    a = falsify(sys_, BoxRegion([2, 2], [4, 4]), trials=5, policy_family="hull", seed=3)
    b = falsify(sys_, BoxRegion([2, 2], [4, 4]), trials=5, policy_family="hull", seed=3)
    assert np.array_equal(a.x0, b.x0) and np.array_equal(a.trajectory.states, b.trajectory.states)


def test_contraction_ratio_is_a_quarter():
    sys_ = SwitchedSystem([PolynomialMap.from_matrix(0.5 * np.eye(2))])
    traj = simulate(sys_, [1.0, -2.0], FixedWeights([1.0]))
    rep = monitor_decrease(traj, W)
    assert rep.strict and rep.first_violation is None
    assert np.all(rep.values[1:] / rep.values[:-1] == 0.25)


def test_published_quartic_decreases_along_hull_trajectories():
    sys_ = corpus.two_mode_quadratic()
    V = corpus.reference_quartic().to_float()
    for k in range(20):
        x0 = np.random.default_rng(k).uniform(-1, 1, 2)
        x0 *= (corpus.SHIPPED_ROA_BETA / V.eval(x0)) ** 0.25 * 0.99
        traj = simulate(sys_, x0, RandomHull2(seed=k))
        assert traj.verdict == "converged"
        assert monitor_decrease(traj, V).strict


def test_nonconvex_function_increases_under_hull_switching():
    traj = simulate(corpus.product_maps(), [3, 3], FixedWeights([0.5, 0.5]))
    rep = monitor_decrease(traj, NONCONVEX_V)
    assert not rep.strict and rep.first_violation == 0


def test_jensen_gaps_nonpositive_for_sos_convex_function():
    sys_ = corpus.two_mode_quadratic()
    V = corpus.reference_quartic().to_float()
    for k in range(10):
        traj = simulate(sys_, [0.2, -0.1], RandomHull(seed=k))
        assert np.all(jensen_gaps(traj, sys_, V) <= 1e-9)


def test_greedy_picks_the_worse_vertex():
    sys_ = corpus.two_mode_quadratic()
    V = corpus.reference_quartic().to_float()
    traj = simulate(sys_, [0.3, -0.2], GreedyWorstCase(V), max_steps=30)
    for k in range(traj.steps):
        vals = [V.eval(f.eval(traj.states[k])) for f in sys_.modes]
        assert traj.weights[k][int(np.argmax(vals))] == 1.0
    # ties go to the lowest index; both product maps give the same value of V
    tie = simulate(corpus.product_maps(), [0.5, 0.4], GreedyWorstCase(NONCONVEX_V), max_steps=1)
    assert tie.weights[0].tolist() == [1.0, 0.0]


def test_csv_export(tmp_path):
    traj = simulate(corpus.product_maps(), [3, 3], FixedWeights([0.5, 0.5]))
    out = tmp_path / "traj.csv"
    traj.to_csv(out, V=W)
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["step", "x1", "x2", "V"]
    assert len(rows) == len(traj.states) + 1
    assert float(rows[2][1]) == 4.5 and float(rows[2][3]) == 40.5
    traj.to_csv(out)
    assert next(csv.reader(out.open())) == ["step", "x1", "x2"]


def test_policy_errors():
    with pytest.raises(ValueError):
        FixedWeights([0.7, 0.7])
    with pytest.raises(ValueError):
        FixedWeights([-0.5, 1.5])
    with pytest.raises(ValueError):
        simulate(corpus.product_maps(), [1, 2, 3], RandomHull())
    with pytest.raises(ValueError):
        simulate(corpus.product_maps(), [1, 2], FixedWeights([1.0]))
    with pytest.raises(ValueError):
        make_policy("greedy", corpus.product_maps())
    with pytest.raises(ValueError):
        make_policy("chaos", corpus.product_maps())
    with pytest.raises(ValueError):
        RandomHull2().start(SwitchedSystem([PolynomialMap.from_matrix(np.eye(2))]))
