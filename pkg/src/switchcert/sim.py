"""Trajectory simulation and falsification for difference inclusions."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .poly import Polynomial, SwitchedSystem

CONV_TOL = 1e-8
DIV_THRESHOLD = 1e8
MAX_STEPS = 10_000


# policies ------------------------------------------------------------------


@dataclass
class FixedWeights:
    weights: Sequence[float]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or not math.isclose(float(w.sum()), 1.0, rel_tol=0, abs_tol=1e-12):
            raise ValueError("weights must be nonnegative and sum to 1")
        self.weights = w

    def start(self, system):
        if len(self.weights) != system.m:
            raise ValueError("one weight per mode required")
        return lambda x, images: self.weights

    def describe(self):
        return {"policy": "fixed", "weights": self.weights.tolist()}


@dataclass
class RandomHull:
    """Weights uniform on the simplex, i.e. Dirichlet(1, ..., 1)."""

    seed: int = 0

    def start(self, system):
        rng = np.random.default_rng(self.seed)
        ones = np.ones(system.m)
        return lambda x, images: rng.dirichlet(ones)

    def describe(self):
        return {"policy": "hull", "seed": self.seed}


@dataclass
class RandomHull2:
    """Two modes, ``lambda`` uniform on ``[0, 1]``: weights ``(lambda, 1 - lambda)``."""

    seed: int = 0

    def start(self, system):
        if system.m != 2:
            raise ValueError("RandomHull2 needs exactly two modes")
        rng = np.random.default_rng(self.seed)

        def pick(x, images):
            lam = rng.random()
            return np.array([lam, 1.0 - lam])

        return pick

    def describe(self):
        return {"policy": "hull2", "seed": self.seed}


@dataclass
class RandomVertex:
    seed: int = 0

    def start(self, system):
        rng = np.random.default_rng(self.seed)
        m = system.m

        def pick(x, images):
            w = np.zeros(m)
            w[rng.integers(m)] = 1.0
            return w

        return pick

    def describe(self):
        return {"policy": "vertex", "seed": self.seed}


@dataclass
class GreedyWorstCase:
    """Always the vertex maximizing ``V(f_i(x))``; ties go to the lowest index."""

    V: Polynomial

    def start(self, system):
        m = system.m

        def pick(x, images):
            vals = [self.V.eval(img) for img in images]
            w = np.zeros(m)
            w[int(np.argmax(vals))] = 1.0
            return w

        return pick

    def describe(self):
        return {"policy": "greedy"}


# trajectories --------------------------------------------------------------


@dataclass
class Trajectory:
    states: np.ndarray  # (T+1, n)
    weights: np.ndarray  # (T, m), realized weights per step
    verdict: str  # "converged" | "diverged" | "budget"
    policy: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.weights)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path, V: Polynomial | None = None) -> None:
        n = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step"] + [f"x{i + 1}" for i in range(n)] + (["V"] if V is not None else []))
            vals = V.eval_many(self.states) if V is not None else None
            for k, x in enumerate(self.states):
                row = [k] + [repr(float(v)) for v in x]
                if vals is not None:
                    row.append(repr(float(vals[k])))
                w.writerow(row)


def simulate(system: SwitchedSystem, x0, policy, max_steps: int = MAX_STEPS, conv_tol: float = CONV_TOL,
             div_threshold: float = DIV_THRESHOLD) -> Trajectory:
    """Iterate ``x+ = sum_i w_i f_i(x)`` with weights chosen by ``policy``."""
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape[0] != system.n:
        raise ValueError(f"x0 has dimension {x.shape[0]}, system has {system.n}")
    pick = policy.start(system)
    states = [x.copy()]
    weights = []
    verdict = "budget"
    for _ in range(max_steps + 1):
        nrm = float(np.linalg.norm(x))
        if nrm <= conv_tol:
            verdict = "converged"
            break
        if not nrm < div_threshold:
            verdict = "diverged"
            break
        if len(weights) == max_steps:
            break
        images = [f.eval(x) for f in system.modes]
        w = np.asarray(pick(x, images), dtype=float)
        x = sum(wi * img for wi, img in zip(w, images))
        states.append(x.copy())
        weights.append(w)
    return Trajectory(np.array(states), np.array(weights).reshape(len(weights), system.m), verdict,
                      policy.describe())


# monitoring and falsification -----------------------------------------------


@dataclass
class DecreaseReport:
    values: np.ndarray
    strict: bool
    first_violation: int | None  # step k with V(x_{k+1}) >= V(x_k)


def monitor_decrease(traj: Trajectory, V: Polynomial, conv_tol: float = CONV_TOL) -> DecreaseReport:
    """``V`` along the trajectory; strict decrease is required until ``|x| <= conv_tol``."""
    vals = V.eval_many(traj.states)
    norms = np.linalg.norm(traj.states, axis=1)
    for k in range(len(vals) - 1):
        if norms[k] <= conv_tol:
            break
        if not vals[k + 1] < vals[k]:
            return DecreaseReport(vals, False, k)
    return DecreaseReport(vals, True, None)


def jensen_gaps(traj: Trajectory, system: SwitchedSystem, V: Polynomial) -> np.ndarray:
    """``V(x_{k+1}) - sum_i w_i V(f_i(x_k))`` per step; nonpositive for convex ``V``."""
    out = np.zeros(traj.steps)
    for k in range(traj.steps):
        x = traj.states[k]
        rhs = sum(w * V.eval(f.eval(x)) for w, f in zip(traj.weights[k], system.modes))
        out[k] = V.eval(traj.states[k + 1]) - rhs
    return out


@dataclass
class SublevelRegion:
    V: Polynomial
    beta: float


@dataclass
class BoxRegion:
    lower: Sequence[float]
    upper: Sequence[float]


def _sample_region(region, rng: np.random.Generator, n: int) -> np.ndarray:
    if isinstance(region, BoxRegion):
        lo = np.asarray(region.lower, dtype=float)
        hi = np.asarray(region.upper, dtype=float)
        return lo + (hi - lo) * rng.random(n)
    u = rng.standard_normal(n)
    u /= np.linalg.norm(u)
    rmax = (region.beta / region.V.eval(u)) ** (1.0 / region.V.degree())
    return u * rmax * rng.random() ** (1.0 / n)


@dataclass
class Witness:
    trajectory: Trajectory
    x0: np.ndarray
    reason: str  # "diverged" or "V increased"


def falsify(system: SwitchedSystem, region, trials: int = 1000, policy_family: str = "vertex",
            seed: int = 0, max_steps: int = MAX_STEPS, V: Polynomial | None = None):
    """Search for a diverging (or, given ``V``, a ``V``-increasing) trajectory from ``region``.

    ``policy_family`` is one of ``fixed`` (equal weights), ``hull``, ``hull2``,
    ``vertex`` or ``greedy`` (needs a ``V``). Returns a :class:`Witness` or None.
    Trial ``k`` uses seed ``seed + k`` for both the start point and the policy.
    """
    if V is None and isinstance(region, SublevelRegion):
        V = region.V
    for k in range(trials):
        rng = np.random.default_rng(seed + k)
        x0 = _sample_region(region, rng, system.n)
        policy = make_policy(policy_family, system, seed + k, V)
        traj = simulate(system, x0, policy, max_steps=max_steps)
        if traj.verdict == "diverged":
            return Witness(traj, x0, "diverged")
        if V is not None and not monitor_decrease(traj, V).strict:
            return Witness(traj, x0, "V increased")
    return None


def make_policy(name: str, system: SwitchedSystem, seed: int = 0, V: Polynomial | None = None,
                weights: Sequence[float] | None = None):
    if name == "fixed":
        return FixedWeights(weights if weights is not None else [1.0 / system.m] * system.m)
    if name == "hull":
        return RandomHull(seed)
    if name == "hull2":
        return RandomHull2(seed)
    if name == "vertex":
        return RandomVertex(seed)
    if name == "greedy":
        if V is None:
            raise ValueError("greedy policy needs V")
        return GreedyWorstCase(V)
    raise ValueError(f"unknown policy {name!r}")
