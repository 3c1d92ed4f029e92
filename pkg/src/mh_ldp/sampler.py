"""Simulation of the MH chain, empirical measures and exact Laplace functionals."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .kernel import MhKernel
from .measures import CapabilityError, DiscreteMeasure, lp_distance, tv_norm, w1_distance

ENUMERATION_BUDGET = 10**7


def replica_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based Philox stream for (root seed, replica index)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def worker_count() -> int:
    env = os.environ.get("MH_LDP_THREADS")
    return max(1, int(env)) if env else 1


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    seed: int
    x0: int
    space: object = None

    def __len__(self):
        return len(self.states)

    def to_csv(self) -> str:
        return "state\n" + "".join(f"{s}\n" for s in self.states)


@dataclass(frozen=True)
class EmpiricalMeasure:
    measure: DiscreteMeasure
    n: int

    @property
    def w(self) -> np.ndarray:
        return self.measure.w


class _Stepper:
    """Proposal CDFs and acceptance ratios, precomputed from a kernel."""

    def __init__(self, kernel: MhKernel):
        if kernel.J is None:
            raise ValueError("simulation needs a kernel built from a proposal")
        J = kernel.J
        self.cdf = np.cumsum(J, axis=1)
        self.cdf[:, -1] = 1.0
        # a = ratio * J, so the acceptance probability is a / J
        self.accept = np.where(J > 0, kernel.a / np.where(J > 0, J, 1.0), 1.0)
        np.fill_diagonal(self.accept, 1.0)

    def run(self, x0: int, n: int, rng: np.random.Generator) -> np.ndarray:
        out = np.empty(n, dtype=np.int64)
        out[0] = x = x0
        u = rng.random((n - 1, 2))
        for i in range(n - 1):
            y = int(np.searchsorted(self.cdf[x], u[i, 0], side="right"))
            if u[i, 1] < self.accept[x, y]:
                x = y
            out[i + 1] = x
        return out


def run_chain(kernel: MhKernel, x0: int, n: int, seed: int) -> Trajectory:
    """Simulate X_0 = x0, ..., X_{n-1} with one proposal draw and one uniform per step."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if kernel.pi is not None and kernel.pi.w[x0] <= 0:
        raise ValueError(f"initial state {x0} lies outside the target's support")
    states = _Stepper(kernel).run(int(x0), int(n), replica_rng(seed))
    return Trajectory(states, int(seed), int(x0), kernel.space)


def empirical_measure(t: Trajectory, space=None) -> EmpiricalMeasure:
    """Counting measure of the visited states divided by n."""
    states = np.asarray(t.states if isinstance(t, Trajectory) else t)
    if len(states) == 0:
        raise ValueError("empty trajectory")
    space = space or getattr(t, "space", None)
    if space is None:
        raise ValueError("empirical_measure needs the state space")
    counts = np.bincount(states, minlength=space.m)
    return EmpiricalMeasure(DiscreteMeasure(space, counts / len(states)), len(states))


def log_laplace_functional_exact(kernel, f, n: int, x0: int) -> float:
    """log E_{x0}[exp(-sum_{i<n} f(X_i))] = log [D (K D)^{n-1} 1]_{x0}.

    Binary powering of K D with the sup norm divided out after every
    product and accumulated in a log factor.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    K = np.asarray(getattr(kernel, "K", kernel), dtype=float)
    f = np.asarray(f, dtype=float)
    d = np.exp(-(f - f.min()))
    shift = -n * f.min()
    M = K * d[None, :]
    acc = np.eye(K.shape[0])
    acc_log = 0.0
    p_log = 0.0
    e = n - 1
    while e:
        if e & 1:
            acc = acc @ M
            s = np.abs(acc).max()
            acc /= s
            acc_log += math.log(s) + p_log
        e >>= 1
        if e:
            M = M @ M
            s = np.abs(M).max()
            M /= s
            p_log = 2 * p_log + math.log(s)
    v = d[x0] * (acc[x0] @ np.ones(K.shape[0]))
    return math.log(v) + acc_log + shift


def laplace_functional_exact(kernel, f, n: int, x0: int) -> float:
    return math.exp(log_laplace_functional_exact(kernel, f, n, x0))


def _law_with_final(K: np.ndarray, n: int, x0: int) -> dict:
    m = K.shape[0]
    if float(m) ** n > ENUMERATION_BUDGET:
        raise CapabilityError(f"m^n = {m}^{n} exceeds the enumeration budget {ENUMERATION_BUDGET:.0e}")
    start = [0] * m
    start[x0] = 1
    layer = {(tuple(start), x0): 1.0}
    # paths sharing (counts, current state) have identical futures, so merge them
    for _ in range(n - 1):
        nxt: dict = {}
        for (counts, x), p in layer.items():
            row = K[x]
            for y in np.flatnonzero(row):
                c = list(counts)
                c[y] += 1
                key = (tuple(c), int(y))
                nxt[key] = nxt.get(key, 0.0) + p * row[y]
        layer = nxt
    return layer


def enumerate_empirical_law(kernel, n: int, x0: int, with_final_state: bool = False) -> dict:
    """Exact law of n * L^n as a map count-vector -> probability."""
    K = np.asarray(getattr(kernel, "K", kernel), dtype=float)
    joint = _law_with_final(K, n, x0)
    if with_final_state:
        return joint
    law: dict = {}
    for (counts, _), p in joint.items():
        law[counts] = law.get(counts, 0.0) + p
    return law


_METRICS = {"tv": tv_norm, "w1": w1_distance, "lp": lp_distance}


def _distance(metric: str):
    try:
        return _METRICS[metric.lower()]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; choose TV, W1 or LP") from None


def ball_probability_exact(law: dict, nu: DiscreteMeasure, delta: float, metric: str = "tv"):
    """(open, closed) ball masses of an enumerated empirical law around nu."""
    dist = _distance(metric)
    open_p = closed_p = 0.0
    for counts, p in law.items():
        c = np.asarray(counts, dtype=float)
        d = dist(DiscreteMeasure.normalized(nu.space, c), nu)
        open_p += p * (d < delta)
        closed_p += p * (d <= delta)
    return open_p, closed_p


@dataclass(frozen=True)
class BallEstimate:
    estimate: float
    stderr: float
    reps: int
    metric: str
    delta: float
    closed_estimate: float

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "stderr": self.stderr, "reps": self.reps,
                "metric": self.metric, "delta": self.delta, "closed_estimate": self.closed_estimate}


def _ball_hits(args):
    kernel, nu_w, delta, n, seed, x0, metric, lo, hi = args
    stepper = _Stepper(kernel)
    dist = _distance(metric)
    nu = DiscreteMeasure(kernel.space, nu_w)
    hits = np.zeros(2, dtype=np.int64)
    for rep in range(lo, hi):
        states = stepper.run(x0, n, replica_rng(seed, rep))
        L = DiscreteMeasure(kernel.space, np.bincount(states, minlength=kernel.m) / n)
        d = dist(L, nu)
        hits += (d < delta, d <= delta)
    return hits


def mc_ball_probability(kernel: MhKernel, nu: DiscreteMeasure, delta: float, n: int, reps: int,
                        seed: int, metric: str = "tv", x0: int = 0, workers: int | None = None) -> BallEstimate:
    """Fraction of independent chains whose L^n lies within delta of nu.

    Replica k draws from the stream (seed, k), so the estimate does not
    depend on how replicas are spread over workers.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    if metric.lower() == "lp" and kernel.m > 20:
        raise CapabilityError("LP balls need m <= 20")
    _distance(metric)
    workers = workers or worker_count()
    bounds = np.linspace(0, reps, workers + 1).astype(int)
    jobs = [(kernel, nu.w, delta, n, seed, x0, metric, int(lo), int(hi))
            for lo, hi in zip(bounds[:-1], bounds[1:])]
    if workers == 1:
        hits = _ball_hits(jobs[0])
    else:
        with ProcessPoolExecutor(workers) as ex:
            hits = sum(ex.map(_ball_hits, jobs))
    p_open, p_closed = hits / reps
    return BallEstimate(float(p_open), math.sqrt(p_open * (1 - p_open) / reps), reps, metric,
                        delta, float(p_closed))
