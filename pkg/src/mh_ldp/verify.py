"""Built-in instance sets and the twelve acceptance checks.

Each `criterion_k` returns a `CriterionResult` made of individual `Check`
rows. The CLI groups them into suites; tests/test_acceptance.py runs them
one by one.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .config import Defaults
from .kernel import (
    MhKernel,
    ProposalSpec,
    TargetSpec,
    build_kernel,
    check_invariance,
    condition_de_witness,
    continuum_rejection,
)
from .measures import (
    DiscreteMeasure,
    HybridMeasure,
    StateSpace,
    lp_distance,
    random_measure,
    relative_entropy,
    tv_norm,
    w1_distance,
)
from .rate import (
    legendre_check,
    laplace_limit,
    rate_delta,
    rate_dual_dv,
    rate_hybrid,
    rate_primal_sinkhorn,
)
from .sampler import (
    ball_probability_exact,
    enumerate_empirical_law,
    log_laplace_functional_exact,
    mc_ball_probability,
    replica_rng,
)
from . import smoothing

SUITES = {
    "lemmas": (1, 2, 4, 5, 6, 10, 11, 12),
    "duality": (3, 7),
    "smoothing": (9,),
    "sampler": (8,),
}
SUITES["all"] = tuple(sorted(set().union(*SUITES.values())))

# literal value quoted for the 2-state example; the exact value differs (see tests)
TWO_STATE_QUOTED = 0.034625
TWO_STATE_QUOTED_TOL = 1e-5


class InvalidFixture(ValueError):
    """A built-in or user-supplied fixture violates a check's premise."""


@dataclass
class Check:
    criterion: int
    name: str
    value: float
    bound: str
    passed: bool
    hard: bool = True
    timing: bool = False

    def row(self) -> dict:
        return {"criterion": self.criterion, "check": self.name, "value": self.value,
                "bound": self.bound, "verdict": "pass" if self.passed else "FAIL",
                "hard": self.hard}


@dataclass
class CriterionResult:
    criterion: int
    title: str
    checks: list = field(default_factory=list)
    wall_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.hard)

    def add(self, name, value, bound, passed, hard=True) -> None:
        self.checks.append(Check(self.criterion, name, float(value), bound, bool(passed), hard))

    def add_timing(self, name, seconds, limit) -> None:
        self.checks.append(Check(self.criterion, name, float(seconds), f"< {limit}", seconds < limit,
                                 timing=True))

    def summary(self) -> str:
        failed = [c.name for c in self.checks if c.hard and not c.passed]
        verdict = "PASS" if self.passed else "FAIL"
        tail = "" if not failed else f" (failed: {', '.join(failed)})"
        return f"criterion {self.criterion:2d} {verdict}: {self.title}{tail}"


# ------------------------------------------------------------- instances


def two_state_kernel() -> MhKernel:
    """pi = (2/3, 1/3), uniform proposal: a = [[.5, .25], [.5, .5]], r = (.25, 0)."""
    sp = StateSpace.finite(2)
    return build_kernel(TargetSpec.vector([2 / 3, 1 / 3]), ProposalSpec.uniform(), sp)


def random_finite_kernel(rng: np.random.Generator, m: int) -> MhKernel:
    pi = rng.dirichlet(np.ones(m))
    pi = np.maximum(pi, 1e-3)
    pi /= pi.sum()
    J = rng.dirichlet(np.ones(m), size=m)
    sp = StateSpace.finite(m)
    return build_kernel(TargetSpec.vector(pi), ProposalSpec.matrix(J), sp)


def grid_instances(m: int) -> list[tuple[str, MhKernel]]:
    sp = StateSpace.grid(0.0, 1.0, m)
    specs = [
        ("gaussian_rw", TargetSpec.gaussian(0.5, 0.3), ProposalSpec.random_walk(0.1)),
        ("bimodal_rw", TargetSpec.gaussian_mixture([0.3, 0.7], [0.1, 0.15], [0.5, 0.5]),
         ProposalSpec.random_walk(0.15)),
        ("uniform_rw", TargetSpec.uniform(), ProposalSpec.random_walk(0.2)),
        ("gaussian_independence", TargetSpec.gaussian(0.4, 0.2),
         ProposalSpec.independence(TargetSpec.gaussian(0.5, 0.4))),
        ("plateau_independence", plateau_target(), ProposalSpec.independence(TargetSpec.uniform())),
    ]
    return [(name, build_kernel(t, p, sp)) for name, t, p in specs]


def gaussian_instance(m: int) -> MhKernel:
    return build_kernel(TargetSpec.gaussian(0.5, 0.3), ProposalSpec.random_walk(0.1),
                        StateSpace.grid(0.0, 1.0, m))


def plateau_target() -> TargetSpec:
    """Three raised plateaus on a flat floor; a and r are constant on each plateau."""
    return TargetSpec.piecewise([0.35, 0.45, 0.55, 0.65], [1.0, 4.0, 5.0, 4.5, 1.0])


def plateau_instance(m: int) -> MhKernel:
    return build_kernel(plateau_target(), ProposalSpec.independence(TargetSpec.uniform()),
                        StateSpace.grid(0.0, 1.0, m))


def _finite_set(defaults: Defaults, seed: int, count: int, max_m: int, stream: int):
    rng = replica_rng(seed, stream)
    return [random_finite_kernel(rng, int(rng.integers(2, max_m + 1))) for _ in range(count)]


# -------------------------------------------------------------- criteria


def criterion_1(d: Defaults, seed: int) -> CriterionResult:
    res = CriterionResult(1, "kernel rows, reversibility and invariance")
    t0 = time.perf_counter()
    finite = _finite_set(d, seed, d.finite_instances, d.finite_max_m, 1)
    grids = grid_instances(d.grid_m)
    row = max(float(np.max(np.abs(k.K.sum(axis=1) - 1))) for k in finite + [g for _, g in grids])
    rev_f = max(k.diagnostics()["reversibility_residual"] for k in finite)
    rev_g = max(g.diagnostics()["reversibility_residual"] for _, g in grids)
    inv_f = max(check_invariance(k) for k in finite)
    wall = time.perf_counter() - t0
    res.add("row sums", row, "<= 1e-10", row <= 1e-10)
    res.add("reversibility finite", rev_f, "<= 1e-10", rev_f <= 1e-10)
    res.add("reversibility grid", rev_g, "<= 1e-8", rev_g <= 1e-8)
    res.add("invariance finite", inv_f, "<= 1e-12", inv_f <= 1e-12)
    res.add_timing("runtime s", wall, 5)
    res.wall_s = wall
    return res


def criterion_2(d: Defaults, seed: int) -> CriterionResult:
    res = CriterionResult(2, "I(pi) vanishes")
    t0 = time.perf_counter()
    kernels = _finite_set(d, seed, d.finite_instances, d.finite_max_m, 1)
    kernels += [g for _, g in grid_instances(d.grid_m)]
    worst = max(rate_primal_sinkhorn(k.pi, k, tol=d.marginal_tol).value for k in kernels)
    res.add("max I(pi)", worst, "<= 1e-9", worst <= 1e-9)
    res.wall_s = time.perf_counter() - t0
    return res


def criterion_3(d: Defaults, seed: int) -> CriterionResult:
    res = CriterionResult(3, "primal and dual rates agree")
    t0 = time.perf_counter()
    rng = replica_rng(seed, 3)
    gaps, walls = [], []
    for k in _finite_set(d, seed, d.rate_instances, d.rate_max_m, 2):
        nu = random_measure(k.space, rng)
        s = time.perf_counter()
        primal = rate_primal_sinkhorn(nu, k, tol=d.marginal_tol).value
        walls.append(time.perf_counter() - s)
        s = time.perf_counter()
        dual, _ = rate_dual_dv(nu, k)
        walls.append(time.perf_counter() - s)
        gaps.append(abs(primal - dual))
    res.add("max |primal - dual|", max(gaps), "<= 1e-6", max(gaps) <= d.dual_gap_tol)
    res.add_timing("slowest solve s", max(walls), 1)
    res.wall_s = time.perf_counter() - t0
    return res


def two_state_closed_form() -> float:
    """I((1/2, 1/2)) on the 2-state example: the dual optimum sits at u = (1, sqrt 3)."""
    return 0.5 * math.log(4 * math.sqrt(3) / (3 + 2 * math.sqrt(3)))


def criterion_4(d: Defaults, seed: int) -> CriterionResult:
    res = CriterionResult(4, "closed-form oracles")
    t0 = time.perf_counter()
    rng = replica_rng(seed, 4)
    worst = 0.0
    for _ in range(d.iid_cases):
        m = int(rng.integers(2, 9))
        sp = StateSpace.finite(m)
        rho = random_measure(sp, rng)
        nu = random_measure(sp, rng)
        K = MhKernel.from_matrix(np.tile(rho.w, (m, 1)), sp)
        worst = max(worst, abs(rate_primal_sinkhorn(nu, K, tol=d.marginal_tol).value
                               - relative_entropy(nu, rho)))
    res.add("i.i.d. rows |I - R(nu||rho)|", worst, "<= 1e-8", worst <= 1e-8)
    k2 = two_state_kernel()
    half = DiscreteMeasure(k2.space, [0.5, 0.5])
    val = rate_primal_sinkhorn(half, k2, tol=1e-13).value
    exact = two_state_closed_form()
    res.add("2-state I(1/2,1/2) vs closed form", abs(val - exact), "<= 1e-10", abs(val - exact) <= 1e-10)
    quoted = abs(val - TWO_STATE_QUOTED)
    res.add("2-state I(1/2,1/2) vs 0.034625", quoted, "<= 1e-5", quoted <= TWO_STATE_QUOTED_TOL)
    for x, r_expected in ((0, 0.75), (1, 0.5)):
        err = abs(rate_delta(k2, x).value + math.log(r_expected))
        res.add(f"I(delta_{x}) = -log {r_expected}", err, "<= 1e-9", err <= 1e-9)
    for x, value in zip(d.atom_rate_states, atom_rate_fixture(d)):
        res.add(f"atom at {x}: -log r(x)", value, "finite", True, hard=False)
    res.wall_s = time.perf_counter() - t0
    return res


def atom_rate_fixture(d: Defaults) -> list[float]:
    """Continuum atom rates -log r(x) at the configured atoms of the 2-state example."""
    k2 = two_state_kernel()
    out = []
    for x in d.atom_rate_states:
        rd = rate_delta(k2, int(x))
        if not math.isfinite(rd.continuum):
            raise InvalidFixture(f"atom at state {x} has r(x) = 0: the atomic rate is +inf "
                                 f"(finite value -log K_xx = {rd.value:.6f} only reflects the "
                                 f"acceptance atom)")
        out.append(rd.continuum)
    return out


def criterion_5(d: Defaults, seed: int) -> CriterionResult:
    res = CriterionResult(5, "grid delta rate converges at order h")
    t0 = time.perf_counter()
    gaps = []
    for m in d.refinement_levels:
        k = gaussian_instance(m)
        x = k.space.cell_of(0.3)
        r_cont = continuum_rejection(k, float(k.space.points[x]))
        gaps.append(abs(rate_delta(k, x).value + math.log(r_cont)))
    for i in range(1, len(gaps)):
        ratio = gaps[i - 1] / gaps[i]
        res.add(f"gap ratio m={d.refinement_levels[i - 1]}->{d.refinement_levels[i]}", ratio,
                "in [1.6, 2.4]", 1.6 <= ratio <= 2.4)
    res.add("finest gap", gaps[-1], "reported", True, hard=False)
    res.wall_s = time.perf_counter() - t0
    return res


def hybrid_fixture(space: StateSpace) -> HybridMeasure:
    dens = DiscreteMeasure.normalized(space, 1 + np.sin(np.pi * space.points) ** 2)
    return HybridMeasure(dens, ((space.cell_of(0.3), 0.6), (space.cell_of(0.7), 0.4)), 0.3)


def criterion_6(d: Defaults, seed: int) -> CriterionResult:
    res = CriterionResult(6, "hybrid decomposition gap shrinks under refinement")
    t0 = time.perf_counter()
    gaps = []
    for m in d.hybrid_levels:
        k = gaussian_instance(m)
        gaps.append(rate_hybrid(hybrid_fixture(k.space), k, compare_flat=True, tol=d.marginal_tol).gap)
    monotone = all(b < a for a, b in zip(gaps, gaps[1:]))
    res.add("gaps decrease", float(monotone), "strictly decreasing", monotone)
    for m, g in zip(d.hybrid_levels, gaps):
        res.add(f"gap m={m}", g, "reported", True, hard=False)
    res.wall_s = time.perf_counter() - t0
    return res


def criterion_7(d: Defaults, seed: int) -> CriterionResult:
    res = CriterionResult(7, "Legendre and Varadhan duality")
    t0 = time.perf_counter()
    rng = replica_rng(seed, 7)
    leg, var = 0.0, 0.0
    for k in _finite_set(d, seed, d.legendre_instances, d.rate_max_m, 5):
        for _ in range(d.legendre_fs):
            f = rng.normal(size=k.m)
            leg = max(leg, legendre_check(k, f, tol=d.marginal_tol).gap)
        f = rng.normal(size=k.m)
        n = d.varadhan_n
        lhs = -log_laplace_functional_exact(k, f, n, 0) / n
        var = max(var, abs(lhs - laplace_limit(k, f)))
    res.add("max Legendre gap", leg, "<= 1e-6", leg <= 1e-6)
    res.add(f"max Varadhan gap n={d.varadhan_n}", var, "<= 5e-3", var <= 5e-3)
    res.wall_s = time.perf_counter() - t0
    return res


def sampler_instance() -> MhKernel:
    sp = StateSpace.finite(3)
    J = [[0.2, 0.5, 0.3], [0.4, 0.2, 0.4], [0.3, 0.3, 0.4]]
    return build_kernel(TargetSpec.vector([0.5, 0.3, 0.2]), ProposalSpec.matrix(J), sp)


def criterion_8(d: Defaults, seed: int) -> CriterionResult:
    res = CriterionResult(8, "Monte Carlo ball probabilities match the exact law")
    t0 = time.perf_counter()
    k = sampler_instance()
    n = d.sampler_n
    law = enumerate_empirical_law(k, n, 0)
    mass = sum(law.values())
    res.add("enumerated mass", abs(mass - 1), "<= 1e-10", abs(mass - 1) <= 1e-10)
    nu = k.pi
    for metric in ("tv", "lp"):
        for delta in d.sampler_deltas:
            exact, _ = ball_probability_exact(law, nu, delta, metric)
            est = mc_ball_probability(k, nu, delta, n, d.sampler_reps, seed, metric=metric, x0=0)
            se = math.sqrt(exact * (1 - exact) / d.sampler_reps)
            z = abs(est.estimate - exact) / se if se > 0 else (0.0 if est.estimate == exact else math.inf)
            res.add(f"{metric} delta={delta} |z|", z, "<= 3", z <= 3)
    wall = time.perf_counter() - t0
    res.add_timing("runtime s", wall, 30)
    res.wall_s = wall
    return res


def smoothing_sweep(d: Defaults, seed: int | None = None) -> tuple[list[dict], dict]:
    """Rows (n, varrho_n, V_n, I, bound, W1, residual) for the 3-atom plateau instance."""
    k = plateau_instance(d.smoothing_m)
    sp = k.space
    cells = [sp.cell_of(x) for x in (0.4, 0.5, 0.6)]
    sample = smoothing.sample_atoms(sp, cells, [0.3, 0.4, 0.3], max(d.smoothing_ns),
                                    d.smoothing_seed if seed is None else seed)
    target = smoothing.singular_rate(sample, k)
    rows = []
    for n in d.smoothing_ns:
        st = smoothing.varrho_n(sample, n, k)
        if st.V >= 1:
            continue
        nu = smoothing.build_nu_s_n(st)
        q = smoothing.build_q_n(st)
        rows.append({
            "n": n, "varrho_n": st.varrho, "V_n": st.V,
            "I_nu_s_n": rate_primal_sinkhorn(nu, k, tol=d.marginal_tol).value,
            "bound": smoothing.smoothing_bound(st, k),
            "W1_to_nu_s": w1_distance(nu, sample.singular_measure()),
            "invariance_residual": smoothing.invariance_residual(nu, q),
            "mass_error": abs(nu.w.sum() - 1),
        })
    gap = abs(rows[-1]["I_nu_s_n"] - target)
    summary = {"singular_rate": target, "final_n": rows[-1]["n"], "final_gap": gap,
               "tolerance": d.smoothing_cost_tol, "limsup_ok": gap <= d.smoothing_cost_tol,
               "grid_m": d.smoothing_m}
    return rows, summary


def criterion_9(d: Defaults, seed: int) -> CriterionResult:
    res = CriterionResult(9, "smoothed measures and their cost bound")
    t0 = time.perf_counter()
    rows, summary = smoothing_sweep(d)
    res.add("max mass error", max(r["mass_error"] for r in rows), "<= 1e-10",
            all(r["mass_error"] <= 1e-10 for r in rows))
    res.add("max invariance residual", max(r["invariance_residual"] for r in rows), "<= 1e-8",
            all(r["invariance_residual"] <= 1e-8 for r in rows))
    slack = max(r["I_nu_s_n"] - r["bound"] for r in rows)
    res.add("max I - bound", slack, "<= 1e-6", slack <= 1e-6)
    w1 = [r["W1_to_nu_s"] for r in rows]
    res.add("W1 decreasing", float(all(b < a for a, b in zip(w1, w1[1:]))), "strictly decreasing",
            all(b < a for a, b in zip(w1, w1[1:])))
    res.add(f"final cost gap n={summary['final_n']}", summary["final_gap"],
            f"<= {d.smoothing_cost_tol}", summary["limsup_ok"])
    wall = time.perf_counter() - t0
    res.add_timing("runtime s", wall, 60)
    res.wall_s = wall
    return res


def criterion_10(d: Defaults, seed: int) -> CriterionResult:
    res = CriterionResult(10, "mixing with the target")
    t0 = time.perf_counter()
    rng = replica_rng(seed, 10)
    tv_err = lp_slack = rate_slack = -math.inf
    for k in _finite_set(d, seed, d.mixing_fixtures, 8, 6):
        size = int(rng.integers(1, k.m + 1))
        support = rng.choice(k.m, size=size, replace=False)
        nu_dag = random_measure(k.space, rng, support=support)
        delta = float(rng.uniform(0.05, 1.95))
        nu_star = smoothing.mix_with_target(nu_dag, delta, k.pi)
        tv_err = max(tv_err, abs(tv_norm(nu_star, nu_dag) - delta / 4 * tv_norm(k.pi, nu_dag)))
        lp_slack = max(lp_slack, lp_distance(nu_star, nu_dag) - delta / 2)
        i_star = rate_primal_sinkhorn(nu_star, k, tol=d.marginal_tol).value
        i_dag = rate_primal_sinkhorn(nu_dag, k, tol=d.marginal_tol).value
        rate_slack = max(rate_slack, i_star - (1 - delta / 4) * i_dag)
    res.add("TV identity error", tv_err, "<= 1e-12", tv_err <= 1e-12)
    res.add("max d_LP - delta/2", lp_slack, "<= 0", lp_slack <= 0)
    res.add("max I(nu*) - (1-delta/4) I(nu_dag)", rate_slack, "<= 1e-6", rate_slack <= 1e-6)
    res.wall_s = time.perf_counter() - t0
    return res


def criterion_11(d: Defaults, seed: int) -> CriterionResult:
    res = CriterionResult(11, "transitivity condition fails on MH kernels")
    t0 = time.perf_counter()
    scenarios = [("two_state", two_state_kernel())]
    scenarios += [(n, k) for n, k in grid_instances(d.grid_m) if k.target.kind != "uniform"]
    scenarios += [(f"finite_{i}", k) for i, k in
                  enumerate(_finite_set(d, seed, d.finite_instances, d.finite_max_m, 1))]
    smallest = min(condition_de_witness(k).r for _, k in scenarios)
    res.add(f"min witness r(x) over {len(scenarios)} scenarios", smallest, "> 1e-9", smallest > 1e-9)
    res.wall_s = time.perf_counter() - t0
    return res


def criterion_12(d: Defaults, seed: int) -> CriterionResult:
    res = CriterionResult(12, "convexity of I")
    t0 = time.perf_counter()
    rng = replica_rng(seed, 12)
    worst = -math.inf
    kernels = _finite_set(d, seed, d.convexity_checks, 8, 8)
    for k in kernels:
        mu, nu = random_measure(k.space, rng), random_measure(k.space, rng)
        t = float(rng.uniform())
        mix = DiscreteMeasure.normalized(k.space, t * mu.w + (1 - t) * nu.w)
        lhs = rate_primal_sinkhorn(mix, k, tol=d.marginal_tol).value
        rhs = t * rate_primal_sinkhorn(mu, k, tol=d.marginal_tol).value \
            + (1 - t) * rate_primal_sinkhorn(nu, k, tol=d.marginal_tol).value
        worst = max(worst, lhs - rhs)
    res.add(f"max convexity excess over {len(kernels)} checks", worst, "<= 2e-6",
            worst <= d.convexity_tol)
    res.wall_s = time.perf_counter() - t0
    return res


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 13)}


def run_suite(name: str, defaults: Defaults | None = None, seed: int | None = None) -> list[CriterionResult]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    d = defaults or Defaults()
    seed = d.seed if seed is None else seed
    if 4 in SUITES[name]:
        atom_rate_fixture(d)  # fail fast on an invalid fixture before the long checks
    return [CRITERIA[i](d, seed) for i in SUITES[name]]
