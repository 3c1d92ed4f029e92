"""Ball smoothing of atomic measures and target mixing.

An atomic measure nu_s on a grid is replaced by the uniform spread of its
i.i.d. draws Y_1..Y_n over disjoint balls of radius varrho_n. The spread
measure has a density, an explicit invariant kernel q^n, and a rate bounded
by a closed-form expression that tends to the atomic rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernel import MhKernel
from .measures import DiscreteMeasure, StateSpace
from .sampler import replica_rng

C_D = 0.5  # radius = C_D * volume in d = 1


class ResolutionError(ValueError):
    """The grid is too coarse to resolve the smoothing balls."""


@dataclass(frozen=True)
class AtomSample:
    space: StateSpace
    cells: np.ndarray
    masses: np.ndarray
    draws: np.ndarray
    seed: int

    def singular_measure(self) -> DiscreteMeasure:
        w = np.zeros(self.space.m)
        w[self.cells] = self.masses
        return DiscreteMeasure.normalized(self.space, w)

    def empirical(self, n: int) -> DiscreteMeasure:
        counts = np.bincount(self.draws[:n], minlength=self.space.m)
        return DiscreteMeasure.normalized(self.space, counts)


def sample_atoms(space: StateSpace, cells, masses, n: int, seed: int) -> AtomSample:
    """n i.i.d. draws from sum_k masses_k delta_{cells_k}, by inverse CDF."""
    cells = np.asarray(cells, dtype=int)
    masses = np.asarray(masses, dtype=float)
    if abs(masses.sum() - 1) > 1e-12 or np.any(masses <= 0):
        raise ValueError("atom masses must be positive and sum to 1")
    u = replica_rng(seed).random(n)
    cdf = np.cumsum(masses)
    cdf[-1] = 1.0
    draws = cells[np.searchsorted(cdf, u, side="right")]
    return AtomSample(space, cells, masses, draws, int(seed))


def delta_eps(kernel: MhKernel, x: int, eps: float) -> float:
    """Largest radius t with log a and log r within eps of their values at x on B_t(x).

    a and r are constant on grid cells, so B_t(x) is represented by every cell
    it intersects. The condition only changes when a new ring of cells enters
    (t passing (k + 1/2) h), which makes the scan over rings exact.
    """
    sp = kernel.space
    h = sp.h
    a = kernel.a / h
    r = kernel.r
    if r[x] <= 0 or a[x, x] <= 0:
        raise ValueError(f"delta_eps needs r(x) > 0 and a(x, x) > 0 at cell {x}")
    cap = sp.boundary_distance(sp.points[x])
    la0, lr0 = math.log(a[x, x]), math.log(r[x])
    max_ring = int(math.floor(cap / h - 0.5))
    with np.errstate(divide="ignore"):
        for k in range(1, max_ring + 1):
            lo, hi = max(x - k, 0), min(x + k, sp.m - 1)
            ring = [j for j in (x - k, x + k) if 0 <= j < sp.m]
            block = np.arange(lo, hi + 1)
            bad_r = np.any(np.abs(np.log(r[ring]) - lr0) >= eps)
            rows = np.abs(np.log(a[np.ix_(ring, block)]) - la0)
            cols = np.abs(np.log(a[np.ix_(block, ring)]) - la0)
            if bad_r or np.any(rows >= eps) or np.any(cols >= eps):
                return min((k - 0.5) * h, cap)
    return cap


@dataclass
class SmoothingState:
    n: int
    draws: np.ndarray
    terms: dict
    varrho: float
    space: StateSpace = field(repr=False)

    @property
    def V(self) -> float:
        return 2.0 * self.varrho

    def ball_counts(self) -> dict[int, int]:
        cells, counts = np.unique(self.draws, return_counts=True)
        return dict(zip(cells.tolist(), counts.tolist()))

    def to_dict(self) -> dict:
        return {"n": self.n, "varrho_n": self.varrho, "V_n": self.V, "terms": self.terms}


def varrho_n(sample: AtomSample, n: int, kernel: MhKernel) -> SmoothingState:
    """Ball radius: the smallest of 1/n, the Delta_{1/n} radii, half the atom
    separation, half the boundary distance, and a(Y_i, Y_i)."""
    if n < 1 or n > len(sample.draws):
        raise ValueError(f"need 1 <= n <= {len(sample.draws)}")
    sp = kernel.space
    draws = sample.draws[:n]
    uniq = np.unique(draws)
    if np.any(kernel.r[uniq] <= 0):
        bad = uniq[kernel.r[uniq] <= 0].tolist()
        raise ValueError(f"draws at cells {bad} have r = 0, so the atomic rate is infinite")
    pts = sp.points[uniq]
    terms = {
        "inv_n": 1.0 / n,
        "delta": min(delta_eps(kernel, int(y), 1.0 / n) for y in uniq),
        "separation": 0.5 * float(np.diff(np.sort(pts)).min()) if len(uniq) > 1 else math.inf,
        "boundary": 0.5 * min(sp.boundary_distance(p) for p in pts),
        "acceptance": float(np.min(np.diag(kernel.a)[uniq] / sp.h)),
    }
    return SmoothingState(n, draws, terms, min(terms.values()), sp)


def _ball_overlaps(space: StateSpace, center: float, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Cells meeting (center - radius, center + radius) and the overlap lengths."""
    edges_lo = space.lo + np.arange(space.m) * space.h
    overlap = np.minimum(edges_lo + space.h, center + radius) - np.maximum(edges_lo, center - radius)
    idx = np.flatnonzero(overlap > 0)
    return idx, overlap[idx]


def _check_resolvable(state: SmoothingState) -> None:
    if state.varrho < 2 * state.space.h:
        raise ResolutionError(
            f"ball radius {state.varrho:.3e} is below two cell widths ({2 * state.space.h:.3e}); "
            f"use a finer grid (m >= {int(2 * (state.space.hi - state.space.lo) / state.varrho) + 1})"
        )


def build_nu_s_n(state: SmoothingState) -> DiscreteMeasure:
    """Cell masses of (1/(n V_n)) sum_i 1{x in B(Y_i)} dx, integrated exactly per cell."""
    _check_resolvable(state)
    sp = state.space
    w = np.zeros(sp.m)
    for cell, count in state.ball_counts().items():
        idx, ell = _ball_overlaps(sp, sp.points[cell], state.varrho)
        w[idx] += count * ell / (state.n * state.V)
    return DiscreteMeasure.normalized(sp, w)


def build_q_n(state: SmoothingState) -> np.ndarray:
    """Kernel that spreads uniformly over the current ball and keeps mass 1 - V_n in place.

    In the continuum a point lies in at most one ball. A grid cell can meet
    two balls whose edges touch inside it; its row is then the average of
    the two continuum rows, weighted by each ball's share of the cell's
    mass, which keeps nu_s^n exactly invariant.
    """
    _check_resolvable(state)
    if state.V >= 1:
        raise ValueError(f"V_n = {state.V:.3f} >= 1; take a larger n")
    sp = state.space
    balls = []
    share = np.zeros(sp.m)
    for cell, count in state.ball_counts().items():
        idx, ell = _ball_overlaps(sp, sp.points[cell], state.varrho)
        balls.append((idx, ell, count))
        share[idx] += count * ell
    q = np.eye(sp.m)
    for idx, ell, count in balls:
        wt = count * ell / share[idx]
        q[np.ix_(idx, idx)] += wt[:, None] * ell[None, :]
        q[idx, idx] -= wt * state.V
    return q


def invariance_residual(nu: DiscreteMeasure, q: np.ndarray) -> float:
    return float(np.abs(nu.w @ q - nu.w).sum())


def smoothing_bound(state: SmoothingState, kernel: MhKernel) -> float:
    """-V log(C_d V) + V/n + (1/n) sum_i log(1/r(Y_i)) + 1/n, for d = 1."""
    V, n = state.V, state.n
    if V >= 1:
        raise ValueError(f"V_n = {V:.3f} >= 1; the bound needs V_n < 1")
    log_inv_r = -np.log(kernel.r[state.draws])
    return -V * math.log(C_D * V) + V / n + float(log_inv_r.mean()) + 1.0 / n


def singular_rate(sample: AtomSample, kernel: MhKernel) -> float:
    """sum_k m_k log(1 / r(x_k)), the rate of the atomic measure itself."""
    return float(sample.masses @ -np.log(kernel.r[sample.cells]))


def mix_with_target(nu_dag: DiscreteMeasure, delta: float, pi: DiscreteMeasure) -> DiscreteMeasure:
    """(1 - delta/4) nu_dag + (delta/4) pi, for delta in (0, 2)."""
    if not 0 < delta < 2:
        raise ValueError("delta must lie in (0, 2)")
    t = delta / 4.0
    return DiscreteMeasure.normalized(nu_dag.space, (1 - t) * nu_dag.w + t * pi.w)
