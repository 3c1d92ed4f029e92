"""Metropolis-Hastings kernels K = a + diag(r) and their structural diagnostics.

On a grid every integral over the state space is a midpoint sum, and the
acceptance matrix stores masses a(x_i, x_j) * h so that K is row-stochastic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special, stats
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .measures import DiscreteMeasure, StateSpace

QUADRATURE_TOL = 1e-6
CLAMP_TOL = 1e-6


class DiscretizationError(ValueError):
    """A grid is too coarse for the requested quadrature accuracy."""


class ConditionNotViolated(ValueError):
    pass


# ---------------------------------------------------------------- targets


@dataclass(frozen=True)
class TargetSpec:
    """Target distribution: a probability vector (finite) or a density family (grid).

    Grid families: ``gaussian_mixture`` (means, sds, weights), ``uniform`` and
    ``table`` (density values at the cell centers) and ``piecewise`` (a step
    density given by breakpoints and levels).
    """

    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def vector(cls, probs) -> "TargetSpec":
        return cls("vector", {"probs": [float(p) for p in probs]})

    @classmethod
    def gaussian(cls, mean: float, sd: float) -> "TargetSpec":
        return cls.gaussian_mixture([mean], [sd], [1.0])

    @classmethod
    def gaussian_mixture(cls, means, sds, weights) -> "TargetSpec":
        return cls("gaussian_mixture", {"means": list(means), "sds": list(sds), "weights": list(weights)})

    @classmethod
    def uniform(cls) -> "TargetSpec":
        return cls("uniform", {})

    @classmethod
    def table(cls, values) -> "TargetSpec":
        return cls("table", {"values": [float(v) for v in values]})

    @classmethod
    def piecewise(cls, breaks, levels) -> "TargetSpec":
        """Step density: levels[k] between breaks[k-1] and breaks[k]."""
        if len(levels) != len(breaks) + 1:
            raise ValueError("piecewise target needs one more level than breakpoints")
        return cls("piecewise", {"breaks": [float(b) for b in breaks], "levels": [float(v) for v in levels]})

    def density(self, x, space: StateSpace):
        """Unnormalized target density (grid) or probability (finite) at x."""
        if self.kind == "vector":
            return np.asarray(self.params["probs"], dtype=float)[x]
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            return np.ones_like(x)
        if self.kind == "gaussian_mixture":
            p = self.params
            out = np.zeros_like(x)
            for mu, sd, wt in zip(p["means"], p["sds"], p["weights"]):
                out = out + wt * stats.norm.pdf(x, mu, sd)
            return out
        if self.kind == "piecewise":
            levels = np.asarray(self.params["levels"], dtype=float)
            return levels[np.searchsorted(self.params["breaks"], x, side="right")]
        if self.kind == "table":
            vals = np.asarray(self.params["values"], dtype=float)
            idx = np.clip(np.floor((x - space.lo) / space.h).astype(int), 0, space.m - 1)
            return vals[idx]
        raise ValueError(f"unknown target kind {self.kind!r}")

    def measure(self, space: StateSpace) -> DiscreteMeasure:
        if self.kind == "vector":
            probs = np.asarray(self.params["probs"], dtype=float)
            if probs.shape != (space.m,):
                raise ValueError("target vector length does not match the state space")
            return DiscreteMeasure(space, probs)
        if not space.is_grid:
            raise ValueError(f"target family {self.kind!r} needs a grid space")
        dens = self.density(space.points, space)
        return DiscreteMeasure.normalized(space, dens * space.h)

    def validate(self, space: StateSpace) -> None:
        if self.kind == "vector":
            probs = np.asarray(self.params["probs"], dtype=float)
            if np.any(probs < 0) or abs(probs.sum() - 1) > 1e-12:
                raise ValueError("target vector must be a probability vector")
            if probs.shape != (space.m,):
                raise ValueError("target vector length does not match the state space")
            return
        dens = self.density(space.points, space)
        if np.any(~np.isfinite(dens)) or np.any(dens <= 0):
            raise ValueError("grid targets must be strictly positive on the interval")

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetSpec":
        d = dict(d)
        return cls(d.pop("kind"), d)


# -------------------------------------------------------------- proposals


@dataclass(frozen=True)
class ProposalSpec:
    """Proposal J(y|x).

    Finite kinds: ``matrix`` (row-stochastic, strictly positive) and
    ``uniform``. Grid kinds: ``random_walk`` (gaussian with scale sigma),
    ``independence`` (density given as a TargetSpec dict) and ``table``
    (density values J(x_j | x_i)). Built-in grid families are renormalized
    per row over the grid.
    """

    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def matrix(cls, J) -> "ProposalSpec":
        return cls("matrix", {"J": np.asarray(J, dtype=float).tolist()})

    @classmethod
    def uniform(cls) -> "ProposalSpec":
        return cls("uniform", {})

    @classmethod
    def random_walk(cls, scale: float) -> "ProposalSpec":
        return cls("random_walk", {"scale": float(scale)})

    @classmethod
    def independence(cls, density: TargetSpec) -> "ProposalSpec":
        return cls("independence", {"density": density.to_dict()})

    @classmethod
    def table(cls, J) -> "ProposalSpec":
        return cls("table", {"J": np.asarray(J, dtype=float).tolist()})

    def _shape(self, y, x):
        """Unnormalized grid proposal density g(y, x)."""
        if self.kind == "random_walk":
            return stats.norm.pdf(np.asarray(y) - np.asarray(x), scale=self.params["scale"])
        if self.kind == "independence":
            dens = TargetSpec.from_dict(self.params["density"])
            return dens.density(np.asarray(y, dtype=float), None) * np.ones_like(np.asarray(x, dtype=float))
        raise ValueError(f"proposal kind {self.kind!r} has no density family")

    def _normalizer(self, x, space: StateSpace):
        """Midpoint-rule normalizer sum_k g(x_k, x) h, vectorized in x."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        g = self._shape(space.points[None, :], x[:, None])
        return g.sum(axis=1) * space.h

    def matrix_masses(self, space: StateSpace) -> np.ndarray:
        """Row-stochastic matrix of proposal masses J(x_j|x_i) * h."""
        if self.kind == "matrix":
            return np.asarray(self.params["J"], dtype=float)
        if self.kind == "uniform":
            return np.full((space.m, space.m), 1.0 / space.m)
        if self.kind == "table":
            return np.asarray(self.params["J"], dtype=float) * space.h
        x = space.points
        g = self._shape(x[None, :], x[:, None])
        return g / g.sum(axis=1, keepdims=True)

    def density_row(self, x: float, space: StateSpace) -> np.ndarray:
        """J(x_j | x) at every grid node for an arbitrary point x."""
        if self.kind == "table":
            J = np.asarray(self.params["J"], dtype=float)
            return J[space.cell_of(x)]
        g = self._shape(space.points, x)
        return g / (g.sum() * space.h)

    def density_at(self, y: float, x: float, space: StateSpace) -> float:
        """J(y|x) with the same per-row normalization the grid kernel uses."""
        if self.kind == "table":
            J = np.asarray(self.params["J"], dtype=float)
            return float(J[space.cell_of(x), space.cell_of(y)])
        return float(self._shape(y, x) / self._normalizer(x, space)[0])

    def density_into(self, x: float, space: StateSpace) -> np.ndarray:
        """J(x | x_j) for every grid node x_j, i.e. the column of J at x."""
        if self.kind == "table":
            J = np.asarray(self.params["J"], dtype=float)
            return J[:, space.cell_of(x)]
        g = self._shape(x, space.points)
        return g / self._normalizer(space.points, space)

    def continuum_density(self, y, x, space: StateSpace):
        """J(y|x) normalized by the exact integral over [lo, hi]."""
        if self.kind == "random_walk":
            s = self.params["scale"]
            z = stats.norm.cdf((space.hi - x) / s) - stats.norm.cdf((space.lo - x) / s)
            return stats.norm.pdf(y - x, scale=s) / z
        if self.kind == "independence":
            dens = TargetSpec.from_dict(self.params["density"])
            z = integrate.quad(lambda t: float(dens.density(t, space)), space.lo, space.hi)[0]
            return dens.density(np.asarray(y, dtype=float), space) / z
        raise ValueError(f"no continuum density for proposal kind {self.kind!r}")

    def validate(self, space: StateSpace) -> None:
        if self.kind in ("matrix", "table"):
            J = np.asarray(self.params["J"], dtype=float)
            if J.shape != (space.m, space.m):
                raise ValueError("proposal matrix shape does not match the state space")
        if self.kind in ("random_walk", "independence", "table") and not space.is_grid:
            raise ValueError(f"proposal kind {self.kind!r} needs a grid space")
        if self.kind in ("matrix", "uniform") and space.is_grid:
            raise ValueError(f"proposal kind {self.kind!r} needs a finite space")
        Jm = self.matrix_masses(space)
        if np.any(~np.isfinite(Jm)) or np.any(Jm <= 0):
            raise ValueError("proposal must be strictly positive on S x S")
        resid = float(np.max(np.abs(Jm.sum(axis=1) - 1.0)))
        if resid > QUADRATURE_TOL:
            if space.is_grid:
                raise DiscretizationError(
                    f"proposal rows integrate to 1 only within {resid:.2e} on {space.m} cells; "
                    f"try m >= {_suggest_m(space.m, resid)}"
                )
            raise ValueError(f"proposal rows must sum to 1 (residual {resid:.2e})")

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "ProposalSpec":
        d = dict(d)
        return cls(d.pop("kind"), d)


def _suggest_m(m: int, resid: float) -> int:
    # midpoint rule error scales as h^2
    factor = math.sqrt(resid / QUADRATURE_TOL)
    return int(2 ** math.ceil(math.log2(m * factor * 1.5)))


# ----------------------------------------------------------------- kernel


@dataclass(frozen=True)
class MhKernel:
    """Assembled kernel K = a + diag(r) on a finite space or grid."""

    space: StateSpace
    a: np.ndarray
    r: np.ndarray
    K: np.ndarray
    pi: DiscreteMeasure | None = None
    J: np.ndarray | None = field(default=None, repr=False)
    target: TargetSpec | None = None
    proposal: ProposalSpec | None = None
    clamp_max: float = 0.0

    @property
    def m(self) -> int:
        return self.space.m

    @property
    def h(self) -> float:
        return self.space.h

    @classmethod
    def from_matrix(cls, K, space: StateSpace | None = None, pi=None) -> "MhKernel":
        """Wrap an arbitrary row-stochastic matrix as a test fixture (r = 0)."""
        K = np.asarray(K, dtype=float)
        space = space or StateSpace.finite(K.shape[0])
        if np.any(K < 0) or np.max(np.abs(K.sum(axis=1) - 1)) > 1e-10:
            raise ValueError("fixture matrix must be row-stochastic")
        if pi is not None and not isinstance(pi, DiscreteMeasure):
            pi = DiscreteMeasure(space, pi)
        return cls(space, K.copy(), np.zeros(K.shape[0]), K, pi=pi)

    def row_at(self, x: float) -> tuple[np.ndarray, float]:
        """Acceptance masses a(x, x_j) h at the grid nodes and r(x), for any x."""
        if not self.space.is_grid or self.target is None:
            raise ValueError("row_at needs a kernel built from grid specs")
        sp = self.space
        px = float(self.target.density(x, sp))
        Jfwd = self.proposal.density_row(x, sp)
        Jback = self.proposal.density_into(x, sp)
        py = self.target.density(sp.points, sp)
        num, den = py * Jback, px * Jfwd
        ratio = np.where(den > 0, np.minimum(1.0, num / np.where(den > 0, den, 1.0)), 1.0)
        a_row = ratio * Jfwd * sp.h
        return a_row, max(1.0 - float(a_row.sum()), 0.0)

    def diagnostics(self) -> dict:
        piw = self.pi.w if self.pi is not None else None
        rev = float("nan")
        if piw is not None:
            flow = piw[:, None] * self.a
            rev = float(np.max(np.abs(flow - flow.T)))
        return {
            "row_residual": float(np.max(np.abs(self.K.sum(axis=1) - 1.0))),
            "reversibility_residual": rev,
            "clamp_max": self.clamp_max,
            "r_max": float(np.max(self.r)),
            "indecomposable": bool(check_indecomposable(self).indecomposable),
        }


def hastings_ratio(target: TargetSpec, proposal: ProposalSpec, x, y, space: StateSpace) -> float:
    """min{1, pi(y) J(x|y) / (pi(x) J(y|x))}, and 1 when pi(x) J(y|x) = 0."""
    if space.is_grid:
        px, py = float(target.density(x, space)), float(target.density(y, space))
        jyx = proposal.density_at(y, x, space)
        jxy = proposal.density_at(x, y, space)
    else:
        pi = np.asarray(target.params["probs"], dtype=float)
        J = proposal.matrix_masses(space)
        px, py, jyx, jxy = pi[x], pi[y], J[x, y], J[y, x]
    den = px * jyx
    if den == 0:
        return 1.0
    return min(1.0, py * jxy / den)


def build_kernel(target: TargetSpec, proposal: ProposalSpec, space: StateSpace) -> MhKernel:
    """Assemble a, r and K from a target/proposal pair."""
    target.validate(space)
    proposal.validate(space)
    J = proposal.matrix_masses(space)
    if space.is_grid:
        dens = target.density(space.points, space)
    else:
        dens = np.asarray(target.params["probs"], dtype=float)
    # the ratio only needs pi up to a constant; J masses carry the common factor h
    num = dens[None, :] * J.T
    den = dens[:, None] * J
    safe = np.where(den > 0, den, 1.0)
    ratio = np.where(den > 0, np.minimum(1.0, num / safe), 1.0)
    a = ratio * J
    # summing the rejected share directly keeps r exactly 0 when nothing is rejected
    r = ((1.0 - ratio) * J).sum(axis=1)
    clamp = float(max(0.0, -r.min(), r.max() - 1.0))
    if clamp > CLAMP_TOL:
        raise DiscretizationError(f"rejection mass went negative by {clamp:.2e}; refine the grid")
    r = np.clip(r, 0.0, 1.0)
    K = a + np.diag(r)
    return MhKernel(space, a, r, K, pi=target.measure(space), J=J, target=target,
                    proposal=proposal, clamp_max=clamp)


def continuum_rejection(kernel: MhKernel, x: float) -> float:
    """r(x) = 1 - int a(x, y) dy computed by adaptive quadrature (grid families only)."""
    sp, target, prop = kernel.space, kernel.target, kernel.proposal
    px = float(target.density(x, sp))

    def a_dens(y):
        jyx = prop.continuum_density(y, x, sp)
        jxy = prop.continuum_density(x, y, sp)
        return min(jyx, float(target.density(y, sp)) * jxy / px)

    pts = [x] + [float(mu) for mu in target.params.get("means", []) if sp.lo < mu < sp.hi]
    val, _ = integrate.quad(a_dens, sp.lo, sp.hi, points=sorted(set(pts)), limit=400,
                            epsabs=1e-13, epsrel=1e-12)
    return 1.0 - val


# ------------------------------------------------------------ diagnostics


def check_invariance(kernel: MhKernel) -> float:
    """||pi K - pi||_TV for the kernel's target."""
    if kernel.pi is None:
        raise ValueError("kernel has no target measure")
    return float(np.abs(kernel.pi.w @ kernel.K - kernel.pi.w).sum())


@dataclass(frozen=True)
class Indecomposability:
    indecomposable: bool
    components: list[list[int]]
    reach_order: list[int]

    def __bool__(self):
        return self.indecomposable


def check_indecomposable(kernel) -> Indecomposability:
    """Strong connectivity of the positive-entry graph of K.

    For a connected graph the certificate is the breadth-first reach order
    from state 0; otherwise the strongly connected components.
    """
    K = np.asarray(getattr(kernel, "K", kernel))
    graph = (K > 0).astype(np.int8)
    n, labels = connected_components(graph, directed=True, connection="strong")
    comps = [np.flatnonzero(labels == c).tolist() for c in range(n)]
    order = breadth_first_order(graph, 0, directed=True, return_predecessors=False).tolist()
    return Indecomposability(n == 1, comps, order)


def feller_deviations(kernel, x: float, xs, f: Callable) -> np.ndarray:
    """|int f dK(x_n, .) - int f dK(x, .)| for every x_n in xs."""
    nodes = kernel.space.points
    fn = np.asarray(f(nodes), dtype=float)

    def expect(z):
        a_row, r = kernel.row_at(z)
        return float(a_row @ fn + r * float(f(np.asarray(z))))

    base = expect(x)
    return np.array([abs(expect(z) - base) for z in xs])


def feller_probe(kernel, x: float, xs, f: Callable, burn_in: int = 0) -> float:
    """Largest deviation of the integral of f along x_n -> x, after burn_in terms."""
    dev = feller_deviations(kernel, x, xs, f)
    return float(dev[burn_in:].max())


@dataclass(frozen=True)
class ConditionWitness:
    state: int
    zeta: int
    r: float
    return_probs: np.ndarray
    cross_mass: float
    continuum_cross_mass: float

    def to_dict(self) -> dict:
        return {"state": self.state, "zeta": self.zeta, "r": self.r,
                "return_probs": self.return_probs.tolist(), "cross_mass": self.cross_mass,
                "continuum_cross_mass": self.continuum_cross_mass}


def condition_de_witness(kernel: MhKernel, steps: int = 8, tol: float = 1e-9) -> ConditionWitness:
    """Find x with r(x) > 0 and zeta != x exhibiting the transitivity failure.

    From x the chain returns to {x} with probability at least r(x)^i after
    i steps. From zeta the mass on {x} comes only from the acceptance
    density, so in the continuum it is 0; on a grid it is a(zeta, x) h.
    """
    x = int(np.argmax(kernel.r))
    rx = float(kernel.r[x])
    if rx <= tol:
        raise ConditionNotViolated("condition not violated by this instance: r(x) = 0 everywhere")
    col = kernel.a[:, x].copy()
    col[x] = np.inf
    zeta = int(np.argmin(col))
    probs = np.empty(steps)
    P = np.eye(kernel.m)[x]
    for i in range(steps):
        P = P @ kernel.K
        probs[i] = P[x]
    if np.any(probs < rx ** np.arange(1, steps + 1) * (1 - 1e-12)):
        raise AssertionError("return probabilities fell below r(x)^i")
    cross = float(kernel.K[zeta, x])
    return ConditionWitness(x, zeta, rx, probs, cross, 0.0 if kernel.space.is_grid else cross)


def default_drift(kernel: MhKernel) -> np.ndarray:
    """b(x) = int y a(x, dy) - (1 - r(x)) x at every node."""
    x = kernel.space.points
    return kernel.a @ x - (1.0 - kernel.r) * x


def lyapunov_hb(kernel: MhKernel, x: int, alpha: float, b=None) -> float:
    """log[sum_j exp(alpha (x_j - x - b(x))) a(x, x_j) h + r(x) exp(-alpha b(x))]."""
    pts = kernel.space.points
    if pts is None:
        raise ValueError("lyapunov_hb needs points on a line")
    b = default_drift(kernel) if b is None else np.asarray(b, dtype=float)
    bx = b[x]
    with np.errstate(divide="ignore"):
        logs = np.concatenate([alpha * (pts - pts[x] - bx) + np.log(kernel.a[x]),
                               [math.log(kernel.r[x]) - alpha * bx if kernel.r[x] > 0 else -np.inf]])
    val = float(special.logsumexp(logs))
    return val if math.isfinite(val) else math.inf
