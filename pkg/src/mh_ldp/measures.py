"""Probability measures on finite sets and uniform 1-D grids.

Grid measures store cell masses (density times cell width), so finite and
grid measures go through the same arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

NORMALIZATION_TOL = 1e-12
LP_MAX_STATES = 20


class CapabilityError(ValueError):
    """Requested computation is outside what the method supports."""


@dataclass(frozen=True)
class StateSpace:
    """A finite state set with a distance table, or a cell grid on [lo, hi]."""

    kind: str
    m: int
    lo: float = 0.0
    hi: float = 1.0
    distances: np.ndarray | None = field(default=None, repr=False, compare=False)
    coords: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("finite", "grid1d"):
            raise ValueError(f"unknown state space kind {self.kind!r}")
        if self.m < 2:
            raise ValueError("state space needs at least 2 states")
        if self.kind == "grid1d":
            if not self.hi > self.lo:
                raise ValueError("grid interval must have hi > lo")
            return
        if self.coords is not None:
            c = np.asarray(self.coords, dtype=float)
            if c.shape != (self.m,):
                raise ValueError("coords must have one entry per state")
            object.__setattr__(self, "coords", c)
            if self.distances is None:
                object.__setattr__(self, "distances", np.abs(c[:, None] - c[None, :]))
        if self.distances is None:
            object.__setattr__(self, "distances", 1.0 - np.eye(self.m))
        d = np.asarray(self.distances, dtype=float)
        if d.shape != (self.m, self.m):
            raise ValueError("distance table must be m x m")
        if not np.allclose(d, d.T, atol=1e-14) or np.any(np.diag(d) != 0) or np.any(d < 0):
            raise ValueError("distance table must be symmetric, nonnegative, zero on the diagonal")
        _spot_check_triangle(d)
        object.__setattr__(self, "distances", d)

    @classmethod
    def finite(cls, m: int, distances=None, coords=None) -> "StateSpace":
        return cls("finite", m, distances=distances, coords=coords)

    @classmethod
    def grid(cls, lo: float, hi: float, m: int) -> "StateSpace":
        return cls("grid1d", m, lo=float(lo), hi=float(hi))

    @property
    def is_grid(self) -> bool:
        return self.kind == "grid1d"

    @property
    def h(self) -> float:
        """Cell width on grids; 1 on finite spaces (counting measure)."""
        return (self.hi - self.lo) / self.m if self.is_grid else 1.0

    @property
    def points(self) -> np.ndarray | None:
        if self.is_grid:
            return self.lo + (np.arange(self.m) + 0.5) * self.h
        return self.coords

    def distance_matrix(self) -> np.ndarray:
        if self.is_grid:
            x = self.points
            return np.abs(x[:, None] - x[None, :])
        return self.distances

    def cell_of(self, x: float) -> int:
        """Index of the grid cell containing x."""
        if not self.is_grid:
            raise ValueError("cell_of is only defined on grids")
        i = int(math.floor((x - self.lo) / self.h))
        return min(max(i, 0), self.m - 1)

    def boundary_distance(self, x: float) -> float:
        return min(x - self.lo, self.hi - x)

    def to_dict(self) -> dict:
        if self.is_grid:
            return {"kind": "grid1d", "lo": self.lo, "hi": self.hi, "m": self.m}
        out = {"kind": "finite", "m": self.m}
        if self.coords is not None:
            out["coords"] = self.coords.tolist()
        elif not np.array_equal(self.distances, 1.0 - np.eye(self.m)):
            out["distances"] = self.distances.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "StateSpace":
        if d["kind"] in ("grid1d", "grid"):
            return cls.grid(d["lo"], d["hi"], int(d["m"]))
        return cls.finite(int(d["m"]), distances=d.get("distances"), coords=d.get("coords"))


def _spot_check_triangle(d: np.ndarray, n_triples: int = 200) -> None:
    m = d.shape[0]
    rng = np.random.default_rng(0)
    idx = rng.integers(0, m, size=(n_triples, 3))
    i, j, k = idx.T
    if np.any(d[i, k] > d[i, j] + d[j, k] + 1e-12):
        raise ValueError("distance table violates the triangle inequality")


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability masses over the states (or grid cells) of a space."""

    space: StateSpace
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.shape != (self.space.m,):
            raise ValueError(f"expected {self.space.m} weights, got shape {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        total = w.sum()
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"weights sum to {total!r}, not 1")
        w = w / total
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    @classmethod
    def normalized(cls, space: StateSpace, w) -> "DiscreteMeasure":
        w = np.asarray(w, dtype=float)
        return cls(space, w / w.sum())

    @classmethod
    def dirac(cls, space: StateSpace, i: int) -> "DiscreteMeasure":
        w = np.zeros(space.m)
        w[i] = 1.0
        return cls(space, w)

    @classmethod
    def uniform(cls, space: StateSpace) -> "DiscreteMeasure":
        return cls(space, np.full(space.m, 1.0 / space.m))

    @property
    def support(self) -> np.ndarray:
        return self.w > 0

    def mix(self, other: "DiscreteMeasure", t: float) -> "DiscreteMeasure":
        """Return t * self + (1 - t) * other."""
        _check_same(self, other)
        return DiscreteMeasure.normalized(self.space, t * self.w + (1 - t) * other.w)

    def integrate(self, f) -> float:
        return float(np.dot(self.w, np.asarray(f, dtype=float)))

    def to_dict(self) -> dict:
        return {"space": self.space.to_dict(), "weights": self.w.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteMeasure":
        space = StateSpace.from_dict(d["space"])
        return cls.normalized(space, d["weights"])


@dataclass(frozen=True)
class HybridMeasure:
    """Density part plus finitely many atoms, mixed with weight p on the atoms.

    The flattened measure is (1 - p) * density + p * sum_k mass_k * delta_{cell_k}.
    """

    density: DiscreteMeasure
    atoms: tuple[tuple[int, float], ...]
    p: float

    def __post_init__(self):
        atoms = tuple((int(i), float(mk)) for i, mk in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("mixing weight p must lie in [0, 1]")
        cells = [i for i, _ in atoms]
        if len(set(cells)) != len(cells):
            raise ValueError("atom cells must be distinct")
        if any(mk <= 0 for _, mk in atoms):
            raise ValueError("atom masses must be positive")
        if any(not 0 <= i < self.density.space.m for i in cells):
            raise ValueError("atom cell out of range")
        atom_total = sum(mk for _, mk in atoms)
        if self.p > 0 and abs(atom_total - 1.0) > NORMALIZATION_TOL:
            raise ValueError("atom masses must sum to 1")

    @property
    def space(self) -> StateSpace:
        return self.density.space

    def singular(self) -> DiscreteMeasure:
        w = np.zeros(self.space.m)
        for i, mk in self.atoms:
            w[i] = mk
        return DiscreteMeasure.normalized(self.space, w)

    def flatten(self) -> DiscreteMeasure:
        w = (1.0 - self.p) * self.density.w
        if self.p > 0:
            w = w + self.p * self.singular().w
        return DiscreteMeasure.normalized(self.space, w)

    @classmethod
    def unflatten(cls, flat: DiscreteMeasure, atoms, p: float) -> "HybridMeasure":
        """Recover the density part of `flat` given its atom list and weight."""
        atoms = tuple((int(i), float(mk)) for i, mk in atoms)
        if p >= 1.0:
            raise ValueError("cannot recover a density part when p = 1")
        w = flat.w.copy()
        for i, mk in atoms:
            w[i] -= p * mk
        w = np.clip(w, 0.0, None) / (1.0 - p)
        return cls(DiscreteMeasure.normalized(flat.space, w), atoms, p)

    def to_dict(self) -> dict:
        d = self.density.to_dict()
        d["atoms"] = [[i, mk] for i, mk in self.atoms]
        d["p"] = self.p
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HybridMeasure":
        return cls(DiscreteMeasure.from_dict(d), tuple(map(tuple, d["atoms"])), float(d["p"]))


def _check_same(mu: DiscreteMeasure, nu: DiscreteMeasure) -> None:
    if mu.space.m != nu.space.m or mu.space.kind != nu.space.kind:
        raise ValueError(f"measures live on different spaces ({mu.space.m} vs {nu.space.m} states)")


def _xlogy_ratio(p: np.ndarray, q: np.ndarray) -> float:
    """sum p log(p/q) with 0 log 0 = 0; inf if p > 0 where q = 0."""
    pos = p > 0
    if np.any(q[pos] <= 0):
        return math.inf
    return float(np.sum(p[pos] * (np.log(p[pos]) - np.log(q[pos]))))


def relative_entropy(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """R(mu || nu); math.inf when mu is not absolutely continuous w.r.t. nu."""
    _check_same(mu, nu)
    return max(_xlogy_ratio(mu.w, nu.w), 0.0)


def joint_relative_entropy(gamma, mu: DiscreteMeasure, K) -> float:
    """R(gamma || mu (x) K) for a joint mass matrix gamma.

    `gamma` may be a Coupling or an array; `K` an MhKernel or a
    row-stochastic array.
    """
    g = np.asarray(getattr(gamma, "gamma", gamma), dtype=float)
    Km = np.asarray(getattr(K, "K", K), dtype=float)
    m = mu.space.m
    if g.shape != (m, m) or Km.shape != (m, m):
        raise ValueError(f"shape mismatch: gamma {g.shape}, K {Km.shape}, m = {m}")
    ref = mu.w[:, None] * Km
    return max(_xlogy_ratio(g.ravel(), ref.ravel()), 0.0)


def tv_norm(eta_plus: DiscreteMeasure, eta_minus: DiscreteMeasure) -> float:
    """Total variation norm of the signed measure eta_plus - eta_minus (at most 2)."""
    _check_same(eta_plus, eta_minus)
    return float(np.abs(eta_plus.w - eta_minus.w).sum())


def _lp_one_sided(mu_w: np.ndarray, nu_w: np.ndarray, d: np.ndarray) -> float:
    """inf{eps > 0 : mu(A) <= nu(A^eps) + eps for every nonempty A}."""
    m = len(mu_w)
    n_sets = 1 << m
    # distance from every state to every subset, built one bit at a time
    dA = np.full((n_sets, m), np.inf)
    muA = np.zeros(n_sets)
    for b in range(m):
        lo, hi = 1 << b, 1 << (b + 1)
        dA[lo:hi] = np.minimum(dA[:lo], d[b][None, :])
        muA[lo:hi] = muA[:lo] + mu_w[b]
    dA, muA = dA[1:], muA[1:]
    order = np.argsort(dA, axis=1, kind="stable")
    t = np.take_along_axis(dA, order, axis=1)
    c = np.cumsum(nu_w[order], axis=1)
    t_next = np.concatenate([t[:, 1:], np.full((len(t), 1), np.inf)], axis=1)
    # on (t_k, t_{k+1}] the enlargement A^eps holds the first k+1 sorted states
    cand = np.maximum(t, muA[:, None] - c)
    cand = np.where(cand <= t_next, cand, np.inf)
    return float(max(cand.min(axis=1).max(), 0.0))


def lp_distance(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Levy-Prohorov distance by exact enumeration of all subsets (m <= 20)."""
    _check_same(mu, nu)
    m = mu.space.m
    if m > LP_MAX_STATES:
        raise CapabilityError(
            f"exact Levy-Prohorov distance enumerates 2^m subsets and is capped at m <= "
            f"{LP_MAX_STATES} (got m = {m}); use tv_norm or w1_distance instead"
        )
    d = mu.space.distance_matrix()
    return max(_lp_one_sided(mu.w, nu.w, d), _lp_one_sided(nu.w, mu.w, d))


def w1_distance(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Wasserstein-1 distance between measures on a line (grid or embedded finite set)."""
    _check_same(mu, nu)
    x = mu.space.points
    if x is None:
        raise ValueError("w1_distance needs a grid or a finite space with 1-D coords")
    order = np.argsort(x, kind="stable")
    x = x[order]
    cdf_gap = np.cumsum(mu.w[order] - nu.w[order])[:-1]
    return float(np.sum(np.abs(cdf_gap) * np.diff(x)))


def random_measure(space: StateSpace, rng: np.random.Generator, concentration: float = 1.0,
                   support: Sequence[int] | None = None) -> DiscreteMeasure:
    """Dirichlet draw, optionally restricted to `support`."""
    w = np.zeros(space.m)
    idx = np.arange(space.m) if support is None else np.asarray(support)
    w[idx] = rng.dirichlet(np.full(len(idx), concentration))
    return DiscreteMeasure.normalized(space, w)
