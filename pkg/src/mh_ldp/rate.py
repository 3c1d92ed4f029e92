"""Rate function of the empirical measure and its cross-checks.

I(nu) is the smallest relative entropy R(gamma || nu (x) K) over joint
measures gamma whose two marginals both equal nu. The primal solver is
iterative proportional fitting on the reference matrix nu_i K_ij restricted
to supp(nu) x supp(nu); the Donsker-Varadhan dual and the Perron eigenvalue
of tilted kernels serve as independent oracles.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .measures import DiscreteMeasure, HybridMeasure, joint_relative_entropy

MARGINAL_TOL = 1e-10
DUAL_GAP_TOL = 1e-6
POWER_TOL = 1e-12


class SolverError(RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message: str, residual: float = math.nan, iterations: int = 0, last=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.last = last


def _matrix(K) -> np.ndarray:
    return np.asarray(getattr(K, "K", K), dtype=float)


@dataclass(frozen=True)
class Coupling:
    """Joint mass matrix on S x S."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if np.any(g < 0) or abs(g.sum() - 1.0) > 1e-12:
            raise ValueError("a coupling must be a nonnegative matrix of total mass 1")
        object.__setattr__(self, "gamma", g)

    @property
    def first_marginal(self) -> np.ndarray:
        return self.gamma.sum(axis=1)

    @property
    def second_marginal(self) -> np.ndarray:
        return self.gamma.sum(axis=0)

    @classmethod
    def product(cls, mu: DiscreteMeasure, q) -> "Coupling":
        return cls(mu.w[:, None] * _matrix(q))


@dataclass(frozen=True)
class SplitKernel:
    """q = alpha + diag(rho): off-atom part and diagonal retention."""

    alpha: np.ndarray
    rho: np.ndarray


@dataclass
class RateReport:
    value: float
    gamma: Coupling | None = None
    q: np.ndarray | None = field(default=None, repr=False)
    split: SplitKernel | None = field(default=None, repr=False)
    iterations: int = 0
    residual: float = 0.0
    dual_value: float | None = None
    gap: float | None = None
    wall_ms: float = 0.0
    certificate: dict | None = None

    def to_dict(self) -> dict:
        return {"value": self.value, "dual_value": self.dual_value, "gap": self.gap,
                "iterations": self.iterations, "residual": self.residual,
                "wall_ms": self.wall_ms, "certificate": self.certificate}


# ------------------------------------------------------------------ primal


def _ipfp(G: np.ndarray, w: np.ndarray, tol: float, max_iter: int, newton_after: int = 500):
    """Scale G to a matrix with row and column sums w.

    Scalings are kept as log potentials; the working matrix is rebuilt from
    them whenever a scaling leaves [e^-30, e^30]. Sinkhorn sweeps converge
    slowly when G is close to block diagonal, so after ``newton_after``
    sweeps the potentials are handed to a Newton solver.
    """
    with np.errstate(divide="ignore"):
        logG = np.log(G)
    f = np.zeros(len(w))
    g = np.zeros(len(w))
    Gs = G.copy()
    u = np.ones(len(w))
    v = np.ones(len(w))
    resid = math.inf
    for it in range(1, max_iter + 1):
        Gv = Gs @ v
        u = w / Gv
        v = w / (Gs.T @ u)
        row = u * (Gs @ v)
        resid = float(np.abs(row - w).sum())
        if not np.isfinite(resid):
            raise SolverError("scaling produced non-finite values", resid, it)
        if resid <= tol:
            break
        if max(np.abs(np.log(u)).max(), np.abs(np.log(v)).max()) > 30:
            f += np.log(u)
            g += np.log(v)
            Gs = np.exp(logG + f[:, None] + g[None, :])
            u[:] = 1.0
            v[:] = 1.0
        if it == newton_after:
            gamma, extra, resid = _newton_scaling(logG, f + np.log(u), g + np.log(v), w, tol)
            return gamma, it + extra, resid
    else:
        raise SolverError(f"IPFP did not reach marginal residual {tol:g} in {max_iter} iterations "
                          f"(last residual {resid:.3e})", resid, max_iter)
    gamma = u[:, None] * Gs * v[None, :]
    return gamma, it, resid


def _newton_scaling(logG: np.ndarray, f: np.ndarray, g: np.ndarray, w: np.ndarray, tol: float,
                    max_iter: int = 200):
    """Damped Newton on phi(f, g) = sum G_ij e^(f_i + g_j) - w.f - w.g.

    g is pinned at its last entry to remove the (f + c, g - c) symmetry.
    """
    k = len(w)

    def parts(f, g):
        gam = np.exp(logG + f[:, None] + g[None, :])
        phi = gam.sum() - w @ f - w @ g
        return gam, phi

    gam, phi = parts(f, g)
    for it in range(1, max_iter + 1):
        row, col = gam.sum(axis=1), gam.sum(axis=0)
        resid = float(np.abs(row - w).sum() + np.abs(col - w).sum())
        if resid <= tol:
            return gam, it, resid
        grad = np.concatenate([row - w, col[:-1] - w[:-1]])
        H = np.zeros((2 * k - 1, 2 * k - 1))
        H[:k, :k] = np.diag(row)
        H[k:, k:] = np.diag(col[:-1])
        H[:k, k:] = gam[:, :-1]
        H[k:, :k] = gam[:, :-1].T
        try:
            step = -np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            f_new = f + t * step[:k]
            g_new = g.copy()
            g_new[:-1] += t * step[k:]
            gam_new, phi_new = parts(f_new, g_new)
            # near the optimum the decrease in phi drops below rounding, so a
            # step that shrinks the marginal residual is accepted as well
            resid_new = float(np.abs(gam_new.sum(axis=1) - w).sum() + np.abs(gam_new.sum(axis=0) - w).sum())
            if np.isfinite(phi_new) and (phi_new <= phi + 1e-4 * t * (grad @ step) or resid_new < 0.5 * resid):
                break
            t *= 0.5
            if t < 1e-12:
                raise SolverError("Newton line search failed", resid, it)
        f, g, gam, phi = f_new, g_new, gam_new, phi_new
    raise SolverError(f"Newton scaling did not reach residual {tol:g}", resid, max_iter)


def rate_primal_sinkhorn(nu: DiscreteMeasure, K, tol: float = MARGINAL_TOL, max_iter: int = 100_000,
                         with_dual: bool = False) -> RateReport:
    """I(nu) by iterative proportional fitting on supp(nu) x supp(nu)."""
    t0 = time.perf_counter()
    Km = _matrix(K)
    m = nu.space.m
    S = np.flatnonzero(nu.w > 0)
    w = nu.w[S]
    G = w[:, None] * Km[np.ix_(S, S)]
    dead_rows = S[G.sum(axis=1) == 0]
    dead_cols = S[G.sum(axis=0) == 0]
    if len(dead_rows) or len(dead_cols):
        cert = {"reason": "reference has an empty row or column on supp(nu) x supp(nu)",
                "rows": dead_rows.tolist(), "cols": dead_cols.tolist()}
        return RateReport(math.inf, certificate=cert,
                          wall_ms=1e3 * (time.perf_counter() - t0))
    gS, iters, resid = _ipfp(G, w, tol, max_iter)
    # exact first marginal, so the extracted kernel is row-stochastic; the
    # column residual is what gets reported
    gS = gS * (w / gS.sum(axis=1))[:, None]
    gamma = np.zeros((m, m))
    gamma[np.ix_(S, S)] = gS
    gamma /= gamma.sum()
    coupling = Coupling(gamma)
    value = joint_relative_entropy(coupling, nu, Km)
    col_resid = float(np.abs(coupling.second_marginal - nu.w).sum())
    report = RateReport(value, coupling, iterations=iters, residual=max(resid, col_resid))
    report.q, report.split = extract_q(coupling, nu, K)
    if with_dual:
        dual, _ = rate_dual_dv(nu, K)
        report.dual_value = dual
        report.gap = value - dual
    report.wall_ms = 1e3 * (time.perf_counter() - t0)
    return report


def rate(nu: DiscreteMeasure, K, **kw) -> float:
    return rate_primal_sinkhorn(nu, K, **kw).value


# -------------------------------------------------------------------- dual


def _dv_parts(z: np.ndarray, w: np.ndarray, Ks: np.ndarray):
    l = np.concatenate([[0.0], z])
    shift = l.max()
    E = Ks * np.exp(l - shift)[None, :]
    s = E.sum(axis=1)
    P = E / s[:, None]
    val = float(w @ l - w @ (np.log(s) + shift))
    grad = w - w @ P
    H = np.diag(w @ P) - (P * w[:, None]).T @ P
    return val, grad[1:], -H[1:, 1:]


def rate_dual_dv(nu: DiscreteMeasure, K, gtol: float = 1e-13, max_iter: int = 500):
    """sup over u > 0 of sum_i nu_i log(u_i / (K u)_i), with the maximizer u.

    Concave in log u; solved by a trust-region Newton method with the first
    coordinate pinned (the objective is invariant under scaling u).
    """
    Km = _matrix(K)
    S = np.flatnonzero(nu.w > 0)
    w = nu.w[S]
    Ks = Km[np.ix_(S, S)]
    u = np.zeros(nu.space.m)
    if len(S) == 1:
        u[S] = 1.0
        k = Ks[0, 0]
        return (math.log(1.0 / k) if k > 0 else math.inf), u

    def fun(z):
        val, grad, _ = _dv_parts(z, w, Ks)
        return -val, -grad

    def hess(z):
        return -_dv_parts(z, w, Ks)[2]

    z0 = np.zeros(len(S) - 1)
    err = optimize.check_grad(lambda z: fun(z)[0], lambda z: fun(z)[1], z0 + 0.1)
    if err > 1e-5 * max(1.0, np.abs(fun(z0 + 0.1)[1]).max()):
        raise SolverError(f"dual gradient disagrees with finite differences ({err:.2e})")
    res = optimize.minimize(fun, z0, jac=True, hess=hess, method="trust-exact",
                            options={"gtol": gtol, "maxiter": max_iter})
    z, val = res.x, -res.fun
    # trust-exact can stop near the optimum on ill-conditioned instances;
    # finish with undamped Newton steps while they still help
    for _ in range(20):
        v, grad, H = _dv_parts(z, w, Ks)
        if np.abs(grad).max() <= gtol:
            break
        try:
            z_new = z - np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            break
        v_new = _dv_parts(z_new, w, Ks)[0]
        if not v_new >= v - 1e-15:
            break
        z, val = z_new, v_new
    gnorm = float(np.abs(_dv_parts(z, w, Ks)[1]).max())
    if gnorm > 1e-8:
        raise SolverError(f"dual ascent failed: {res.message}", gnorm, int(res.nit), last=z)
    l = np.concatenate([[0.0], z])
    u[S] = np.exp(l - l.max())
    return float(val), u


# ------------------------------------------------------------- extraction


def extract_q(gamma, nu: DiscreteMeasure, K=None):
    """Kernel q = gamma / nu on supp(nu) (NaN rows elsewhere) and its split.

    The diagonal mass q_ii is apportioned between alpha_ii and rho_i in the
    proportion a_ii : r_i, so the split form and the direct relative entropy
    agree exactly.
    """
    g = np.asarray(getattr(gamma, "gamma", gamma), dtype=float)
    row = g.sum(axis=1)
    if np.abs(row - nu.w).sum() > 1e-8:
        raise ValueError("first marginal of gamma does not match nu")
    q = np.full_like(g, np.nan)
    S = nu.w > 0
    q[S] = g[S] / nu.w[S, None]
    if K is None or not hasattr(K, "a"):
        return q, None
    Kd = np.diag(K.K)
    qd = np.diag(q)
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(Kd > 0, K.r / np.where(Kd > 0, Kd, 1.0), 0.0)
    rho = np.where(K.r > 0, qd * share, 0.0)
    alpha = q.copy()
    idx = np.arange(len(rho))
    alpha[idx, idx] = qd - rho
    return q, SplitKernel(alpha, rho)


def rate_from_split(alpha, rho, nu: DiscreteMeasure, K) -> float:
    """sum_i nu_i [sum_j alpha_ij log(alpha_ij / a_ij) + rho_i log(rho_i / r_i)]."""
    if isinstance(alpha, SplitKernel):
        alpha, rho = alpha.alpha, alpha.rho
    alpha = np.asarray(alpha, dtype=float)
    rho = np.asarray(rho, dtype=float)
    S = np.flatnonzero(nu.w > 0)
    al, rh, a, r = alpha[S], rho[S], K.a[S], K.r[S]
    if np.any(al < 0) or np.any(rh < 0) or np.any(rh > 1 + 1e-12):
        raise ValueError("split entries must be nonnegative with rho in [0, 1]")
    if np.max(np.abs(al.sum(axis=1) + rh - 1.0)) > 1e-9:
        raise ValueError("split rows must sum to 1 on supp(nu)")
    if np.any((al > 0) & (a <= 0)) or np.any((rh > 0) & (r <= 0)):
        return math.inf
    pa = al > 0
    pr = rh > 0
    per_row = np.zeros(len(S))
    ratio = np.where(pa, al / np.where(pa, a, 1.0), 1.0)
    per_row += np.sum(np.where(pa, al * np.log(ratio), 0.0), axis=1)
    per_row += np.where(pr, rh * np.log(np.where(pr, rh / np.where(pr, r, 1.0), 1.0)), 0.0)
    return max(float(nu.w[S] @ per_row), 0.0)


# ---------------------------------------------------------- singular parts


@dataclass(frozen=True)
class DeltaRate:
    state: int
    value: float
    continuum: float
    gap: float
    certificate: dict | None = None


def rate_delta(K, x: int) -> DeltaRate:
    """I(delta_x) = -log K_xx; the frozen kernel is the only invariant one.

    `continuum` is -log r(x), the value when the acceptance part carries no
    atom at x; the gap log(1 + a_xx / r_x) is O(h) on grids.
    """
    Kxx = float(_matrix(K)[x, x])
    r = float(K.r[x]) if hasattr(K, "r") else 0.0
    cont = -math.log(r) if r > 0 else math.inf
    if Kxx <= 0:
        cert = {"reason": "K(x, x) = 0: no invariant kernel of delta_x has finite entropy", "state": x}
        return DeltaRate(x, math.inf, cont, math.nan, cert)
    value = -math.log(Kxx)
    return DeltaRate(x, value, cont, cont - value)


@dataclass(frozen=True)
class HybridRate:
    value: float
    density_part: float
    singular_part: float
    continuum_singular_part: float
    flattened: float | None = None

    @property
    def gap(self) -> float | None:
        return None if self.flattened is None else abs(self.flattened - self.value)


def rate_hybrid(nu: HybridMeasure, K, compare_flat: bool = False, **solver) -> HybridRate:
    """(1 - p) I(density) + p sum_k m_k (-log K_kk), with each part reported."""
    dens = rate_primal_sinkhorn(nu.density, K, **solver).value if nu.p < 1 else 0.0
    sing = cont = 0.0
    for i, mk in nu.atoms:
        d = rate_delta(K, i)
        sing += mk * d.value
        cont += mk * d.continuum
    value = (1 - nu.p) * dens + nu.p * sing if nu.p > 0 else dens
    flat = rate_primal_sinkhorn(nu.flatten(), K, **solver).value if compare_flat else None
    return HybridRate(value, dens, sing, cont, flat)


# -------------------------------------------------------- Perron / Legendre


def perron_pair(M: np.ndarray, tol: float = POWER_TOL, max_iter: int = 1_000_000, left: bool = False):
    """Perron root and positive eigenvector of a nonnegative matrix by power iteration.

    Stops when the Collatz-Wielandt bounds min (Mv)/v <= lambda <= max (Mv)/v
    agree to relative tolerance `tol`.
    """
    A = M.T if left else M
    v = np.full(A.shape[0], 1.0 / A.shape[0])
    lo = hi = math.nan
    for it in range(max_iter):
        Av = A @ v
        ratio = Av / v
        lo, hi = ratio.min(), ratio.max()
        if hi - lo <= tol * hi:
            return 0.5 * (lo + hi), Av / Av.sum()
        v = Av / Av.sum()
    raise SolverError(f"power iteration stagnated (bounds {lo:.15g}, {hi:.15g})", hi - lo, max_iter)


def tilted(K, f) -> np.ndarray:
    return _matrix(K) * np.exp(np.asarray(f, dtype=float))[None, :]


def scgf_perron(K, f, tol: float = POWER_TOL) -> float:
    """Lambda(f) = log spectral radius of K_ij e^{f_j}."""
    f = np.asarray(f, dtype=float)
    c = f.max()
    lam, _ = perron_pair(tilted(K, f - c), tol)
    return math.log(lam) + c


@dataclass
class LegendreReport:
    scgf: float
    nu_star: DiscreteMeasure
    rate: float
    gap: float
    q_star: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"scgf": self.scgf, "nu_star": self.nu_star.w.tolist(), "rate": self.rate, "gap": self.gap}


def legendre_check(K, f, space=None, **solver) -> LegendreReport:
    """Compare Lambda(f) with nu*(f) - I(nu*) at the twisted-kernel equilibrium nu*."""
    f = np.asarray(f, dtype=float)
    space = space or K.space
    c = f.max()
    M = tilted(K, f - c)
    lam, phi = perron_pair(M)
    _, psi = perron_pair(M, left=True)
    q_star = M * phi[None, :] / (lam * phi[:, None])
    nu_star = DiscreteMeasure.normalized(space, psi * phi)
    lam_f = math.log(lam) + c
    I = rate_primal_sinkhorn(nu_star, K, **solver).value
    return LegendreReport(lam_f, nu_star, I, abs(lam_f - (nu_star.integrate(f) - I)), q_star)


def laplace_limit(K, f, space=None) -> float:
    """min over nu of nu(f) + I(nu), evaluated at the minimizer from the (-f)-tilt."""
    rep = legendre_check(K, -np.asarray(f, dtype=float), space)
    return rep.nu_star.integrate(f) + rep.rate
