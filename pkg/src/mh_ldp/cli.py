"""Command-line front end: `mh-ldp <command> --config path [--out dir] [--seed u64] [--tol float]`.

Exit codes: 0 success, 1 a hard verification check failed, 2 invalid input
or fixture, 3 solver failure. Errors are also written as error.json.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__, smoothing, verify
from .config import COMMANDS, STOCHASTIC, ConfigError, ScenarioConfig
from .kernel import (
    ConditionNotViolated,
    ProposalSpec,
    TargetSpec,
    build_kernel,
    check_invariance,
    condition_de_witness,
)
from .measures import CapabilityError, DiscreteMeasure, StateSpace, w1_distance
from .rate import SolverError, laplace_limit, legendre_check, rate_primal_sinkhorn
from .sampler import empirical_measure, log_laplace_functional_exact, mc_ball_probability, run_chain

log = logging.getLogger("mh_ldp")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2, 3


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    return obj


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Writer:
    """Collects output files and their hashes for the manifest."""

    def __init__(self, out: Path):
        self.out = out
        self.files: dict[str, str] = {}
        out.mkdir(parents=True, exist_ok=True)

    def _put(self, name: str, text: str) -> None:
        data = text.encode()
        (self.out / name).write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def csv(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        self._put(name, buf.getvalue())

    def json(self, name: str, obj) -> None:
        self._put(name, json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")

    def matrix(self, name: str, M: np.ndarray) -> None:
        self.csv(name, [f"c{j}" for j in range(M.shape[1])], M.tolist())


# ------------------------------------------------------------- commands


def _kernel(cfg: ScenarioConfig):
    space = StateSpace.from_dict(cfg.space)
    return build_kernel(TargetSpec.from_dict(cfg.target), ProposalSpec.from_dict(cfg.proposal), space)


def _measure(spec, kernel) -> DiscreteMeasure:
    """A measure given as a weight list, or the string "target"."""
    if spec == "target":
        return kernel.pi
    if isinstance(spec, dict):
        return DiscreteMeasure.from_dict({"space": kernel.space.to_dict(), **spec})
    if spec is None:
        raise ConfigError("this command needs a measure 'nu'")
    return DiscreteMeasure(kernel.space, np.asarray(spec, dtype=float))


def cmd_kernel(cfg, w: Writer) -> int:
    k = _kernel(cfg)
    w.matrix("a.csv", k.a)
    w.csv("r.csv", ["state", "r"], enumerate(k.r))
    w.matrix("K.csv", k.K)
    diag = k.diagnostics()
    diag["invariance_residual"] = check_invariance(k)
    try:
        diag["transitivity_witness"] = condition_de_witness(k).to_dict()
    except ConditionNotViolated as exc:
        diag["transitivity_witness"] = {"violated": False, "reason": str(exc)}
    w.json("diagnostics.json", diag)
    return EXIT_OK


def cmd_rate(cfg, w: Writer) -> int:
    k = _kernel(cfg)
    nu = _measure(cfg.params.get("nu"), k)
    rep = rate_primal_sinkhorn(nu, k, tol=cfg.defaults.marginal_tol,
                               with_dual=bool(cfg.params.get("with_dual", False)))
    w.json("rate.json", rep.to_dict())
    if rep.q is not None:
        w.matrix("q.csv", np.nan_to_num(rep.q, nan=0.0))
    return EXIT_OK


def cmd_legendre(cfg, w: Writer) -> int:
    k = _kernel(cfg)
    f = np.asarray(cfg.params.get("f"), dtype=float)
    if f.shape != (k.m,):
        raise ConfigError("legendre needs 'f' with one value per state")
    rep = legendre_check(k, f, tol=cfg.defaults.marginal_tol)
    w.json("legendre.json", rep.to_dict())
    return EXIT_OK


def cmd_sample(cfg, w: Writer) -> int:
    k = _kernel(cfg)
    seed = cfg.require_seed()
    n, x0 = int(cfg.params.get("n", 1000)), int(cfg.params.get("x0", 0))
    traj = run_chain(k, x0, n, seed)
    w.csv("trajectory.csv", ["step", "state"], enumerate(traj.states))
    L = empirical_measure(traj)
    w.csv("empirical.csv", ["state", "mass"], enumerate(L.w))
    ball = cfg.params.get("ball")
    if ball:
        nu = _measure(ball.get("nu", "target"), k)
        est = mc_ball_probability(k, nu, float(ball["delta"]), int(ball.get("n", n)),
                                  int(ball.get("reps", 1000)), seed, ball.get("metric", "tv"), x0)
        w.json("ball.json", est.to_dict())
    return EXIT_OK


def cmd_laplace(cfg, w: Writer) -> int:
    k = _kernel(cfg)
    f = np.asarray(cfg.params.get("f"), dtype=float)
    if f.shape != (k.m,):
        raise ConfigError("laplace needs 'f' with one value per state")
    x0 = int(cfg.params.get("x0", 0))
    ns = cfg.params.get("ns", list(cfg.defaults.laplace_ns))
    limit = laplace_limit(k, f)
    rows = []
    for n in ns:
        val = -log_laplace_functional_exact(k, f, int(n), x0) / int(n)
        rows.append((int(n), val, limit, abs(val - limit)))
    w.csv("laplace.csv", ["n", "minus_log_laplace_over_n", "limit", "abs_gap"], rows)
    w.json("laplace.json", {"limit": limit, "x0": x0, "f": f})
    return EXIT_OK


def cmd_smooth(cfg, w: Writer) -> int:
    k = _kernel(cfg)
    if not k.space.is_grid:
        raise ConfigError("smooth needs a grid space")
    seed = cfg.require_seed()
    p = cfg.params
    atoms, masses = p.get("atoms"), p.get("masses")
    if not atoms or not masses or len(atoms) != len(masses):
        raise ConfigError("smooth needs matching 'atoms' (positions) and 'masses' lists")
    ns = [int(n) for n in p.get("ns", cfg.defaults.smoothing_ns)]
    cells = [k.space.cell_of(float(x)) for x in atoms]
    sample = smoothing.sample_atoms(k.space, cells, masses, max(ns), seed)
    rows = []
    for n in ns:
        st = smoothing.varrho_n(sample, n, k)
        if st.V >= 1:
            log.info("skipping n=%d: V_n >= 1", n)
            continue
        nu = smoothing.build_nu_s_n(st)
        q = smoothing.build_q_n(st)
        rows.append((n, st.varrho, st.V, rate_primal_sinkhorn(nu, k, tol=cfg.defaults.marginal_tol).value,
                     smoothing.smoothing_bound(st, k), w1_distance(nu, sample.singular_measure()),
                     smoothing.invariance_residual(nu, q)))
    if not rows:
        raise ConfigError("no n in the sweep has V_n < 1")
    w.csv("sweep.csv", ["n", "varrho_n", "V_n", "I_nu_s_n", "bound", "W1_to_nu_s", "invariance_residual"],
          rows)
    target = smoothing.singular_rate(sample, k)
    gap = abs(rows[-1][3] - target)
    tol = cfg.defaults.smoothing_cost_tol
    w.json("smoothing.json", {"singular_rate": target, "final_n": rows[-1][0], "final_gap": gap,
                              "tolerance": tol, "limsup_ok": gap <= tol,
                              "bound_ok": all(r[3] <= r[4] + 1e-6 for r in rows)})
    return EXIT_OK


def cmd_verify(cfg, w: Writer) -> int:
    suite = cfg.params.get("suite", "all")
    results = verify.run_suite(suite, cfg.defaults, cfg.seed)
    checks = [c for r in results for c in r.checks]
    # wall-clock rows go to the JSON only, so the CSV stays byte-identical across runs
    w.csv("verify.csv", ["criterion", "check", "value", "bound", "verdict", "hard"],
          [(c.criterion, c.name, c.value, c.bound, c.row()["verdict"], c.hard)
           for c in checks if not c.timing])
    w.json("verify.json", {"suite": suite, "passed": all(r.passed for r in results),
                           "criteria": {r.criterion: r.passed for r in results},
                           "timings": [c.row() for c in checks if c.timing]})
    for r in results:
        print(r.summary())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


HANDLERS = {"kernel": cmd_kernel, "rate": cmd_rate, "legendre": cmd_legendre, "sample": cmd_sample,
            "laplace": cmd_laplace, "smooth": cmd_smooth, "verify": cmd_verify}


# ----------------------------------------------------------------- driver


def run_scenario(cfg: ScenarioConfig, out: Path) -> int:
    t0 = time.perf_counter()
    w = Writer(out)
    status = HANDLERS[cfg.command](cfg, w)
    manifest = {
        "command": cfg.command,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "versions": {"mh_ldp": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "wall_time_s": time.perf_counter() - t0,
        "exit_code": status,
        "files": dict(sorted(w.files.items())),
    }
    (out / "manifest.json").write_text(json.dumps(_clean(manifest), indent=2, sort_keys=True) + "\n")
    return status


def _fail(out: Path | None, code: int, exc: BaseException) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, SolverError):
        err.update(residual=exc.residual, iterations=exc.iterations)
    text = json.dumps(_clean(err), sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mh-ldp", description="Rate functions of Metropolis-Hastings empirical measures")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="scenario JSON file")
    p.add_argument("--out", help="output directory (default: the config's 'out' or ./mh-ldp-out)")
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed, overrides the config")
    p.add_argument("--tol", type=float, help="marginal tolerance for the rate solver")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out) if args.out else None
    try:
        cfg = ScenarioConfig.load(args.config)
        out = out or Path(cfg.out or "mh-ldp-out")
        if cfg.command != args.command:
            raise ConfigError(f"config is for command {cfg.command!r}, not {args.command!r}")
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        if args.tol is not None:
            cfg.defaults = cfg.defaults.replace({"marginal_tol": args.tol})
        if cfg.command in STOCHASTIC:
            cfg.require_seed()
        return run_scenario(cfg, out)
    except SolverError as exc:
        return _fail(out, EXIT_SOLVER, exc)
    except (ConfigError, CapabilityError, verify.InvalidFixture, ValueError, KeyError, TypeError,
            FileNotFoundError) as exc:
        return _fail(out, EXIT_INVALID, exc)


if __name__ == "__main__":
    sys.exit(main())
