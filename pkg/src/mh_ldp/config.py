"""Scenario configuration and the single block of defaults.

Every tolerance, grid size and sweep used by the CLI and the verification
suites lives in `Defaults`. A scenario file may override any field under
its "defaults" key.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

COMMANDS = ("kernel", "rate", "legendre", "sample", "laplace", "smooth", "verify")
STOCHASTIC = ("sample", "smooth")
PARAMS = {
    "kernel": set(),
    "rate": {"nu", "with_dual"},
    "legendre": {"f"},
    "sample": {"n", "x0", "ball"},
    "laplace": {"f", "ns", "x0"},
    "smooth": {"atoms", "masses", "ns"},
    "verify": {"suite"},
}


class ConfigError(ValueError):
    """The scenario file does not match the schema."""


@dataclass(frozen=True)
class Defaults:
    # seed of the built-in verification instances when the scenario has none
    seed: int = 20240601
    # solver tolerances
    marginal_tol: float = 1e-10
    dual_gap_tol: float = 1e-6
    # kernel correctness and equilibrium zero
    finite_instances: int = 50
    finite_max_m: int = 12
    grid_m: int = 256
    # primal/dual and duality checks
    rate_instances: int = 20
    rate_max_m: int = 8
    legendre_instances: int = 5
    legendre_fs: int = 10
    varadhan_n: int = 4096
    laplace_ns: tuple = (16, 64, 256, 1024, 4096)
    # closed-form oracles
    iid_cases: int = 10
    atom_rate_states: tuple = (0,)
    # grid refinements
    refinement_levels: tuple = (128, 256, 512)
    hybrid_levels: tuple = (128, 256, 512, 1024)
    # sampler cross-check
    sampler_n: int = 12
    sampler_reps: int = 10_000
    sampler_deltas: tuple = (0.15, 0.3, 0.45)
    # smoothing sweep
    smoothing_m: int = 2048
    smoothing_ns: tuple = (4, 8, 16, 32, 64, 128, 256)
    smoothing_seed: int = 7
    smoothing_cost_tol: float = 0.05
    # mixing and convexity
    mixing_fixtures: int = 10
    convexity_checks: int = 30
    convexity_tol: float = 2e-6

    def replace(self, overrides: dict | None) -> "Defaults":
        if not overrides:
            return self
        names = {f.name for f in dataclasses.fields(self)}
        unknown = set(overrides) - names
        if unknown:
            raise ConfigError(f"unknown defaults: {sorted(unknown)}")
        fixed = {k: tuple(v) if isinstance(getattr(self, k), tuple) else v for k, v in overrides.items()}
        return dataclasses.replace(self, **fixed)


@dataclass
class ScenarioConfig:
    command: str
    space: dict | None = None
    target: dict | None = None
    proposal: dict | None = None
    params: dict = field(default_factory=dict)
    seed: int | None = None
    out: str | None = None
    defaults: Defaults = field(default_factory=Defaults)
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError("scenario must be a JSON object")
        command = d.get("command")
        if command not in COMMANDS:
            raise ConfigError(f"command must be one of {', '.join(COMMANDS)}; got {command!r}")
        if command != "verify":
            for key in ("space", "target", "proposal"):
                if not isinstance(d.get(key), dict):
                    raise ConfigError(f"command {command!r} needs a {key!r} object")
        seed = d.get("seed")
        if seed is not None and (not isinstance(seed, int) or seed < 0 or seed >= 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        known = {"command", "space", "target", "proposal", "seed", "out", "defaults"}
        params = {k: v for k, v in d.items() if k not in known}
        unknown = set(params) - PARAMS[command]
        if unknown:
            raise ConfigError(f"unknown keys for command {command!r}: {sorted(unknown)}")
        return cls(command, d.get("space"), d.get("target"), d.get("proposal"), params, seed,
                   d.get("out"), Defaults().replace(d.get("defaults")), dict(d))

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError(f"command {self.command!r} is stochastic and needs a seed")
        return self.seed

    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()
