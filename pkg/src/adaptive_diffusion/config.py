"""Experiment configuration: YAML loading, defaults, validation and echo.

Every section is a mapping with a fixed set of keys; unknown keys are
rejected.  :func:`load_config` returns the effective configuration with all
defaults filled in, and :func:`dump_config` writes it back so that
``load -> dump -> load`` is a fixed point.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .diffusion import GainPolicy, initial_estimates
from .errors import ConfigError, DiffusionError
from .model import REGRESSOR_KINDS, NOISE_KINDS, RegressionProblem, make_noise, make_regressors
from .topology import NetworkTopology, topology_from_config

SCHEMA_VERSION = "adaptive-diffusion/config/1"
OUTPUT_SCHEMA_VERSION = "adaptive-diffusion/output/1"

DEFAULTS = {
    "seed": 0,
    "topology": {"kind": None, "n": None, "self_weight": None, "matrix": None, "edges": None},
    "model": {
        "m": 1,
        "theta": None,
        "regressors": {"kind": "constant"},
        "noise": {"kind": "gaussian_multivariate", "sigma": 1.0, "bound_M": None, "distribution": "gaussian"},
    },
    "algo": {"kind": "rls", "beta": None, "strategy": "atc", "theta0": None},
    "run": {"horizon": 1000, "trials": 100, "workers": 1, "batch_size": 50, "write_trajectory": True},
    "analysis": {
        "checks": [],
        "alpha": 0.0,
        "excitation_c": None,
        "h": 1,
        "tail_fraction": 0.25,
        "window": None,
        "decay_fraction": 0.05,
        "epsilon": 0.2,
        "s_mode": "auto",
    },
    "adversary": {"m": 2, "e_theta0_error": None, "blocks": 3, "tol": 1e-8, "max_attempts": 10000,
                  "mc_trials": 0},
    "sweep": None,
    "output": {"dir": None},
}
SECTION_KEYS = {name: set(value) for name, value in DEFAULTS.items() if isinstance(value, dict)}
TOP_KEYS = set(DEFAULTS) | {"schema_version"}
REGRESSOR_PARAMS = {"kind", "scale", "ratio", "node", "offsets", "values", "variance"}
SWEEP_KEYS = {"parameter", "values"}
CHECKS = ("decay", "rate", "tail_windows", "excitation", "plateau", "as_rate")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, fully defaulted experiment configuration."""

    data: dict

    def __getitem__(self, key):
        return self.data[key]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def topology(self) -> NetworkTopology:
        return build_topology(self.data["topology"])

    def problem(self) -> RegressionProblem:
        return build_problem(self.data)

    def policy(self) -> GainPolicy:
        algo = self.data["algo"]
        return GainPolicy.rls() if algo["kind"] == "rls" else GainPolicy.robbins_monro(algo["beta"])

    def with_value(self, dotted: str, value) -> "ExperimentConfig":
        """Copy with one dotted key replaced, revalidated."""
        data = self.to_dict()
        parts = dotted.split(".")
        node = data
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"{dotted}: {part!r} is not a section")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"{dotted}: unknown key")
        node[parts[-1]] = value
        return validate_config(data)


def _merge(defaults, given, where: str):
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(given).__name__}")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(defaults[key], dict) and key != "regressors":
            out[key] = _merge(defaults[key], value, f"{where}.{key}")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _plain(value):
    """Convert numpy scalars and tuples into YAML-friendly Python values."""
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def build_topology(spec: dict) -> NetworkTopology:
    spec = {k: v for k, v in spec.items() if v is not None}
    if "matrix" in spec:
        spec.pop("kind", None)
    try:
        return topology_from_config(spec)
    except DiffusionError as exc:
        raise ConfigError(f"topology: {exc}") from exc


def build_problem(data: dict) -> RegressionProblem:
    n = build_topology(data["topology"]).n
    model = data["model"]
    m = model["m"]
    reg = dict(model["regressors"])
    kind = reg.pop("kind")
    try:
        regressors = make_regressors(kind, n, m, **reg)
    except (DiffusionError, TypeError) as exc:
        raise ConfigError(f"model.regressors: {exc}") from exc
    noise = model["noise"]
    try:
        noise_source = make_noise(noise["kind"], n, noise["sigma"], noise["bound_M"], noise["distribution"])
    except DiffusionError as exc:
        raise ConfigError(f"model.noise.sigma: {exc}") from exc
    return RegressionProblem(np.asarray(model["theta"], dtype=float), regressors, noise_source)


def validate_config(raw: dict | None) -> ExperimentConfig:
    """Fill defaults, reject unknown keys and enforce cross-field constraints."""
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {version!r} is not {SCHEMA_VERSION!r}")
    data = {"seed": raw.get("seed", DEFAULTS["seed"])}
    for section in SECTION_KEYS:
        data[section] = _merge(DEFAULTS[section], raw.get(section), section)
    sweep = raw.get("sweep")
    if sweep is not None:
        if not isinstance(sweep, dict) or set(sweep) != SWEEP_KEYS:
            raise ConfigError(f"sweep: expected exactly the keys {sorted(SWEEP_KEYS)}")
        if not isinstance(sweep["values"], list) or not sweep["values"]:
            raise ConfigError("sweep.values: expected a non-empty list")
    data["sweep"] = copy.deepcopy(sweep)
    data = _plain(data)
    _check(data)
    return ExperimentConfig(data)


def _check(data: dict):
    if not isinstance(data["seed"], int) or data["seed"] < 0:
        raise ConfigError(f"seed: expected a nonnegative integer, got {data['seed']!r}")
    spec = data["topology"]
    if spec["matrix"] is None:
        spec["kind"] = spec["kind"] or "ring_self_loops"
        spec["n"] = spec["n"] or 4
    top = build_topology(spec)
    n = top.n
    model = data["model"]
    m = model["m"]
    if not isinstance(m, int) or m < 1:
        raise ConfigError(f"model.m: expected a positive integer, got {m!r}")
    if model["theta"] is None:
        model["theta"] = [1.0] * m
    theta = np.atleast_1d(np.asarray(model["theta"], dtype=float))
    if theta.size != m:
        raise ConfigError(f"model.theta has {theta.size} entries but model.m = {m}")
    model["theta"] = [float(v) for v in theta]
    reg = model["regressors"]
    if not isinstance(reg, dict) or "kind" not in reg:
        raise ConfigError("model.regressors: expected a mapping with a 'kind'")
    extra = set(reg) - REGRESSOR_PARAMS
    if extra:
        raise ConfigError(f"model.regressors: unknown keys {sorted(extra)}")
    if reg["kind"] not in REGRESSOR_KINDS:
        raise ConfigError(f"model.regressors.kind: {reg['kind']!r} is not one of {list(REGRESSOR_KINDS)}")
    if model["noise"]["kind"] not in NOISE_KINDS:
        raise ConfigError(f"model.noise.kind: {model['noise']['kind']!r} is not one of {list(NOISE_KINDS)}")
    build_problem(data)

    algo = data["algo"]
    alpha = data["analysis"]["alpha"]
    if algo["kind"] not in ("rls", "rm"):
        raise ConfigError(f"algo.kind: expected 'rls' or 'rm', got {algo['kind']!r}")
    if algo["strategy"] not in ("atc", "cta"):
        raise ConfigError(f"algo.strategy: expected 'atc' or 'cta', got {algo['strategy']!r}")
    if not 0.0 <= alpha < 0.5:
        raise ConfigError(f"analysis.alpha = {alpha} must lie in [0, 0.5)")
    if algo["kind"] == "rm":
        beta = algo["beta"]
        if beta is None or not 0.5 < beta < 1.0 - alpha:
            raise ConfigError(f"algo.beta = {beta} must lie in (1/2, 1 - analysis.alpha) = (0.5, {1.0 - alpha})")
    try:
        initial_estimates(n, m, algo["theta0"])
    except DiffusionError as exc:
        raise ConfigError(f"algo.theta0: {exc}") from exc

    run = data["run"]
    for key in ("horizon", "trials", "workers", "batch_size"):
        if not isinstance(run[key], int) or run[key] < 1:
            raise ConfigError(f"run.{key}: expected a positive integer, got {run[key]!r}")
    if run["trials"] < 2:
        raise ConfigError("run.trials: Monte Carlo needs at least 2 trials")

    analysis = data["analysis"]
    bad = [c for c in analysis["checks"] if c not in CHECKS]
    if bad:
        raise ConfigError(f"analysis.checks: unknown checks {bad}; expected a subset of {list(CHECKS)}")
    if ("rate" in analysis["checks"] or "excitation" in analysis["checks"]) and analysis["excitation_c"] is None:
        raise ConfigError("analysis.excitation_c is required by the rate and excitation checks")
    if "rate" in analysis["checks"] and algo["kind"] != "rm":
        raise ConfigError("analysis.checks: 'rate' needs algo.kind = rm")
    if "plateau" in analysis["checks"] and (m != 1 or algo["kind"] != "rls"):
        raise ConfigError("analysis.checks: 'plateau' needs model.m = 1 and algo.kind = rls")
    if analysis["window"] is not None:
        w = analysis["window"]
        if not (isinstance(w, list) and len(w) == 2 and 1 <= w[0] < w[1] <= run["horizon"]):
            raise ConfigError(f"analysis.window: expected [k_min, k_max] inside [1, run.horizon], got {w!r}")

    adv = data["adversary"]
    if adv["e_theta0_error"] is not None and len(adv["e_theta0_error"]) != n * adv["m"]:
        raise ConfigError(f"adversary.e_theta0_error needs n * adversary.m = {n * adv['m']} entries")

    sweep = data["sweep"]
    if sweep is not None:
        probe = ExperimentConfig(copy.deepcopy({**data, "sweep": None}))
        for value in sweep["values"]:
            try:
                probe.with_value(sweep["parameter"], value)
            except ConfigError as exc:
                raise ConfigError(f"sweep: value {value!r} for {sweep['parameter']}: {exc}") from exc


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise ConfigError(f"could not parse config{where}: {getattr(exc, 'problem', exc)}") from exc
    return validate_config(raw)


def load_config(path) -> ExperimentConfig:
    """Load, default and validate a YAML experiment config."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def dump_config(config: ExperimentConfig) -> str:
    """YAML echo of the effective config, stamped with the schema version."""
    return yaml.safe_dump({"schema_version": SCHEMA_VERSION, **config.to_dict()}, sort_keys=True)
