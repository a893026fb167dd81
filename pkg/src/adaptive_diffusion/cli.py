"""Command line interface.

Exit codes: 0 success, 1 a requested check failed, 2 configuration error,
3 adversarial search failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .adversary import (AdversarialSchedule, SearchParams, build_divergent_schedule, verify_dd)
from .config import OUTPUT_SCHEMA_VERSION, ExperimentConfig, dump_config, load_config, validate_config
from .diffusion import initial_estimates
from .errors import ConfigError, DiffusionError, SearchFailure
from .model import check_a3
from .topology import check_assumption_a1, spectral_constant_s

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_SEARCH = 0, 1, 2, 3


def fmt(x) -> str:
    """Full-precision decimal rendering (17 significant digits)."""
    return format(float(x), ".17g")


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


class Output:
    """Output directory with the config echo and schema stamp written up front."""

    def __init__(self, path, config: ExperimentConfig | None):
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.mkdir(parents=True, exist_ok=True)
            (self.path / "schema_version.txt").write_text(OUTPUT_SCHEMA_VERSION + "\n")
            if config is not None:
                (self.path / "config.yaml").write_text(dump_config(config))

    def json(self, name: str, payload: dict):
        text = json.dumps(_jsonable({"schema_version": OUTPUT_SCHEMA_VERSION, **payload}), indent=2,
                          sort_keys=True)
        if self.path is not None:
            (self.path / name).write_text(text + "\n")
        return text

    def csv(self, name: str, header: list[str], rows):
        if self.path is None:
            return
        with open(self.path / name, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _effective_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else validate_config({})
    data = config.to_dict()
    if args.seed is not None:
        data["seed"] = args.seed
    if args.trials is not None:
        data["run"]["trials"] = args.trials
    if args.workers is not None:
        data["run"]["workers"] = args.workers
    if args.out is not None:
        data["output"]["dir"] = str(args.out)
    return validate_config(data)


# --------------------------------------------------------------------------- validate-topology


def cmd_validate_topology(config: ExperimentConfig, out: Output) -> int:
    top = config.topology()
    report = check_assumption_a1(top)
    payload = {"assumptions": report.as_dict(), "n": top.n}
    if report.irreducible and top.n > 1:
        spectral = spectral_constant_s(top, config["analysis"]["h"])
        payload["spectral"] = {
            "laplacian_gap": spectral.laplacian_gap,
            "cheeger": spectral.cheeger,
            "s_symmetric": spectral.s_symmetric,
            "s_generic_bound": spectral.s_generic_bound,
        }
    print(out.json("topology_report.json", payload))
    return EXIT_OK if report.a1 else EXIT_CHECK_FAILED


# --------------------------------------------------------------------------- run


def _spectral_s(config: ExperimentConfig) -> float:
    report = spectral_constant_s(config.topology(), config["analysis"]["h"], config["analysis"]["s_mode"])
    s = report.s_symmetric if report.s_symmetric is not None else report.s_generic_bound
    if s is None:
        raise ConfigError("analysis: no spectral constant applies to this topology")
    return float(s)


def run_checks(config: ExperimentConfig, estimate: analysis.MonteCarloEstimate) -> dict:
    """Evaluate the checks listed in ``analysis.checks``; each entry carries ``passed``."""
    a = config["analysis"]
    algo = config["algo"]
    horizon = config["run"]["horizon"]
    problem = config.problem()
    top = config.topology()
    results = {}
    for name in a["checks"]:
        if name == "decay":
            threshold = a["decay_fraction"] * estimate.mean_err_sq[0]
            nodes = estimate.node_mean_err_sq[-1]
            results[name] = {"final": estimate.mean_err_sq[-1], "threshold": threshold, "node_final": nodes,
                             "passed": bool(estimate.mean_err_sq[-1] < threshold and np.all(nodes < threshold))}
        elif name == "excitation":
            rep = check_a3(problem.regressors, horizon, a["h"], a["alpha"], a["excitation_c"], seed=config.seed)
            results[name] = {**rep.as_dict(), "passed": rep.verdict}
        elif name == "rate":
            s = _spectral_s(config)
            rep = analysis.rate_fit_ms(estimate, algo["beta"], a["alpha"], s, a["excitation_c"],
                                       problem.noise.bound_M, a["tail_fraction"])
            results[name] = {**rep.as_dict(), "s": s}
        elif name == "tail_windows":
            lo, hi = a["window"] or [max(1, horizon // 10), horizon]
            exponent = (algo["beta"] - a["alpha"]) if algo["kind"] == "rm" else 1.0
            rep = analysis.scaled_tail_windows(estimate, exponent, lo, hi)
            results[name] = {**rep.as_dict(), "exponent": exponent}
        elif name == "plateau":
            phis = problem.regressors.block(0, horizon, config.seed)[0]
            err0 = (initial_estimates(problem.n, 1, algo["theta0"]) - problem.theta).ravel()
            try:
                rep = analysis.limit_product_pi(top, phis, err0)
            except DiffusionError as exc:
                results[name] = {"passed": False, "error": str(exc)}
                continue
            gap = abs(estimate.mean_err_sq[-1] - rep.plateau)
            results[name] = {"plateau": rep.plateau, "mu": rep.mu, "final": estimate.mean_err_sq[-1],
                             "standard_errors": gap / estimate.std_err[-1] if estimate.std_err[-1] > 0 else None,
                             "passed": bool(rep.plateau > 0 and gap <= 4.0 * estimate.std_err[-1])}
        elif name == "as_rate":
            record = analysis.simulate_trajectory(problem, top, config.policy(), horizon, seed=config.seed,
                                                  strategy=algo["strategy"], theta0=algo["theta0"],
                                                  record_information=False)
            rep = analysis.as_rate_check(record, a["epsilon"])
            results[name] = rep.as_dict()
    return results


def _monte_carlo(config: ExperimentConfig) -> analysis.MonteCarloEstimate:
    run, algo = config["run"], config["algo"]
    return analysis.monte_carlo(config.problem(), config.topology(), config.policy(), run["horizon"],
                                run["trials"], seed=config.seed, strategy=algo["strategy"],
                                theta0=algo["theta0"], workers=run["workers"], batch_size=run["batch_size"])


def cmd_run(config: ExperimentConfig, out: Output) -> int:
    estimate = _monte_carlo(config)
    out.csv("monte_carlo.csv", ["k", "mean_err_sq", "std_err", "overflow_count"], estimate.rows())
    if config["run"]["write_trajectory"]:
        algo = config["algo"]
        rec = analysis.simulate_trajectory(config.problem(), config.topology(), config.policy(),
                                           config["run"]["horizon"], seed=config.seed,
                                           strategy=algo["strategy"], theta0=algo["theta0"])
        over = rec.overflow_step

        def rows():
            for k in range(rec.horizon + 1):
                for i in range(rec.node_err_sq.shape[1]):
                    yield (k, i, rec.node_err_sq[k, i], rec.lambda_min_pinv[k, i],
                           int(over is not None and k > over))

        out.csv("trajectory.csv", ["k", "node", "err_norm_sq", "lambda_min_pinv", "overflow_flag"], rows())
    checks = run_checks(config, estimate)
    verdict = all(c["passed"] for c in checks.values())
    print(out.json("summary.json", {
        "command": "run",
        "trials": estimate.trials,
        "horizon": estimate.horizon,
        "initial_mean_err_sq": estimate.mean_err_sq[0],
        "final_mean_err_sq": estimate.mean_err_sq[-1],
        "final_std_err": estimate.std_err[-1],
        "overflow_count": int(estimate.overflow_count[-1]),
        "checks": checks,
        "verdict": verdict,
    }))
    return EXIT_OK if verdict else EXIT_CHECK_FAILED


# --------------------------------------------------------------------------- sweep


def cmd_sweep(config: ExperimentConfig, out: Output) -> int:
    sweep = config["sweep"]
    if sweep is None:
        raise ConfigError("sweep: the config has no sweep section")
    rows, cells = [], []
    for value in sweep["values"]:
        cell = config.with_value(sweep["parameter"], value)
        estimate = _monte_carlo(cell)
        checks = run_checks(cell, estimate)
        passed = all(c["passed"] for c in checks.values())
        rows.append((json.dumps(value), estimate.mean_err_sq[-1], estimate.std_err[-1],
                     int(estimate.overflow_count[-1]), int(passed)))
        cells.append({"value": value, "final_mean_err_sq": estimate.mean_err_sq[-1], "checks": checks,
                      "passed": passed})
    out.csv("sweep.csv", ["value", "final_mean_err_sq", "final_std_err", "overflow_count", "passed"], rows)
    verdict = all(c["passed"] for c in cells)
    print(out.json("summary.json", {"command": "sweep", "parameter": sweep["parameter"], "cells": cells,
                                    "verdict": verdict}))
    return EXIT_OK if verdict else EXIT_CHECK_FAILED


# --------------------------------------------------------------------------- adversary


def _e0(config: ExperimentConfig, n: int) -> np.ndarray:
    adv = config["adversary"]
    if adv["e_theta0_error"] is not None:
        return np.asarray(adv["e_theta0_error"], dtype=float)
    e0 = np.zeros(n * adv["m"])
    e0[0] = 1.0
    return e0


def cmd_adversary_build(config: ExperimentConfig, out: Output) -> int:
    top = config.topology()
    adv = config["adversary"]
    params = SearchParams(nonmembership_tol=adv["tol"], max_attempts=adv["max_attempts"], seed=config.seed)
    schedule = build_divergent_schedule(top, adv["m"], _e0(config, top.n), adv["blocks"], params)
    record = verify_dd(schedule)
    schedule.verification["verifier"] = record
    if out.path is not None:
        schedule.to_json(out.path / "schedule.json")
    payload = {"command": "adversary build", "steps": int(schedule.phis.shape[0]),
               "checkpoints": schedule.checkpoints, "verdict": record["verdict"],
               "margins_16": [b["margin_16"] for b in record["per_block"]],
               "lambda_min_gram": [b["lambda_min_gram"] for b in record["per_block"]]}
    if adv["mc_trials"] >= 2:
        mc = analysis.schedule_monte_carlo(schedule, adv["mc_trials"], seed=config.seed)
        payload["monte_carlo"] = {"trials": adv["mc_trials"], "fraction_increasing": mc.fraction_increasing}
    print(out.json("summary.json", payload))
    return EXIT_OK if record["verdict"] else EXIT_CHECK_FAILED


def cmd_adversary_verify(schedule_path: Path, out: Output) -> int:
    try:
        schedule = AdversarialSchedule.from_json(schedule_path)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read schedule {schedule_path}: {exc}") from exc
    record = verify_dd(schedule)
    print(out.json("verification.json", {"command": "adversary verify", "schedule": str(schedule_path),
                                          **record}))
    return EXIT_OK if record["verdict"] else EXIT_CHECK_FAILED


# --------------------------------------------------------------------------- report


def cmd_report(dirs: list[Path]) -> int:
    """Summarize the ``summary.json`` / ``verification.json`` files of earlier runs."""
    lines, verdict = [], True
    for d in dirs:
        found = False
        for name in ("summary.json", "verification.json", "topology_report.json"):
            path = d / name
            if not path.exists():
                continue
            found = True
            data = json.loads(path.read_text())
            v = data.get("verdict", data.get("assumptions", {}).get("A1"))
            verdict &= bool(v)
            extra = ""
            if "final_mean_err_sq" in data:
                extra = f" final_mean_err_sq={data['final_mean_err_sq']:.6g}"
            lines.append(f"{d}/{name}: {data.get('command', 'validate-topology')} verdict={v}{extra}")
        if not found:
            raise ConfigError(f"{d}: no summary files found")
    print("\n".join(lines))
    return EXIT_OK if verdict else EXIT_CHECK_FAILED


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment config (defaults used when omitted)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--trials", type=int, help="Monte Carlo trials (overrides the config)")
    common.add_argument("--workers", type=int, help="worker processes (overrides the config)")
    parser = argparse.ArgumentParser(prog="adaptive-diffusion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate-topology", parents=[common], help="check the combination matrix assumptions")
    sub.add_parser("run", parents=[common], help="Monte Carlo simulation with the configured checks")
    sub.add_parser("sweep", parents=[common], help="run once per value of the sweep parameter")
    adv = sub.add_parser("adversary", help="divergent regressor schedules")
    adv_sub = adv.add_subparsers(dest="action", required=True)
    adv_sub.add_parser("build", parents=[common], help="build and verify a divergent schedule")
    verify = adv_sub.add_parser("verify", parents=[common], help="re-verify a saved schedule")
    verify.add_argument("schedule", type=Path, help="schedule JSON written by 'adversary build'")
    report = sub.add_parser("report", parents=[common], help="summarize earlier output directories")
    report.add_argument("dirs", type=Path, nargs="*", help="output directories (default: --out)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            dirs = args.dirs or ([args.out] if args.out else [])
            if not dirs:
                raise ConfigError("report: give output directories or --out")
            return cmd_report(dirs)
        if args.command == "adversary" and args.action == "verify":
            out = Output(args.out, None)
            return cmd_adversary_verify(args.schedule, out)
        config = _effective_config(args)
        out = Output(config["output"]["dir"], config)
        if args.command == "validate-topology":
            return cmd_validate_topology(config, out)
        if args.command == "run":
            return cmd_run(config, out)
        if args.command == "sweep":
            return cmd_sweep(config, out)
        return cmd_adversary_build(config, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SearchFailure as exc:
        print(f"search failure ({exc.stage}): {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(json.dumps(_jsonable(exc.diagnostics), sort_keys=True), file=sys.stderr)
        return EXIT_SEARCH
    except DiffusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
