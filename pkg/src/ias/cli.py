"""Command-line entry point.

Machine-readable JSON goes to stdout, diagnostics to stderr. CSV files carry a
``# config:`` header with the resolved configuration (thread count and output
path excluded, so the bytes do not depend on them).

Exit codes: 0 ok, 2 config error, 3 infeasible, 4 flow network disagrees with
brute force, 5 greedy mechanism suboptimal (networks agree).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import flow_oracle as F
from . import mechanisms as X
from . import simulation as S
from .distributions import DomainError
from .dual_solver import DualConfig, InfeasibleThreshold, solve_constrained
from .model import (
    BUDGET,
    COLUMN_SPARSE,
    ROW_SPARSE,
    BidProfile,
    InfeasibleAllocation,
    LayoutConstraints,
    Scenario,
    ScenarioError,
    load_scenario,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NETWORK_MISMATCH = 4
EXIT_GREEDY_SUBOPTIMAL = 5

DEFAULTS = {
    "seed": 0,
    "reps": 5000,
    "mc_samples": 500,
    "epsilon": 1e-3,
    "threads": 1,
    "m": None,
    "instances": 500,
    "v0_points": 11,
    "mechanism": "ias",
}


class ConfigError(ValueError):
    pass


def _floats(text):
    if text is None:
        return None
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, list):
        return [float(x) for x in text]
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _ints(text: str | None):
    vals = _floats(text)
    if vals is None:
        return None
    if any(v != int(v) for v in vals):
        raise ConfigError(f"expected integers, got {text!r}")
    return [int(v) for v in vals]


def _parse_bids(text: str) -> dict[int, float]:
    text = text.strip()
    if text.startswith("{"):
        return {int(k): float(v) for k, v in json.loads(text).items()}
    bids = {}
    for part in text.split(","):
        key, _, val = part.partition("=")
        if not _:
            raise ConfigError(f"bid {part!r} is not of the form id=value")
        bids[int(key)] = float(val)
    return bids


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults (flags win)")
    common.add_argument("--scenario", help="scenario JSON; a synthetic scenario is generated when omitted")
    common.add_argument("--seed", type=int, help="master seed (falls back to $IAS_SEED, then 0)")
    common.add_argument("--out", help="CSV output path")
    common.add_argument("--threads", type=int, help="worker threads for experiment cells")
    common.add_argument("--family", choices=list(X.FAMILIES), help="mechanism family")
    common.add_argument("--c", type=int, help="ad budget per page, block or window")
    common.add_argument("--l", type=int, help="block or window length")

    parser = argparse.ArgumentParser(prog="ias", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run one mechanism on one bid profile")
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--bids", help="'id=value,...' or a JSON object; sampled when omitted")
    p.add_argument("--mechanism", choices=["ias", "gsp", "heuristic", "myerson"])
    p.add_argument("--m", type=int, help="fixed ad slots for gsp and myerson")
    p.add_argument("--dump-network", help="write the flow network for this profile")

    p = sub.add_parser("sweep-alpha", parents=[common], help="experiment 1: alpha grid")
    p.add_argument("--alpha", help="comma-separated alpha grid (default 0,0.1,...,1)")
    p.add_argument("--reps", type=int)

    p = sub.add_parser("solve-constrained", parents=[common], help="experiment 2: volume floors")
    p.add_argument("--v0", help="volume floor, or a comma-separated list")
    p.add_argument("--v0-points", type=int, help="evenly spaced floors from 0 to the max volume")
    p.add_argument("--mc-samples", type=int)
    p.add_argument("--epsilon", type=float)

    p = sub.add_parser("compare", parents=[common], help="experiment 3: fixed-slot Myerson baseline")
    p.add_argument("--m", help="comma-separated fixed-slot counts (default 1..8)")
    p.add_argument("--reps", type=int)
    p.add_argument("--epsilon", type=float)

    p = sub.add_parser("experiment4", parents=[common], help="experiment 4: value-weight correlation")
    p.add_argument("--r", help="comma-separated correlations, written --r=-1,0,1 when the list starts negative "
                   "(default -1,-0.5,0,0.5,1)")
    p.add_argument("--m", help="comma-separated fixed-slot counts (default 1..8)")
    p.add_argument("--reps", type=int)
    p.add_argument("--epsilon", type=float)

    p = sub.add_parser("oracle-check", parents=[common], help="greedy vs flow vs brute force")
    p.add_argument("--instances", type=int)
    p.add_argument("--split", action="store_true", help="also report the split-gadget relaxation")

    p = sub.add_parser("example1", parents=[common], help="the ten-slot worked example")
    p.add_argument("--m", type=int, help="fixed ad slots for the GSP table (default 3)")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Flags over config file over defaults; seed falls back to $IAS_SEED."""
    cfg = dict(DEFAULTS)
    file_cfg: dict = {}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config file {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config file {args.config}: expected a JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in file_cfg.items()})
    if args.seed is None and "seed" not in file_cfg:
        env = os.environ.get("IAS_SEED")
        if env is not None:
            try:
                cfg["seed"] = int(env)
            except ValueError:
                raise ConfigError(f"IAS_SEED must be an integer, got {env!r}") from None
    for key, val in vars(args).items():
        if val is not None and key != "config":
            cfg[key] = val
    return cfg


def _scenario(cfg: dict) -> Scenario:
    if cfg.get("scenario"):
        return load_scenario(cfg["scenario"])
    return S.synthetic_scenario(np.random.default_rng([cfg["seed"], 0]))


def _constraints(cfg: dict, scenario: Scenario | None = None) -> LayoutConstraints:
    family = cfg.get("family")
    if family is None:
        return scenario.constraints if scenario is not None else LayoutConstraints()
    return X.MechanismSpec(family, alpha=1.0, c=cfg.get("c"), l=cfg.get("l")).constraints


def _mapper(cfg: dict):
    threads = int(cfg.get("threads") or 1)
    if threads < 1:
        raise ConfigError("--threads must be at least 1")
    if threads == 1:
        return None, None
    pool = ThreadPoolExecutor(max_workers=threads)
    return pool.map, pool


def _provenance(cfg: dict, keys) -> dict:
    return {k: cfg.get(k) for k in ("command", "scenario", "seed", *keys)}


def _write_csv(cfg: dict, text: str) -> None:
    if cfg.get("out"):
        Path(cfg["out"]).write_text(text)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, default=_json_default))


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not JSON serializable: {type(x)}")


def _clean(x: float):
    return None if isinstance(x, float) and (math.isnan(x) or math.isinf(x)) else x


# commands


def cmd_run(cfg: dict) -> int:
    scenario = _scenario(cfg)
    if cfg.get("bids"):
        profile = BidProfile(_parse_bids(cfg["bids"]))
    else:
        profile = X.sample_profile(scenario, np.random.default_rng([cfg["seed"], 1]))
    profile.validate(scenario)
    mech = cfg.get("mechanism", "ias")
    if mech == "gsp":
        out = S.gsp_fixed_slots(scenario, profile, int(cfg.get("m") or 0))
    elif mech == "myerson":
        out = S.myerson_fixed_slots(scenario, profile, int(cfg.get("m") or 0))
    elif mech == "heuristic":
        out = S.integrated_heuristic(scenario, profile)
    else:
        constraints = _constraints(cfg, scenario)
        alpha, lam = cfg.get("alpha"), cfg.get("lam")
        if (alpha is None) == (lam is None):
            raise ConfigError("give exactly one of --alpha and --lambda")
        param = {"alpha": alpha} if alpha is not None else {"lam": lam}
        spec = X.MechanismSpec.for_constraints(constraints, **param)
        out = X.run(scenario, profile, spec)
        if cfg.get("dump_network"):
            lam_net = lam if lam is not None else (math.inf if alpha == 0 else 1.0 / alpha - 1.0)
            if math.isinf(lam_net):
                raise ConfigError("alpha=0 has no finite multiplier; the network needs --lambda")
            F.build_network(scenario, profile, lam_net, constraints).write(cfg["dump_network"])
    result = S.outcome_json(scenario, out)
    result["bids"] = {str(k): v for k, v in sorted(profile.bids.items())}
    _emit(result)
    return EXIT_OK


def cmd_sweep_alpha(cfg: dict) -> int:
    scenario = _scenario(cfg)
    alphas = _floats(cfg.get("alpha")) or list(S.ExperimentConfig().alphas)
    if any(not 0 <= a <= 1 for a in alphas):
        raise ConfigError("alpha values must lie in [0, 1]")
    mapper, pool = _mapper(cfg)
    try:
        pts = S.sweep_alpha(scenario, alphas, int(cfg["reps"]), cfg["seed"], mapper)
    finally:
        if pool:
            pool.shutdown()
    prov = _provenance(cfg, ("reps",)) | {"alpha": alphas}
    _write_csv(cfg, S.curve_csv(pts, prov))
    _emit({"command": "sweep-alpha", "rows": [p.__dict__ for p in pts]})
    return EXIT_OK


def cmd_solve_constrained(cfg: dict) -> int:
    scenario = _scenario(cfg)
    constraints = _constraints(cfg, scenario)
    dual = DualConfig(epsilon=float(cfg["epsilon"]), mc_samples=int(cfg["mc_samples"]), seed=cfg["seed"])
    grid = _floats(cfg.get("v0"))
    mapper, pool = _mapper(cfg)
    try:
        if grid is not None and len(grid) == 1:
            try:
                res = solve_constrained(scenario, constraints, grid[0], dual)
            except InfeasibleThreshold as exc:
                print(f"infeasible: {exc}", file=sys.stderr)
                _emit({"command": "solve-constrained", "feasible": False, "v0": grid[0],
                       "max_gmv": exc.max_volume})
                return EXIT_INFEASIBLE
            pts = [S.ThresholdPoint(grid[0], res.alpha, res.lam, True, res.volume, res.revenue, res.at_cap)]
        else:
            pts = S.sweep_threshold(scenario, grid, dual, constraints, int(cfg["v0_points"]), mapper)
    finally:
        if pool:
            pool.shutdown()
    curve = S.threshold_points_to_curve(pts)
    prov = _provenance(cfg, ("mc_samples", "epsilon", "v0", "v0_points")) | {
        "constraints": constraints.to_json()
    }
    _write_csv(cfg, S.curve_csv(curve, prov))
    rows = [{k: _clean(v) for k, v in p.__dict__.items()} for p in pts]
    _emit({"command": "solve-constrained", "rows": rows})
    return EXIT_OK


def _dual_for(cfg: dict) -> DualConfig:
    return DualConfig(
        epsilon=float(cfg["epsilon"]), mc_samples=int(cfg["reps"]), seed=cfg["seed"], with_revenue=False
    )


def cmd_compare(cfg: dict) -> int:
    scenario = _scenario(cfg)
    m_list = _ints(cfg.get("m")) or list(S.ExperimentConfig().m_list)
    mapper, pool = _mapper(cfg)
    try:
        pts = S.compare_baseline(scenario, m_list, int(cfg["reps"]), cfg["seed"], _dual_for(cfg), mapper=mapper)
    finally:
        if pool:
            pool.shutdown()
    prov = _provenance(cfg, ("reps", "epsilon")) | {"m": m_list}
    _write_csv(cfg, S.curve_csv(pts, prov))
    _emit({"command": "compare", "rows": [{**p.__dict__, "extra": {k: _clean(v) for k, v in p.extra.items()}} for p in pts]})
    return EXIT_OK


def cmd_experiment4(cfg: dict) -> int:
    scenario = _scenario(cfg)
    m_list = _ints(cfg.get("m")) or list(S.ExperimentConfig().m_list)
    r_list = _floats(cfg.get("r")) or list(S.ExperimentConfig().r_list)
    mapper, pool = _mapper(cfg)
    try:
        pts = S.run_experiment4(scenario, r_list, m_list, int(cfg["reps"]), cfg["seed"], _dual_for(cfg), mapper)
    finally:
        if pool:
            pool.shutdown()
    prov = _provenance(cfg, ("reps", "epsilon")) | {"m": m_list, "r": r_list}
    _write_csv(cfg, S.curve_csv(pts, prov))
    _emit({"command": "experiment4", "rows": [{**p.__dict__, "extra": {k: _clean(v) for k, v in p.extra.items()}} for p in pts]})
    return EXIT_OK


def oracle_instance(rng: np.random.Generator, variant: str):
    """One random oracle-check case: instance, multiplier and constraints."""
    scenario, profile = S.random_small_instance(rng)
    K = scenario.K
    lam = float(rng.uniform(0.0, 3.0))
    if variant == BUDGET:
        cons = LayoutConstraints(BUDGET, int(rng.integers(1, K + 1)))
    else:
        l = int(rng.integers(1, K + 1))
        cons = LayoutConstraints(variant, int(rng.integers(1, l + 1)), l)
    return scenario, profile, lam, cons


def oracle_check(variant: str, instances: int, seed: int, with_split: bool = False) -> dict:
    rng = np.random.default_rng([seed, 2])
    report = {"family": variant, "instances": instances, "network_mismatch": 0,
              "greedy_suboptimal": 0, "non_integral": 0, "counterexamples": []}
    if with_split:
        report["split_gap"] = 0
    for _ in range(instances):
        scenario, profile, lam, cons = oracle_instance(rng, variant)
        cmp = F.compare_oracles(scenario, profile, lam, cons, with_split)
        bad = []
        if not cmp.network_agrees:
            report["network_mismatch"] += 1
            bad.append("network")
        if not cmp.mechanism_optimal:
            report["greedy_suboptimal"] += 1
            bad.append("greedy")
        if not cmp.integral:
            report["non_integral"] += 1
            bad.append("integrality")
        if with_split and cmp.split is not None and abs(cmp.split - cmp.brute_force) > 1e-9:
            report["split_gap"] += 1
        if bad and len(report["counterexamples"]) < 5:
            report["counterexamples"].append({
                "kind": bad, "lambda": lam, "scenario": scenario.to_json() | {"constraints": cons.to_json()},
                "bids": {str(k): v for k, v in profile.bids.items()},
                "mechanism": cmp.mechanism, "network": cmp.network, "brute_force": cmp.brute_force,
            })
    return report


def cmd_oracle_check(cfg: dict) -> int:
    family = cfg.get("family")
    variants = [BUDGET, ROW_SPARSE, COLUMN_SPARSE] if family in (None, X.UNCONSTRAINED) else [family]
    reports = [oracle_check(v, int(cfg["instances"]), cfg["seed"], bool(cfg.get("split"))) for v in variants]
    for r in reports:
        print(f"{r['family']}: {r['instances']} instances, network mismatches {r['network_mismatch']}, "
              f"greedy suboptimal {r['greedy_suboptimal']}, non-integral {r['non_integral']}", file=sys.stderr)
    _emit({"command": "oracle-check", "reports": reports})
    if any(r["network_mismatch"] or r["non_integral"] for r in reports):
        return EXIT_NETWORK_MISMATCH
    if any(r["greedy_suboptimal"] for r in reports):
        return EXIT_GREEDY_SUBOPTIMAL
    return EXIT_OK


def cmd_example1(cfg: dict) -> int:
    _emit(S.example1(int(cfg.get("m") or 3)))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "sweep-alpha": cmd_sweep_alpha,
    "solve-constrained": cmd_solve_constrained,
    "compare": cmd_compare,
    "experiment4": cmd_experiment4,
    "oracle-check": cmd_oracle_check,
    "example1": cmd_example1,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except (InfeasibleThreshold, InfeasibleAllocation) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, ScenarioError, DomainError, OSError, KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
