"""Command-line entry point: ``voltvar-ord <command> [options]``.

Exit codes: 0 ok, 1 configuration error, 2 I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import scenarios as sc
from .ac_validation import RadialNetwork, ac_equilibrium_batch, model_error
from .config import RunConfig, load_config
from .dynamics import check_stability
from .errors import DivergenceError, FeederError, NonFiniteError, PowerFlowError, ProjectionInfeasible, RuleError, ScenarioFormatError
from .grid_model import build_sensitivities, save_feeder
from .objective import equilibria, losses_at, violation_rates
from .rules import RuleSet, load_ruleset, save_ruleset, validate_1547
from .trainer import run_ord

log = logging.getLogger("voltvar_ord")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
TABLE_FORMAT = "voltvar-table/1"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _write_table(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {TABLE_FORMAT}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _setup(args) -> tuple[RunConfig, Path | None]:
    if args.config is not None and not Path(args.config).is_file():
        raise CliError(f"config file not found: {args.config}", EXIT_IO)
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "out_dir", None):
        overrides["output_dir"] = args.out_dir
    if getattr(args, "beta", None) is not None:
        overrides["chance"] = cfg.chance.model_copy(update={"beta": args.beta}).model_dump()
    if getattr(args, "feeder", None):
        overrides["feeder"] = args.feeder
    if overrides:
        cfg = RunConfig.model_validate(cfg.model_dump() | overrides)
    base = Path(args.config).resolve().parent if args.config else None
    return cfg, base


def _out_dir(cfg: RunConfig, base: Path | None) -> Path:
    out = Path(cfg.output_dir)
    if not out.is_absolute() and base is not None:
        out = base / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_inputs(cfg: RunConfig, base):
    feeder_path = cfg.feeder
    try:
        feeder = cfg.load_feeder(base)
    except FileNotFoundError:
        raise CliError(f"feeder file not found: {feeder_path}", EXIT_IO) from None
    try:
        scen = cfg.load_scenarios(feeder, base)
    except FileNotFoundError as exc:
        raise CliError(f"scenario file not found: {exc.filename}", EXIT_IO) from None
    if scen.n != feeder.n:
        raise CliError(f"scenarios have {scen.n} buses but the feeder has {feeder.n}", EXIT_CONFIG)
    return feeder, scen


def _resolve_rules(choice: str, model, base) -> tuple[str, RuleSet]:
    if choice == "none":
        return "no VAR by DERs", RuleSet.zero(model.der_buses)
    if choice == "default":
        return "default Volt/VAR rules", RuleSet.ieee_default(model.der_buses, model.q_hat)
    path = Path(choice)
    if not path.is_absolute() and base is not None and not path.exists():
        path = base / path
    if not path.is_file():
        raise CliError(f"rule file not found: {choice}", EXIT_IO)
    try:
        rules = load_ruleset(path)
    except RuleError as exc:
        raise CliError(f"unreadable rule file: {exc}", EXIT_IO) from None
    if list(rules.buses) != list(model.der_buses):
        raise CliError(f"{choice}: rule buses {list(rules.buses)} do not match feeder DERs {list(model.der_buses)}", EXIT_CONFIG)
    return path.stem, rules


# -- commands ----------------------------------------------------------------------

def cmd_build_model(args) -> int:
    cfg, base = _setup(args)
    try:
        feeder = cfg.load_feeder(base)
    except FileNotFoundError:
        raise CliError(f"feeder file not found: {cfg.feeder}", EXIT_IO) from None
    model = build_sensitivities(feeder)
    out = _out_dir(cfg, base)
    np.savetxt(out / "R.csv", model.R, delimiter=",", fmt="%.17g")
    np.savetxt(out / "X.csv", model.X, delimiter=",", fmt="%.17g")
    save_feeder(feeder, out / "feeder.json")
    summary = {
        "buses": feeder.n,
        "der_buses": [int(b) for b in model.der_buses],
        "q_hat": [float(q) for q in model.q_hat],
        "min_eig_R": float(np.linalg.eigvalsh(model.R).min()),
        "min_eig_X": float(np.linalg.eigvalsh(model.X).min()),
    }
    (out / "model.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"wrote R.csv, X.csv, feeder.json, model.json to {out}")
    return EXIT_OK


def cmd_gen_scenarios(args) -> int:
    cfg, base = _setup(args)
    try:
        feeder = cfg.load_feeder(base)
    except FileNotFoundError:
        raise CliError(f"feeder file not found: {cfg.feeder}", EXIT_IO) from None
    g = cfg.scenarios.generate
    S = args.S if args.S is not None else (g.S if g else 80)
    seed = args.seed if args.seed is not None else (g.seed if g else 7)
    profile = args.profile or (g.profile if g else "high_solar")
    scen = sc.generate_synthetic(feeder, S, seed, profile)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    sc.save(scen, out)
    print(f"wrote {S} scenarios ({profile}, seed {seed}) to {out}")
    return EXIT_OK


def cmd_design(args) -> int:
    cfg, base = _setup(args)
    feeder, scen = _load_inputs(cfg, base)
    model = build_sensitivities(feeder)
    tcfg = cfg.trainer_config()
    out = _out_dir(cfg, base)
    result = run_ord(tcfg, model, scen)

    save_ruleset(result.ruleset, out / "rules.csv")
    (out / "metrics.csv").write_text(result.metrics_csv(), encoding="utf-8")
    final = result.final
    hard = final.hard if final else violation_rates(equilibria(result.ruleset, model, scen).v, tcfg.chance)
    loss = final.loss if final else float(np.mean(losses_at(equilibria(result.ruleset, model, scen), model, scen)))
    _write_table(
        out / "summary.csv",
        ["rules", "worst_case_violation_pct", "ohmic_losses"],
        [[f"ORD with beta={tcfg.beta:g}", 100.0 * float(hard.max()), loss]],
    )
    _write_table(out / "violation_per_bus.csv", ["bus", "hard_violation"], [[b + 1, float(h)] for b, h in enumerate(hard)])
    stab = check_stability(result.ruleset, model, tcfg.epsilon)
    print(f"beta={tcfg.beta:g}: iterations={len(result.history)} converged={result.converged}")
    print(f"  worst-case violation {100 * hard.max():.2f} %, ohmic losses {loss:.6g}")
    print(f"  max lambda {float(result.lam.max(initial=0.0)):.6g}, inner stability {stab.inner_ok}, "
          f"1547 violations {len(validate_1547(result.ruleset, model.q_hat))}")
    print(f"  outputs in {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg, base = _setup(args)
    feeder, scen = _load_inputs(cfg, base)
    model = build_sensitivities(feeder)
    chance = cfg.chance_config()
    out = _out_dir(cfg, base)
    choices = args.rules or cfg.evaluate.rules
    lo, hi = cfg.evaluate.hist_range
    edges = np.linspace(lo, hi, cfg.evaluate.hist_bins + 1)
    table, hist_cols, names = [], [], []
    for choice in choices:
        name, rules = _resolve_rules(choice, model, base)
        eq = equilibria(rules, model, scen)
        hard = violation_rates(eq.v, chance)
        loss = float(np.mean(losses_at(eq, model, scen)))
        table.append([name, 100.0 * float(hard.max()), loss])
        # out-of-range voltages land in the edge bins so counts sum to N * S
        counts, _ = np.histogram(np.clip(eq.v.ravel(), lo, hi), bins=edges)
        hist_cols.append(counts)
        names.append(name)
        print(f"{name:>28}: worst-case violation {100 * hard.max():6.2f} %, ohmic losses {loss:.6g}")
    _write_table(out / "evaluation.csv", ["rules", "worst_case_violation_pct", "ohmic_losses"], table)
    rows = [[edges[i], edges[i + 1], *(int(c[i]) for c in hist_cols)] for i in range(len(edges) - 1)]
    _write_table(out / "voltage_histogram.csv", ["bin_low", "bin_high", *names], rows)
    return EXIT_OK


def cmd_validate_ac(args) -> int:
    cfg, base = _setup(args)
    feeder, scen = _load_inputs(cfg, base)
    model = build_sensitivities(feeder)
    net = RadialNetwork(feeder)
    out = _out_dir(cfg, base)
    choices = args.rules or cfg.evaluate.rules
    rows = []
    for choice in choices:
        name, rules = _resolve_rules(choice, model, base)
        lin = equilibria(rules, model, scen)
        ac = ac_equilibrium_batch(rules, net, scen.P, scen.Q)
        err = model_error(lin.v, ac.v)
        rows.append([name, err["mean_abs"], err["max_abs"], ac.max_mismatch])
        print(f"{name:>28}: mean error {err['mean_abs']:.3e}, max error {err['max_abs']:.3e}, "
              f"AC mismatch {ac.max_mismatch:.1e}")
    _write_table(out / "ac_validation.csv", ["rules", "mean_error", "max_error", "ac_max_mismatch"], rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voltvar-ord",
        description="Design Volt/VAR rules that minimize ohmic losses under voltage chance constraints.",
        epilog="exit codes: 0 ok, 1 configuration error, 2 I/O error, 3 numerical failure",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", help="JSON run config (default: shipped benchmark)")
        p.add_argument("-o", "--out-dir", help="override output_dir from the config")
        p.add_argument("--feeder", help="feeder JSON path (overrides config)")

    p = sub.add_parser("build-model", help="write sensitivity matrices for a feeder")
    common(p)
    p.set_defaults(func=cmd_build_model)

    p = sub.add_parser("gen-scenarios", help="generate a synthetic scenario set")
    common(p)
    p.add_argument("output", help="scenario CSV to write (metadata goes to <output>.json)")
    p.add_argument("-S", type=int, help="number of scenarios (default 80)")
    p.add_argument("--seed", type=int)
    p.add_argument("--profile", choices=sorted(sc.PROFILES))
    p.set_defaults(func=cmd_gen_scenarios)

    p = sub.add_parser("design", help="optimize rules with the primal-dual trainer")
    common(p)
    p.add_argument("--beta", type=float, help="violation budget (overrides config)")
    p.set_defaults(func=cmd_design)

    for name, func, text in (
        ("evaluate", cmd_evaluate, "losses, violations and voltage histogram per rule set"),
        ("validate-ac", cmd_validate_ac, "linearized vs exact AC equilibrium voltages"),
    ):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--beta", type=float, help=argparse.SUPPRESS)
        p.add_argument("rules", nargs="*", help="'none', 'default' or rule CSV paths (default from config)")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ScenarioFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, json.JSONDecodeError, FeederError, RuleError, ValueError) as exc:
        print(f"error: invalid configuration or input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc.strerror or exc} ({exc.filename})", file=sys.stderr)
        return EXIT_IO
    except (DivergenceError, NonFiniteError, PowerFlowError, ProjectionInfeasible) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
