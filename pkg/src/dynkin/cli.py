"""Command line entry point: ``dynkin <command> --config game.toml``.

Exit codes: 0 success, 1 a report-level failure, 2 a configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from . import config as C
from .costs import check_assumptions
from .diffusion import classify_boundary
from .equilibrium import _json_tree, solve_equilibrium
from .errors import (ConfigError, DomainError, DynkinError, EvalError, NoRegimeApplies,
                     ParseError, ValidationError)

SCHEMA_VERSION = 1
COMMANDS = ("classify", "check", "solve", "verify", "sweep", "export")

log = logging.getLogger("dynkin")


def _seed(args, cfg):
    if args.seed is not None:
        return args.seed
    if cfg.montecarlo.get("seed") is not None:
        return cfg.montecarlo["seed"]
    env = os.environ.get("DYNKIN_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"DYNKIN_SEED must be an integer, got {env!r}") from None
    return C.DEFAULT_SEED


def _envelope(command, body):
    return {"schema_version": SCHEMA_VERSION, "command": command, **body}


def _to_json(obj) -> str:
    return json.dumps(_json_tree(obj), indent=2, sort_keys=True) + "\n"


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _flat(d, prefix=""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flat(v, key + ".")
        elif isinstance(v, list):
            yield key, json.dumps(_json_tree(v))
        else:
            yield key, v


def _emit(args, command, body, csv_rows=None):
    if args.format == "csv":
        if csv_rows is None:
            csv_rows = (["key", "value"], list(_flat(_json_tree(body))))
        text = _rows_csv(*csv_rows)
    else:
        text = _to_json(_envelope(command, body))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------ commands

def cmd_classify(args, cfg):
    spec = C.build_spec(cfg)
    reports = {end: classify_boundary(spec, end).to_dict() for end in ("lower", "upper")}
    ok = all(r["matches"] for r in reports.values())
    return {"passed": ok, "boundaries": reports}, ok


def cmd_check(args, cfg):
    game = C.build_game_from_config(cfg)
    rep = game.assumption_report or check_assumptions(game)
    body = {"passed": rep.passed, "assumptions": rep.to_dict()}
    body["costs"] = {n: game.cost(n).to_dict() for n in C.COSTS}
    return body, rep.passed


def _solve(cfg):
    game = C.build_game_from_config(cfg)
    eq = solve_equilibrium(game, scan_points=cfg.solver["scan_points"])
    return game, eq


def cmd_solve(args, cfg):
    try:
        game, eq = _solve(cfg)
    except NoRegimeApplies as exc:
        return {"passed": False, "error": str(exc), "diagnostics": exc.diagnostics}, False
    ok = eq.regime is not None
    return {"passed": ok, "equilibrium": eq.to_dict()}, ok


def _start_points(cfg, eq):
    pts = list(cfg.montecarlo.get("start_points") or [])
    if pts:
        return pts
    a, b = eq.x1_star, eq.x2_star
    if a is not None and b is not None:
        return [0.5 * (a + b)]
    return [eq.x_S if eq.x_S is not None else cfg.process.get("reference_point", 0.0)]


def cmd_verify(args, cfg):
    from .montecarlo import martingale_check, nash_deviation_test
    from .payoff import build_payoffs, verify_variational

    try:
        game, eq = _solve(cfg)
    except NoRegimeApplies as exc:
        return {"passed": False, "error": str(exc)}, False
    if eq.regime is None:
        return {"passed": False, "equilibrium": eq.to_dict()}, False
    v1, v2 = build_payoffs(game, eq)
    var = verify_variational(game, eq, v1, v2)
    pc = C.path_config(cfg, seed=_seed(args, cfg), paths=args.paths)
    body = {"equilibrium": eq.to_dict(), "variational": var.to_dict(), "montecarlo": []}
    ok = var.passed
    cks = cfg.montecarlo.get("checkpoints") or [0.5, 1.0, 2.0, 4.0, 8.0]
    for x0 in _start_points(cfg, eq):
        log.info("Monte Carlo checks from x0 = %g", x0)
        dev = nash_deviation_test(game, eq, x0, pc, cfg.montecarlo["deviations"])
        item = {"x0": x0, "deviation": dev.to_dict()}
        ok = ok and dev.passed
        if eq.regime == "interior_thresholds":
            mart = martingale_check(game, eq, v1, v2, x0, pc, cks)
            item["martingale"] = mart.to_dict()
            ok = ok and mart.passed
        body["montecarlo"].append(item)
    body["passed"] = bool(ok)
    return body, bool(ok)


def _sweep_values(cfg):
    sw = cfg.sweep
    if not sw:
        raise ValidationError("the sweep command needs a [sweep] section", field="sweep")
    if "values" in sw:
        return list(sw["values"])
    return [float(v) for v in np.linspace(sw["start"], sw["stop"], sw["num"])]


def cmd_sweep(args, cfg):
    name = cfg.sweep.get("parameter")
    rows = []
    ok = True
    for val in _sweep_values(cfg):
        c = cfg.with_parameters(**{name: val})
        try:
            _, eq = _solve(c)
            x2 = eq.x2_star if eq.x2_star is not None else eq.x2_inf
            rows.append([val, eq.regime, eq.x1_star, x2, eq.uniqueness])
            ok = ok and eq.regime is not None
        except NoRegimeApplies:
            rows.append([val, None, None, None, None])
            ok = False
    header = [name, "regime", "x1_star", "x2_star", "uniqueness"]
    body = {"passed": ok, "parameter": name,
            "rows": [dict(zip(header, r)) for r in rows]}
    return body, ok, (header, rows)


def cmd_export(args, cfg):
    from .payoff import build_payoffs, sample_payoffs

    try:
        game, eq = _solve(cfg)
    except NoRegimeApplies as exc:
        return {"passed": False, "error": str(exc)}, False, None
    if eq.regime is None:
        return {"passed": False, "equilibrium": eq.to_dict()}, False, None
    v1, v2 = build_payoffs(game, eq)
    rows = sample_payoffs(game, v1, v2, n=args.points)
    header = ["x", "v1", "v2", "region1", "region2"]
    body = {"passed": True, "regime": eq.regime,
            "samples": [dict(zip(header, r)) for r in rows]}
    return body, True, (header, rows)


HANDLERS = {"classify": cmd_classify, "check": cmd_check, "solve": cmd_solve,
            "verify": cmd_verify, "sweep": cmd_sweep, "export": cmd_export}


def build_parser():
    p = argparse.ArgumentParser(prog="dynkin", description="Threshold equilibria of "
                                "nonzero-sum stopping games on one-dimensional diffusions.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--seed", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--points", type=int, default=201, help="samples for export")
    p.add_argument("--quiet", action="store_true")
    return p


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        if args.paths is not None and args.paths <= 0:
            raise ConfigError("--paths must be positive")
        cfg = C.load_config(args.config)
        out = HANDLERS[args.command](args, cfg)
        body, ok = out[0], out[1]
        rows = out[2] if len(out) > 2 else None
        _emit(args, args.command, body, rows if args.format == "csv" else None)
    except ParseError as exc:
        log.error("parse error: %s", exc)
        return 2
    except (ValidationError, ConfigError, DomainError, EvalError, OSError) as exc:
        log.error("configuration error: %s", exc)
        return 2
    except DynkinError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1
    if not ok:
        if args.command == "check":
            for m in body["assumptions"]["messages"]:
                log.error("%s", m)
        else:
            log.error("%s reported FAIL", args.command)
        return 1
    return 0


def main(argv=None):
    sys.exit(run_command(argv))


if __name__ == "__main__":
    main()
