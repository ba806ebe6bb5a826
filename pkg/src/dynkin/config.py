"""Declarative game configuration documents.

A configuration is a TOML document with these sections::

    [process]      preset = "bm" | "gbm" | "bessel" | "besq" | "custom"
                   preset parameters (drift, vol, dimension), or for custom:
                   mu, sigma (expressions), lower, upper, lower_boundary,
                   upper_boundary, reference_point
    [discount]     rate = 0.5  or  rate = "0.5 + 0.1*tanh(x)"
    [costs]        G1, G2, L1, L2 expressions; optional G1_d1, G1_d2, ...
    [solver]       grid_points, scan_points, method, uniqueness_samples
    [montecarlo]   dt, paths, seed, discount_floor, boundary_pad, deviations,
                   start_points, checkpoints
    [parameters]   name = value pairs usable inside every expression
    [sweep]        parameter, values (or start/stop/num)

Expressions are quoted strings in the language of :mod:`dynkin.expr`.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import tomli

from .errors import ParseError, ValidationError
from .expr import parse as parse_expression

PRESETS = ("bm", "gbm", "bessel", "besq", "custom")
BOUNDARIES = ("natural", "entrance_not_exit", "exit_not_entrance")
COSTS = ("G1", "G2", "L1", "L2")
SECTIONS = ("process", "discount", "costs", "solver", "montecarlo", "parameters", "sweep")

PROCESS_KEYS = {
    "bm": {"drift", "vol"},
    "gbm": {"drift", "vol"},
    "bessel": {"dimension"},
    "besq": {"dimension"},
    "custom": {"mu", "sigma", "lower", "upper", "lower_boundary", "upper_boundary"},
}
PRESET_BOUNDS = {
    "bm": ((-math.inf, math.inf), ("natural", "natural")),
    "gbm": ((0.0, math.inf), ("natural", "natural")),
    "bessel": ((0.0, math.inf), ("entrance_not_exit", "natural")),
}
DEFAULT_SEED = 20240601
SOLVER_DEFAULTS = {"grid_points": 4096, "scan_points": 512, "method": "auto",
                   "uniqueness_samples": 50}
MC_DEFAULTS = {"dt": 1e-4, "paths": 100_000, "seed": None, "discount_floor": 1e-6,
               "boundary_pad": 1e-6, "deviations": 20, "start_points": [], "checkpoints": [],
               "parallel": False}


@dataclass
class GameConfig:
    process: dict
    discount: dict
    costs: dict
    solver: dict = field(default_factory=dict)
    montecarlo: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)

    @property
    def preset(self) -> str:
        return self.process["preset"]

    def with_parameters(self, **values) -> "GameConfig":
        p = dict(self.parameters)
        p.update(values)
        return GameConfig(dict(self.process), dict(self.discount), dict(self.costs),
                          dict(self.solver), dict(self.montecarlo), p, dict(self.sweep))


def _locate(text, section, key):
    """1-based (line, column of the value) of ``key`` inside ``[section]``."""
    current = None
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"\[\s*([A-Za-z_]+)\s*\]", s)
        if m:
            current = m.group(1)
            continue
        m = re.match(r"\s*([A-Za-z_0-9]+)\s*=\s*", line)
        if m and current == section and m.group(1) == key:
            col = m.end() + 1
            if line[m.end():m.end() + 1] in "\"'":
                col += 1
            return n, col
    return None, None


def _toml_error(exc):
    msg = str(exc)
    m = re.search(r"\(at line (\d+), column (\d+)\)", msg)
    if m:
        return ParseError(msg[:m.start()].strip(), int(m.group(1)), int(m.group(2)))
    return ParseError(msg)


def _number(value, where, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{where} must be a number, got {value!r}", field=where)
    if integer and int(value) != value:
        raise ValidationError(f"{where} must be an integer, got {value!r}", field=where)
    if positive and not value > 0:
        raise ValidationError(f"{where} must be positive, got {value!r}", field=where)
    return int(value) if integer else float(value)


def parse_config(text: str) -> GameConfig:
    """Parse and validate a configuration document.

    Syntax problems raise :class:`ParseError` with line and column; semantic
    problems raise :class:`ValidationError` naming the field.
    """
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise _toml_error(exc) from None
    for sec in doc:
        if sec not in SECTIONS:
            raise ValidationError(f"unknown section [{sec}]", field=sec)
        if not isinstance(doc[sec], dict):
            raise ValidationError(f"{sec} must be a [section]", field=sec)
    params = {}
    for k, v in doc.get("parameters", {}).items():
        if k == "x":
            raise ValidationError("'x' is reserved for the state variable", field="parameters.x")
        params[k] = _number(v, f"parameters.{k}")

    def expr(section, key, value):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = repr(float(value))
        if not isinstance(value, str):
            raise ValidationError(f"{section}.{key} must be a quoted expression", field=f"{section}.{key}")
        try:
            parse_expression(value, params)
        except ParseError as exc:
            line, col = _locate(text, section, key)
            column = None if col is None else col + (exc.column or 1) - 1
            raise ParseError(f"{section}.{key}: {exc.bare_message}", line, column) from None
        return value

    proc = dict(doc.get("process", {}))
    if "preset" not in proc:
        raise ValidationError("process.preset is required", field="process.preset")
    preset = proc["preset"]
    if preset not in PRESETS:
        raise ValidationError(f"unknown preset {preset!r}; expected one of {PRESETS}",
                              field="process.preset")
    allowed = PROCESS_KEYS[preset] | {"preset", "reference_point", "lower_boundary",
                                      "upper_boundary", "lower", "upper"}
    for k in proc:
        if k not in allowed:
            raise ValidationError(f"process.{k} is not a parameter of preset {preset!r}",
                                  field=f"process.{k}")
    if preset == "custom":
        for k in ("mu", "sigma"):
            if k not in proc:
                raise ValidationError(f"process.{k} is required for a custom process",
                                      field=f"process.{k}")
            proc[k] = expr("process", k, proc[k])
        for k, default in (("lower", -math.inf), ("upper", math.inf)):
            proc[k] = _number(proc.get(k, default), f"process.{k}")
        for k in ("lower_boundary", "upper_boundary"):
            proc.setdefault(k, "natural")
    else:
        for k in PROCESS_KEYS[preset]:
            if k in proc:
                proc[k] = _number(proc[k], f"process.{k}")
        _check_preset_bounds(preset, proc)
    for k in ("lower_boundary", "upper_boundary"):
        if k in proc and proc[k] not in BOUNDARIES:
            raise ValidationError(f"process.{k} must be one of {BOUNDARIES}", field=f"process.{k}")
    if "reference_point" in proc:
        proc["reference_point"] = _number(proc["reference_point"], "process.reference_point")

    disc = dict(doc.get("discount", {}))
    if "rate" not in disc:
        raise ValidationError("discount.rate is required", field="discount.rate")
    if isinstance(disc["rate"], str):
        disc["rate"] = expr("discount", "rate", disc["rate"])
    else:
        disc["rate"] = _number(disc["rate"], "discount.rate", positive=True)
    for k in disc:
        if k != "rate":
            raise ValidationError(f"unknown key discount.{k}", field=f"discount.{k}")

    costs = dict(doc.get("costs", {}))
    for name in COSTS:
        if name not in costs:
            raise ValidationError(f"costs.{name} is missing", field=f"costs.{name}")
    for k in list(costs):
        base = k.split("_")[0]
        if base not in COSTS or k not in (base, base + "_d1", base + "_d2"):
            raise ValidationError(f"unknown key costs.{k}", field=f"costs.{k}")
        costs[k] = expr("costs", k, costs[k])
        if "abs(" in costs[k].replace(" ", ""):
            raise ValidationError(f"costs.{k} uses abs, which is not smooth enough for a cost",
                                  field=f"costs.{k}")

    solver = dict(SOLVER_DEFAULTS)
    for k, v in doc.get("solver", {}).items():
        if k not in SOLVER_DEFAULTS:
            raise ValidationError(f"unknown key solver.{k}", field=f"solver.{k}")
        if k == "method":
            if v not in ("auto", "closed_form", "numerical"):
                raise ValidationError("solver.method must be auto, closed_form or numerical",
                                      field="solver.method")
            solver[k] = v
        else:
            solver[k] = _number(v, f"solver.{k}", positive=True, integer=True)

    mc = dict(MC_DEFAULTS)
    for k, v in doc.get("montecarlo", {}).items():
        if k not in MC_DEFAULTS:
            raise ValidationError(f"unknown key montecarlo.{k}", field=f"montecarlo.{k}")
        if k in ("start_points", "checkpoints"):
            if not isinstance(v, list):
                raise ValidationError(f"montecarlo.{k} must be a list", field=f"montecarlo.{k}")
            mc[k] = [_number(t, f"montecarlo.{k}") for t in v]
        elif k == "parallel":
            mc[k] = bool(v)
        elif k in ("paths", "seed", "deviations"):
            if k == "seed" and not 0 <= v < 2 ** 64:
                raise ValidationError("montecarlo.seed must be a 64-bit unsigned integer",
                                      field="montecarlo.seed")
            mc[k] = _number(v, f"montecarlo.{k}", positive=(k != "seed"), integer=True)
        else:
            mc[k] = _number(v, f"montecarlo.{k}", positive=True)
    if not 0 < mc["discount_floor"] < 1:
        raise ValidationError("montecarlo.discount_floor must lie in (0, 1)",
                              field="montecarlo.discount_floor")

    sweep = dict(doc.get("sweep", {}))
    if sweep:
        p = sweep.get("parameter")
        if p not in params:
            raise ValidationError("sweep.parameter must name an entry of [parameters]",
                                  field="sweep.parameter")
        if "values" in sweep:
            sweep["values"] = [_number(v, "sweep.values") for v in sweep["values"]]
        elif {"start", "stop", "num"} <= set(sweep):
            sweep["start"] = _number(sweep["start"], "sweep.start")
            sweep["stop"] = _number(sweep["stop"], "sweep.stop")
            sweep["num"] = _number(sweep["num"], "sweep.num", positive=True, integer=True)
        else:
            raise ValidationError("sweep needs values or start/stop/num", field="sweep.values")
    return GameConfig(proc, disc, costs, solver, mc, params, sweep)


def _check_preset_bounds(preset, proc):
    if preset == "besq":
        d = proc.get("dimension", 0.0)
        lower = "exit_not_entrance" if d <= 0 else "entrance_not_exit"
        bounds = ((0.0, math.inf), (lower, "natural"))
    else:
        bounds = PRESET_BOUNDS[preset]
    (lo, hi), (blo, bhi) = bounds
    for key, want in (("lower", lo), ("upper", hi)):
        if key in proc and float(proc[key]) != want:
            raise ValidationError(f"preset {preset!r} lives on ({lo}, {hi}); process.{key} "
                                  f"= {proc[key]} contradicts it", field=f"process.{key}")
    for key, want in (("lower_boundary", blo), ("upper_boundary", bhi)):
        if key in proc and proc[key] != want:
            raise ValidationError(f"preset {preset!r} has a {want} {key.split('_')[0]} boundary; "
                                  f"declared {proc[key]!r}", field=f"process.{key}")


def load_config(path) -> GameConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(t) for t in v) + "]"
    return str(v)


def serialize(cfg: GameConfig) -> str:
    """Render a configuration back to a document that parses to an equal config."""
    out = []
    for name in SECTIONS:
        sec = getattr(cfg, name)
        if not sec:
            continue
        out.append(f"[{name}]")
        for k, v in sec.items():
            if v is None:
                continue
            out.append(f"{k} = {_fmt(v)}")
        out.append("")
    return "\n".join(out)


# ------------------------------------------------------------ construction

def build_spec(cfg: GameConfig):
    from . import diffusion as D

    proc, params = cfg.process, cfg.parameters
    rate = cfg.discount["rate"]
    if isinstance(rate, str):
        e = parse_expression(rate, params)
        rate = float(e(0.0)) if e.is_constant else e.raw()
    preset = proc["preset"]
    ref = proc.get("reference_point")
    kw = {} if ref is None else {"reference_point": ref}
    if preset == "bm":
        return D.brownian_motion(proc.get("drift", 0.0), proc.get("vol", 1.0), rate, **kw)
    if preset == "gbm":
        return D.geometric_brownian_motion(proc.get("drift", 0.0), proc.get("vol", 1.0), rate, **kw)
    if preset == "bessel":
        return D.bessel(proc.get("dimension", 3.0), rate, **kw)
    if preset == "besq":
        return D.squared_bessel(proc.get("dimension", 0.0), rate, **kw)
    mu = parse_expression(proc["mu"], params).raw()
    sigma = parse_expression(proc["sigma"], params).raw()
    lo, hi = proc["lower"], proc["upper"]
    if ref is None:
        ref = 0.0 if not (math.isfinite(lo) or math.isfinite(hi)) else \
            (lo + hi) / 2 if math.isfinite(lo) and math.isfinite(hi) else \
            (lo + 1.0 if math.isfinite(lo) else hi - 1.0)
    spec = D.DiffusionSpec(mu, sigma, rate, (lo, hi), proc["lower_boundary"],
                           proc["upper_boundary"], ref, preset="custom",
                           params={"mu": proc["mu"], "sigma": proc["sigma"]}, name="custom")
    spec.validate()
    return spec


def build_costs(cfg: GameConfig):
    from .costs import SmoothFunction

    out = {}
    for name in COSTS:
        e = parse_expression(cfg.costs[name], cfg.parameters)
        d1 = cfg.costs.get(name + "_d1")
        d2 = cfg.costs.get(name + "_d2")
        if d1 is None:
            out[name] = SmoothFunction.from_expression(e, name=name)
            continue
        e1 = parse_expression(d1, cfg.parameters)
        e2 = parse_expression(d2, cfg.parameters) if d2 is not None else e1.derivative(1)
        out[name] = SmoothFunction(e, e1, e2, name=name, expression=e)
    return out


def build_game_from_config(cfg: GameConfig):
    from .equilibrium import build_game

    spec = build_spec(cfg)
    c = build_costs(cfg)
    return build_game(spec, c["G1"], c["G2"], c["L1"], c["L2"],
                      grid_points=cfg.solver["grid_points"], method=cfg.solver["method"])


def path_config(cfg: GameConfig, seed=None, paths=None):
    from .montecarlo import PathConfig

    mc = cfg.montecarlo
    return PathConfig(dt=mc["dt"], n_paths=int(paths if paths is not None else mc["paths"]),
                      seed=int(seed if seed is not None else
                               mc["seed"] if mc["seed"] is not None else DEFAULT_SEED),
                      discount_floor=mc["discount_floor"], boundary_pad=mc["boundary_pad"],
                      parallel=bool(mc["parallel"]))
