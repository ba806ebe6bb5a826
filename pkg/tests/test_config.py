import math
import os

import pytest

from dynkin.config import (build_game_from_config, build_spec, load_config, parse_config,
                           path_config, serialize)
from dynkin.errors import ParseError, ValidationError

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")

MINIMAL = """
[process]
preset = "bm"

[discount]
rate = 0.5

[costs]
G1 = "tanh(x)"
G2 = "-tanh(x - 1)"
L1 = "-1.2"
L2 = "-1.2"
"""


def test_minimal_document():
    cfg = parse_config(MINIMAL)
    assert cfg.preset == "bm" and cfg.discount["rate"] == 0.5
    assert cfg.costs["G1"] == "tanh(x)" and set(cfg.costs) >= {"G1", "G2", "L1", "L2"}
    assert cfg.solver["grid_points"] == 4096 and cfg.montecarlo["paths"] == 100_000


@pytest.mark.parametrize("name", sorted(f for f in os.listdir(CONFIGS) if f.endswith(".toml")))
def test_round_trip(name):
    cfg = load_config(os.path.join(CONFIGS, name))
    again = parse_config(serialize(cfg))
    assert again == cfg
    assert serialize(again) == serialize(cfg)


def test_missing_cost_names_field():
    with pytest.raises(ValidationError) as info:
        parse_config(MINIMAL.replace('L2 = "-1.2"\n', ""))
    assert info.value.field == "costs.L2"


def test_dangling_operator_located():
    doc = MINIMAL.replace('preset = "bm"', 'preset = "custom"\nmu = "0"\nsigma = "x*"\n'
                          'lower = -inf\nupper = inf\nlower_boundary = "natural"\n'
                          'upper_boundary = "natural"')
    with pytest.raises(ParseError) as info:
        parse_config(doc)
    line = doc.splitlines()[info.value.line - 1]
    assert line.startswith("sigma") and line[info.value.column - 1:].startswith('*"')


def test_toml_syntax_error_located():
    with pytest.raises(ParseError) as info:
        parse_config(MINIMAL.replace("rate = 0.5", "rate = = 0.5"))
    assert info.value.line is not None


@pytest.mark.parametrize("edit,field", [
    (("preset = \"bm\"", "preset = \"ou\""), "process.preset"),
    (("rate = 0.5", "rate = -0.5"), "discount.rate"),
    (("G1 = \"tanh(x)\"", "G1 = \"abs(x)\""), "costs.G1"),
    (("[costs]", "[costs]\nG3 = \"x\""), "costs.G3"),
    (("preset = \"bm\"", "preset = \"bessel\"\nlower_boundary = \"natural\""),
     "process.lower_boundary"),
    (("preset = \"bm\"", "preset = \"gbm\"\nlower = -1.0"), "process.lower"),
])
def test_validation_errors(edit, field):
    with pytest.raises(ValidationError) as info:
        parse_config(MINIMAL.replace(*edit))
    assert info.value.field == field


def test_parameters_and_sweep():
    cfg = load_config(os.path.join(CONFIGS, "tanh_shift.toml"))
    assert cfg.parameters["shift"] == 0.3
    c2 = cfg.with_parameters(shift=0.5)
    assert c2.parameters["shift"] == 0.5 and cfg.parameters["shift"] == 0.3


def test_expression_rate_becomes_constant():
    cfg = parse_config(MINIMAL.replace("rate = 0.5", 'rate = "0.25 + 0.25"'))
    spec = build_spec(cfg)
    assert spec.constant_rate and spec.discount == 0.5


def test_state_dependent_rate():
    cfg = parse_config(MINIMAL.replace("rate = 0.5", 'rate = "0.5 + 0.1*tanh(x)"'))
    spec = build_spec(cfg)
    assert not spec.constant_rate
    assert spec.rate(1.0) == pytest.approx(0.5 + 0.1 * math.tanh(1.0))


def test_custom_process():
    doc = MINIMAL.replace('preset = "bm"', 'preset = "custom"\nmu = "-0.5*x"\nsigma = "1"\n'
                          'lower = -inf\nupper = inf\nlower_boundary = "natural"\n'
                          'upper_boundary = "natural"')
    spec = build_spec(parse_config(doc))
    assert spec.drift(2.0) == -1.0 and spec.vol(2.0) == 1.0


def test_game_and_path_config():
    cfg = load_config(os.path.join(CONFIGS, "tanh.toml"))
    game = build_game_from_config(cfg)
    assert game.G1.class_tag == "A1" and game.G2.class_tag == "A2"
    pc = path_config(cfg, seed=5)
    assert pc.seed == 5 and pc.n_paths == 20000
    assert path_config(cfg, paths=10).n_paths == 10
