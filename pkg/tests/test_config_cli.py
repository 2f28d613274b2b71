import csv
import json
import math

import pytest

from ipml import cli
from ipml import kernel_constants as kc
from ipml.config import EXPERIMENTS, ConfigError, RunConfig, from_dict, load, to_dict


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def test_defaults_and_round_trip():
    cfg = RunConfig(experiment="layer-run")
    doc = to_dict(cfg)
    assert json.loads(json.dumps(doc)) == doc
    assert from_dict(doc) == cfg


@pytest.mark.parametrize(
    "doc,field",
    [
        ({}, "experiment"),
        ({"experiment": "nope"}, "experiment"),
        ({"experiment": "layer-run", "N_zero": 4}, "N_zero"),
        ({"experiment": "layer-run", "n": 500}, "n"),
        ({"experiment": "layer-run", "n": 512.0}, "n"),
        ({"experiment": "layer-run", "beta0": 0.3}, "beta0"),
        ({"experiment": "layer-run", "N1": 3.0}, "N1"),
        ({"experiment": "layer-run", "rebuild_table": 1}, "rebuild_table"),
        ({"experiment": "layer-run", "K": 2}, "K"),
        ({"experiment": "layer-run", "direction": [1.0, 1.0]}, "direction"),
        ({"experiment": "layer-run", "tolerances": {"residual": -1.0}}, "tolerances.residual"),
        ({"experiment": "layer-run", "tolerances": {"bogus": 1.0}}, "tolerances.bogus"),
        ({"experiment": "layer-run", "constants_path": 3}, "constants_path"),
        ({"experiment": "blowup-proxy", "layers": 7}, "layers"),
    ],
)
def test_strict_validation_names_the_field(doc, field):
    with pytest.raises(ConfigError) as exc:
        from_dict(doc)
    assert str(exc.value).startswith(field)


def test_null_next_frequency_allowed():
    assert from_dict({"experiment": "layer-run", "N1": None}).N1 is None


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load(bad)


def test_every_experiment_has_a_subcommand():
    parser = cli.build_parser()
    for name in EXPERIMENTS:
        assert parser.parse_args([name]).command == name


def test_exit_code_2_on_bad_config(tmp_path, capsys):
    assert cli.main(["layer-run", "--config", str(tmp_path / "none.json")]) == 2
    p = _write(tmp_path, {"seed": 1})
    assert cli.main(["layer-run", "--config", str(p)]) == 2
    assert "experiment" in capsys.readouterr().err
    p = _write(tmp_path, {"experiment": "constants"}, "other.json")
    assert cli.main(["layer-run", "--config", str(p)]) == 2
    p = _write(tmp_path, {"experiment": "blowup-proxy", "layers": 2}, "proxy.json")
    assert cli.main(["blowup-proxy", "--config", str(p)]) == 2


def test_transport_demo_outputs_and_determinism(tmp_path):
    p = _write(tmp_path, {"experiment": "transport-demo", "seed": 3})
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["transport-demo", "--config", str(p), "--out", str(a)]) == 0
    assert cli.main(["transport-demo", "--config", str(p), "--out", str(b)]) == 0
    files = sorted(f.name for f in a.iterdir())
    assert "report.txt" in files and "transport_case0.csv" in files
    for name in files:
        if name.endswith(".csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
    with open(a / "transport_case0.csv") as fh:
        assert next(csv.reader(fh)) == ["t", "i", "j", "g_ij"]


def test_verify_velocity_overrides(tmp_path):
    cfg = cli.resolve_config(cli.build_parser().parse_args(
        ["verify-velocity", "--K", "0,1", "--N-list", "32,64", "--direction", "0.6,0.8", "--out", str(tmp_path)]
    ))
    assert cfg.K == (0, 1) and cfg.N_list == (32.0, 64.0) and cfg.direction == (0.6, 0.8)
    assert cfg.out == str(tmp_path)
    with pytest.raises(ConfigError):
        cli.resolve_config(cli.build_parser().parse_args(["verify-velocity", "--direction", "1,1"]))


@pytest.mark.slow
def test_corrupted_constants_exit_1(tmp_path, capsys):
    table = kc.default_table()
    values = {k: v.copy() for k, v in table.values.items()}
    values[(1, 0, "cos")][2] = 0.25  # a parity-mandated zero
    kc.ConstantTable(table.K_max, table.directions, values, table.errors).save(tmp_path / "bad.csv")
    p = _write(tmp_path, {"experiment": "constants", "constants_path": str(tmp_path / "bad.csv")})
    out = tmp_path / "out"
    assert cli.main(["constants", "--config", str(p), "--out", str(out)]) == 1
    text = capsys.readouterr().out
    assert "[      FAIL] parity_violations" in text
    with open(out / "constants.csv") as fh:
        assert next(csv.reader(fh)) == ["i", "j", "kind", "a", "b", "value", "error"]
    with open(out / "c0.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["scheme"] for r in rows} == {"polar", "cartesian"}
    assert all(abs(float(r["value_over_b"]) - 2 * math.pi) < 1e-6 for r in rows)
