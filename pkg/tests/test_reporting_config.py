import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from boundarywalk import ConfigError, reporting
from boundarywalk.config import ExperimentConfig, standard_config
from boundarywalk.walk import McEstimate


def test_fmt_cells():
    assert reporting.fmt(1 / 3) == "0.333333333333"
    assert reporting.fmt(np.float64(2.0)) == "2"
    assert reporting.fmt(np.int64(7)) == "7"
    assert reporting.fmt(True) == "true"
    assert reporting.fmt("x") == "x"


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_round_trips_at_twelve_digits(x):
    y = float(reporting.fmt(x))
    assert y == pytest.approx(x, rel=1e-11, abs=0.0) or x == 0.0


def test_clean_handles_numpy_and_estimates():
    est = McEstimate(0.5, 0.01, 100, 3)
    out = reporting.clean({"a": np.arange(2), "b": est, "c": float("inf"), 1: (np.bool_(True),)})
    assert out == {"a": [0, 1], "b": {"mean": 0.5, "stderr": 0.01, "paths": 100, "seed": 3},
                   "c": "inf", "1": [True]}
    json.dumps(out)


def test_csv_header_only_and_round_trip(tmp_path):
    p = reporting.write_csv(tmp_path / "a" / "empty.csv", ("n", "mean"), [], {"seed": 1})
    assert p.read_text() == "# seed: 1\nn,mean\n"
    rows = [{"n": n, "mean": 1 / n, "extra": 0} for n in (1, 2, 3)]
    reporting.write_csv(tmp_path / "r.csv", ("n", "mean"), rows, {"b": [1, 2], "a": "x"})
    prov, back = reporting.read_csv(tmp_path / "r.csv")
    assert prov == {"a": "x", "b": [1, 2]}
    assert [r["n"] for r in back] == ["1", "2", "3"]
    assert list(back[0]) == ["n", "mean"]


def test_json_is_deterministic(tmp_path):
    data = {"z": 1.0 / 7, "a": [np.float32(0.1)]}
    a = reporting.write_json(tmp_path / "a.json", data, {"k": 1}).read_bytes()
    b = reporting.write_json(tmp_path / "b.json", dict(reversed(list(data.items()))), {"k": 1}).read_bytes()
    assert a == b
    prov, d = reporting.read_json(tmp_path / "a.json")
    assert prov == {"k": 1} and d["z"] == float("%.12g" % (1 / 7))


# configuration ---------------------------------------------------------------


def test_standard_config_parses():
    cfg = ExperimentConfig.from_dict(standard_config())
    assert cfg.problem.distribution.kind == "centered-exponential"
    assert cfg.n_list == (100, 400, 1600)
    assert cfg.grid.ny == 1024
    assert cfg.outputs.formats == ("csv", "json")
    assert cfg.acceptance.criteria == tuple(range(1, 10))


@pytest.mark.parametrize("patch, path", [
    ({"grid": {"ny": "many"}}, "grid.ny"),
    ({"mc": {"paths": 10}}, "mc.master_seed"),
    ({"mc": {"paths": 0, "master_seed": 1}}, "mc.paths"),
    ({"mc": {"paths": 10, "master_seed": 1, "oops": 1}}, "mc.oops"),
    ({"n_list": [10, 5, 20]}, "n_list"),
    ({"n_list": [10, -5]}, "n_list[1]"),
    ({"outputs": {"formats": ["xml"]}}, "outputs.formats[0]"),
    ({"acceptance": {"criteria": [10]}}, "acceptance.criteria[0]"),
    ({"acceptance": {"scale": "huge"}}, "acceptance.scale"),
    ({"fluctuation": {"cap": True}}, "fluctuation.cap"),
    ({"surprise": 1}, "surprise"),
])
def test_config_errors_name_the_key(patch, path):
    d = standard_config(**patch)
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(d)
    assert exc.value.path == path
    assert str(exc.value).startswith(path + ":")


def test_problem_errors_are_prefixed():
    d = standard_config()
    d["problem"]["distribution"] = {"kind": "cauchy"}
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(d)
    assert exc.value.path == "problem.distribution.kind"


def test_load_reports_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        ExperimentConfig.load(p)
    with pytest.raises(ConfigError, match="cannot read"):
        ExperimentConfig.load(tmp_path / "missing.json")


def test_digest_ignores_outputs():
    a = ExperimentConfig.from_dict(standard_config())
    b = ExperimentConfig.from_dict(standard_config(outputs={"directory": "elsewhere"}))
    c = ExperimentConfig.from_dict(standard_config(n_list=[100, 400]))
    assert a.digest() == b.digest() != c.digest()
