import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from elapsed_stability.errors import ConfigurationError
from elapsed_stability.fileio import (format_value, load_config, parse_config, parse_value, read_csv, read_summary,
                                      write_csv, write_summary)


def test_parse_config_comments_and_lines():
    cfg = parse_config("# header\n\nmodel.kind = satquad\nd = 0.05  # delay\n", "run.cfg")
    assert cfg.get_str("model.kind") == "satquad"
    assert cfg.get_float("d") == 0.05
    assert cfg.where("d") == "run.cfg:4"


@pytest.mark.parametrize("text, fragment", [
    ("d 0.05\n", "run.cfg:1"),
    ("a = 1\nbad key = 2\n", "run.cfg:2"),
    ("d =\n", "empty value"),
    ("d = 1\nd = 2\n", "duplicate"),
])
def test_parse_config_errors_name_the_line(text, fragment):
    with pytest.raises(ConfigurationError, match=fragment):
        parse_config(text, "run.cfg")


def test_reject_unknown_lists_locations():
    cfg = parse_config("d = 1\nmodel.colour = red\n", "run.cfg")
    with pytest.raises(ConfigurationError, match=r"model.colour \(run.cfg:2\)"):
        cfg.reject_unknown(["d"])


def test_typed_getters():
    cfg = parse_config("x = 2.5\nn = 7\nflag = yes\nlist = 0.1, 0.5,2\nkind = a\nneg = -1\nbad = abc\n")
    assert cfg.get_float("x", positive=True) == 2.5
    assert cfg.get_int("n") == 7
    assert cfg.get_bool("flag") is True
    assert cfg.get_floats("list") == [0.1, 0.5, 2.0]
    assert cfg.get_float("missing", 3.0) == 3.0
    with pytest.raises(ConfigurationError, match="positive"):
        cfg.get_float("neg", positive=True)
    with pytest.raises(ConfigurationError, match="number"):
        cfg.get_float("bad")
    with pytest.raises(ConfigurationError, match="one of"):
        cfg.get_str("kind", choices=("b", "c"))
    with pytest.raises(ConfigurationError, match="at least"):
        cfg.get_int("n", minimum=10)
    with pytest.raises(ConfigurationError, match="missing"):
        cfg.get_float("missing")
    with pytest.raises(ConfigurationError, match="finite"):
        parse_config("y = inf\n").get_float("y")


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config(tmp_path / "nope.cfg")


def test_format_and_parse_values():
    assert format_value(True) == "true" and format_value(np.bool_(False)) == "false"
    assert format_value(np.int64(3)) == "3"
    assert format_value(0.1) == "0.1"
    assert format_value(None) == ""
    assert parse_value("true") is True and parse_value("") is None
    assert parse_value("7") == 7 and parse_value("Stable") == "Stable"
    assert math.isnan(parse_value("nan"))


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_text_round_trips_exactly(x):
    assert parse_value(format_value(x)) == x


def test_csv_round_trip(tmp_path):
    rows = [(0.1, 1, "Stable", True), (1 / 3, 2, "Unstable", False), (np.float64(2.0 ** -40), 3, "x", True)]
    path = write_csv(tmp_path / "t.csv", ["b", "id", "verdict", "flag"], rows, {"model": {"b": 0.43}, "d": 0.05})
    table = read_csv(path)
    assert table.columns == ["b", "id", "verdict", "flag"]
    assert table.column("b") == [0.1, 1 / 3, 2.0 ** -40]
    assert table.column("flag") == [True, False, True]
    assert table.meta == {"d": "0.05", "model": '{"b": 0.43}'}


def test_csv_rejects_ragged_rows(tmp_path):
    with pytest.raises(ValueError):
        write_csv(tmp_path / "t.csv", ["a", "b"], [(1,)])


def test_csv_is_deterministic(tmp_path):
    rows = [(x, x * x) for x in np.linspace(0, 1, 11)]
    a = write_csv(tmp_path / "a.csv", ["x", "y"], rows, {"z": 1, "a": 2}).read_bytes()
    b = write_csv(tmp_path / "b.csv", ["x", "y"], rows, {"a": 2, "z": 1}).read_bytes()
    assert a == b


def test_summary_round_trip(tmp_path):
    summary = {"r": np.float64(0.5), "n": np.int64(3), "z": 1 + 2j, "bad": float("nan"), "list": (1, 2)}
    data = read_summary(write_summary(tmp_path / "s.json", summary))
    assert data == {"r": 0.5, "n": 3, "z": [1.0, 2.0], "bad": None, "list": [1, 2]}
