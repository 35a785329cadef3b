import csv
import json

import numpy as np

from nonexp.report import dumps, write_csv


def test_floats_round_trip_exactly():
    vals = [0.1, 1 / 3, 2.0 ** -40, 1e300, -7.25]
    text = dumps({"v": vals})
    assert json.loads(text)["v"] == vals
    assert '0.10000000000000001' in text


def test_integral_floats_keep_a_decimal_point():
    text = dumps({"b": 1.0, "i": 1, "n": np.float64(3)})
    obj = json.loads(text)
    assert isinstance(obj["b"], float) and isinstance(obj["i"], int) and isinstance(obj["n"], float)


def test_non_finite_becomes_null():
    obj = json.loads(dumps({"e": float("inf"), "m": float("nan"), "f": True, "a": np.array([1.5, 2.5])}))
    assert obj == {"e": None, "m": None, "f": True, "a": [1.5, 2.5]}
    assert dumps({}).endswith("\n")


def test_csv_floats_use_full_precision(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, [("s", "r"), (2, 0.1)])
    rows = list(csv.reader(p.open()))
    assert rows == [["s", "r"], ["2", "0.10000000000000001"]]
