import csv
import io
import json

import numpy as np
import pytest

from lossnet.cli import compare, main
from lossnet.exact import erlang_b
from lossnet.model import NetworkSpec, network_document
from lossnet.scenarios import get_scenario


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_run_exact_json(capsys):
    code, out, _ = run(["run", "--method", "exact", "single_link"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["result"]["B"][0] == pytest.approx(erlang_b(8.0, 10), abs=1e-12)


def test_run_csv_format(capsys):
    code, out, _ = run(["run", "--method", "kdr", "single_link", "--format", "csv"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert float(rows[0]["B"]) == pytest.approx(erlang_b(8.0, 10), abs=1e-12)


def test_run_writes_files(tmp_path, capsys):
    code, _, _ = run(["run", "--method", "simulate", "single_link", "--seed", "3", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert (tmp_path / "single_link_simulate.json").exists()
    rows = list(csv.DictReader(open(tmp_path / "single_link_simulate_classes.csv")))
    assert "P_halfwidth" in rows[0]


def test_scenario_file_and_errors(tmp_path, capsys):
    spec = NetworkSpec.build([2.0], [[2]], [4])
    path = tmp_path / "net.json"
    path.write_text(json.dumps({"name": "wide", **network_document(spec)}))
    assert run(["run", "--method", "exact", str(path)], capsys)[0] == 0
    code, _, err = run(["run", "--method", "efpa", str(path)], capsys)
    assert code == 2 and "NotZeroOne" in err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"classes": [{"nu": 1, "mu": 0}], "capacities": [2], "requirements": [[1]]}))
    code, _, err = run(["run", "--method", "exact", str(bad)], capsys)
    assert code == 2 and "NonPositiveServiceRate" in err
    code, _, err = run(["run", "--method", "exact", "no_such_scenario"], capsys)
    assert code == 2


def test_simulate_needs_seed(tmp_path, capsys):
    spec = NetworkSpec.build([2.0], [[1]], [2])
    path = tmp_path / "s.json"
    path.write_text(json.dumps(network_document(spec)))
    code, _, err = run(["run", "--method", "simulate", str(path)], capsys)
    assert code == 2 and "seed" in err


def test_compare_table_and_json(capsys):
    code, out, _ = run(["compare", "single_link", "--methods", "exact,efpa,kelly"], capsys)
    assert code == 0 and "dev_efpa" in out
    code, out, _ = run(["compare", "single_link", "--methods", "exact,kelly", "--sweep", "1,4", "--format", "json"], capsys)
    rows = json.loads(out)["rows"]
    assert [r["N"] for r in rows] == [1, 4]
    assert rows[1]["dev_kelly"] < rows[0]["dev_kelly"]


def test_compare_against_simulation():
    table = compare(get_scenario("single_link"), ["simulate", "exact"])
    row = table["rows"][0]
    assert table["reference"] == "exact"
    assert row["dev_simulate"] <= 4 * row["halfwidth_simulate"]


def test_library_commands(tmp_path, capsys):
    code, out, _ = run(["library", "list"], capsys)
    assert code == 0 and "hunt_overload" in out
    code, _, _ = run(["library", "export", "all", "--out", str(tmp_path)], capsys)
    assert code == 0 and (tmp_path / "star_k_links.json").exists()
    code, out, _ = run(["library", "export", "two_class_reservation"], capsys)
    assert json.loads(out)["policy"]["type"] == "reservation"


def test_fluid_method_outputs(tmp_path, capsys):
    code, _, _ = run(["run", "--method", "fluid", "hunt_overload", "--out", str(tmp_path)], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "hunt_overload_fluid.json").read_text())
    pts = [np.array(p["x"]) for p in doc["result"]["fixed_points"]]
    assert len(pts) == 2
    assert any(name.endswith(".csv") and "trajectory" in name for name in (p.name for p in tmp_path.iterdir()))
