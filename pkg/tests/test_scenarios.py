import json
import time

import pytest

from lossnet.cli import run_method
from lossnet.errors import PreconditionError
from lossnet.scenarios import LIBRARY_NAMES, Scenario, get_scenario, load_scenario


@pytest.mark.parametrize("name", LIBRARY_NAMES)
def test_round_trip(name):
    sc = get_scenario(name)
    again = Scenario.from_json(sc.to_json())
    assert again.to_dict() == sc.to_dict()
    assert json.loads(again.to_json()) == json.loads(sc.to_json())


@pytest.mark.parametrize("name", LIBRARY_NAMES)
def test_library_methods_run(name):
    sc = get_scenario(name)
    t0 = time.perf_counter()
    for m in sc.methods:
        out = run_method(sc, m)
        if out.P is not None:
            assert all(0.0 <= p <= 1.0 for p in out.P)
    assert time.perf_counter() - t0 < 60.0


def test_load_from_file(tmp_path):
    path = tmp_path / "x.json"
    path.write_text(get_scenario("triangle_repacking").to_json())
    assert load_scenario(str(path)).name == "triangle_repacking"


@pytest.mark.parametrize(
    "doc",
    [
        "{not json",
        json.dumps({"classes": [{"nu": 1.0}], "capacities": [1], "requirements": [[1]], "methods": ["magic"]}),
        json.dumps({"topology": {"type": "ring"}}),
        json.dumps({"topology": {"type": "generic"}}),
        json.dumps({"classes": [{"nu": 1.0}], "capacities": [1], "requirements": [[1]], "scale": -1}),
    ],
)
def test_malformed_documents(doc):
    with pytest.raises(PreconditionError):
        Scenario.from_json(doc)


def test_scale_applies_to_rates_and_capacities():
    sc = get_scenario("hunt_overload")
    assert list(sc.spec.C) == [100, 100]
    assert list(sc.base_spec.C) == [2, 2]
