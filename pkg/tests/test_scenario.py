import json

import numpy as np
import pytest

from safecollab.scenario import ScenarioError, bundled_scenario_path, load_scenario
from conftest import pantry_doc, scenario_of


def test_bundled_scenario_loads(pantry):
    assert sorted(pantry.areas) == ["left", "right"]
    assert len(pantry.objects) >= 2
    assert (pantry.control_hz, pantry.capture_hz, pantry.gesture_hz) == (500, 240, 15)
    assert pantry.n_cycles == 12000
    assert pantry.model.n == 6


def test_missing_safety_block_is_named():
    doc = pantry_doc()
    del doc["safety"]
    with pytest.raises(ScenarioError) as err:
        scenario_of(doc)
    assert err.value.field == "safety"


def test_permuted_rates_rejected():
    doc = pantry_doc()
    doc["rates"] = {"control": 15, "capture": 240, "gesture": 500}
    with pytest.raises(ScenarioError) as err:
        scenario_of(doc)
    assert err.value.field == "rates"


@pytest.mark.parametrize("mutate,field", [
    (lambda d: d["objects"].update(tea="middle"), "objects.tea"),
    (lambda d: d["human"]["frames"].reverse(), "human.frames"),
    (lambda d: d["human"]["bones"].append(["head", "tail"]), "human.bones"),
    (lambda d: d["events"].append({"t": 22.0, "source": "voice", "utterance": "x",
                                   "intent": "fetch_object", "slots": {"object": "tea"}}), "events.5"),
    (lambda d: d.update(initial_q=[0.0] * 5), "initial_q"),
    (lambda d: d.update(schema_version=2), "schema_version"),
    (lambda d: d["safety"].update(C=-1.0), "safety"),
    (lambda d: d.update(duration=-1), "duration"),
])
def test_invalid_documents(mutate, field):
    doc = pantry_doc()
    mutate(doc)
    with pytest.raises(ScenarioError) as err:
        scenario_of(doc)
    assert err.value.field == field
    assert err.value.to_dict()["field"] == field


def test_missing_file():
    with pytest.raises(ScenarioError):
        load_scenario("/no/such/scenario.json")


def test_human_interpolation_and_hold(pantry):
    h = pantry.human
    t0, t1 = h.times[0], h.times[1]
    mid = h.sample(0.5 * (t0 + t1))
    np.testing.assert_allclose(mid, 0.5 * (h.frames[0] + h.frames[1]), atol=1e-12)
    np.testing.assert_array_equal(h.sample(-5.0), h.frames[0])
    np.testing.assert_array_equal(h.sample(1e6), h.frames[-1])


def test_content_hash_ignores_safety_flag():
    a = pantry_doc()
    b = pantry_doc()
    b["safety_enabled"] = False
    assert scenario_of(a).content_hash() == scenario_of(b).content_hash()
    b["seed"] = 99
    assert scenario_of(a).content_hash() != scenario_of(b).content_hash()


def test_bundled_file_is_valid_json():
    json.loads(bundled_scenario_path().read_text())
