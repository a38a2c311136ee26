"""Scenario documents: schema, validation and loading.

A scenario is a JSON document (schema version 1). See ``docs/formats.md``
for the field reference; ``SCENARIO_SCHEMA`` below is the machine-checked
part, cross-references are checked in ``scenario_from_dict``.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .fusion import ChannelEvent, gesture_event, voice_event
from .kinematics import ModelError, RobotModel, load_robot_model, model_from_dict
from .safety import SafetyParams

SCHEMA_VERSION = 1
DATA_DIR = Path(__file__).parent / "data"


class ScenarioError(ValueError):
    """Validation failure; ``field`` is a dotted path into the document."""

    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason

    def to_dict(self) -> dict:
        return {"error": "scenario", "field": self.field, "reason": self.reason}


_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_joints = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_waypoints = {"type": "array", "items": _joints, "minItems": 1}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "robot", "safety", "duration", "initial_q",
                 "areas", "place", "objects", "human"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "robot": {"type": ["string", "object"]},
        "safety": {
            "type": "object",
            "properties": {k: {"type": "number"} for k in ("C", "Z_d", "Z_r", "a_max", "T_r", "v_h_filter_alpha")}
            | {"v_h_clamp_nonneg": {"type": "boolean"}},
            "additionalProperties": False,
        },
        "safety_enabled": {"type": "boolean"},
        "rates": {
            "type": "object",
            "properties": {k: {"type": "number", "exclusiveMinimum": 0} for k in ("control", "capture", "gesture")},
            "additionalProperties": False,
        },
        "duration": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer"},
        "recognition_time": {"type": "number", "exclusiveMinimum": 0},
        "s_dot_cap": {"type": "number", "exclusiveMinimum": 0},
        "contact_threshold": {"type": "number", "minimum": 0},
        "estop_hold": {"type": "number", "minimum": 0},
        "keypoint_noise": {"type": "number", "minimum": 0},
        "initial_q": _joints,
        "areas": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {
                "type": "object", "required": ["waypoints"],
                "properties": {"waypoints": _waypoints},
            },
        },
        "place": {"type": "object", "required": ["waypoints"], "properties": {"waypoints": _waypoints}},
        "objects": {"type": "object", "additionalProperties": {"type": "string"}},
        "workspace": {
            "type": "object",
            "properties": {"lateral_axis": _vec3, "lat_threshold": {"type": "number", "minimum": 0}},
        },
        "human": {
            "type": "object",
            "required": ["frames"],
            "properties": {
                "bones": {"type": "array", "items": {"type": "array", "items": {"type": "string"},
                                                     "minItems": 2, "maxItems": 2}},
                "arm": {"type": "array", "items": {"type": "string"}, "minItems": 3, "maxItems": 3},
                "frames": {
                    "type": "array", "minItems": 1,
                    "items": {
                        "type": "object", "required": ["t", "keypoints"],
                        "properties": {"t": {"type": "number"},
                                       "keypoints": {"type": "object", "minProperties": 1,
                                                     "additionalProperties": _vec3}},
                    },
                },
            },
        },
        "events": {
            "type": "array",
            "items": {
                "type": "object", "required": ["t", "source"],
                "properties": {
                    "t": {"type": "number", "minimum": 0},
                    "source": {"enum": ["voice", "gesture"]},
                    "utterance": {"type": "string"},
                    "intent": {"type": "string"},
                    "slots": {"type": "object", "additionalProperties": {"type": "string"}},
                    "label": {"type": "string"},
                    "confidence": {"type": "number", "minimum": 0, "maximum": 1},
                    "keypoints": {"type": "object", "additionalProperties": _vec3},
                },
            },
        },
    },
}


class HumanMotion:
    """Keypoint frames replayed with piecewise-linear interpolation, held at the ends."""

    def __init__(self, names, times, frames, bones=(), arm=("shoulder", "elbow", "wrist")):
        self.names = list(names)
        self.times = np.asarray(times, dtype=float)
        self.frames = np.asarray(frames, dtype=float)
        self.bones = tuple(bones)
        self.arm = tuple(arm)

    def sample(self, t: float) -> np.ndarray:
        T = self.times
        if t <= T[0]:
            return self.frames[0].copy()
        if t >= T[-1]:
            return self.frames[-1].copy()
        k = int(np.searchsorted(T, t, side="right")) - 1
        w = (t - T[k]) / (T[k + 1] - T[k])
        return (1.0 - w) * self.frames[k] + w * self.frames[k + 1]

    def named(self, points: np.ndarray) -> dict[str, list[float]]:
        return {n: [float(x) for x in p] for n, p in zip(self.names, points)}


@dataclass(eq=False)
class Scenario:
    name: str
    model: RobotModel
    params: SafetyParams
    safety_enabled: bool
    control_hz: float
    capture_hz: float
    gesture_hz: float
    duration: float
    initial_q: np.ndarray
    areas: dict[str, np.ndarray]
    place: np.ndarray
    objects: dict[str, str]
    human: HumanMotion
    events: list[ChannelEvent]
    seed: int = 0
    recognition_time: float = 2.0
    s_dot_cap: float = 1.0
    contact_threshold: float = 0.01
    estop_hold: float = 2.0
    keypoint_noise: float = 0.0
    lateral_axis: tuple = (0.0, 1.0, 0.0)
    lat_threshold: float = 0.05
    document: dict = field(default_factory=dict, repr=False)

    @property
    def n_cycles(self) -> int:
        return int(round(self.duration * self.control_hz))

    def content_hash(self) -> str:
        """Hash of the document, ignoring the safety switch (safe/unsafe runs share it)."""
        doc = {k: v for k, v in self.document.items() if k != "safety_enabled"}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _resolve_robot(ref, base: Path | None) -> tuple[RobotModel, dict]:
    if isinstance(ref, dict):
        return model_from_dict(ref), ref
    candidates = []
    if base is not None:
        candidates.append(base / ref)
    candidates.append(DATA_DIR / ref)
    for path in candidates:
        if path.is_file():
            with open(path) as fh:
                doc = json.load(fh)
            return model_from_dict(doc), doc
    raise ScenarioError("robot", f"robot model file {ref!r} not found")


def scenario_from_dict(doc: dict, base_dir: Path | None = None) -> Scenario:
    if "safety" not in doc and isinstance(doc, dict):
        raise ScenarioError("safety", "missing required block 'safety'")
    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(where, exc.message) from None

    try:
        model, robot_doc = _resolve_robot(doc["robot"], base_dir)
    except ModelError as exc:
        raise ScenarioError("robot", str(exc)) from None
    try:
        params = SafetyParams(**doc["safety"])
    except ValueError as exc:
        raise ScenarioError("safety", str(exc)) from None

    rates = doc.get("rates", {})
    control = float(rates.get("control", 500.0))
    capture = float(rates.get("capture", 240.0))
    gesture = float(rates.get("gesture", 15.0))
    if not control >= capture >= gesture:
        raise ScenarioError("rates", "need control >= capture >= gesture")

    n = model.n

    def joints(value, where):
        arr = np.asarray(value, dtype=float)
        if arr.shape[-1] != n:
            raise ScenarioError(where, f"expected {n} joint values per configuration")
        return arr

    initial_q = joints(doc["initial_q"], "initial_q")
    areas = {name: joints(a["waypoints"], f"areas.{name}.waypoints") for name, a in doc["areas"].items()}
    place = joints(doc["place"]["waypoints"], "place.waypoints")

    objects = dict(doc["objects"])
    for obj, area in objects.items():
        if area not in areas:
            raise ScenarioError(f"objects.{obj}", f"unknown area {area!r}")

    hdoc = doc["human"]
    frames = hdoc["frames"]
    names = sorted(frames[0]["keypoints"])
    times = [float(f["t"]) for f in frames]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ScenarioError("human.frames", "frames must be strictly time-sorted")
    pts = []
    for i, f in enumerate(frames):
        if sorted(f["keypoints"]) != names:
            raise ScenarioError(f"human.frames.{i}", "every frame must list the same keypoints")
        pts.append([f["keypoints"][k] for k in names])
    bones = []
    for a, b in hdoc.get("bones", []):
        if a not in names or b not in names:
            raise ScenarioError("human.bones", f"bone ({a}, {b}) references an unknown keypoint")
        bones.append((names.index(a), names.index(b)))
    arm = tuple(hdoc.get("arm", ("shoulder", "elbow", "wrist")))
    human = HumanMotion(names, times, pts, bones, arm)

    obj_names = sorted(objects)
    events = []
    last = {}
    for i, e in enumerate(doc.get("events", [])):
        t = float(e["t"])
        if t < last.get(e["source"], -np.inf):
            raise ScenarioError(f"events.{i}", "events must be time-sorted per source")
        last[e["source"]] = t
        if e["source"] == "voice":
            if "utterance" not in e:
                raise ScenarioError(f"events.{i}", "voice event needs an utterance")
            slots = e.get("slots")
            ev = voice_event(t, e["utterance"], e.get("intent"), slots, obj_names)
            obj = ev.voice.slot("object")
            if obj is not None and obj not in objects:
                raise ScenarioError(f"events.{i}", f"unknown object {obj!r}")
        else:
            if "label" not in e:
                raise ScenarioError(f"events.{i}", "gesture event needs a label")
            kp = e.get("keypoints")
            if kp is not None and not set(arm) <= set(kp):
                raise ScenarioError(f"events.{i}", f"gesture keypoints must include {list(arm)}")
            ev = gesture_event(t, e["label"], e.get("confidence", 1.0), kp)
        events.append(ev)

    ws = doc.get("workspace", {})
    stored = copy.deepcopy(doc)
    stored["robot"] = robot_doc
    return Scenario(
        name=doc.get("name", "scenario"),
        model=model,
        params=params,
        safety_enabled=bool(doc.get("safety_enabled", True)),
        control_hz=control,
        capture_hz=capture,
        gesture_hz=gesture,
        duration=float(doc["duration"]),
        initial_q=initial_q,
        areas=areas,
        place=place,
        objects=objects,
        human=human,
        events=events,
        seed=int(doc.get("seed", 0)),
        recognition_time=float(doc.get("recognition_time", 2.0)),
        s_dot_cap=float(doc.get("s_dot_cap", 1.0)),
        contact_threshold=float(doc.get("contact_threshold", 0.01)),
        estop_hold=float(doc.get("estop_hold", 2.0)),
        keypoint_noise=float(doc.get("keypoint_noise", 0.0)),
        lateral_axis=tuple(ws.get("lateral_axis", (0.0, 1.0, 0.0))),
        lat_threshold=float(ws.get("lat_threshold", 0.05)),
        document=stored,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ScenarioError("<file>", f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError("<file>", f"invalid JSON: {exc}") from None
    return scenario_from_dict(doc, path.parent)


def bundled_scenario_path(name: str = "pantry") -> Path:
    return DATA_DIR / f"{name}.json"


def bundled_robot_model(name: str = "ur10e") -> RobotModel:
    return load_robot_model(DATA_DIR / f"{name}.json")
