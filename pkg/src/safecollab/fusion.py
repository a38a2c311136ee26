"""Multimodal command fusion for the voice and gesture channels.

Events go into a recognition window. The window opens with the first
event and collects whatever arrives in the next ``recognition_time``
seconds. When it closes, its contents are encoded into a fixed feature
sequence and classified into a single command.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

VOICE = "voice"
GESTURE = "gesture"
SOURCE_ORDER = {VOICE: 0, GESTURE: 1}

INSTRUCTION = "instruction"
ERROR = "error"
RESPONSE = "response"

INTENTS = ("fetch_object", "where_is", "unknown")
GESTURES = ("point_at", "start", "stop", "confirm", "unknown")
AREAS = ("left", "right")

DEFAULT_RECOGNITION_TIME = 2.0
DEFAULT_LAT_THRESHOLD = 0.05


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class VoicePayload:
    utterance: str
    intent: str
    slots: tuple[tuple[str, str], ...] = ()

    def slot(self, name: str) -> str | None:
        return dict(self.slots).get(name)


@dataclass(frozen=True)
class GesturePayload:
    label: str
    confidence: float = 1.0
    keypoints: tuple[tuple[str, tuple[float, float, float]], ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise FusionError(f"gesture confidence {self.confidence} outside [0, 1]")

    def point(self, name: str) -> np.ndarray | None:
        kp = dict(self.keypoints)
        return np.asarray(kp[name], dtype=float) if name in kp else None


@dataclass(frozen=True)
class ChannelEvent:
    source: str
    timestamp: float
    voice: VoicePayload | None = None
    gesture: GesturePayload | None = None

    def __post_init__(self):
        if self.source not in SOURCE_ORDER:
            raise FusionError(f"unknown source {self.source!r}")
        if not np.isfinite(self.timestamp):
            raise FusionError("event timestamp must be finite")
        want_voice = self.source == VOICE
        if want_voice != (self.voice is not None) or want_voice == (self.gesture is not None):
            raise FusionError(f"{self.source} event must carry exactly one {self.source} payload")


def voice_event(t: float, utterance: str, intent: str | None = None,
                slots: Mapping[str, str] | None = None, objects: Sequence[str] = ()) -> ChannelEvent:
    """Voice event; intent and slots are parsed from the utterance when not given."""
    if intent is None:
        intent, parsed = parse_utterance(utterance, objects)
        slots = {**parsed, **(slots or {})}
    return ChannelEvent(VOICE, float(t), voice=VoicePayload(utterance, intent, tuple(sorted((slots or {}).items()))))


def gesture_event(t: float, label: str, confidence: float = 1.0,
                  keypoints: Mapping[str, Sequence[float]] | None = None) -> ChannelEvent:
    kp = tuple(sorted((k, tuple(float(x) for x in v)) for k, v in (keypoints or {}).items()))
    return ChannelEvent(GESTURE, float(t), gesture=GesturePayload(label, float(confidence), kp))


_FETCH_VERBS = ("fetch", "bring", "take", "give", "pick", "get", "hand")
_QUERY_WORDS = ("where",)


def parse_utterance(text: str, objects: Sequence[str] = ()) -> tuple[str, dict[str, str]]:
    """Keyword intent/slot extraction standing in for the voice assistant's NLU."""
    words = re.findall(r"[a-z]+", text.lower())
    slots: dict[str, str] = {}
    for area in AREAS:
        if area in words:
            slots["area"] = area
            break
    for obj in objects:
        if obj.lower() in words:
            slots["object"] = obj
            break
    if any(w in words for w in _QUERY_WORDS):
        return "where_is", slots
    if any(w in words for w in _FETCH_VERBS):
        return "fetch_object", slots
    return "unknown", slots


# --- raw functions -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class PointAtResult:
    direction: np.ndarray
    area: str
    fit_residual: float


def point_at(shoulder, elbow, wrist, lateral_axis=(0.0, 1.0, 0.0),
             lat_threshold: float = DEFAULT_LAT_THRESHOLD) -> PointAtResult:
    """Pointing direction from the best-fit line through shoulder, elbow and wrist.

    The direction is the principal axis of the centred points, oriented
    shoulder to wrist. Positive lateral component means ``left``.
    """
    P = np.array([shoulder, elbow, wrist], dtype=float)
    if not np.all(np.isfinite(P)):
        raise FusionError("keypoints must be finite")
    if min(np.linalg.norm(P[0] - P[1]), np.linalg.norm(P[1] - P[2]), np.linalg.norm(P[0] - P[2])) < 1e-9:
        raise FusionError("shoulder, elbow and wrist must be distinct")
    X = P - P.mean(axis=0)
    _, _, Vt = np.linalg.svd(X)
    d = Vt[0]
    if d @ (P[2] - P[0]) < 0:
        d = -d
    d = d / np.linalg.norm(d)
    perp = X - np.outer(X @ d, d)
    resid = float(np.sqrt(np.mean(np.sum(perp * perp, axis=1))))
    lat_axis = np.asarray(lateral_axis, dtype=float)
    lat = float(d @ (lat_axis / np.linalg.norm(lat_axis)))
    if lat > lat_threshold:
        area = "left"
    elif lat < -lat_threshold:
        area = "right"
    else:
        area = "ambiguous"
    return PointAtResult(d, area, resid)


# --- windows -----------------------------------------------------------

@dataclass
class FusionWindow:
    opened_at: float
    recognition_time: float = DEFAULT_RECOGNITION_TIME
    events: list[ChannelEvent] = field(default_factory=list)
    state: str = "open"

    @property
    def closes_at(self) -> float:
        return self.opened_at + self.recognition_time

    def ordered(self) -> list[ChannelEvent]:
        # stable sort keeps arrival order among exact ties within a source
        return sorted(self.events, key=lambda e: (e.timestamp, SOURCE_ORDER[e.source]))


@dataclass(frozen=True)
class MultimodalCommand:
    kind: str
    object: str | None = None
    area: str | None = None
    feedback_text: str | None = None
    window_span: tuple[float, float] = (0.0, 0.0)
    missing: str | None = None

    def __post_init__(self):
        if self.kind not in (INSTRUCTION, ERROR, RESPONSE):
            raise FusionError(f"unknown command kind {self.kind!r}")
        if self.kind == INSTRUCTION and (self.object is None or self.area is None):
            raise FusionError("an instruction needs both object and area")
        if self.kind == ERROR and not self.feedback_text:
            raise FusionError("an error command needs feedback text")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "object": self.object, "area": self.area,
                "feedback_text": self.feedback_text, "window_span": list(self.window_span),
                "missing": self.missing}


FeatureRow = tuple  # (source tag, relative time, label id, summary)


def encode_window(w: FusionWindow) -> tuple[FeatureRow, ...]:
    """Fixed-order feature sequence for a closed window.

    One row per event: (source id, time since window opened, label id,
    summary). Voice summaries are the sorted slot items; gesture summaries
    carry confidence and the sorted keypoint snapshot.
    """
    assert w.events, "cannot encode an empty window"
    rows = []
    for e in w.ordered():
        rel = round(e.timestamp - w.opened_at, 9)
        if e.source == VOICE:
            label = INTENTS.index(e.voice.intent) if e.voice.intent in INTENTS else INTENTS.index("unknown")
            summary = e.voice.slots
        else:
            g = e.gesture
            label = GESTURES.index(g.label) if g.label in GESTURES else GESTURES.index("unknown")
            summary = (("confidence", g.confidence),) + g.keypoints
        rows.append((SOURCE_ORDER[e.source], rel, label, summary))
    return tuple(rows)


def encoding_bytes(encoding) -> bytes:
    return json.dumps(encoding, separators=(",", ":")).encode()


# --- classification ----------------------------------------------------

TEMPLATES = {
    "instruction": "Picking {object} from the {area} area.",
    "missing_area": "Which area should I pick from?",
    "missing_object": "Which object should I pick?",
    "not_understood": "Sorry, I did not understand the request.",
    "unknown_location": "I do not know where the {object} is.",
    "location": "The {object} is in the {area} area.",
}

# encoding, raw results -> [(command, score), ...] in declaration order
Classifier = Callable[[tuple, Sequence], Sequence[tuple[MultimodalCommand, float]]]


def _error(missing: str, span) -> MultimodalCommand:
    return MultimodalCommand(ERROR, feedback_text=TEMPLATES[missing], window_span=span, missing=missing)


class RuleClassifier:
    """Deterministic rule table producing a one-hot command distribution.

    ``knowledge`` maps object labels to areas and answers location queries.
    When voice names an area, it takes precedence over a pointing gesture.
    """

    def __init__(self, knowledge: Mapping[str, str] | None = None,
                 min_gesture_confidence: float = 0.5):
        self.knowledge = dict(knowledge or {})
        self.min_gesture_confidence = min_gesture_confidence

    def decide(self, encoding, raw_results) -> MultimodalCommand:
        span = (0.0, 0.0)
        voice_rows = [r for r in encoding if r[0] == SOURCE_ORDER[VOICE]]
        intent = None
        slots: dict[str, str] = {}
        for r in voice_rows:
            name = INTENTS[r[2]]
            if intent is None or intent == "unknown":
                intent = name
            for k, v in r[3]:
                slots.setdefault(k, v)

        # latest confident, unambiguous pointing wins
        point_area = None
        pointed = False
        for r, res in zip((r for r in encoding if r[0] == SOURCE_ORDER[GESTURE]), raw_results):
            if GESTURES[r[2]] != "point_at" or dict(r[3])["confidence"] < self.min_gesture_confidence:
                continue
            pointed = True
            if res is not None and res.area in AREAS:
                point_area = res.area

        obj = slots.get("object")
        area = slots.get("area")
        if intent is None:
            if pointed:
                return _error("missing_object", span)
            return _error("not_understood", span)
        if intent == "where_is":
            if obj is None:
                return _error("missing_object", span)
            where = self.knowledge.get(obj)
            text = (TEMPLATES["location"].format(object=obj, area=where) if where
                    else TEMPLATES["unknown_location"].format(object=obj))
            return MultimodalCommand(RESPONSE, object=obj, area=where, feedback_text=text, window_span=span)
        if intent == "fetch_object":
            if obj is None:
                return _error("missing_object", span)
            area = area or point_area
            if area is None:
                return _error("missing_area", span)
            return MultimodalCommand(INSTRUCTION, object=obj, area=area, window_span=span)
        return _error("not_understood", span)

    def __call__(self, encoding, raw_results):
        return [(self.decide(encoding, raw_results), 1.0)]


def fuse(encoding, raw_results: Sequence, classifier: Classifier | None = None,
         span=(0.0, 0.0)) -> MultimodalCommand:
    """Classify an encoded window. Argmax over the distribution, first wins ties."""
    clf = classifier or RuleClassifier()
    dist = list(clf(encoding, raw_results))
    if not dist:
        return _error("not_understood", span)
    best_cmd, best_p = dist[0]
    for cmd, p in dist[1:]:
        if p > best_p:
            best_cmd, best_p = cmd, p
    return replace(best_cmd, window_span=tuple(span))


def feedback_text(cmd: MultimodalCommand) -> str:
    """Sentence spoken back to the operator for a fused command."""
    if cmd.kind == INSTRUCTION:
        return TEMPLATES["instruction"].format(object=cmd.object, area=cmd.area)
    return cmd.feedback_text or TEMPLATES["not_understood"]


# --- engine ------------------------------------------------------------

@dataclass(frozen=True)
class FusionOutput:
    command: MultimodalCommand
    encoding: tuple
    closed_at: float


class FusionEngine:
    """Single-owner window manager.

    ``ingest`` takes events in timestamp order per source; ``poll(now)``
    closes the open window once ``now`` reaches its deadline. An event
    landing exactly on the deadline starts the next window.
    """

    def __init__(self, recognition_time: float = DEFAULT_RECOGNITION_TIME,
                 classifier: Classifier | None = None, lateral_axis=(0.0, 1.0, 0.0),
                 lat_threshold: float = DEFAULT_LAT_THRESHOLD,
                 arm_keypoints=("shoulder", "elbow", "wrist")):
        if recognition_time <= 0:
            raise FusionError("recognition time must be positive")
        self.recognition_time = recognition_time
        self.classifier = classifier or RuleClassifier()
        self.lateral_axis = lateral_axis
        self.lat_threshold = lat_threshold
        self.arm_keypoints = tuple(arm_keypoints)
        self.window: FusionWindow | None = None
        self.closed: list[FusionWindow] = []
        self._last_ts: dict[str, float] = {}

    def raw_results(self, w: FusionWindow) -> list[PointAtResult | None]:
        out = []
        for e in w.ordered():
            if e.source != GESTURE:
                continue
            pts = [e.gesture.point(k) for k in self.arm_keypoints]
            if e.gesture.label == "point_at" and all(p is not None for p in pts):
                try:
                    out.append(point_at(*pts, lateral_axis=self.lateral_axis, lat_threshold=self.lat_threshold))
                except FusionError:
                    out.append(None)
            else:
                out.append(None)
        return out

    def _finalize(self) -> FusionOutput:
        w = self.window
        w.state = "closed"
        self.window = None
        self.closed.append(w)
        enc = encode_window(w)
        span = (w.opened_at, w.closes_at)
        cmd = fuse(enc, self.raw_results(w), self.classifier, span)
        return FusionOutput(cmd, enc, w.closes_at)

    def ingest(self, e: ChannelEvent) -> list[FusionOutput]:
        last = self._last_ts.get(e.source)
        if last is not None and e.timestamp < last:
            raise FusionError(f"{e.source} timestamp went backwards: {e.timestamp} < {last}")
        if self.window is not None and e.timestamp < self.window.opened_at:
            raise FusionError("event predates the open window; merge channels by timestamp first")
        self._last_ts[e.source] = e.timestamp
        out = []
        if self.window is not None and e.timestamp >= self.window.closes_at:
            out.append(self._finalize())
        if self.window is None:
            self.window = FusionWindow(e.timestamp, self.recognition_time)
        self.window.events.append(e)
        return out

    def poll(self, now: float) -> list[FusionOutput]:
        if self.window is not None and now >= self.window.closes_at:
            return [self._finalize()]
        return []

    def flush(self) -> list[FusionOutput]:
        return [self._finalize()] if self.window is not None else []


def merge_streams(*streams: Sequence[ChannelEvent]) -> list[ChannelEvent]:
    """Merge per-channel streams into one queue ordered by timestamp, then source."""
    tagged = [(e.timestamp, SOURCE_ORDER[e.source], k, i, e)
              for k, s in enumerate(streams) for i, e in enumerate(s)]
    return [t[-1] for t in sorted(tagged, key=lambda t: t[:4])]
