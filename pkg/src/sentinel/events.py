"""Event records emitted by the detection pipeline and their NDJSON form.

Every record serializes to one JSON object per line with a fixed key
order, so identical runs produce byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
import json
import math
from typing import Optional

from .classifier import ErrorClass
from .errors import Malformed

ACTIONS = ("Keep", "Increment", "Recompute")


@dataclass(frozen=True)
class GedEvent:
    """A flagged sample. ``estimate`` is the filter's prediction for it."""

    t: int
    sensor_id: str
    gamma: float
    threshold: float
    flagged: bool = True
    estimate: Optional[float] = None
    kind = "ged"


@dataclass(frozen=True)
class EpisodeEvent:
    """Episode notification. Open events carry only the start; closed ones
    carry the span, window statistics and class."""

    state: str
    sensor_id: str
    start_t: int
    end_t: int
    error_class: Optional[str] = None
    mean_dev: Optional[float] = None
    std_ratio: Optional[float] = None
    count: Optional[int] = None
    gamma_peak: Optional[float] = None
    low_confidence: Optional[bool] = None
    model_generation: Optional[int] = None
    kind = "episode"


@dataclass(frozen=True)
class ActionEvent:
    t: int
    sensor_id: str
    action: str
    nrmse: float
    flagged_fraction: float
    window_start: int
    window_end: int
    model_generation: int
    kind = "action"


@dataclass(frozen=True)
class DiagnosticEvent:
    t: int
    sensor_id: str
    error: str
    message: str
    model_generation: Optional[int] = None
    kind = "diagnostic"


KINDS = {cls.kind: cls for cls in (GedEvent, EpisodeEvent, ActionEvent, DiagnosticEvent)}

# JSON key for each dataclass field where they differ.
_RENAME = {"error_class": "class"}
_UNRENAME = {v: k for k, v in _RENAME.items()}


def episode_event(ep, generation=None):
    """Closed-episode event from a :class:`~sentinel.classifier.GedEpisode`."""
    return EpisodeEvent(
        "closed",
        ep.sensor_id,
        int(ep.start_t),
        int(ep.end_t),
        ErrorClass(ep.error_class).value,
        float(ep.stats.mean_dev),
        float(ep.stats.std_ratio),
        int(ep.stats.count),
        float(ep.gamma_peak),
        bool(ep.low_confidence),
        generation,
    )


def event_dict(event):
    out = {"kind": event.kind}
    for f in fields(event):
        v = getattr(event, f.name)
        if v is None:
            continue
        if isinstance(v, float) and not math.isfinite(v):
            raise ValueError(f"non-finite {f.name} in {event.kind} event")
        out[_RENAME.get(f.name, f.name)] = v
    return out


def emit_event(event):
    """One NDJSON line (without the trailing newline)."""
    return json.dumps(event_dict(event), separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def parse_event(line):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise Malformed(f"not a JSON object: {exc}") from exc
    if not isinstance(obj, dict) or obj.get("kind") not in KINDS:
        raise Malformed(f"unknown event kind in {line!r}")
    cls = KINDS[obj.pop("kind")]
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, v in obj.items():
        name = _UNRENAME.get(key, key)
        if name not in names:
            raise Malformed(f"unexpected field {key!r} in {cls.kind} event")
        kwargs[name] = v
    try:
        ev = cls(**kwargs)
    except TypeError as exc:
        raise Malformed(f"incomplete {cls.kind} event: {exc}") from exc
    if cls is EpisodeEvent and ev.error_class is not None:
        try:
            ErrorClass(ev.error_class)
        except ValueError:
            raise Malformed(f"unknown class {ev.error_class!r}") from None
    return ev
