"""Episode-level scoring of detections against injected ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import groupby
import json
from typing import Dict, List, Tuple

import numpy as np

from .errors import LengthMismatch
from .events import EpisodeEvent
from .io import LABELS
from .synth import CLEAN

# An episode matches a truth window when it covers this share of the window.
MIN_OVERLAP = 0.5


@dataclass(frozen=True)
class TruthWindow:
    sensor_id: str
    label: str
    start_t: int
    end_t: int  # exclusive

    @property
    def length(self):
        return self.end_t - self.start_t


@dataclass
class Match:
    truth: TruthWindow
    episode: EpisodeEvent = None

    @property
    def delay(self):
        return None if self.episode is None else max(0, self.episode.start_t - self.truth.start_t)


@dataclass
class EvalSummary:
    """``confusion[i][j]`` counts truth label ``LABELS[i]`` detected as ``LABELS[j]``.

    Missed windows land in the Clean column; false-alarm episodes in the
    Clean row.
    """

    confusion: List[List[int]]
    matches: List[Match]
    false_alarms: List[EpisodeEvent]
    clean_samples: int
    labels: Tuple[str, ...] = LABELS

    @property
    def detection_delay(self):
        return [m.delay for m in self.matches if m.episode is not None]

    @property
    def false_alarm_rate(self):
        """False-alarm episodes per 10k clean samples."""
        return 1e4 * len(self.false_alarms) / self.clean_samples if self.clean_samples else 0.0

    @property
    def detected(self):
        return sum(m.episode is not None for m in self.matches)

    @property
    def class_agreement(self):
        hit = [m for m in self.matches if m.episode is not None]
        if not hit:
            return 0.0
        return sum(m.episode.error_class == m.truth.label for m in hit) / len(hit)

    def as_dict(self):
        return {
            "labels": list(self.labels),
            "confusion": self.confusion,
            "truth_windows": len(self.matches),
            "detected": self.detected,
            "class_agreement": self.class_agreement,
            "false_alarms": len(self.false_alarms),
            "clean_samples": self.clean_samples,
            "false_alarm_rate_per_10k": self.false_alarm_rate,
            "windows": [
                {
                    "sensor_id": m.truth.sensor_id,
                    "label": m.truth.label,
                    "start_t": m.truth.start_t,
                    "end_t": m.truth.end_t,
                    "detected_as": CLEAN if m.episode is None else m.episode.error_class,
                    "episode_start_t": None if m.episode is None else m.episode.start_t,
                    "delay": m.delay,
                }
                for m in self.matches
            ],
        }

    def to_text(self):
        return json.dumps(self.as_dict(), indent=2) + "\n"


def truth_windows(truth):
    """Maximal runs of one non-Clean label per sensor over consecutive samples."""
    out = []
    by_sensor: Dict[str, list] = {}
    for t, sid, label in truth:
        by_sensor.setdefault(sid, []).append((t, label))
    for sid in sorted(by_sensor):
        for label, run in groupby(by_sensor[sid], key=lambda r: r[1]):
            run = list(run)
            if label != CLEAN:
                out.append(TruthWindow(sid, label, run[0][0], run[-1][0] + 1))
    return sorted(out, key=lambda w: (w.start_t, w.sensor_id))


def eval_match(events, truth):
    """Match closed episodes to truth windows.

    ``truth`` is a sequence of ``(t, sensor_id, label)``. Episodes are
    inclusive ``[start_t, end_t]`` spans. Each truth window takes the
    earliest unmatched episode covering at least half of it.
    """
    truth = list(truth)
    spans = {}
    for t, sid, _ in truth:
        lo, hi = spans.get(sid, (t, t))
        spans[sid] = (min(lo, t), max(hi, t))
    episodes = sorted(
        (e for e in events if e.kind == "episode" and e.state == "closed"),
        key=lambda e: (e.start_t, e.sensor_id),
    )
    for e in episodes:
        lo, hi = spans.get(e.sensor_id, (None, None))
        if lo is None or e.start_t < lo or e.end_t > hi:
            raise LengthMismatch(f"episode [{e.start_t}, {e.end_t}] of {e.sensor_id!r} lies outside the truth stream")

    index = {lab: i for i, lab in enumerate(LABELS)}
    conf = np.zeros((len(LABELS), len(LABELS)), dtype=int)
    used = [False] * len(episodes)
    matches = []
    for w in truth_windows(truth):
        hit = None
        for j, e in enumerate(episodes):
            if used[j] or e.sensor_id != w.sensor_id:
                continue
            overlap = min(e.end_t + 1, w.end_t) - max(e.start_t, w.start_t)
            if overlap >= MIN_OVERLAP * w.length:
                hit = j
                break
        if hit is None:
            matches.append(Match(w))
            conf[index[w.label], index[CLEAN]] += 1
        else:
            used[hit] = True
            matches.append(Match(w, episodes[hit]))
            conf[index[w.label], index[episodes[hit].error_class]] += 1
    false_alarms = [e for j, e in enumerate(episodes) if not used[j]]
    for e in false_alarms:
        conf[index[CLEAN], index[e.error_class]] += 1
    clean = sum(1 for _, _, label in truth if label == CLEAN)
    return EvalSummary(conf.tolist(), matches, false_alarms, clean)
