"""Episode windowing and the four-way gross-error decision tree.

Per-sample GED decisions are grouped into episodes with an f-of-w trigger;
the residuals of a closed episode are summarized as mean deviation and
spread in units of the channel's baseline sigma and mapped to a class.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from .errors import OutOfOrder, WindowTooSmall, ZeroBaseline

# Depth of the decision tree below; no path evaluates more comparisons.
TREE_DEPTH = 4


class ErrorClass(str, Enum):
    BIAS = "Bias"
    DRIFT = "Drift"
    PRECISION_DEGRADATION = "PD"
    FAILURE = "Failure"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class WindowStats:
    mean_dev: float
    std_ratio: float
    count: int


@dataclass(frozen=True)
class GedEpisode:
    sensor_id: str
    start_t: int
    end_t: int
    stats: WindowStats
    error_class: ErrorClass
    gamma_peak: float
    low_confidence: bool = False


def window_stats(residuals, baseline_sigma, min_window=20):
    """|mean| and sample deviation of ``residuals`` in units of ``baseline_sigma``."""
    r = np.asarray(residuals, dtype=float)
    if not baseline_sigma > 0:
        raise ZeroBaseline(f"baseline sigma must be > 0, got {baseline_sigma}")
    if len(r) < max(min_window, 2):
        raise WindowTooSmall(f"window of {len(r)} samples is below the minimum {min_window}")
    return WindowStats(
        mean_dev=float(abs(r.mean()) / baseline_sigma),
        std_ratio=float(r.std(ddof=1) / baseline_sigma),
        count=len(r),
    )


def decision_path(stats):
    """Walk the tree; returns ``(class, comparisons_made)``.

    Equivalent to the ordered rule list: Drift if mean < 3 and std < 1;
    PD if mean < 1.5 and 1.5 <= std <= 3; Bias if mean >= 1.5 and
    1.5 <= std <= 3; Failure otherwise.
    """
    m, s = stats.mean_dev, stats.std_ratio
    if s < 1.0:
        if m < 3.0:
            return ErrorClass.DRIFT, 2
        return ErrorClass.FAILURE, 2
    if s < 1.5:
        return ErrorClass.FAILURE, 2
    if s > 3.0:
        return ErrorClass.FAILURE, 3
    if m < 1.5:
        return ErrorClass.PRECISION_DEGRADATION, 4
    return ErrorClass.BIAS, 4


def classify(stats):
    return decision_path(stats)[0]


@dataclass
class ClosedEpisode:
    sensor_id: str
    start_t: int
    end_t: int
    residuals: List[float]
    gamma_peak: float


@dataclass(frozen=True)
class EpisodeOpened:
    sensor_id: str
    start_t: int


@dataclass
class EpisodeAccumulator:
    """f-of-w trigger around the per-sample GED decisions of one channel.

    An episode opens at the sample where ``f`` of the last ``w`` decisions
    are flagged and closes once ``f_close`` of the last ``w`` are clean.
    Its span runs from the opening sample to the last flagged sample.
    """

    sensor_id: str = ""
    f: int = 8
    w: int = 10
    f_close: int = 8
    recent: deque = field(default_factory=deque)
    last_t: Optional[int] = None
    start_t: Optional[int] = None
    last_flag_t: Optional[int] = None
    residuals: list = field(default_factory=list)
    ts: list = field(default_factory=list)
    gamma_peak: float = 0.0

    def __post_init__(self):
        if not (1 <= self.f <= self.w and 1 <= self.f_close <= self.w):
            raise ValueError(f"trigger needs 1 <= f, f_close <= w (got {self.f}, {self.f_close}, {self.w})")

    @property
    def is_open(self):
        return self.start_t is not None

    def accumulate(self, decision, residual, t=None):
        """Feed one decision; returns an :class:`EpisodeOpened`, a
        :class:`ClosedEpisode`, or ``None``."""
        t = decision.k if t is None else t
        if self.last_t is not None and t <= self.last_t:
            raise OutOfOrder(f"decision t={t} does not advance past t={self.last_t}")
        self.last_t = t
        self.recent.append(bool(decision.flagged))
        if len(self.recent) > self.w:
            self.recent.popleft()
        flagged = sum(self.recent)

        if not self.is_open:
            if flagged >= self.f:
                self.start_t = t
                self.last_flag_t = t
                self.residuals = [float(residual)]
                self.ts = [t]
                self.gamma_peak = decision.gamma
                return EpisodeOpened(self.sensor_id, t)
            return None

        self.residuals.append(float(residual))
        self.ts.append(t)
        if decision.flagged:
            self.last_flag_t = t
            self.gamma_peak = max(self.gamma_peak, decision.gamma)
        if len(self.recent) - flagged >= self.f_close:
            return self.flush()
        return None

    def flush(self):
        """Close the open episode (if any) and return it."""
        if not self.is_open:
            return None
        keep = [i for i, t in enumerate(self.ts) if t <= self.last_flag_t]
        ep = ClosedEpisode(
            self.sensor_id,
            self.start_t,
            self.last_flag_t,
            [self.residuals[i] for i in keep],
            self.gamma_peak,
        )
        self.start_t = self.last_flag_t = None
        self.residuals, self.ts = [], []
        self.gamma_peak = 0.0
        return ep


def classify_episode(episode, baseline_sigma, min_window=20):
    """Window statistics plus decision tree for a closed episode.

    Episodes shorter than ``min_window`` are reported as Failure with the
    low-confidence marker set.
    """
    try:
        stats = window_stats(episode.residuals, baseline_sigma, min_window)
        cls = classify(stats)
        low = False
    except WindowTooSmall:
        r = np.asarray(episode.residuals, dtype=float)
        if len(r) and baseline_sigma > 0:
            spread = float(r.std(ddof=1)) if len(r) > 1 else 0.0
            stats = WindowStats(float(abs(r.mean())) / baseline_sigma, spread / baseline_sigma, len(r))
        else:
            stats = WindowStats(0.0, 0.0, len(r))
        if not baseline_sigma > 0:
            raise ZeroBaseline(f"baseline sigma must be > 0, got {baseline_sigma}")
        cls, low = ErrorClass.FAILURE, True
    return GedEpisode(
        episode.sensor_id, episode.start_t, episode.end_t, stats, cls, episode.gamma_peak, low
    )
