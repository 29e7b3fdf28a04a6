"""Synthetic sensor streams with labeled gross-error injections.

Clean series follow the identified difference equation driven by seeded
Gaussian noise. Faults are layered on top; magnitudes are multiples of
the clean noise sigma so a scenario transfers across models.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .classifier import ErrorClass
from .errors import OverlappingFault, SpecOutOfRange, UnstableModel, Unsatisfiable
from .ident import ArmaModel, SensorSample

CLEAN = "Clean"

# Magnitude / duration ranges used when faults are placed at random points.
DEFAULT_MAGNITUDES = {
    ErrorClass.BIAS: (2.0, 5.0),
    ErrorClass.DRIFT: (2.0, 5.0),
    ErrorClass.PRECISION_DEGRADATION: (2.0, 3.0),
    ErrorClass.FAILURE: (3.0, 8.0),
}
DEFAULT_DURATION = (100, 300)


@dataclass(frozen=True)
class FaultSpec:
    """One injected gross error.

    ``magnitude`` is in clean-sigma units: bias offset, drift rise per 100
    samples, noise-inflation factor, or stuck-value offset. ``failure_mode``
    ``"extreme"`` replaces the stuck value with random extremes.
    """

    error_class: ErrorClass
    start_t: int
    duration: int
    magnitude: float
    failure_mode: str = "stuck"

    def __post_init__(self):
        object.__setattr__(self, "error_class", ErrorClass(self.error_class))
        if self.duration < 1:
            raise SpecOutOfRange(f"duration must be >= 1, got {self.duration}")
        if not self.magnitude > 0:
            raise SpecOutOfRange(f"magnitude must be > 0, got {self.magnitude}")
        if self.error_class is ErrorClass.PRECISION_DEGRADATION and self.magnitude < 1:
            raise SpecOutOfRange("noise-inflation factor must be >= 1")
        if self.failure_mode not in ("stuck", "extreme"):
            raise SpecOutOfRange(f"unknown failure mode {self.failure_mode!r}")

    @property
    def end_t(self):
        return self.start_t + self.duration


@dataclass(frozen=True)
class LabeledStream:
    samples: Tuple[SensorSample, ...]
    truth: Tuple[str, ...]
    specs: Tuple[FaultSpec, ...]
    seed: int
    clean_sigma: float
    clean: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def values(self):
        return np.array([s.value for s in self.samples])

    @property
    def sensor_id(self):
        return self.samples[0].sensor_id if self.samples else ""


def generate_clean(model, length, noise_sigma, seed, exog=None, burn_in=None, initial=None):
    """Run the difference equation forward under Gaussian equation error.

    Pure AR models are driven by the noise itself. Models with a measured
    input need ``exog`` (length ``length``). ``burn_in`` samples (default
    ``10 * max(n, m)``) are simulated and discarded; ``initial`` seeds the
    output history before the first simulated sample.
    """
    if not model.stable:
        raise UnstableModel("refusing to simulate a model with roots outside the unit circle")
    order = max(model.n, model.m)
    if length <= 10 * order:
        raise ValueError(f"length must exceed {10 * order}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    burn = 10 * order if burn_in is None else int(burn_in)
    total = burn + length
    rng = np.random.default_rng(seed)
    e = rng.normal(0.0, 1.0, total) * noise_sigma

    alpha = np.asarray(model.alpha)
    beta = np.asarray(model.beta)
    if model.exog:
        if exog is None or len(exog) != length:
            raise ValueError("models with a measured input need exog of the stream length")
        u = np.r_[np.zeros(burn), np.asarray(exog, dtype=float)]
        drive_terms = lambda k: sum(beta[j] * u[k - j] for j in range(len(beta)) if k - j >= 0) + e[k]
    else:
        drive_terms = lambda k: sum(beta[j] * e[k - j] for j in range(len(beta)) if k - j >= 0)

    hist = list(np.asarray(initial, dtype=float)) if initial is not None else []
    pad = len(hist)
    y = np.zeros(pad + total)
    y[:pad] = hist
    for k in range(total):
        acc = drive_terms(k)
        for i in range(1, len(alpha) + 1):
            j = pad + k - i
            if j >= 0:
                acc -= alpha[i - 1] * y[j]
        y[pad + k] = acc
    return y[pad + burn :]


def _fault_rng(seed, spec):
    classes = list(ErrorClass)
    return np.random.default_rng([int(seed), int(spec.start_t), classes.index(spec.error_class)])


def inject_fault(stream, spec):
    """Return a new stream with ``spec`` applied and labels updated."""
    if not stream.samples:
        raise SpecOutOfRange("cannot inject into an empty stream")
    t0 = stream.samples[0].t
    lo, hi = spec.start_t - t0, spec.end_t - t0
    if lo < 0 or hi > len(stream.samples):
        raise SpecOutOfRange(f"fault window [{spec.start_t}, {spec.end_t}) outside the stream")
    for other in stream.specs:
        if spec.start_t < other.end_t and other.start_t < spec.end_t:
            raise OverlappingFault(f"fault at {spec.start_t} overlaps the one at {other.start_t}")

    values = np.array([s.value for s in stream.samples])
    sigma = stream.clean_sigma
    cls = spec.error_class
    if cls is ErrorClass.BIAS:
        values[lo:hi] += spec.magnitude * sigma
    elif cls is ErrorClass.DRIFT:
        rise = spec.magnitude * sigma * spec.duration / 100.0
        values[lo:hi] += np.linspace(0.0, rise, spec.duration)
    elif cls is ErrorClass.PRECISION_DEGRADATION:
        extra = np.sqrt(spec.magnitude**2 - 1.0) * sigma
        values[lo:hi] += _fault_rng(stream.seed, spec).normal(0.0, 1.0, spec.duration) * extra
    else:
        base = stream.clean if stream.clean is not None else values
        last = base[lo - 1] if lo > 0 else base[0]
        if spec.failure_mode == "stuck":
            values[lo:hi] = last + spec.magnitude * sigma
        else:
            values[lo:hi] = _fault_rng(stream.seed, spec).normal(0.0, spec.magnitude * sigma, spec.duration)

    samples = tuple(
        SensorSample(s.t, s.sensor_id, float(v), s.exog) for s, v in zip(stream.samples, values)
    )
    truth = list(stream.truth)
    truth[lo:hi] = [cls.value] * spec.duration
    specs = tuple(sorted(stream.specs + (spec,), key=lambda f: f.start_t))
    return replace(stream, samples=samples, truth=tuple(truth), specs=specs)


@dataclass
class ScenarioConfig:
    """Model, noise, faults and seed for one synthetic channel.

    ``random_points`` places that many extra faults uniformly at random
    (seeded), keeping ``min_gap`` clean samples around each and leaving
    the first ``lead_in`` samples clean.
    """

    model: ArmaModel
    length: int
    seed: int = 0
    noise_sigma: float = 1.0
    sensor_id: str = "s1"
    faults: List[FaultSpec] = field(default_factory=list)
    random_points: int = 0
    classes: Sequence[ErrorClass] = tuple(ErrorClass)
    magnitudes: Dict[ErrorClass, Tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_MAGNITUDES)
    )
    duration: Tuple[int, int] = DEFAULT_DURATION
    min_gap: int = 20
    lead_in: int = 0
    t0: int = 0
    pipeline: dict = field(default_factory=dict)


def place_random(rng, length, durations, min_gap, lead_in=0):
    """Start indices for non-overlapping windows with ``min_gap`` clean samples
    before, between and after them."""
    k = len(durations)
    if k == 0:
        return []
    slack = length - lead_in - sum(durations) - (k + 1) * min_gap
    if slack < 0:
        raise Unsatisfiable(f"cannot place {k} faults in {length - lead_in} samples")
    offsets = np.sort(rng.integers(0, slack + 1, size=k))
    starts, pos = [], lead_in + min_gap
    prev = 0
    for off, dur in zip(offsets, durations):
        pos += int(off) - prev
        prev = int(off)
        starts.append(pos)
        pos += dur + min_gap
    return starts


def make_scenario(cfg):
    rng = np.random.default_rng([int(cfg.seed), 1])
    exog = rng.normal(0.0, 1.0, cfg.length) if cfg.model.exog else None
    clean = generate_clean(cfg.model, cfg.length, cfg.noise_sigma, [int(cfg.seed), 0], exog=exog)
    samples = tuple(
        SensorSample(cfg.t0 + i, cfg.sensor_id, float(v), None if exog is None else float(exog[i]))
        for i, v in enumerate(clean)
    )
    stream = LabeledStream(samples, (CLEAN,) * cfg.length, (), int(cfg.seed), float(cfg.noise_sigma), clean)

    specs = list(cfg.faults)
    if cfg.random_points:
        classes = [ErrorClass(c) for c in cfg.classes]
        picked = [classes[i] for i in rng.integers(0, len(classes), size=cfg.random_points)]
        durations = [int(d) for d in rng.integers(cfg.duration[0], cfg.duration[1] + 1, size=cfg.random_points)]
        starts = place_random(rng, cfg.length, durations, cfg.min_gap, cfg.lead_in)
        for cls, start, dur in zip(picked, starts, durations):
            lo, hi = cfg.magnitudes[cls]
            specs.append(FaultSpec(cls, cfg.t0 + start, dur, float(rng.uniform(lo, hi))))
    for spec in sorted(specs, key=lambda s: s.start_t):
        stream = inject_fault(stream, spec)
    return stream
