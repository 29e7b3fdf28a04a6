"""In-process speed / batch / serving decomposition.

The speed path runs the Kalman test and the episode trigger per sample.
Every ``eval_window`` samples a channel's current model is scored on its
recent unflagged history and kept, incremented (recursive least squares
over the window) or recomputed (order selection and a batch fit). Events
go to a sink; the run summary is the serving view.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from itertools import islice
import math
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy import optimize, special

from .classifier import EpisodeAccumulator, EpisodeOpened, ErrorClass, classify_episode
from .errors import (
    InputError,
    InsufficientData,
    OutOfOrder,
    SentinelError,
    UnknownSensor,
)
from .events import ActionEvent, DiagnosticEvent, EpisodeEvent, GedEvent, episode_event
from .ident import (
    ArmaModel,
    SensorSample,
    fit_arma,
    information_inverse,
    build_regression,
    rls_step,
    select_order,
    to_state_space,
)
from .kalman import NoiseConfig, chi2_threshold, init_filter, step

EVAL_LAGS = 1
KEEP, INCREMENT, RECOMPUTE = "Keep", "Increment", "Recompute"

# buffer row layout
_T, _Y, _X, _FLAG, _EPI, _V, _SV, _GEN = range(8)


class SinkFailure(SentinelError):
    """The event sink raised; ``summary`` holds counts up to the failure."""

    def __init__(self, message, summary):
        super().__init__(message)
        self.summary = summary


@dataclass
class PipelineConfig:
    """Loop parameters.

    ``order`` is ``"auto"`` or an ``(n, m)`` pair. ``bootstrap_len``
    defaults to ``max(2000, 20 (n + m + 1))``.
    """

    confidence: float = 0.95
    eval_window: int = 500
    eps_keep: float = 1.2
    eps_recompute: float = 2.0
    buffer_cap: int = 10_000
    f: int = 8
    w: int = 10
    f_close: int = 8
    min_window: int = 20
    order: object = "auto"
    max_n: int = 4
    max_m: int = 0
    lam: float = 0.99
    bootstrap_len: Optional[int] = None
    meas_frac: float = 1e-3
    q_scale: float = 1e-4
    P0_scale: float = 1e3

    def __post_init__(self):
        if not 0 < self.eps_keep < self.eps_recompute:
            raise InputError(f"need 0 < eps_keep < eps_recompute (got {self.eps_keep}, {self.eps_recompute})")
        if self.eval_window < 2:
            raise InputError("eval_window must be >= 2")
        if self.buffer_cap < 10 * self.eval_window:
            raise InputError(f"buffer_cap must be >= 10 * eval_window ({10 * self.eval_window})")
        if not 0.9 < self.lam <= 1.0:
            raise InputError(f"forgetting factor must lie in (0.9, 1], got {self.lam}")
        chi2_threshold(1, self.confidence)
        if self.order != "auto":
            n, m = (int(v) for v in self.order)
            if n < 1 or m < 0:
                raise InputError(f"order must satisfy n >= 1, m >= 0 (got {n}, {m})")
            self.order = (n, m)

    @property
    def orders(self):
        return (self.max_n, self.max_m) if self.order == "auto" else self.order

    def bootstrap_for(self):
        n, m = self.orders
        return self.bootstrap_len if self.bootstrap_len is not None else max(2000, 20 * (n + m + 1))

    def noise_for(self, sigma):
        return NoiseConfig.for_model(sigma, self.meas_frac, self.q_scale, self.P0_scale)


@dataclass(frozen=True)
class EvalReport:
    nrmse: float
    window: Tuple[int, int]
    flagged_fraction: float
    count: int = 0


@dataclass
class Channel:
    sensor_id: str
    model: ArmaModel
    kf: object
    acc: EpisodeAccumulator
    buffer: deque
    rls_theta: np.ndarray
    rls_P: np.ndarray
    generation: int = 0
    since_eval: int = 0
    last_t: Optional[int] = None
    counts: dict = field(default_factory=dict)


@dataclass
class PipelineState:
    config: PipelineConfig
    channels: Dict[str, Channel] = field(default_factory=dict)
    # instrumentation hook: called with the (t, value) rows fed to identification
    on_identify: Optional[Callable] = None


def _empty_counts():
    return {
        "samples": 0,
        "bootstrap": 0,
        "flagged": 0,
        "episodes": 0,
        "classes": {c.value: 0 for c in ErrorClass},
        "actions": {a: 0 for a in (KEEP, INCREMENT, RECOMPUTE)},
        "diagnostics": 0,
    }


def _series(rows):
    y = np.array([r[_Y] for r in rows], dtype=float)
    has_x = len(rows) > 0 and rows[0][_X] is not None
    x = np.array([r[_X] for r in rows], dtype=float) if has_x else None
    return y, x


def _fit(state, rows, exclude=None, order=None):
    """Order selection (or fixed order) plus batch fit over buffered rows."""
    cfg = state.config
    y, x = _series(rows)
    if state.on_identify is not None:
        used = np.ones(len(rows), dtype=bool) if exclude is None else ~np.asarray(exclude)
        state.on_identify([(rows[i][_T], rows[i][_Y]) for i in np.flatnonzero(used)])
    if order is not None:
        n, m = order
    elif cfg.order == "auto":
        n, m = select_order(y, cfg.max_n, cfg.max_m if x is not None else 0, x, exclude)
    else:
        n, m = cfg.order
    model = fit_arma(y, n, m if x is not None else 0, x, exclude)
    return model, build_regression(y, n, model.m if model.exog else 0, x, exclude)


def _fresh_filter(cfg, model, warmup=None):
    return init_filter(to_state_space(model), cfg.noise_for(model.sigma), cfg.confidence, warmup)


def _prime(kf, rows):
    """Run the filter over history without testing."""
    kf = replace(kf, warmup=kf.seen + len(rows))
    for r in rows:
        kf, _, _ = step(kf, (r[_T], r[_Y], r[_X]))
    return replace(kf, warmup=0)


def _seed_information(model, rows):
    """RLS inverse information from history, or a diffuse prior without it."""
    y, x = _series(rows)
    try:
        sys = build_regression(y, model.n, model.m if model.exog else 0, x if model.exog else None)
        return information_inverse(sys)
    except (SentinelError, ValueError):
        return np.eye(len(model.theta)) * 1e6


def register(state, sensor_id, history, model=None):
    """Add a channel from its bootstrap history.

    Without ``model`` the history is identified first. The filter is run
    over the history (no detection) and the history seeds the buffer.
    """
    cfg = state.config
    if sensor_id in state.channels:
        raise InputError(f"channel {sensor_id!r} already registered")
    rows = [
        [s.t, float(s.value), None if s.exog is None else float(s.exog), False, False, None, None, 0]
        for s in history
    ]
    if model is None:
        model, sys = _fit(state, rows)
        info = information_inverse(sys)
    else:
        info = _seed_information(model, rows)
    kf = _fresh_filter(cfg, model, warmup=0)
    kf = _prime(kf, rows) if rows else replace(kf, warmup=10 * kf.model.dim)
    buf = deque(rows, maxlen=cfg.buffer_cap)
    ch = Channel(
        sensor_id,
        model,
        kf,
        EpisodeAccumulator(sensor_id, cfg.f, cfg.w, cfg.f_close),
        buf,
        model.theta.copy(),
        info,
        last_t=rows[-1][_T] if rows else None,
        counts=_empty_counts(),
    )
    ch.counts["bootstrap"] = len(rows)
    state.channels[sensor_id] = ch
    return ch


def speed_step(state, sample):
    """Filter, test and window one sample; returns the events it produced."""
    ch = state.channels.get(sample.sensor_id)
    if ch is None:
        raise UnknownSensor(f"channel {sample.sensor_id!r} is not registered")
    kf, inn, dec = step(ch.kf, sample)
    events = []
    estimate = float(sample.value) - inn.v
    if dec.flagged:
        events.append(GedEvent(sample.t, sample.sensor_id, dec.gamma, dec.threshold, True, estimate))
        ch.counts["flagged"] += 1
    ch.kf = kf
    ch.last_t = sample.t
    tested = math.isfinite(dec.threshold)
    row = [
        sample.t,
        float(sample.value),
        sample.exog,
        bool(dec.flagged),
        ch.acc.is_open,
        inn.v if tested else None,
        math.sqrt(inn.V),
        ch.generation,
    ]
    ch.buffer.append(row)

    out = ch.acc.accumulate(dec, inn.v, sample.t)
    if isinstance(out, EpisodeOpened):
        for r in islice(reversed(ch.buffer), ch.acc.w):
            r[_EPI] = True
        events.append(EpisodeEvent("open", sample.sensor_id, out.start_t, out.start_t, model_generation=ch.generation))
    elif out is not None:
        row[_EPI] = True
        events.append(_close(state, ch, out))
    ch.counts["samples"] += 1
    ch.since_eval += 1
    return events


def _close(state, ch, closed):
    ep = classify_episode(closed, ch.model.sigma if ch.model.sigma > 0 else 1e-300, state.config.min_window)
    ch.counts["episodes"] += 1
    ch.counts["classes"][ep.error_class.value] += 1
    return episode_event(ep, ch.generation)


def flush(state):
    """Close any open episodes (end of stream); returns their events."""
    events = []
    for sid in sorted(state.channels):
        ch = state.channels[sid]
        ep = ch.acc.flush()
        if ep is not None:
            events.append(_close(state, ch, ep))
    return events


def censored_scale(obs, cuts):
    """Maximum-likelihood scale of zero-mean Gaussian data from observed
    values ``obs`` plus values known only to exceed ``cuts`` in magnitude."""
    obs = np.asarray(obs, dtype=float)
    cuts = np.asarray(cuts, dtype=float)
    ss = float(obs @ obs)
    n_obs = len(obs)
    if n_obs == 0:
        raise InsufficientData("no observed values")
    if len(cuts) == 0 or ss == 0.0:
        return math.sqrt(ss / n_obs)

    def nll(log_s):
        s = math.exp(log_s)
        return n_obs * log_s + ss / (2 * s * s) - float(np.sum(special.log_ndtr(-cuts / s)))

    rms = math.sqrt(ss / n_obs)
    lo = math.log(rms) - 2.0
    hi = math.log(max(rms, float(np.max(cuts)))) + 10.0
    res = optimize.minimize_scalar(nll, bounds=(lo, hi), method="bounded", options={"xatol": 1e-9})
    return math.exp(res.x)


def _window_rows(ch, window, lags=0, episodes=False):
    """Latest ``window`` tested rows scored by the current model whose
    previous ``lags`` samples were not flagged; episode rows only when
    ``episodes`` is set."""
    picked = []
    rows = ch.buffer
    for i in range(len(rows) - 1, -1, -1):
        r = rows[i]
        if r[_GEN] != ch.generation:
            break
        if r[_V] is None or (r[_EPI] and not episodes):
            continue
        if lags and (i < lags or any(rows[i - j][_FLAG] for j in range(1, lags + 1))):
            continue
        picked.append(r)
        if len(picked) == window:
            break
    return picked[::-1]


def evaluate_model(state, channel):
    """Score the current model on its latest tested history (side-effect free).

    The one-step errors are the filter innovations, whose predictions never
    use a flagged value (the filter coasts over them). ``nrmse`` is the
    Gaussian scale of ``v / sqrt(V)`` (``V`` tracks the model sigma in
    steady state) fitted by maximum likelihood: unflagged samples enter by
    value and flagged samples only as being beyond the test cut. This keeps
    the score at 1 for a correct model and lets it exceed the cut for a
    wrong one.
    """
    ch = state.channels.get(channel)
    if ch is None:
        raise UnknownSensor(f"channel {channel!r} is not registered")
    cfg = state.config
    if len(ch.buffer) < cfg.eval_window:
        raise InsufficientData(f"{len(ch.buffer)} buffered samples, need {cfg.eval_window}")
    # an exact model is scored on every tested row; its flags are rounding
    exact = ch.model.sigma == 0
    rows = _window_rows(ch, cfg.eval_window, 0 if exact else EVAL_LAGS * ch.model.lags, exact)
    if len(rows) < 2:
        raise InsufficientData("fewer than two tested samples since the last model change")
    flag = np.array([r[_FLAG] for r in rows], dtype=bool)
    v = np.array([r[_V] for r in rows], dtype=float)
    sV = np.array([r[_SV] for r in rows], dtype=float)
    if exact:
        y = np.array([r[_Y] for r in rows], dtype=float)
        exact = np.max(np.abs(v)) <= 1e-9 * max(1.0, float(np.max(np.abs(y))))
        nrmse = 0.0 if exact else 1e300
    else:
        if flag.all():
            raise InsufficientData("every sample in the window is flagged")
        cut = math.sqrt(chi2_threshold(1, cfg.confidence))
        z = v / sV
        nrmse = censored_scale(z[~flag], np.full(int(flag.sum()), cut))
    return EvalReport(float(nrmse), (int(rows[0][_T]), int(rows[-1][_T])), float(flag.mean()), len(rows))


def decide_update(report, config):
    if report.nrmse < config.eps_keep:
        return KEEP
    if report.nrmse < config.eps_recompute:
        return INCREMENT
    return RECOMPUTE


def apply_action(state, channel, action, report=None):
    """Apply ``action`` to ``channel`` in place; returns emitted events.

    Identification failures keep the current model and yield a diagnostic.
    """
    ch = state.channels[channel]
    if action == KEEP:
        return []
    rows = list(ch.buffer)
    t = ch.last_t if ch.last_t is not None else 0
    try:
        if action == INCREMENT:
            model = _increment(state, ch, rows, report)
            kf = _fresh_filter(state.config, model, warmup=0)
            kf = replace(kf, x_hat=ch.kf.x_hat.copy(), P=ch.kf.P.copy(), k=ch.kf.k, seen=ch.kf.seen)
        elif action == RECOMPUTE:
            model, kf = _recompute(state, ch, rows, report)
        else:
            raise InputError(f"unknown action {action!r}")
    except SentinelError as exc:
        ch.counts["diagnostics"] += 1
        return [DiagnosticEvent(t, channel, type(exc).__name__, str(exc), ch.generation)]
    ch.model, ch.kf = model, kf
    ch.generation += 1
    return []


def _reconciled(rows):
    """Values with flagged samples replaced by the filter's estimate."""
    return np.array(
        [r[_Y] - r[_V] if r[_FLAG] and r[_V] is not None else r[_Y] for r in rows], dtype=float
    )


def _increment(state, ch, rows, report=None):
    """Recursive least-squares replay over the window's unflagged rows.

    Flagged lags are replaced by the filter's estimates so no flagged value
    reaches the regression.
    """
    model = ch.model
    p = model.lags
    lo = report.window[0] if report is not None else None
    if lo is None:
        win = _window_rows(ch, state.config.eval_window)
        lo = win[0][_T] if win else math.inf
    y = _reconciled(rows)
    _, x = _series(rows)
    flag = np.array([r[_FLAG] for r in rows], dtype=bool)
    epi = np.array([r[_EPI] for r in rows], dtype=bool)
    idx = [
        k
        for k in range(p, len(rows))
        if rows[k][_T] >= lo and not flag[k] and not epi[k - p : k + 1].any()
    ]
    if not idx:
        raise InsufficientData("no unflagged rows to increment on")
    if state.on_identify is not None:
        used = sorted({j for k in idx for j in range(k - p, k + 1) if not flag[j]})
        state.on_identify([(rows[j][_T], rows[j][_Y]) for j in used])
    theta, P = ch.rls_theta, ch.rls_P
    for k in idx:
        phi = [-y[k - j] for j in range(1, model.n + 1)]
        if model.exog:
            phi += [x[k - j] for j in range(model.m + 1)]
        theta, P = rls_step(theta, P, np.array(phi), y[k], state.config.lam)
    ch.rls_theta, ch.rls_P = theta, P
    return model.with_theta(theta, fitted_on=model.fitted_on + len(idx))


def _recompute(state, ch, rows, report=None):
    """Batch refit.

    Without an evaluation report this is a fit over the whole buffer minus
    flagged and episode samples. When a failing evaluation drives it, the
    refit covers that evaluation's span and is screened by the test under
    the candidate model instead, since flags raised by the superseded model
    mostly mark the change itself.
    """
    cfg = state.config
    if report is None:
        model, sys = _fit(state, rows, _excluded(rows))
        kf = _fresh_filter(cfg, model)
    else:
        since = sum(1 for r in rows if r[_T] >= report.window[0])
        span = rows[-max(since, 2 * model_rows(cfg)) :]
        model, sys, kf = _rescreen(state, span[onset(span, model_rows(cfg)) :])
    ch.rls_theta = model.theta.copy()
    ch.rls_P = information_inverse(sys)
    return model, kf


def model_rows(cfg):
    """Fewest rows a refit is attempted on."""
    n, m = cfg.orders
    return 10 * (n + m + 1)


def onset(rows, min_seg):
    """Index where the current model's fit worsens most sharply.

    Splits the tested rows into two segments of at least ``min_seg`` and
    picks the split with the largest two-scale likelihood gain on the
    standardized innovations, provided the later segment is the worse one.
    Returns 0 when no such split exists.
    """
    idx = [i for i, r in enumerate(rows) if r[_V] is not None]
    if len(idx) < 2 * min_seg:
        return 0
    z2 = np.array([(rows[i][_V] / rows[i][_SV]) ** 2 for i in idx])
    z2 = np.maximum(z2, 1e-300)
    cum = np.cumsum(z2)
    n = len(z2)
    k = np.arange(min_seg, n - min_seg + 1)
    before = cum[k - 1] / k
    after = (cum[-1] - cum[k - 1]) / (n - k)
    cost = k * np.log(before) + (n - k) * np.log(after)
    best = int(np.argmin(cost))
    whole = n * math.log(cum[-1] / n)
    if after[best] <= before[best] or whole - cost[best] <= 0:
        return 0
    return idx[k[best]]


def _excluded(rows):
    return np.array([r[_FLAG] or r[_EPI] for r in rows], dtype=bool)


def _screen(cfg, model, rows):
    """Test ``rows`` under ``model``; returns the flags and the censored
    scale of the standardized innovations on rows with unflagged lags."""
    kf = _fresh_filter(cfg, model)
    p = model.lags
    flags = np.zeros(len(rows), dtype=bool)
    z, hit = [], []
    for i, r in enumerate(rows):
        kf, inn, dec = step(kf, (r[_T], r[_Y], r[_X]))
        flags[i] = dec.flagged
        if math.isfinite(dec.threshold) and i >= p and not flags[i - p : i].any():
            z.append(inn.v / math.sqrt(inn.V))
            hit.append(dec.flagged)
    z, hit = np.asarray(z), np.asarray(hit, dtype=bool)
    if (~hit).sum() < 2 or model.sigma == 0:
        return flags, 1.0
    cut = math.sqrt(chi2_threshold(1, cfg.confidence))
    return flags, censored_scale(z[~hit], np.full(int(hit.sum()), cut))


def _rescreen(state, rows, rounds=5):
    """Alternate fit and candidate-model test until the flag set settles.

    The fit's sigma is rescaled by the censored innovation scale before
    each test so trimming does not shrink it round after round.
    """
    cfg = state.config
    exclude = np.zeros(len(rows), dtype=bool)
    order = None
    for _ in range(rounds):
        model, sys = _fit(state, rows, exclude, order)
        order = (model.n, model.m if model.exog else 0)
        _, scale = _screen(cfg, model, rows)
        model = replace(model, sigma=model.sigma * scale)
        flags, _ = _screen(cfg, model, rows)
        if np.array_equal(flags, exclude):
            break
        exclude = flags
    return model, sys, _fresh_filter(cfg, model)


def batch_step(state, channel):
    """Evaluate, decide and apply for one channel; returns events."""
    ch = state.channels[channel]
    ch.since_eval = 0
    t = ch.last_t if ch.last_t is not None else 0
    try:
        report = evaluate_model(state, channel)
    except SentinelError as exc:
        ch.counts["diagnostics"] += 1
        ch.counts["actions"][KEEP] += 1
        return [DiagnosticEvent(t, channel, type(exc).__name__, str(exc), ch.generation)]
    action = decide_update(report, state.config)
    gen_before = ch.generation
    events = apply_action(state, channel, action, report)
    if ch.generation == gen_before:
        action = KEEP
    ch.counts["actions"][action] += 1
    events.append(
        ActionEvent(t, channel, action, report.nrmse, report.flagged_fraction, report.window[0], report.window[1], ch.generation)
    )
    return events


def run(config, source, sink, models=None, state=None):
    """Drive the loop over ``source`` and hand every event to ``sink``.

    Unregistered channels are bootstrapped from their first
    ``bootstrap_len`` samples unless ``models`` supplies a model, in which
    case detection starts immediately. Returns the summary dictionary.
    """
    state = state or PipelineState(config)
    models = dict(models or {})
    pending: Dict[str, list] = {}
    boot = config.bootstrap_for()
    totals = {"samples": 0, "events": 0}
    failed: Dict[str, int] = {}

    def emit(events):
        for ev in events:
            try:
                sink(ev)
            except Exception as exc:
                raise SinkFailure(f"event sink failed: {exc}", summarize(state, totals, pending, failed)) from exc
            totals["events"] += 1

    for sample in source:
        if not isinstance(sample, SensorSample):
            sample = SensorSample(*sample)
        totals["samples"] += 1
        sid = sample.sensor_id
        ch = state.channels.get(sid)
        if ch is None:
            if sid in failed:
                failed[sid] += 1
                continue
            if sid in models:
                register(state, sid, [], models.pop(sid))
                ch = state.channels[sid]
            else:
                hist = pending.setdefault(sid, [])
                if hist and sample.t <= hist[-1].t:
                    raise OutOfOrder(f"sample t={sample.t} does not advance past t={hist[-1].t} ({sid})")
                hist.append(sample)
                if len(hist) >= boot:
                    try:
                        register(state, sid, pending.pop(sid))
                    except SentinelError as exc:
                        failed[sid] = 0
                        emit([DiagnosticEvent(sample.t, sid, type(exc).__name__, f"bootstrap failed: {exc}")])
                continue
        emit(speed_step(state, sample))
        if ch.since_eval >= config.eval_window:
            emit(batch_step(state, sid))

    emit(flush(state))
    for sid, hist in sorted(pending.items()):
        emit([DiagnosticEvent(hist[-1].t, sid, "InsufficientData", f"bootstrap incomplete: {len(hist)} of {boot} samples")])
    return summarize(state, totals, pending, failed)


def summarize(state, totals, pending=None, failed=None):
    chans = {}
    for sid in sorted(state.channels):
        ch = state.channels[sid]
        c = dict(ch.counts)
        c["generation"] = ch.generation
        c["order"] = [ch.model.n, ch.model.m if ch.model.exog else 0]
        c["sigma"] = ch.model.sigma
        chans[sid] = c
    return {
        "samples": totals.get("samples", 0),
        "events": totals.get("events", 0),
        "channels": chans,
        "pending": {k: len(v) for k, v in sorted((pending or {}).items())},
        "failed": dict(sorted((failed or {}).items())),
    }
