"""Kalman tracking of an identified plant and the chi-squared global test.

The filter runs on a :class:`~sentinel.ident.StateSpaceModel`. Innovations
``v = y - C x_pred`` and their covariance ``V = C P C^T + R`` feed the
statistic ``gamma = v^T V^-1 v``; a sample is a gross-error candidate when
``gamma`` exceeds the chi-squared quantile at the chosen confidence.
Flagged samples are not used to correct the state (the filter coasts).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import math
from typing import Optional

import numpy as np
from scipy import stats

from .errors import BadConfidence, InvalidNoise, NonFinite, OutOfOrder, SingularInnovation
from .ident import SensorSample, StateSpaceModel

DEFAULT_CONFIDENCE = 0.95


@dataclass(frozen=True)
class NoiseConfig:
    """Noise levels for the filter.

    ``R`` is the measurement-noise variance. Process noise is
    ``Q = q_scale * R * I + drive * G G^T`` where ``drive`` is the variance
    of the equation-error sequence entering through the model's ``G``.
    """

    R: float
    q_scale: float = 1e-4
    P0_scale: float = 100.0
    drive: float = 0.0

    def __post_init__(self):
        for name in ("R", "q_scale", "P0_scale"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidNoise(f"{name} must be finite and > 0, got {v}")
        if not (math.isfinite(self.drive) and self.drive >= 0):
            raise InvalidNoise(f"drive must be finite and >= 0, got {self.drive}")

    @classmethod
    def for_model(cls, sigma, meas_frac=1e-3, q_scale=1e-4, P0_scale=1e3):
        """Noise levels for a channel whose one-step residual deviation is ``sigma``.

        The residual variance drives the state; a small ``meas_frac`` share
        is kept as measurement noise so ``V`` stays positive.
        """
        var = float(sigma) ** 2
        if var <= 0:
            var = np.finfo(float).tiny ** 0.5
        return cls(R=meas_frac * var, q_scale=q_scale, P0_scale=P0_scale, drive=var)


@dataclass(frozen=True)
class Innovation:
    v: float
    V: float
    k: int


@dataclass(frozen=True)
class GedDecision:
    gamma: float
    threshold: float
    flagged: bool
    k: int


@dataclass(frozen=True)
class KalmanState:
    x_hat: np.ndarray
    P: np.ndarray
    model: StateSpaceModel
    noise: NoiseConfig
    Q: np.ndarray
    k: Optional[int] = None
    threshold: float = 3.841458820694124
    warmup: int = 0
    seen: int = 0
    x_now: float = 0.0
    coasting: bool = False

    @property
    def predicted(self):
        """Predicted measurement ``C x_hat`` (plus feedthrough)."""
        return float(self.model.C[0] @ self.x_hat + self.model.D[0, 0] * self.x_now)


def chi2_threshold(dof=1, confidence=DEFAULT_CONFIDENCE):
    """Chi-squared quantile at ``confidence`` with ``dof`` degrees of freedom."""
    if not 0.0 < confidence < 1.0:
        raise BadConfidence(f"confidence must lie in (0, 1), got {confidence}")
    if dof < 1:
        raise ValueError(f"dof must be >= 1, got {dof}")
    return float(stats.chi2.ppf(confidence, dof))


def init_filter(model, noise, confidence=DEFAULT_CONFIDENCE, warmup=None):
    """Zero state, ``P = P0_scale * R * I``; ``warmup`` defaults to ``10 * n``."""
    if not isinstance(noise, NoiseConfig):
        raise InvalidNoise("noise must be a NoiseConfig")
    n = model.dim
    Q = noise.q_scale * noise.R * np.eye(n) + noise.drive * (model.G @ model.G.T)
    return KalmanState(
        x_hat=np.zeros(n),
        P=noise.P0_scale * noise.R * np.eye(n),
        model=model,
        noise=noise,
        Q=Q,
        threshold=chi2_threshold(1, confidence),
        warmup=10 * n if warmup is None else int(warmup),
    )


def predict(state, exog=None):
    A = state.model.A
    x = A @ state.x_hat
    u = 0.0
    if state.model.exog and exog is not None:
        u = float(exog)
        x = x + state.model.B[:, 0] * u
    P = A @ state.P @ A.T + state.Q
    return replace(state, x_hat=x, P=0.5 * (P + P.T), x_now=u)


def innovate(state, measurement):
    if not math.isfinite(measurement):
        raise NonFinite(f"non-finite measurement {measurement}")
    C = state.model.C[0]
    v = float(measurement) - state.predicted
    V = float(C @ state.P @ C) + state.noise.R
    return Innovation(v, V, state.k if state.k is not None else 0)


def correct(state, innovation):
    """Measurement update with the Joseph-stabilized covariance."""
    if not innovation.V > 0:
        raise SingularInnovation(f"innovation covariance {innovation.V} <= 0")
    C = state.model.C[0]
    PC = state.P @ C
    K = PC / innovation.V
    x = state.x_hat + K * innovation.v
    IKC = np.eye(len(x)) - np.outer(K, C)
    P = IKC @ state.P @ IKC.T + state.noise.R * np.outer(K, K)
    return replace(state, x_hat=x, P=0.5 * (P + P.T))


def tail_moment(threshold):
    """``E[z^2 | z^2 > threshold]`` for a standard normal ``z``."""
    if not math.isfinite(threshold):
        return 1.0
    c = math.sqrt(threshold)
    return 1.0 + c * float(stats.norm.pdf(c) / stats.norm.sf(c))


def withhold(state, innovation):
    """Skip the correction for a sample that failed the test.

    ``x_hat`` is left as predicted. ``P`` absorbs the extra spread of the
    withheld innovation, which under the null is known only to lie beyond
    the cut, so the next test is not run against an overconfident ``V``.
    """
    C = state.model.C[0]
    K = state.P @ C / innovation.V
    extra = (tail_moment(state.threshold) - 1.0) * innovation.V
    P = state.P + extra * np.outer(K, K)
    return replace(state, P=0.5 * (P + P.T))


def global_test(innovation, threshold):
    """``gamma = v^T V^-1 v`` and the comparison against ``threshold``."""
    v = np.atleast_1d(np.asarray(innovation.v, dtype=float))
    V = np.atleast_2d(np.asarray(innovation.V, dtype=float))
    if v.size == 1:
        if not V[0, 0] > 0:
            raise SingularInnovation(f"innovation covariance {V[0, 0]} <= 0")
        gamma = float(v[0] * v[0] / V[0, 0])
    else:
        try:
            gamma = float(v @ np.linalg.solve(V, v))
        except np.linalg.LinAlgError as exc:
            raise SingularInnovation(str(exc)) from exc
    return GedDecision(gamma, float(threshold), gamma > threshold, innovation.k)


def step(state, sample):
    """predict -> innovate -> global test -> correct (skipped when flagged).

    During the first ``warmup`` samples the test threshold is infinite so
    nothing is flagged and every sample corrects the state. The first flag
    of a run goes through :func:`withhold`; later flags in the same run
    coast on the plain prediction.
    """
    if isinstance(sample, SensorSample):
        t, value, exog = sample.t, sample.value, sample.exog
    else:
        t, value, exog = sample
    if state.k is not None and t <= state.k:
        raise OutOfOrder(f"sample t={t} does not advance past t={state.k}")
    pred = replace(predict(state, exog), k=t)
    inn = innovate(pred, value)
    threshold = math.inf if state.seen < state.warmup else state.threshold
    dec = global_test(inn, threshold)
    if not dec.flagged:
        post = correct(pred, inn)
    elif state.coasting:
        post = pred
    else:
        post = withhold(pred, inn)
    return replace(post, seen=state.seen + 1, coasting=dec.flagged), inn, dec
