"""ARMA/ARX identification by least squares.

The difference equation fitted here is

    y_k + a_1 y_{k-1} + ... + a_n y_{k-n} = b_0 x_k + ... + b_m x_{k-m}

with ``alpha = (a_1..a_n)`` and ``beta = (b_0..b_m)``. Coefficients keep the
left-hand-side sign, so a one-step prediction negates ``alpha``.

Channels without a measured input are fitted as pure AR models; their
``beta`` is the noise-gain convention ``(1, 0, ..., 0)`` and the input is
read as the driving innovation sequence.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
import math
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import (
    InsufficientHistory,
    NonFinite,
    OrderZero,
    RankDeficient,
    SentinelError,
    SeriesTooShort,
)


@dataclass(frozen=True)
class SensorSample:
    """One timestamped scalar measurement from a sensor channel."""

    t: int
    sensor_id: str
    value: float
    exog: Optional[float] = None

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise NonFinite(f"non-finite value at t={self.t} ({self.sensor_id})")
        if self.exog is not None and not math.isfinite(self.exog):
            raise NonFinite(f"non-finite exog at t={self.t} ({self.sensor_id})")


def _stable(alpha):
    if len(alpha) == 0:
        return True
    roots = np.roots(np.r_[1.0, alpha])
    return bool(np.all(np.abs(roots) < 1.0))


@dataclass(frozen=True)
class ArmaModel:
    """Identified coefficients plus baseline residual statistics.

    ``stable`` is derived from the AR polynomial on construction and is
    informational only.
    """

    alpha: tuple
    beta: tuple
    sigma: float = 0.0
    fitted_on: int = 0
    exog: bool = False
    stable: bool = field(init=False)

    def __post_init__(self):
        alpha = tuple(float(a) for a in np.atleast_1d(self.alpha))
        beta = tuple(float(b) for b in np.atleast_1d(self.beta))
        if len(beta) < 1:
            raise ValueError("beta needs at least b_0")
        if not all(map(math.isfinite, alpha + beta)):
            raise NonFinite("non-finite model coefficient")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "stable", _stable(alpha))

    @property
    def n(self):
        return len(self.alpha)

    @property
    def m(self):
        return len(self.beta) - 1

    @property
    def lags(self):
        """Number of past samples a prediction needs."""
        return max(self.n, self.m) if self.exog else self.n

    @property
    def theta(self):
        """Parameter vector in regression-column order."""
        if self.exog:
            return np.array(self.alpha + self.beta)
        return np.array(self.alpha)

    def with_theta(self, theta, **changes):
        theta = np.asarray(theta, dtype=float)
        alpha = tuple(theta[: self.n])
        beta = tuple(theta[self.n :]) if self.exog else self.beta
        return replace(self, alpha=alpha, beta=beta, **changes)


@dataclass(frozen=True)
class RegressionSystem:
    """``design @ theta ~= target`` with ``theta = [alpha, beta]``."""

    design: np.ndarray
    target: np.ndarray
    n: Optional[int] = None
    m: Optional[int] = None
    exog: bool = False


def as_arrays(series, exog=None):
    """Split a series into (values, exog) float arrays.

    ``series`` may hold plain numbers or :class:`SensorSample` objects.
    ``exog`` is returned as ``None`` when absent.
    """
    items = list(series)
    if items and isinstance(items[0], SensorSample):
        y = np.array([s.value for s in items], dtype=float)
        if exog is None and all(s.exog is not None for s in items):
            exog = [s.exog for s in items]
    else:
        y = np.asarray(items, dtype=float).reshape(-1)
    if not np.all(np.isfinite(y)):
        raise NonFinite("series contains NaN or Inf")
    if exog is not None:
        exog = np.asarray(exog, dtype=float).reshape(-1)
        if exog.shape != y.shape:
            raise ValueError("exog length differs from series length")
        if not np.all(np.isfinite(exog)):
            raise NonFinite("exog contains NaN or Inf")
    return y, exog


def build_regression(series, n, m=0, exog=None, exclude=None):
    """Stack the lagged regressors of every usable time index.

    Row ``r`` corresponds to ``k = max(n, m) + r`` and holds
    ``[-y_{k-1} .. -y_{k-n}, x_k .. x_{k-m}]``; the input columns are
    dropped when no exogenous channel is present. ``exclude`` marks samples
    that must not appear in any row, as target or as lag.
    """
    if n < 1 or m < 0:
        raise ValueError(f"orders must satisfy n >= 1, m >= 0 (got {n}, {m})")
    y, x = as_arrays(series, exog)
    T = len(y)
    if T <= n + m + 1:
        raise SeriesTooShort(f"series of length {T} too short for orders n={n}, m={m}")
    p = max(n, m)
    k = np.arange(p, T)
    if exclude is not None:
        bad = np.asarray(exclude, dtype=bool).reshape(-1)
        if bad.shape != y.shape:
            raise ValueError("exclude mask length differs from series length")
        touched = np.zeros(len(k), dtype=bool)
        for j in range(p + 1):
            touched |= bad[k - j]
        k = k[~touched]
    cols = [-y[k - i] for i in range(1, n + 1)]
    if x is not None:
        cols += [x[k - j] for j in range(0, m + 1)]
    design = np.column_stack(cols) if len(k) else np.empty((0, len(cols)))
    return RegressionSystem(design, y[k].copy(), n, m, x is not None)


def _pivoted_qr(design):
    Q, R, piv = scipy.linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(design.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol)) if diag.size and diag[0] > 0 else 0
    return Q, R, piv, rank


def solve_lse(sys):
    """Least-squares coefficients via column-pivoted QR.

    Raises :class:`RankDeficient` naming the first column found to be
    linearly dependent on the others.
    """
    A = np.asarray(sys.design, dtype=float)
    b = np.asarray(sys.target, dtype=float)
    rows, cols = A.shape
    if rows < cols:
        raise RankDeficient(f"{rows} rows cannot determine {cols} coefficients", column=rows)
    Q, R, piv, rank = _pivoted_qr(A)
    if rank < cols:
        col = int(piv[rank])
        raise RankDeficient(f"design rank {rank} < {cols}; column {col} is dependent", column=col)
    z = scipy.linalg.solve_triangular(R, Q.T @ b)
    theta = np.empty(cols)
    theta[piv] = z
    return theta


def information_inverse(sys):
    """``(D^T D)^{-1}`` from the QR factor, used to seed recursive updates."""
    A = np.asarray(sys.design, dtype=float)
    _, R, piv, rank = _pivoted_qr(A)
    if rank < A.shape[1]:
        raise RankDeficient("design is rank deficient", column=int(piv[rank]))
    Rinv = scipy.linalg.solve_triangular(R, np.eye(R.shape[0]))
    Pp = Rinv @ Rinv.T
    P = np.empty_like(Pp)
    P[np.ix_(piv, piv)] = Pp
    return 0.5 * (P + P.T)


def fit_arma(series, n, m=0, exog=None, exclude=None):
    """Fit the difference equation by least squares and record residual sigma."""
    sys = build_regression(series, n, m, exog, exclude)
    theta = solve_lse(sys)
    resid = sys.target - sys.design @ theta
    if len(resid) < 2:
        raise SeriesTooShort("need at least two regression rows for a residual sigma")
    sigma = float(np.std(resid, ddof=1))
    if sys.exog:
        alpha, beta = theta[:n], theta[n:]
    else:
        alpha, beta = theta, np.r_[1.0, np.zeros(m)]
    used = len(as_arrays(series, exog)[0])
    if exclude is not None:
        used -= int(np.count_nonzero(exclude))
    return ArmaModel(tuple(alpha), tuple(beta), sigma, used, sys.exog)


def one_step_predict(model, history, exog_history=None):
    """Predict ``y_k`` from past outputs and (optionally) inputs.

    ``history`` is chronological with ``y_{k-1}`` last. ``exog_history`` is
    chronological with ``x_k`` last. Models without a measured input treat
    the input as zero-mean noise and ignore ``exog_history``.
    """
    h = np.asarray(history, dtype=float).reshape(-1)
    if len(h) < model.n:
        raise InsufficientHistory(f"need {model.n} past outputs, got {len(h)}")
    lagged = h[::-1][: model.n]
    pred = -float(np.dot(model.alpha, lagged))
    if exog_history is not None:
        xh = np.asarray(exog_history, dtype=float).reshape(-1)
        if len(xh) < model.m + 1:
            raise InsufficientHistory(f"need {model.m + 1} inputs, got {len(xh)}")
        pred += float(np.dot(model.beta, xh[::-1][: model.m + 1]))
    elif model.exog:
        raise InsufficientHistory("model has an exogenous input but none was supplied")
    return pred


def predict_series(model, series, exog=None):
    """In-sample one-step predictions for indices ``model.lags .. T-1``."""
    y, x = as_arrays(series, exog)
    p = model.lags
    T = len(y)
    if T <= p:
        raise InsufficientHistory(f"series of length {T} has no index after {p} lags")
    k = np.arange(p, T)
    pred = np.zeros(len(k))
    for i, a in enumerate(model.alpha, start=1):
        pred -= a * y[k - i]
    if model.exog:
        if x is None:
            raise InsufficientHistory("model has an exogenous input but none was supplied")
        for j, b in enumerate(model.beta):
            pred += b * x[k - j]
    return pred


def residuals(model, series, exog=None):
    y, _ = as_arrays(series, exog)
    return y[model.lags :] - predict_series(model, series, exog)


def residual_sigma(model, series, exog=None):
    """Sample standard deviation (N-1) of one-step prediction residuals."""
    r = residuals(model, series, exog)
    if len(r) < 2:
        raise InsufficientHistory("need at least two residuals for a sample deviation")
    return float(np.std(r, ddof=1))


@dataclass
class RlsState:
    """Mutable state of the recursive least-squares solver.

    ``P`` is the inverse information matrix; ``y_lags``/``x_lags`` hold the
    most recent samples (newest last) used to form the next regression row.
    """

    theta: np.ndarray
    P: np.ndarray
    lam: float = 1.0
    y_lags: deque = field(default_factory=deque)
    x_lags: deque = field(default_factory=deque)

    def observe(self, value, exog=None, lags=None):
        """Push a sample into the lag buffers without updating coefficients."""
        self.y_lags.append(float(value))
        if exog is not None:
            self.x_lags.append(float(exog))
        if lags is not None:
            while len(self.y_lags) > lags:
                self.y_lags.popleft()
            while len(self.x_lags) > lags:
                self.x_lags.popleft()

    def clear_lags(self):
        self.y_lags.clear()
        self.x_lags.clear()


def rls_init(model, series, exog=None, lam=1.0):
    """Seed a recursive solver from the batch regression over ``series``."""
    if not 0.9 < lam <= 1.0:
        raise ValueError(f"forgetting factor must lie in (0.9, 1], got {lam}")
    y, x = as_arrays(series, exog)
    m = model.m if model.exog else 0
    sys = build_regression(y, model.n, m, x if model.exog else None)
    state = RlsState(model.theta.copy(), information_inverse(sys), lam)
    keep = max(model.lags, 1)
    state.y_lags.extend(y[-keep:])
    if model.exog:
        state.x_lags.extend(x[-keep:])
    return state


def rls_step(theta, P, phi, target, lam=1.0):
    """One exponentially weighted RLS update; returns new ``(theta, P)``."""
    Pphi = P @ phi
    gain = Pphi / (lam + phi @ Pphi)
    err = target - phi @ theta
    theta = theta + gain * err
    P = (P - np.outer(gain, Pphi)) / lam
    return theta, 0.5 * (P + P.T)


def regression_row(model, y_lags, x_lags, x_now=None):
    n = model.n
    if len(y_lags) < n:
        raise InsufficientHistory(f"need {n} past outputs, have {len(y_lags)}")
    ys = list(y_lags)[::-1][:n]
    phi = [-v for v in ys]
    if model.exog:
        if x_now is None or len(x_lags) < model.m:
            raise InsufficientHistory(f"need x_k and {model.m} past inputs")
        phi += [x_now] + list(x_lags)[::-1][: model.m]
    return np.array(phi, dtype=float)


def rls_update(model, sample, gain_state):
    """Fold one new sample into the coefficients.

    Raises :class:`InsufficientHistory` (leaving ``gain_state`` untouched)
    when the lag buffers cannot form a full regression row.
    """
    value = sample.value if isinstance(sample, SensorSample) else float(sample)
    x_now = sample.exog if isinstance(sample, SensorSample) else None
    phi = regression_row(model, gain_state.y_lags, gain_state.x_lags, x_now)
    theta, P = rls_step(gain_state.theta, gain_state.P, phi, value, gain_state.lam)
    gain_state.theta, gain_state.P = theta, P
    gain_state.observe(value, x_now if model.exog else None, lags=max(model.lags, 1))
    return model.with_theta(theta, fitted_on=model.fitted_on + 1)


@dataclass(frozen=True)
class StateSpaceModel:
    """Canonical-form realization ``x_k = A x_{k-1} + B u_k``, ``y_k = C x_k + D u_k``.

    ``G`` routes the equation-error innovation into the state so that
    ``C (I - A q^-1)^-1 G`` equals ``1 / A(q)``. For pure AR channels
    ``G == B``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    G: np.ndarray
    exog: bool = False

    @property
    def dim(self):
        return self.A.shape[0]


def companion(alpha):
    N = len(alpha)
    A = np.zeros((N, N))
    A[0, :] = -np.asarray(alpha, dtype=float)
    if N > 1:
        A[np.arange(1, N), np.arange(0, N - 1)] = 1.0
    return A


def arma_impulse(alpha, beta, count):
    """Impulse response of ``B(q)/A(q)`` by direct recursion."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    h = np.zeros(count)
    for k in range(count):
        acc = beta[k] if k < len(beta) else 0.0
        for i in range(1, min(k, len(alpha)) + 1):
            acc -= alpha[i - 1] * h[k - i]
        h[k] = acc
    return h


def ss_impulse(ss, count, noise=False):
    """Impulse response of a state-space model (input or noise channel)."""
    col = ss.G if noise else ss.B
    out = np.empty(count)
    x = col[:, 0].copy()
    out[0] = (ss.C @ x)[0] + (0.0 if noise else ss.D[0, 0])
    for k in range(1, count):
        x = ss.A @ x
        out[k] = (ss.C @ x)[0]
    return out


def to_state_space(model):
    """Controllable canonical realization of the fitted model.

    The state dimension is ``n`` unless ``beta`` has nonzero entries at lag
    ``n`` or beyond, in which case the AR polynomial is zero-padded.
    """
    if model.n == 0:
        raise OrderZero("state-space conversion needs n >= 1")
    beta = np.asarray(model.beta, dtype=float)
    nz = np.flatnonzero(beta)
    last = int(nz[-1]) if nz.size else 0
    N = model.n if last < model.n else last + 1
    alpha = np.zeros(N)
    alpha[: model.n] = model.alpha
    A = companion(alpha)
    B = np.zeros((N, 1))
    B[0, 0] = 1.0
    C = np.zeros((1, N))
    C[0, : min(N, len(beta))] = beta[:N]
    D = np.zeros((1, 1))
    if model.exog:
        O = np.vstack([C @ np.linalg.matrix_power(A, k) for k in range(N)])
        target = arma_impulse(alpha, [1.0], N)
        G = np.linalg.lstsq(O, target, rcond=None)[0].reshape(N, 1)
    else:
        G = B.copy()
    ss = StateSpaceModel(A, B, C, D, G, model.exog)

    count = 2 * N
    ref = arma_impulse(alpha, beta, count)
    got = ss_impulse(ss, count)
    if not np.allclose(got, ref, rtol=1e-9, atol=1e-9 * max(1.0, np.max(np.abs(ref)))):
        raise SentinelError("state-space impulse response disagrees with the difference equation")
    return ss


def select_order(series, max_n, max_m=0, exog=None, exclude=None):
    """Grid search over ``(n, m)`` by a penalized log residual variance.

    Ties (within float resolution) go to the smaller ``n`` then ``m``. Grid
    points too long for the series are skipped.
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    y, x = as_arrays(series, exog)
    m_range = range(0, max_m + 1) if x is not None else range(0, 1)
    floor = 1e-24 * max(float(np.mean(y**2)), 1e-300)
    best = None
    for n in range(1, max_n + 1):
        for m in m_range:
            try:
                sys = build_regression(y, n, m, x, exclude)
                theta = solve_lse(sys)
            except (SeriesTooShort, RankDeficient):
                continue
            rows = len(sys.target)
            resid = sys.target - sys.design @ theta
            var = max(float(resid @ resid) / rows, floor)
            score = math.log(var) + 2.0 * sys.design.shape[1] / rows
            if best is None or score < best[0] - 1e-9:
                best = (score, n, m)
    if best is None:
        raise SeriesTooShort(f"series of length {len(y)} too short for every order in the grid")
    return best[1], best[2]
