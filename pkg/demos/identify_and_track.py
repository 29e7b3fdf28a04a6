"""Fit a model to clean data, build its state space, and watch the filter.

Run: python3 demos/identify_and_track.py
"""

import numpy as np

from sentinel.ident import ArmaModel, fit_arma, select_order, ss_impulse, arma_impulse, to_state_space
from sentinel.kalman import NoiseConfig, init_filter, step
from sentinel.synth import generate_clean

truth = ArmaModel([-0.5, 0.2], [1.0])
y = generate_clean(truth, 5000, 1.0, seed=3)

# least squares picks the order and recovers the coefficients
n, m = select_order(y, max_n=4)
model = fit_arma(y, n, m)
print(f"selected order n={n}, m={m}")
print(f"alpha={np.round(model.alpha, 3)}  sigma={model.sigma:.3f}  stable={model.stable}")

# the companion form reproduces the difference equation's impulse response
ss = to_state_space(model)
gap = np.abs(ss_impulse(ss, 30) - arma_impulse(model.alpha, model.beta, 30)).max()
print(f"state-space vs recursion impulse gap: {gap:.1e}")

# run the filter on fresh clean data and on the same data with a 6 sigma offset
fresh = generate_clean(truth, 4000, 1.0, seed=4)
bumped = fresh.copy()
bumped[2000:2100] += 6.0 * model.sigma
for name, series in (("clean", fresh), ("offset", bumped)):
    kf = init_filter(ss, NoiseConfig.for_model(model.sigma))
    flags = []
    for k, v in enumerate(series):
        kf, _, dec = step(kf, (k, float(v), None))
        flags.append(dec.flagged)
    flags = np.array(flags)
    inside = flags[2000:2100].mean()
    outside = np.delete(flags, np.s_[2000:2100]).mean()
    print(f"{name:>6}: flag rate {100 * outside:.1f}% outside t=2000..2099, {100 * inside:.0f}% inside")
