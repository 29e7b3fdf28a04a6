"""A sensor whose dynamics change mid-stream, and the loop that refits it.

Run: python3 demos/update_loop.py
"""

import numpy as np

from sentinel.ident import ArmaModel, SensorSample
from sentinel.pipeline import PipelineConfig, PipelineState, run
from sentinel.synth import generate_clean

before = generate_clean(ArmaModel([-0.9], [1.0]), 7000, 1.0, [5, 0])
after = generate_clean(ArmaModel([0.9], [1.0]), 7000, 1.0, [5, 1])
samples = [SensorSample(t, "valve", float(v)) for t, v in enumerate(np.concatenate([before, after]))]

cfg = PipelineConfig(order=(1, 0))
state = PipelineState(cfg)
events = []
summary = run(cfg, iter(samples), events.append, state=state)

print("pole moves from +0.9 to -0.9 at t=7000\n")
print("   t  action     nrmse  generation")
for e in events:
    if e.kind == "action" and 5500 <= e.t <= 9500:
        print(f"{e.t:>5}  {e.action:<9} {e.nrmse:6.2f}  {e.model_generation}")

model = state.channels["valve"].model
print(f"\nfinal model: alpha={np.round(model.alpha, 3)} sigma={model.sigma:.3f}")
print("actions taken:", summary["channels"]["valve"]["actions"])
