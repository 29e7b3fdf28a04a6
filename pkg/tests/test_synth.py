import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sentinel.classifier import ErrorClass
from sentinel.errors import OverlappingFault, SpecOutOfRange, Unsatisfiable, UnstableModel
from sentinel.ident import ArmaModel
from sentinel.synth import (
    CLEAN,
    FaultSpec,
    ScenarioConfig,
    generate_clean,
    inject_fault,
    make_scenario,
    place_random,
)

AR1 = ArmaModel([-0.8], [1.0])


def clean_stream(length=2000, seed=0):
    return make_scenario(ScenarioConfig(AR1, length, seed=seed))


def delta(stream):
    return stream.values - stream.clean


def test_noise_free_decay():
    y = generate_clean(ArmaModel([-0.5], [1.0]), 20, 0.0, 0, burn_in=0, initial=[1.0])
    np.testing.assert_allclose(y[:5], 0.5 ** np.arange(1, 6))


def test_same_seed_identical():
    a = generate_clean(AR1, 500, 1.0, 3)
    b = generate_clean(AR1, 500, 1.0, 3)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("alpha, var", [([-0.8], 1 / (1 - 0.64)), ([-0.5, 0.2], None)])
def test_stationary_variance(alpha, var):
    if var is None:
        # AR(2) y_k = a1 y_{k-1} + a2 y_{k-2} + e_k, Yule-Walker variance
        a1, a2 = -alpha[0], -alpha[1]
        var = (1 - a2) / ((1 + a2) * ((1 - a2) ** 2 - a1**2))
    y = generate_clean(ArmaModel(alpha, [1.0]), 50_000, 1.0, 21)
    assert np.var(y) == pytest.approx(var, rel=0.05)


def test_unstable_rejected():
    with pytest.raises(UnstableModel):
        generate_clean(ArmaModel([-1.2], [1.0]), 100, 1.0, 0)


def test_bias_delta():
    s = inject_fault(clean_stream(), FaultSpec(ErrorClass.BIAS, 500, 100, 2.0))
    d = delta(s)
    np.testing.assert_allclose(d[500:600], 2.0)
    assert np.all(d[:500] == 0) and np.all(d[600:] == 0)
    assert s.truth[499] == CLEAN and set(s.truth[500:600]) == {"Bias"}


def test_drift_endpoints():
    d = delta(inject_fault(clean_stream(), FaultSpec(ErrorClass.DRIFT, 500, 100, 3.0)))
    assert d[500] == 0.0
    assert d[599] == pytest.approx(3.0)


def test_pd_spread():
    s = inject_fault(clean_stream(3000), FaultSpec(ErrorClass.PRECISION_DEGRADATION, 1000, 1000, 2.5))
    assert np.std(delta(s)[1000:2000]) == pytest.approx(np.sqrt(2.5**2 - 1), rel=0.1)


def test_failure_stuck():
    s = inject_fault(clean_stream(), FaultSpec(ErrorClass.FAILURE, 500, 100, 4.0))
    np.testing.assert_allclose(s.values[500:600], s.clean[499] + 4.0)


def test_fault_errors():
    s = inject_fault(clean_stream(), FaultSpec(ErrorClass.BIAS, 500, 100, 2.0))
    with pytest.raises(OverlappingFault):
        inject_fault(s, FaultSpec(ErrorClass.DRIFT, 550, 100, 2.0))
    with pytest.raises(SpecOutOfRange):
        inject_fault(s, FaultSpec(ErrorClass.DRIFT, 1950, 100, 2.0))
    with pytest.raises(SpecOutOfRange):
        FaultSpec(ErrorClass.PRECISION_DEGRADATION, 0, 10, 0.5)
    with pytest.raises(Unsatisfiable):
        place_random(np.random.default_rng(0), 100, [60, 60], 5)


def test_no_faults_all_clean():
    assert set(clean_stream().truth) == {CLEAN}


def test_four_fault_labels_hash_stable():
    faults = [
        FaultSpec(ErrorClass.BIAS, 200, 100, 3.0),
        FaultSpec(ErrorClass.DRIFT, 500, 100, 3.0),
        FaultSpec(ErrorClass.PRECISION_DEGRADATION, 800, 100, 3.0),
        FaultSpec(ErrorClass.FAILURE, 1100, 100, 5.0),
    ]
    cfg = ScenarioConfig(AR1, 1500, seed=5, faults=faults)
    h = [hashlib.sha256(("".join(make_scenario(cfg).truth) + make_scenario(cfg).values.tobytes().hex()).encode()).hexdigest() for _ in range(2)]
    assert h[0] == h[1]


@settings(max_examples=1000, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 6), length=st.integers(800, 3000))
def test_random_placement_never_overlaps(seed, k, length):
    rng = np.random.default_rng(seed)
    durations = list(rng.integers(20, 100, size=k))
    try:
        starts = place_random(rng, length, durations, 10, 50)
    except Unsatisfiable:
        return
    spans = sorted(zip(starts, (s + d for s, d in zip(starts, durations))))
    assert spans[0][0] >= 50
    assert spans[-1][1] <= length
    for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
        assert a1 <= b0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 5))
def test_labels_match_specs(seed, k):
    cfg = ScenarioConfig(AR1, 3000, seed=seed, random_points=k, lead_in=100)
    s = make_scenario(cfg)
    labels = np.array(s.truth)
    covered = np.zeros(len(labels), dtype=bool)
    for spec in s.specs:
        seg = labels[spec.start_t : spec.end_t]
        assert set(seg) == {spec.error_class.value}
        assert not covered[spec.start_t : spec.end_t].any()
        covered[spec.start_t : spec.end_t] = True
    assert set(labels[~covered]) <= {CLEAN}
