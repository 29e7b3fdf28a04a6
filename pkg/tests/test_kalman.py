import math

import numpy as np
import pytest
from dataclasses import replace
from scipy import linalg, stats

from conftest import NaiveKF, random_stable_alpha, simulate_ar
from sentinel.errors import BadConfidence, InvalidNoise, OutOfOrder
from sentinel.ident import ArmaModel, StateSpaceModel, to_state_space
from sentinel.kalman import (
    Innovation,
    NoiseConfig,
    chi2_threshold,
    correct,
    global_test,
    init_filter,
    innovate,
    predict,
    step,
    tail_moment,
)


def scalar_ss(a=1.0, c=1.0):
    one = np.array([[1.0]])
    return StateSpaceModel(np.array([[a]]), one, np.array([[c]]), np.zeros((1, 1)), one)


def test_init_examples():
    kf = init_filter(scalar_ss(), NoiseConfig(R=1.0, P0_scale=100.0))
    np.testing.assert_array_equal(kf.P, [[100.0]])
    np.testing.assert_array_equal(kf.x_hat, [0.0])
    with pytest.raises(InvalidNoise):
        NoiseConfig(R=1.0, q_scale=0.0)
    kf3 = init_filter(to_state_space(ArmaModel([0.1, 0.2, 0.3], [1.0])), NoiseConfig(R=2.0))
    assert kf3.P.shape == (3, 3)
    np.testing.assert_array_equal(kf3.P, np.diag(np.diag(kf3.P)))
    assert np.all(np.linalg.eigvalsh(kf3.P) >= 0)


def test_predict_examples():
    kf = init_filter(scalar_ss(), NoiseConfig(R=1.0))
    kf = replace(kf, x_hat=np.array([2.0]), P=np.array([[1.0]]), Q=np.array([[0.1]]))
    out = predict(kf)
    np.testing.assert_allclose(out.x_hat, [2.0])
    np.testing.assert_allclose(out.P, [[1.1]])
    dead = replace(kf, model=scalar_ss(a=0.0), x_hat=np.array([7.0]))
    np.testing.assert_array_equal(predict(dead).x_hat, [0.0])


def test_predict_converges_to_lyapunov(rng):
    model = to_state_space(ArmaModel(random_stable_alpha(rng, 3), [1.0]))
    kf = init_filter(model, NoiseConfig(R=1.0, drive=1.0))
    # independent oracle: fixed-point iteration of P <- A P A^T + Q
    P = kf.P.copy()
    for _ in range(5000):
        P = model.A @ P @ model.A.T + kf.Q
    prev = kf
    for _ in range(1000):
        cur = predict(prev)
        delta = np.linalg.norm(cur.P - prev.P)
        prev = cur
    assert delta < 1e-8
    np.testing.assert_allclose(prev.P, P, rtol=1e-8)
    np.testing.assert_allclose(prev.P, linalg.solve_discrete_lyapunov(model.A, kf.Q), rtol=1e-8)


def test_innovate_examples():
    kf = init_filter(scalar_ss(), NoiseConfig(R=1.0))
    kf = replace(kf, x_hat=np.array([3.0]), P=np.array([[0.0]]))
    assert (innovate(kf, 3.0).v, innovate(kf, 3.0).V) == (0.0, 1.0)
    assert (innovate(kf, 5.0).v, innovate(kf, 5.0).V) == (2.0, 1.0)
    assert innovate(replace(kf, P=np.array([[4.0]])), 3.0).V == 5.0


def test_correct_examples():
    kf = init_filter(scalar_ss(), NoiseConfig(R=1.0))
    kf = replace(kf, x_hat=np.array([0.0]), P=np.array([[1.0]]))
    post = correct(kf, Innovation(2.0, 2.0, 0))
    np.testing.assert_allclose(post.x_hat, [1.0])
    np.testing.assert_allclose(post.P, [[0.5]])
    same = correct(kf, Innovation(0.0, 2.0, 0))
    np.testing.assert_array_equal(same.x_hat, kf.x_hat)
    assert np.trace(same.P) <= np.trace(kf.P)


def test_chi2_and_global_test():
    assert chi2_threshold(1, 0.95) == pytest.approx(3.841, abs=1e-3)
    assert chi2_threshold(1, 0.99) == pytest.approx(6.635, abs=1e-3)
    with pytest.raises(BadConfidence):
        chi2_threshold(1, 1.0)
    assert global_test(Innovation(2.0, 4.0, 0), 3.841).gamma == 1.0
    zero = global_test(Innovation(0.0, 4.0, 0), 0.0)
    assert zero.gamma == 0.0 and not zero.flagged
    hit = global_test(Innovation(4.0, 4.0, 0), chi2_threshold(1, 0.95))
    assert hit.gamma == 4.0 and hit.flagged


def run_filter(model, y, confidence=0.95, sigma=1.0):
    kf = init_filter(to_state_space(model), NoiseConfig.for_model(sigma), confidence)
    out = []
    for k, v in enumerate(y):
        kf, inn, dec = step(kf, (k, v, None))
        out.append((kf, inn, dec))
    return out


@pytest.mark.parametrize("seed", range(20))
def test_matches_naive_reference(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    alpha = random_stable_alpha(rng, n)
    y = simulate_ar(alpha, 500, seed=seed)
    model = ArmaModel(alpha, [1.0], sigma=1.0)
    ss = to_state_space(model)
    noise = NoiseConfig.for_model(1.0)
    Q = noise.q_scale * noise.R * np.eye(n) + noise.drive * ss.G @ ss.G.T
    ref = NaiveKF(ss.A, ss.C, Q, noise.R, noise.P0_scale * noise.R * np.eye(n), chi2_threshold(1, 0.95), 10 * n)
    for (kf, inn, dec), v in zip(run_filter(model, y), y):
        rv, rS, rflag = ref.step(v)
        assert dec.flagged == rflag
        assert inn.v == pytest.approx(rv, abs=1e-9)
        assert inn.V == pytest.approx(rS, abs=1e-9)
        np.testing.assert_allclose(kf.x_hat, ref.x, atol=1e-9)
        np.testing.assert_allclose(kf.P, ref.P, atol=1e-9)


@pytest.mark.parametrize("a", [0.2, 0.5, 0.8, 0.95, -0.8])
@pytest.mark.parametrize("confidence, lo, hi", [(0.95, 0.035, 0.065), (0.99, 0.005, 0.017)])
def test_null_calibration(a, confidence, lo, hi):
    model = ArmaModel([-a], [1.0], sigma=1.0)
    y = simulate_ar(model.alpha, 10_000, seed=42)
    rate = np.mean([d.flagged for _, _, d in run_filter(model, y, confidence)])
    assert lo <= rate <= hi


@pytest.mark.parametrize("alpha", [[-0.5, 0.2], [-0.8]])
def test_innovation_whiteness(alpha):
    # pairs that follow a corrected sample; a coasted sample carries its
    # withheld error into the next innovation by design
    model = ArmaModel(alpha, [1.0], sigma=1.0)
    y = simulate_ar(model.alpha, 10_000, seed=8)
    trace = run_filter(model, y)[20:]
    z = np.array([inn.v / math.sqrt(inn.V) for _, inn, _ in trace])
    ok = ~np.array([d.flagged for _, _, d in trace])[:-1]
    a, b = z[:-1][ok], z[1:][ok]
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05


def test_tail_moment_matches_integration():
    from scipy import integrate

    thr = chi2_threshold(1, 0.95)
    c = math.sqrt(thr)
    ref = integrate.quad(lambda z: z * z * stats.norm.pdf(z), c, np.inf)[0] / stats.norm.sf(c)
    assert tail_moment(thr) == pytest.approx(ref, rel=1e-10)
    assert tail_moment(math.inf) == 1.0


def test_bias_flagged_quickly():
    model = ArmaModel([-0.8], [1.0], sigma=1.0)
    y = simulate_ar(model.alpha, 1000, seed=4)
    y[500:] += 6.0
    flags = [k for k, (_, _, d) in enumerate(run_filter(model, y)) if d.flagged and k >= 500]
    assert flags[0] - 500 <= 5


def test_out_of_order():
    kf = init_filter(scalar_ss(0.5), NoiseConfig(R=1.0))
    kf, _, _ = step(kf, (5, 0.1, None))
    with pytest.raises(OutOfOrder):
        step(kf, (3, 0.1, None))


def test_coasting_equals_pure_prediction():
    model = ArmaModel([-0.9, 0.2], [1.0], sigma=1.0)
    y = simulate_ar(model.alpha, 400, seed=2)
    y[200:300] = 50.0
    kf = init_filter(to_state_space(model), NoiseConfig.for_model(1.0))
    for k in range(200):
        kf, _, _ = step(kf, (k, y[k], None))
    pure = kf
    for k in range(200, 300):
        kf, _, dec = step(kf, (k, y[k], None))
        assert dec.flagged
        pure = predict(pure)
        np.testing.assert_array_equal(kf.x_hat, pure.x_hat)


def test_covariance_stays_psd(rng):
    for _ in range(5):
        n = int(rng.integers(1, 6))
        model = ArmaModel(random_stable_alpha(rng, n), [1.0], sigma=1.0)
        y = simulate_ar(model.alpha, 20_000, seed=int(rng.integers(1 << 30)))
        kf = init_filter(to_state_space(model), NoiseConfig.for_model(1.0))
        for k, v in enumerate(y):
            kf, _, _ = step(kf, (k, v, None))
            if k % 997 == 0:
                assert np.allclose(kf.P, kf.P.T, atol=1e-9)
                assert np.linalg.eigvalsh(kf.P).min() >= -1e-9
        assert np.all(np.isfinite(kf.x_hat))
