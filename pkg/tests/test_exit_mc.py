import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fichera.exit_mc import (
    McConfig,
    RateFit,
    TailEstimate,
    drift_to_origin_probe,
    normal_quantile,
    path_generator,
    rate_regression,
    select_window,
    simulate,
    simulate_exit,
    small_deviation,
    spectral_slope_check,
    survival_curve,
    wilson_interval,
)
from fichera.geometry import DomainSpec
from fichera.heat import v1_series

INTERVAL = DomainSpec.box([(-1, 1)])
LAM1 = math.pi**2 / 4


def test_philox_known_answer():
    # Random123 reference: Philox4x64-10, counter 0, key 0. NumPy bumps the
    # counter before the first block, so start one below zero.
    bg = np.random.Philox(key=0, counter=[2**64 - 1] * 4)
    expected = [0x16554D9ECA36314C, 0xDB20FE9D672D0FDC, 0xD7E772CEE186176B, 0x7E68B68AEC7BA23B]
    assert bg.random_raw(4).tolist() == expected


def test_path_streams_follow_the_stream_rule():
    a = path_generator(7, 3).standard_normal(5)
    b = np.random.Generator(np.random.Philox(key=7, counter=[0, 0, 0, 3])).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, path_generator(7, 4).standard_normal(5))
    with pytest.raises(ValueError):
        path_generator(-1, 0)


def test_results_do_not_depend_on_batching():
    cfg = McConfig(DomainSpec.corner(2), (0.0, 0.0), 1e-3, 300, 5.0, seed=11)
    whole = simulate(cfg)
    parts = [simulate(cfg, s, 100) for s in (0, 100, 200)]
    np.testing.assert_array_equal(whole.times, np.concatenate([p.times for p in parts]))
    t, cens = simulate_exit(cfg, 157)
    assert t == whole.times[157] and cens == whole.censored[157]
    again = simulate(McConfig.from_json(cfg.to_json()))
    np.testing.assert_array_equal(whole.times, again.times)


def test_mean_exit_time_of_interval():
    x = 0.3
    cfg = McConfig(INTERVAL, (x,), 1e-3, 20_000, 50.0, seed=1)
    mean, se = simulate(cfg).mean_exit_time()
    assert abs(mean - (1 - x * x)) < 4 * se + 0.005


def test_bridge_removes_most_of_the_overshoot_bias():
    cfg = dict(domain=INTERVAL, x=(0.0,), dt=1e-2, n_paths=20_000, t_max=50.0, seed=2)
    with_bridge = simulate(McConfig(**cfg)).mean_exit_time()[0]
    without = simulate(McConfig(**cfg, bridge=False)).mean_exit_time()[0]
    assert abs(with_bridge - 1) < 0.5 * abs(without - 1)
    assert without > 1  # discrete monitoring misses exits


def test_survival_matches_series():
    cfg = McConfig(INTERVAL, (0.0,), 1e-3, 20_000, 2.0, seed=3)
    tail = survival_curve(simulate(cfg), [0.0, 0.5, 1.0, 2.0])
    assert tail.at(0.0)[0] == 1.0
    for t in (0.5, 1.0, 2.0):
        S, lo, hi = tail.at(t)
        exact = v1_series(0.0, t)
        assert lo - 0.005 <= exact <= hi + 0.005
    with pytest.raises(ValueError):
        tail.at(0.7)


def test_censoring_blocks_mean():
    cfg = McConfig(INTERVAL, (0.0,), 1e-3, 200, 0.1, seed=4)
    samples = simulate(cfg)
    assert samples.censored.any()
    with pytest.raises(ValueError):
        samples.mean_exit_time()


@settings(max_examples=100)
@given(st.integers(1, 10_000), st.data())
def test_wilson_interval_properties(N, data):
    k = data.draw(st.integers(0, N))
    lo, hi = wilson_interval(k, N)
    assert 0 <= lo <= k / N + 1e-12 and k / N - 1e-12 <= hi <= 1
    lo2, hi2 = wilson_interval(k, N, z=2.58)
    assert lo2 <= lo + 1e-15 and hi2 >= hi - 1e-15


def synthetic_tail(rate, N=10**6, amp=0.9, t_max=8.0):
    t = np.linspace(0, t_max, 81)
    S = amp * np.exp(-rate * t / 2)
    alive = np.round(S * N)
    lo, hi = wilson_interval(alive, N)
    return TailEstimate(t, alive / N, lo, hi, alive.astype(np.int64), N, 0, t_max)


def test_regression_recovers_synthetic_slope():
    fit = rate_regression(synthetic_tail(2.3), (2.0, 7.0))
    assert fit.rate == pytest.approx(2.3, rel=1e-4)
    assert math.exp(fit.intercept) == pytest.approx(0.9, rel=1e-3)
    assert 0 < fit.stderr < 1e-2
    assert fit.n_points == 51
    with pytest.raises(ValueError):
        rate_regression(synthetic_tail(2.3), (2.0, 2.2))


def test_sandwich_error_exceeds_naive_independent_error():
    # shared paths make neighbouring log S values positively correlated
    tail = synthetic_tail(2.3, N=10**4)
    fit = rate_regression(tail, (1.0, 6.0))
    sel = (tail.t >= 1.0) & (tail.t <= 6.0)
    sig = tail.half_width[sel] / (1.96 * tail.S[sel])
    X = np.column_stack([np.ones(sel.sum()), tail.t[sel]])
    naive = math.sqrt(np.linalg.inv(X.T @ (X / sig[:, None] ** 2))[1, 1])
    assert fit.stderr > naive


def test_window_selection_and_fallback():
    tail = synthetic_tail(2.3, N=10**5)
    (t1, t2), fallback = select_window(tail, 2.3, 20.0)
    assert not fallback and t1 == pytest.approx(2 * math.log(20) / 17.7)
    assert tail.n_alive[np.searchsorted(tail.t, t2)] > 100
    (a, b), fallback = select_window(tail, 2.3, 2.4)
    assert fallback and a == pytest.approx(b / 2)


def test_spectral_check():
    fit = RateFit(-1.15, 0.001, (1, 2), 0.0, 0.0, 10)
    assert spectral_slope_check(fit, 2.3)["ok"]
    assert not spectral_slope_check(fit, 2.6)["ok"]


def test_config_validation():
    with pytest.raises(ValueError):
        McConfig(DomainSpec.corner(2), (-2.0, 0.0), 1e-3, 10, 1.0)  # outside
    with pytest.raises(ValueError):
        McConfig(INTERVAL, (0.0,), 0.0, 10, 1.0)
    with pytest.raises(ValueError):
        McConfig(INTERVAL, (0.0, 0.0), 1e-3, 10, 1.0)
    assert McConfig(INTERVAL, (0.0,), 0.1, 1, 1.0).n_steps == 10


def test_small_deviation_routes_agree_and_flag_infeasible():
    res = small_deviation(0.7, DomainSpec.corner(2), 4000, 2e-3, seed=5)
    assert not res.infeasible
    assert res.agree
    assert 0 < res.probability < 1
    big = small_deviation(0.1, DomainSpec.corner(2), 500, 1e-3, seed=5, max_steps=1000)
    assert big.infeasible and big.required_paths > 500


def test_drift_probe_on_interval():
    probe = drift_to_origin_probe(INTERVAL, (0.8,), (0.0,), (1.0, 3.0), 20_000, 1e-3, 3.0, seed=6)
    assert probe.slopes_agree
    assert probe.far_intercept_lower
    assert probe.intercept_ratio == pytest.approx(1 / math.cos(0.4 * math.pi), rel=0.2)
    assert probe.near.rate == pytest.approx(LAM1, rel=0.05)


def test_normal_quantile():
    assert normal_quantile(0.95) == pytest.approx(1.959964, abs=1e-6)
