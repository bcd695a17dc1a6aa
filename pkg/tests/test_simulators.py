"""Simulator correctness: coefficients, distributional facts, determinism."""

import numpy as np
import pytest

from tslfi import rng as rngs
from tslfi.simulators import (
    ar2_coefficients,
    ar2_is_stationary,
    ma2_coefficients,
    read_dataset_block,
    read_dataset_csv,
    simulate_batch,
    simulate_bimodal_ar2,
    simulate_ma2,
    simulate_vdp,
    write_dataset_block,
    write_dataset_csv,
    _vdp_march_full,
)
from tslfi.summaries import autocorr_features_batch

THETA0 = (0.5, -0.75)


def test_rng_streams_reproduce_and_separate():
    a = rngs.stream(7, rngs.SIMULATION, 2, 5).standard_normal(8)
    b = rngs.stream(7, rngs.SIMULATION, 2, 5).standard_normal(8)
    c = rngs.stream(7, rngs.SIMULATION, 2, 6).standard_normal(8)
    d = rngs.stream(7, rngs.SIMULATION, 3, 5).standard_normal(8)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


# -- bimodal AR(2) ------------------------------------------------------------


def test_ar2_coefficients_at_theta0():
    a1, a2 = ar2_coefficients(THETA0)
    assert a1 == pytest.approx(0.125)
    assert a2 == pytest.approx(0.75)


def test_ar2_rejects_outside_open_box():
    rng = rngs.stream(0)
    for bad in [(1.0, 0.0), (0.0, -1.0), (1.5, 0.2)]:
        with pytest.raises(ValueError, match="\\(-1, 1\\)"):
            simulate_bimodal_ar2(bad, 64, rng)


def test_ar2_zero_theta_is_white_noise():
    x = simulate_bimodal_ar2((0.0, 0.0), 65536, rngs.stream(55, 1, 1, 0))
    assert abs(x.values.var() - 1.0) < 0.02
    assert x.n_s == 65536
    assert x.is_valid


def test_ar1_lag1_autocorrelation_converges():
    # theta = (0.9, 0) collapses to an AR(1) with coefficient 0.9
    r1 = []
    for i in range(100):
        v, ok, _ = simulate_batch("bimodal_ar2", [(0.9, 0.0)], 4096, 900 + i, 1)
        assert ok[0]
        r1.append(autocorr_features_batch(v, 2)[0, 1])
    r1 = np.asarray(r1)
    se = r1.std(ddof=1) / np.sqrt(r1.size)
    assert abs(r1.mean() - 0.9) <= 5.0 * se


def test_ar2_stationarity_region():
    """The |k2| parametrization is stationary on all of k2 <= 0.

    The spec's blanket claim fails for k2 > 0 (|k1| must stay below
    (1-k2)/(1+k2) there); the violating share of the box is ~31%, which
    is why invalid simulations are resampled.
    """
    grid = np.linspace(-1, 1, 101)[1:-1]  # interior of the open box
    for k1 in grid:
        for k2 in grid[grid <= 0.0]:
            a1, a2 = ar2_coefficients((k1, k2))
            assert a2 + abs(a1) < 1.0
    violations = sum(
        not ar2_is_stationary((k1, k2)) for k1 in grid for k2 in grid
    )
    share = violations / grid.size ** 2
    assert 0.25 < share < 0.40  # documented property of the model


def test_ar2_explosive_draw_is_flagged_invalid():
    vals, valid, _ = simulate_batch("bimodal_ar2", [(0.95, 0.95)], 4096, 3, 1)
    assert not valid[0]


# -- MA(2) ---------------------------------------------------------------------


def test_ma2_coefficients_and_white_noise():
    b1, b2 = ma2_coefficients(THETA0)
    assert b1 == pytest.approx(0.125)
    assert b2 == pytest.approx(-0.75)
    x = simulate_ma2((0.0, 0.0), 65536, rngs.stream(56, 1, 1, 0))
    assert abs(x.values.var() - 1.0) < 0.02


def test_ma2_lag0_autocovariance_matches_theory():
    b1, b2 = ma2_coefficients(THETA0)
    want = 1.0 + b1 * b1 + b2 * b2
    c0 = []
    for i in range(100):
        v, ok, _ = simulate_batch("ma2", [THETA0], 4096, 700 + i, 1)
        centered = v[0] - v[0].mean()
        c0.append(centered @ centered / centered.size)
    c0 = np.asarray(c0)
    se = c0.std(ddof=1) / np.sqrt(c0.size)
    assert abs(c0.mean() - want) <= 5.0 * se


def test_ma2_autocorrelation_vanishes_beyond_lag2():
    feats = []
    for i in range(100):
        v, ok, _ = simulate_batch("ma2", [THETA0], 4096, 300 + i, 1)
        feats.append(autocorr_features_batch(v, 6)[0])
    feats = np.asarray(feats)
    for lag in (3, 4, 5):
        vals = feats[:, lag]
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        assert abs(vals.mean()) <= 5.0 * se


# -- Van der Pol ----------------------------------------------------------------


def test_vdp_step_counts_and_coverage():
    x = simulate_vdp((1.0, 0.5), 4096, rngs.stream(1, 1, 1, 0))
    assert x.n_s == 4096
    assert x.sample_period == 0.05
    assert x.duration == pytest.approx(204.8)  # 20480 fine steps at dt=0.01


def test_vdp_limit_cycle_amplitude():
    # deterministic oscillator: compare against a dt=1e-4 reference march
    x = simulate_vdp((1.0, 0.0), 4096, rngs.stream(2, 1, 1, 0))
    late = np.abs(x.values[2048:]).max()
    assert abs(late - 2.0) < 0.05
    xs, _ = _vdp_march_full(1.0, 0.0, np.zeros(600_000), 1e-4, (1.0, 2.0))
    ref = np.abs(xs[300_000:]).max()
    assert abs(ref - 2.0) < 0.05
    assert abs(late - ref) < 0.05


def test_vdp_harmonic_limit_conserves_energy_per_cycle():
    # eps -> 0, sigma = 0: explicit Euler grows x^2 + v^2 by (1 + dt^2)
    # per step, i.e. an O(dt) drift per cycle
    dt = 0.01
    steps = int(round(2 * np.pi / dt))
    xs, vs = _vdp_march_full(1e-14, 0.0, np.zeros(steps), dt, (1.0, 2.0))
    energy = xs**2 + vs**2
    assert energy[0] == pytest.approx(5.0)
    growth = energy[-1] / energy[0]
    assert abs(growth - (1.0 + dt * dt) ** steps) < 1e-6
    assert abs(growth - 1.0) < 10.0 * dt  # O(dt) per cycle
    assert np.abs(energy - 5.0).max() < 5.0 * 10.0 * dt


def test_vdp_rejects_bad_parameters():
    rng = rngs.stream(0)
    with pytest.raises(ValueError, match="eps > 0"):
        simulate_vdp((-1.0, 0.5), 64, rng)
    with pytest.raises(ValueError, match="positive integer"):
        simulate_vdp((1.0, 0.5), 64, rng, dt=0.03, out_period=0.05)


def test_vdp_blowup_flagged_invalid():
    # a coarse step makes the explicit scheme unstable
    x = simulate_vdp((5.0, 1.0), 256, rngs.stream(9, 1, 1, 0), dt=0.5,
                     out_period=2.5)
    assert not x.is_valid


def test_vdp_weak_convergence_under_dt_halving():
    def mean_abs(dt):
        vals = []
        for seed in range(10):
            x = simulate_vdp((1.0, 0.5), 4096, rngs.stream(seed, 1, 1, 0),
                             dt=dt, out_period=0.05)
            vals.append(np.abs(x.values).mean())
        return np.mean(vals)

    coarse, fine = mean_abs(0.01), mean_abs(0.005)
    assert abs(coarse - fine) / fine < 0.02


# -- reproducibility and batching -------------------------------------------------


@pytest.mark.parametrize("model,theta", [
    ("bimodal_ar2", THETA0),
    ("ma2", THETA0),
    ("vdp", (1.0, 0.5)),
])
def test_batch_reproducible_and_matches_order(model, theta):
    v1, ok1, keys1 = simulate_batch(model, [theta, theta], 512, 42, 3)
    v2, ok2, keys2 = simulate_batch(model, [theta, theta], 512, 42, 3)
    np.testing.assert_array_equal(v1, v2)
    assert keys1 == keys2
    # same theta, different stream indices: different draws
    assert not np.array_equal(v1[0], v1[1])


def test_vdp_batch_bitwise_equals_single_path():
    theta = (2.5, 1.0)
    vals, ok, keys = simulate_batch("vdp", [theta], 256, 11, 2)
    single = simulate_vdp(theta, 256, rngs.stream(*keys[0]))
    np.testing.assert_array_equal(vals[0], single.values)


def test_dataset_csv_and_block_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    seeds = np.arange(3)
    thetas = rng.uniform(-1, 1, size=(3, 2))
    values = rng.normal(size=(3, 16))
    write_dataset_csv(tmp_path / "d.csv", seeds, thetas, values)
    s2, t2, v2 = read_dataset_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(s2, seeds)
    np.testing.assert_array_equal(t2, thetas)  # repr round-trips exactly
    np.testing.assert_array_equal(v2, values)
    write_dataset_block(tmp_path / "d.block", seeds, thetas, values)
    s3, t3, v3 = read_dataset_block(tmp_path / "d.block")
    np.testing.assert_array_equal(t3, thetas)
    np.testing.assert_array_equal(v3, values)
    np.testing.assert_array_equal(s3, seeds)
