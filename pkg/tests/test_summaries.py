"""Feature extractors and their closed-form oracles."""

import numpy as np
import pytest

from tslfi import rng as rngs
from tslfi.autodiff import Tensor
from tslfi.nn import ParameterStore
from tslfi.simulators import simulate_batch
from tslfi.summaries import (
    AutocorrExtractor,
    Standardizer,
    YuleNet,
    YuleNetExtractor,
    autocorr_features,
    autocorr_features_batch,
    count_macs,
    count_params,
    theoretical_autocorr_ar2,
    theoretical_autocorr_ma2,
)

THETA0 = (0.5, -0.75)


# -- fixed autocorrelation features ---------------------------------------------


def test_white_noise_has_small_lag1():
    rng = np.random.default_rng(0)
    feats = autocorr_features(rng.standard_normal(4096))
    assert feats.shape == (5,)
    assert abs(feats[1]) < 5.0 / np.sqrt(4096)
    assert abs(feats[0]) < 0.1  # log variance of unit noise


def test_constant_series_rejected():
    with pytest.raises(ValueError, match="constant series"):
        autocorr_features(np.full(128, 3.0))


def test_features_finite_for_astronomical_series():
    # near-explosive draws can reach 1e200 while staying finite; the
    # rescaled estimator must not overflow
    x = np.geomspace(1.0, 1e290, 512) * np.sign(np.sin(np.arange(512)))
    feats = autocorr_features(x)
    assert np.all(np.isfinite(feats))
    assert np.all(np.abs(feats[1:]) <= 1.0 + 1e-12)


def test_batch_matches_single():
    rng = np.random.default_rng(1)
    vals = rng.standard_normal((4, 512))
    batch = autocorr_features_batch(vals)
    for i in range(4):
        np.testing.assert_allclose(batch[i], autocorr_features(vals[i]),
                                   atol=1e-14)


# -- theoretical autocorrelations ---------------------------------------------


def test_ar2_oracle_simple_points():
    r = theoretical_autocorr_ar2((0.5, 0.0), 2, "yule_walker")
    np.testing.assert_allclose(r, [0.5, 0.25], atol=1e-15)
    r = theoretical_autocorr_ar2((0.5, 0.0), 2, "appendix")
    np.testing.assert_allclose(r, [0.5, 0.25], atol=1e-15)  # variants agree at k2=0
    r = theoretical_autocorr_ar2((0.0, 0.5), 2)
    np.testing.assert_allclose(r, [0.0, 0.5], atol=1e-15)


def test_ar2_variant_discrepancy_at_theta0():
    yw = theoretical_autocorr_ar2(THETA0, 2, "yule_walker")
    np.testing.assert_allclose(yw, [0.5, 0.8125], atol=1e-15)
    literal = theoretical_autocorr_ar2(THETA0, 2, "appendix")
    assert literal[0] == pytest.approx(3.5)  # impossible autocorrelation
    assert abs(literal[0]) > 1.0


def test_ar2_recursion_beyond_lag2():
    r = theoretical_autocorr_ar2(THETA0, 5, "yule_walker")
    a1, a2 = 0.125, 0.75
    for s in range(2, 5):
        assert r[s] == pytest.approx(a1 * r[s - 1] + a2 * r[s - 2])


def test_ar2_rejects_boundary():
    with pytest.raises(ValueError):
        theoretical_autocorr_ar2((0.5, 1.0), 2)


def test_ma2_oracle_values():
    r = theoretical_autocorr_ma2(THETA0, 3)
    assert r[0] == pytest.approx(0.03125 / 1.578125)
    assert r[1] == pytest.approx(-0.75 / 1.578125)
    assert r[0] == pytest.approx(0.019802, abs=1e-6)
    assert r[1] == pytest.approx(-0.475248, abs=1e-6)
    assert r[2] == 0.0
    np.testing.assert_array_equal(theoretical_autocorr_ma2((0.0, 0.0), 4),
                                  np.zeros(4))


def _mean_estimated_autocorr(model, theta, n_seeds, base_seed, n_lags=3):
    feats = []
    for i in range(n_seeds):
        v, ok, _ = simulate_batch(model, [theta], 4096, base_seed + i, 1)
        assert ok[0]
        feats.append(autocorr_features_batch(v, n_lags)[0])
    return np.asarray(feats)


def test_simulation_selects_yule_walker_variant():
    """The formula-sheet variant is off by ~1000 standard errors at
    theta0 while the Yule-Walker variant sits within the estimator's
    O(1/n) small-sample bias: simulation decides unambiguously."""
    feats = _mean_estimated_autocorr("bimodal_ar2", THETA0, 200, 50)
    mean = feats[:, 1:3].mean(axis=0)
    se = feats[:, 1:3].std(axis=0, ddof=1) / np.sqrt(feats.shape[0])
    yw = theoretical_autocorr_ar2(THETA0, 2, "yule_walker")
    literal = theoretical_autocorr_ar2(THETA0, 2, "appendix")
    # matches Yule-Walker within 4 SE (the remaining ~3 SE offset is the
    # biased estimator's O(1/n) bias at this persistence level)
    assert np.all(np.abs(mean - yw) <= 4.0 * se)
    # rejects the literal formula by a huge margin
    assert np.all(np.abs(mean - literal) > 100.0 * se)


def test_ma2_mean_features_match_theory():
    feats = _mean_estimated_autocorr("ma2", THETA0, 200, 80)
    mean = feats[:, 1:3].mean(axis=0)
    se = feats[:, 1:3].std(axis=0, ddof=1) / np.sqrt(feats.shape[0])
    theory = theoretical_autocorr_ma2(THETA0, 2)
    assert np.all(np.abs(mean - theory) <= 4.0 * se)


# -- YuleNet ---------------------------------------------------------------------


@pytest.mark.parametrize("n_s", [512, 1024, 4096])
@pytest.mark.parametrize("n_f", [1, 5, 10])
def test_parameter_count_closed_form(n_s, n_f):
    net = YuleNet(n_s, n_f, rng=np.random.default_rng(0))
    assert net.num_params() == count_params(n_s, n_f)
    assert net.num_params() == 4624 + n_f * (1 + n_s // 32)


def test_parameter_count_paper_configuration():
    net = YuleNet(4096, 5, rng=np.random.default_rng(0))
    assert net.num_params() == 5269
    assert count_params(4096, 0) == 4624


def test_mac_count():
    assert count_macs(4096, 5) == 4097 * 64 * 8 + 257 * 64 * 8 * 8 + 128 * 5
    assert count_macs(4096, 5) == 3_150_976


def test_rejects_short_series():
    with pytest.raises(ValueError, match="n_s > 256"):
        YuleNet(256, 5)


def test_zero_input_zero_biases_gives_zero_output():
    net = YuleNet(512, 5, rng=np.random.default_rng(0))  # biases init to zero
    out = net.forward(np.zeros((3, 512)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_output_nonnegative_and_shapes():
    rng = np.random.default_rng(2)
    net = YuleNet(512, 5, rng=rng)
    out = net.forward(rng.standard_normal((4, 512)))
    assert out.shape == (4, 5)
    assert np.all(out.data >= 0.0)


def test_eval_mode_deterministic_training_mode_seeded():
    rng = np.random.default_rng(3)
    net = YuleNet(512, 5, rng=rng)
    x = rng.standard_normal((2, 512))
    a = net.forward(x).data
    b = net.forward(x).data
    np.testing.assert_array_equal(a, b)
    t1 = net.forward(x, training=True, rng=np.random.default_rng(7)).data
    t2 = net.forward(x, training=True, rng=np.random.default_rng(7)).data
    np.testing.assert_array_equal(t1, t2)
    t3 = net.forward(x, training=True, rng=np.random.default_rng(8)).data
    assert not np.array_equal(t1, t3)


def test_yulenet_gradients_flow_to_all_parameters(gradcheck):
    rng = np.random.default_rng(4)
    net = YuleNet(260, 2, rng=rng)  # smallest cheap config above the bound
    x = rng.standard_normal((2, 260))
    cof = Tensor(rng.normal(size=(2, 2)))
    gradcheck(
        lambda: (net.forward(x) * cof).sum(),
        net.store.tensors(), max_coords=4, rng=rng,
    )


# -- standardizer ------------------------------------------------------------------


def test_standardizer_zscores_and_guards_constants():
    feats = np.array([[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]])
    st = Standardizer.fit(feats)
    out = st.apply(feats)
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
    assert st.std[1] == 1.0  # constant feature keeps unit scale
    t = st.apply(Tensor(feats))
    np.testing.assert_allclose(t.data, out, atol=1e-14)


def test_extractor_fronts_share_interface():
    rng = np.random.default_rng(5)
    vals = rng.standard_normal((3, 512))
    ac = AutocorrExtractor()
    assert not ac.trainable
    assert ac.features_np(vals).shape == (3, 5)
    yn = YuleNetExtractor(512, 5, rng=rng)
    assert yn.trainable
    assert yn.features_np(vals).shape == (3, 5)
    assert yn.store.num_scalars() == count_params(512, 5)
