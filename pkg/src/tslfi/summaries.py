"""Summary-feature extractors and their theoretical oracles.

Two extractors share the same n_f = 5 output width:

* :func:`autocorr_features` - the fixed benchmark: log sample variance
  followed by the first four autocorrelation estimates.
* :class:`YuleNet` - the trainable two-conv-layer 1-D CNN whose output
  feeds the conditional flow; its parameters live in a ParameterStore so
  they train jointly with the flow.

The closed-form autocorrelation functions for both linear models are
included as oracles.  For the two-coefficient autoregression the
published formula sheet and the recursion disagree when k2 < 0 (the
formula-sheet variant produces |r| > 1, which no autocorrelation can do);
both variants are exposed and the test suite selects the one matching
simulation, which is the Yule-Walker form.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, avgpool1d, conv1d, dropout
from .nn import ParameterStore, kaiming_uniform
from .simulators import TimeSeries, ar2_coefficients, ma2_coefficients

__all__ = [
    "autocorr_features",
    "autocorr_features_batch",
    "YuleNet",
    "count_params",
    "count_macs",
    "theoretical_autocorr_ar2",
    "theoretical_autocorr_ma2",
    "Standardizer",
    "AutocorrExtractor",
    "YuleNetExtractor",
]


# -- fixed autocorrelation features ----------------------------------------


def _values(x):
    return x.values if isinstance(x, TimeSeries) else np.asarray(x, dtype=np.float64)


def autocorr_features(x, n_lags=5):
    """[log sample variance, r(1), ..., r(n_lags - 1)].

    Uses the biased autocovariance c(s) = (1/n) sum (x_n - m)(x_{n-s} - m).
    Scaling is stabilized so even astronomically large (but finite) series
    produce finite features.
    """
    v = _values(x)
    return autocorr_features_batch(v[None], n_lags=n_lags)[0]


def autocorr_features_batch(values, n_lags=5):
    """Vectorized :func:`autocorr_features` over rows of (B, n) `values`."""
    values = np.asarray(values, dtype=np.float64)
    b, n = values.shape
    centered = values - values.mean(axis=1, keepdims=True)
    # rescale before squaring so the variance of huge series stays finite
    scale = np.max(np.abs(centered), axis=1, keepdims=True)
    if np.any(scale == 0.0):
        raise ValueError("constant series has undefined autocorrelation")
    z = centered / scale
    c0 = np.einsum("bi,bi->b", z, z) / n
    feats = np.empty((b, n_lags))
    feats[:, 0] = 2.0 * np.log(scale[:, 0]) + np.log(c0)
    for s in range(1, n_lags):
        cs = np.einsum("bi,bi->b", z[:, s:], z[:, :-s]) / n
        feats[:, s] = cs / c0
    return feats


# -- theoretical autocorrelation oracles -------------------------------------


def theoretical_autocorr_ar2(theta, max_lag, variant="yule_walker"):
    """r(1..max_lag) for the |k2| autoregression.

    variant="yule_walker": r(1) = a1/(1 - a2) with the signed recursion
    coefficient a1 = k1 + k1*k2; this is the variant that matches
    simulation.  variant="appendix" reproduces the published formula
    sheet literally (|k2| inside the numerator), kept only so the
    discrepancy can be demonstrated.
    """
    k1, k2 = float(theta[0]), float(theta[1])
    if abs(k2) >= 1.0 or abs(k1) >= 1.0:
        raise ValueError(f"theta must lie in (-1, 1)^2, got ({k1}, {k2})")
    a2 = abs(k2)
    if variant == "yule_walker":
        a1 = k1 + k1 * k2
        r1 = a1 / (1.0 - a2)
        r2 = a1 * r1 + a2
    elif variant == "appendix":
        a1 = k1 + k1 * a2
        r1 = a1 / (1.0 - a2)
        r2 = a2 + a1 * a1 / (1.0 - a2)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    r = [r1, r2]
    for _ in range(3, max_lag + 1):
        r.append(a1 * r[-1] + a2 * r[-2])
    return np.asarray(r[:max_lag])


def theoretical_autocorr_ma2(theta, max_lag):
    """r(1..max_lag) for the moving-average model; zero beyond lag 2."""
    b1, b2 = ma2_coefficients(theta)
    gamma0 = 1.0 + b1 * b1 + b2 * b2
    r = np.zeros(max_lag)
    if max_lag >= 1:
        r[0] = b1 * (1.0 + b2) / gamma0
    if max_lag >= 2:
        r[1] = b2 / gamma0
    return r


# -- YuleNet -------------------------------------------------------------------


_CHANNELS = 8
_KERNEL = 64
_PADDING = 32
_POOL1 = 16
_POOL2 = 16  # = floor(4096/256); fixed so the parameter count follows the
# closed form 4624 + n_f(1 + n_s/32) at every n_s (multiple of 256)


def count_params(n_s, n_f):
    """Closed-form trainable-parameter count, 4624 + n_f(1 + n_s/32)."""
    if n_s % 32 != 0:
        raise ValueError(f"n_s must be a multiple of 32, got {n_s}")
    return 4624 + n_f * (1 + n_s // 32)


def count_macs(n_s, n_f):
    """Multiply-accumulate operations of one forward pass."""
    conv1 = (n_s + 1) * _KERNEL * _CHANNELS
    conv2 = (n_s // _POOL1 + 1) * _KERNEL * _CHANNELS * _CHANNELS
    linear = (n_s // 32) * n_f
    return conv1 + conv2 + linear


class YuleNet:
    """Two 1-D conv blocks and a dropout+linear head, all ReLU.

    Layer stack for input length n_s (> 256):

        conv(1 -> 8, k=64, stride 1, pad 32) -> ReLU -> avgpool(16)
        conv(8 -> 8, k=64, stride 1, pad 32) -> ReLU -> avgpool(16)
        dropout(0.5) -> flatten -> linear(-> n_f) -> ReLU

    Output entries are always >= 0 because of the final ReLU.
    """

    DROPOUT_RATE = 0.5

    def __init__(self, n_s, n_f, store=None, rng=None, prefix="yulenet"):
        if n_s <= 256:
            raise ValueError(f"YuleNet requires n_s > 256, got {n_s}")
        self.n_s = int(n_s)
        self.n_f = int(n_f)
        self.store = store if store is not None else ParameterStore()
        if rng is None:
            rng = np.random.default_rng(0)
        len1 = (n_s + 1) // _POOL1
        len2 = ((len1 + 1)) // _POOL2
        self.flat_dim = _CHANNELS * len2

        def param(name, shape, fan_in):
            return self.store.add(f"{prefix}/{name}", kaiming_uniform(shape, fan_in, rng))

        def zeros(name, shape):
            return self.store.add(f"{prefix}/{name}", np.zeros(shape))

        self.w1 = param("conv1/weight", (_CHANNELS, 1, _KERNEL), 1 * _KERNEL)
        self.b1 = zeros("conv1/bias", (_CHANNELS,))
        self.w2 = param("conv2/weight", (_CHANNELS, _CHANNELS, _KERNEL), _CHANNELS * _KERNEL)
        self.b2 = zeros("conv2/bias", (_CHANNELS,))
        self.w3 = param("head/weight", (self.flat_dim, n_f), self.flat_dim)
        self.b3 = zeros("head/bias", (n_f,))

    def forward(self, x, training=False, rng=None):
        """(B, n_s) or (B, 1, n_s) batch -> (B, n_f) features."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim == 2:
            x = x.reshape(x.shape[0], 1, x.shape[1])
        if x.shape[2] != self.n_s:
            raise ValueError(f"expected series of length {self.n_s}, got {x.shape[2]}")
        h = conv1d(x, self.w1, self.b1, stride=1, padding=_PADDING).relu()
        h = avgpool1d(h, _POOL1)
        h = conv1d(h, self.w2, self.b2, stride=1, padding=_PADDING).relu()
        h = avgpool1d(h, _POOL2)
        h = dropout(h, self.DROPOUT_RATE, training, rng)
        h = h.reshape(h.shape[0], self.flat_dim)
        return (h @ self.w3 + self.b3).relu()

    def num_params(self):
        return self.store.num_scalars()


# -- feature standardization ---------------------------------------------------


class Standardizer:
    """Z-scoring with statistics frozen from the first simulation round.

    A feature that was constant over the fitting set keeps unit scale (a
    tiny floor would blow up if the unit later becomes active).
    """

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def fit(cls, features):
        features = np.asarray(features, dtype=np.float64)
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean, std)

    def apply(self, features):
        if isinstance(features, Tensor):
            return (features - Tensor(self.mean)) * Tensor(1.0 / self.std)
        return (np.asarray(features) - self.mean) / self.std


# -- extractor fronts (shared interface for the SNPE loop) ---------------------


class AutocorrExtractor:
    """Fixed features; nothing to train."""

    trainable = False

    def __init__(self, n_lags=5):
        self.n_f = n_lags

    def features_np(self, values):
        return autocorr_features_batch(np.atleast_2d(values), n_lags=self.n_f)

    def features(self, values, training=False, rng=None):
        return Tensor(self.features_np(values))


class YuleNetExtractor:
    """Trainable features; gradients flow through to the shared store."""

    trainable = True

    def __init__(self, n_s, n_f=5, store=None, rng=None):
        self.net = YuleNet(n_s, n_f, store=store, rng=rng)
        self.n_f = n_f

    @property
    def store(self):
        return self.net.store

    def features_np(self, values):
        from .autodiff import no_grad

        with no_grad():
            return self.features(values).data

    def features(self, values, training=False, rng=None):
        return self.net.forward(values, training=training, rng=rng)
