"""Exact reference posteriors for the two linear models.

The autoregression uses the conditional Gaussian likelihood given its
first two observations (the simulator's burn-in makes the conditional and
stationary forms indistinguishable at the lengths used here).  The
moving-average model has a pentadiagonal covariance; its exact likelihood
is evaluated with a hand-rolled banded LDL^T factorization in O(n) that
also vectorizes across a whole grid of parameter cells.

No analytic reference exists for the oscillator; asking for one raises
:class:`NoAnalyticReference`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp as _lse

from .priors import BoxPrior
from .simulators import TimeSeries, ar2_coefficients, ma2_coefficients

__all__ = [
    "NoAnalyticReference",
    "ar2_exact_loglik",
    "ma2_exact_loglik",
    "GridPosterior",
    "grid_posterior",
    "grid_sample",
    "save_grid",
    "load_grid",
]

_LOG2PI = np.log(2.0 * np.pi)


class NoAnalyticReference(ValueError):
    """Requested an exact posterior for a model that has none."""


def _series_values(x):
    return x.values if isinstance(x, TimeSeries) else np.asarray(x, dtype=np.float64)


# -- bimodal AR(2) -----------------------------------------------------------


def _ar2_suffstats(x):
    """Quadratic sufficient statistics of the conditional likelihood."""
    y, l1, l2 = x[2:], x[1:-1], x[:-2]
    return {
        "m": y.size,
        "yy": y @ y,
        "y1": y @ l1,
        "y2": y @ l2,
        "l11": l1 @ l1,
        "l22": l2 @ l2,
        "l12": l1 @ l2,
    }


def _ar2_loglik_from_stats(st, a1, a2):
    sse = (
        st["yy"]
        - 2.0 * a1 * st["y1"]
        - 2.0 * a2 * st["y2"]
        + a1 * a1 * st["l11"]
        + a2 * a2 * st["l22"]
        + 2.0 * a1 * a2 * st["l12"]
    )
    return -0.5 * st["m"] * _LOG2PI - 0.5 * sse


def ar2_exact_loglik(theta, x):
    """Conditional log-likelihood sum_{n>=2} log N(x_n; a1 x_{n-1} + a2 x_{n-2}, 1)."""
    a1, a2 = ar2_coefficients(theta)
    return float(_ar2_loglik_from_stats(_ar2_suffstats(_series_values(x)), a1, a2))


# -- MA(2) --------------------------------------------------------------------


def _ma2_gammas(theta):
    b1, b2 = ma2_coefficients(theta)
    return 1.0 + b1 * b1 + b2 * b2, b1 * (1.0 + b2), b2


def _ma2_loglik_banded(g0, g1, g2, x):
    """Vectorized banded LDL^T likelihood.

    g0, g1, g2 are scalars or (m,) arrays (one covariance per parameter
    cell); x is the shared (n,) observation.  Returns the same shape as
    g0.  Work and memory are O(n) per cell: only two lags of the
    factorization and the forward solve are kept.
    """
    g0, g1, g2 = np.broadcast_arrays(
        np.asarray(g0, dtype=np.float64),
        np.asarray(g1, dtype=np.float64),
        np.asarray(g2, dtype=np.float64),
    )
    n = x.size
    logdet = np.log(g0.copy())
    d_im1 = g0.copy()  # d_0
    z_im1 = np.broadcast_to(x[0], g0.shape).copy()
    quad = z_im1 * z_im1 / d_im1
    if n == 1:
        return -0.5 * (n * _LOG2PI + logdet + quad)
    l1 = g1 / d_im1
    d_i = g0 - l1 * l1 * d_im1
    z_i = x[1] - l1 * z_im1
    _check_pd(d_i)
    logdet += np.log(d_i)
    quad += z_i * z_i / d_i
    d_im2, d_im1 = d_im1, d_i
    z_im2, z_im1 = z_im1, z_i
    l1_im1 = l1
    for i in range(2, n):
        l2 = g2 / d_im2
        l1 = (g1 - l2 * l1_im1 * d_im2) / d_im1
        d_i = g0 - l1 * l1 * d_im1 - l2 * l2 * d_im2
        _check_pd(d_i)
        z_i = x[i] - l1 * z_im1 - l2 * z_im2
        logdet += np.log(d_i)
        quad += z_i * z_i / d_i
        d_im2, d_im1 = d_im1, d_i
        z_im2, z_im1 = z_im1, z_i
        l1_im1 = l1
    return -0.5 * (n * _LOG2PI + logdet + quad)


def _check_pd(d):
    if np.any(d <= 0.0):
        raise np.linalg.LinAlgError(
            "moving-average covariance is not positive definite"
        )


def ma2_exact_loglik(theta, x):
    """Exact Gaussian log-likelihood with the pentadiagonal covariance."""
    g0, g1, g2 = _ma2_gammas(theta)
    return float(_ma2_loglik_banded(g0, g1, g2, _series_values(x)))


# -- grid posterior -----------------------------------------------------------


@dataclass
class GridPosterior:
    """Exact posterior on a regular 2-D grid of cell centers."""

    lower: np.ndarray
    upper: np.ndarray
    log_density: np.ndarray  # unnormalized, shape (res0, res1)
    log_normalizer: float

    @property
    def resolution(self):
        return self.log_density.shape

    @property
    def cell_widths(self):
        return (self.upper - self.lower) / np.asarray(self.resolution)

    @property
    def cell_area(self):
        return float(np.prod(self.cell_widths))

    def centers(self, axis):
        n = self.resolution[axis]
        w = self.cell_widths[axis]
        return self.lower[axis] + (np.arange(n) + 0.5) * w

    def normalized_log_pdf(self):
        return self.log_density - self.log_normalizer

    def cell_probabilities(self):
        p = np.exp(self.log_density - _lse(self.log_density))
        return p / p.sum()

    def mean(self):
        p = self.cell_probabilities()
        c0, c1 = self.centers(0), self.centers(1)
        return np.array([(p.sum(axis=1) * c0).sum(), (p.sum(axis=0) * c1).sum()])

    def mode(self):
        i, j = np.unravel_index(np.argmax(self.log_density), self.resolution)
        return np.array([self.centers(0)[i], self.centers(1)[j]])


def grid_posterior(model, x0, prior, resolution=401):
    """Exact posterior over the prior box on a `resolution`^2 grid."""
    x = _series_values(x0)
    lower, upper = prior.lower, prior.upper
    if lower.size != 2:
        raise ValueError("grid posterior supports 2-D parameter spaces only")
    c0 = lower[0] + (np.arange(resolution) + 0.5) * (upper[0] - lower[0]) / resolution
    c1 = lower[1] + (np.arange(resolution) + 0.5) * (upper[1] - lower[1]) / resolution
    k1g, k2g = np.meshgrid(c0, c1, indexing="ij")
    if model == "bimodal_ar2":
        st = _ar2_suffstats(x)
        a1 = k1g + k1g * k2g
        a2 = np.abs(k2g)
        logp = _ar2_loglik_from_stats(st, a1, a2)
    elif model == "ma2":
        b1 = k1g + k1g * k2g
        b2 = k2g
        g0 = 1.0 + b1 * b1 + b2 * b2
        g1 = b1 * (1.0 + b2)
        logp = _ma2_loglik_banded(g0.ravel(), g1.ravel(), b2.ravel(), x)
        logp = logp.reshape(resolution, resolution)
    elif model == "vdp":
        raise NoAnalyticReference(
            "no analytic reference posterior exists for the oscillator"
        )
    else:
        raise ValueError(f"unknown model {model!r}")
    logp = logp + prior.logpdf(np.stack([k1g, k2g], axis=-1))
    cell_area = float(np.prod((upper - lower) / resolution))
    log_norm = float(_lse(logp) + np.log(cell_area))
    return GridPosterior(lower.copy(), upper.copy(), logp, log_norm)


def grid_sample(gp, count, rng):
    """Categorical draw over cells plus uniform jitter within each cell."""
    p = gp.cell_probabilities().ravel()
    idx = rng.choice(p.size, size=count, p=p)
    i, j = np.unravel_index(idx, gp.resolution)
    w = gp.cell_widths
    pts = np.empty((count, 2))
    pts[:, 0] = gp.lower[0] + (i + rng.random(count)) * w[0]
    pts[:, 1] = gp.lower[1] + (j + rng.random(count)) * w[1]
    return pts


def save_grid(path_prefix, gp):
    """Binary array block + JSON header sidecar."""
    import json

    from . import checkpoint

    checkpoint.save_arrays(f"{path_prefix}.grid", {"log_density": gp.log_density})
    header = {
        "lower": list(map(float, gp.lower)),
        "upper": list(map(float, gp.upper)),
        "resolution": list(gp.resolution),
        "log_normalizer": gp.log_normalizer,
    }
    with open(f"{path_prefix}.json", "w") as fh:
        json.dump(header, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_grid(path_prefix):
    import json

    from . import checkpoint

    with open(f"{path_prefix}.json") as fh:
        header = json.load(fh)
    arrays = checkpoint.load_arrays(f"{path_prefix}.grid")
    return GridPosterior(
        np.asarray(header["lower"]),
        np.asarray(header["upper"]),
        arrays["log_density"],
        float(header["log_normalizer"]),
    )
