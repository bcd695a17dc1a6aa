"""Seeded stochastic simulators for the three benchmark time-series models.

All three simulators are pure functions of (theta, stream): rerunning with
the same stream key reproduces the series bit-for-bit, and batch helpers
draw one stream per simulation index so results do not depend on how a
batch is scheduled.

Numerical blow-ups (possible for the oscillator at large drift steps and
for the two-coefficient autoregression on the nonstationary part of its
parameter box) are not clamped: the series is flagged invalid and the
caller is expected to resample a fresh parameter draw.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from . import rng as rngs

__all__ = [
    "TimeSeries",
    "ar2_coefficients",
    "ma2_coefficients",
    "ar2_is_stationary",
    "simulate_bimodal_ar2",
    "simulate_ma2",
    "simulate_vdp",
    "simulate_batch",
    "MODELS",
    "write_dataset_csv",
    "read_dataset_csv",
    "write_dataset_block",
    "read_dataset_block",
]

AR2_BURN_IN = 1000
VDP_DT = 0.01
VDP_OUT_PERIOD = 0.05
VDP_INIT = (1.0, 2.0)


@dataclass
class TimeSeries:
    """Fixed-length signal plus sampling metadata and provenance."""

    values: np.ndarray
    sample_period: float
    model: str
    theta: tuple
    seed_key: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def n_s(self):
        return self.values.size

    @property
    def is_valid(self):
        """True when every sample is finite."""
        return bool(np.all(np.isfinite(self.values)))

    @property
    def duration(self):
        return self.n_s * self.sample_period


def _check_open_unit_box(theta):
    k1, k2 = float(theta[0]), float(theta[1])
    if not (abs(k1) < 1.0 and abs(k2) < 1.0):
        raise ValueError(f"(k1, k2) must lie in (-1, 1)^2, got ({k1}, {k2})")
    return k1, k2


def ar2_coefficients(theta):
    """Recursion coefficients (a1, a2) = (k1 + k1*k2, |k2|)."""
    k1, k2 = float(theta[0]), float(theta[1])
    return k1 + k1 * k2, abs(k2)


def ma2_coefficients(theta):
    """Moving-average coefficients (b1, b2) = (k1 + k1*k2, k2)."""
    k1, k2 = float(theta[0]), float(theta[1])
    return k1 + k1 * k2, k2


def ar2_is_stationary(theta):
    """Stationarity of the |k2| recursion: |a1| < 1 - a2.

    Holds everywhere on the k2 <= 0 half of the box; for k2 > 0 it
    requires |k1| < (1 - k2)/(1 + k2).
    """
    a1, a2 = ar2_coefficients(theta)
    return abs(a1) < 1.0 - a2


def _ar2_values(theta, n_s, rng, burn_in=AR2_BURN_IN):
    a1, a2 = ar2_coefficients(theta)
    noise = rng.standard_normal(burn_in + n_s)
    with np.errstate(over="ignore", invalid="ignore"):
        x = signal.lfilter([1.0], [1.0, -a1, -a2], noise)
    return x[burn_in:]


def simulate_bimodal_ar2(theta, n_s, rng):
    """Order-two autoregression x(n) = a1 x(n-1) + a2 x(n-2) + u(n).

    Starts from zero initial conditions and discards a 1000-sample
    burn-in before emitting n_s samples; u is unit-variance Gaussian
    white noise.
    """
    _check_open_unit_box(theta)
    values = _ar2_values(theta, n_s, rng)
    return TimeSeries(values, 1.0, "bimodal_ar2", tuple(theta), ())


def _ma2_values(theta, n_s, rng):
    b1, b2 = ma2_coefficients(theta)
    # two extra leading draws provide the lag-1/lag-2 history; no burn-in
    noise = rng.standard_normal(n_s + 2)
    return signal.lfilter([1.0, b1, b2], [1.0], noise)[2:]


def simulate_ma2(theta, n_s, rng):
    """Order-two moving average x(n) = u(n) + b1 u(n-1) + b2 u(n-2).

    A single noise stream drives both the innovation and the lagged
    terms (unit coefficient at lag zero), which is the reading under
    which the theoretical autocorrelations reproduce simulation.
    """
    _check_open_unit_box(theta)
    values = _ma2_values(theta, n_s, rng)
    return TimeSeries(values, 1.0, "ma2", tuple(theta), ())


def _vdp_steps_per_sample(dt, out_period):
    ratio = out_period / dt
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ValueError(
            f"out_period/dt must be a positive integer, got {out_period}/{dt}"
        )
    return int(round(ratio))


def _vdp_march(eps, sig, noise, ratio, dt, init):
    """Scalar Euler-Maruyama march; used for single simulations."""
    x, v = float(init[0]), float(init[1])
    sqdt = np.sqrt(dt)
    n_out = noise.size // ratio
    out = np.empty(n_out)
    i = 0
    for j in range(n_out):
        for _ in range(ratio):
            dx = v * dt
            dv = (eps * (1.0 - x * x) * v - x) * dt + sig * sqdt * noise[i]
            x = x + dx
            v = v + dv
            i += 1
        out[j] = x
    return out


def _vdp_march_full(eps, sig, noise, dt, init):
    """Fine-step trajectory of both state coordinates (for diagnostics
    and convergence tests)."""
    x, v = float(init[0]), float(init[1])
    sqdt = np.sqrt(dt)
    xs = np.empty(noise.size + 1)
    vs = np.empty(noise.size + 1)
    xs[0], vs[0] = x, v
    for i in range(noise.size):
        dx = v * dt
        dv = (eps * (1.0 - x * x) * v - x) * dt + sig * sqdt * noise[i]
        x = x + dx
        v = v + dv
        xs[i + 1], vs[i + 1] = x, v
    return xs, vs


def _vdp_march_batch(eps, sig, noise, ratio, dt, init):
    """Vectorized march across simulations; bit-identical to the scalar
    path because each update uses the same expression order."""
    n_sims, n_fine = noise.shape
    x = np.full(n_sims, float(init[0]))
    v = np.full(n_sims, float(init[1]))
    sqdt = np.sqrt(dt)
    n_out = n_fine // ratio
    out = np.empty((n_sims, n_out))
    with np.errstate(over="ignore", invalid="ignore"):
        i = 0
        for j in range(n_out):
            for _ in range(ratio):
                dx = v * dt
                dv = (eps * (1.0 - x * x) * v - x) * dt + sig * sqdt * noise[:, i]
                x = x + dx
                v = v + dv
                i += 1
            out[:, j] = x
    return out


def simulate_vdp(theta, n_s, rng, dt=VDP_DT, out_period=VDP_OUT_PERIOD, init=VDP_INIT):
    """Stochastic Van der Pol oscillator, Euler-Maruyama at step `dt`.

    Integrates x'' = eps (1 - x^2) x' - x + sig * white noise from the
    fixed initial condition, running n_s * (out_period/dt) fine steps and
    emitting every (out_period/dt)-th position sample.  The initial
    transient is part of the signal (no burn-in).
    """
    eps, sig = float(theta[0]), float(theta[1])
    if eps <= 0.0 or sig < 0.0:
        raise ValueError(f"need eps > 0 and sig >= 0, got ({eps}, {sig})")
    ratio = _vdp_steps_per_sample(dt, out_period)
    noise = rng.standard_normal(n_s * ratio)
    with np.errstate(over="ignore", invalid="ignore"):
        values = _vdp_march(eps, sig, noise, ratio, dt, init)
    return TimeSeries(values, out_period, "vdp", tuple(theta), ())


def _batch_ar2(thetas, n_s, streams):
    return np.stack(
        [_ar2_values(t, n_s, s) for t, s in zip(thetas, streams)]
    )


def _batch_ma2(thetas, n_s, streams):
    return np.stack(
        [_ma2_values(t, n_s, s) for t, s in zip(thetas, streams)]
    )


def _batch_vdp(thetas, n_s, streams, dt=VDP_DT, out_period=VDP_OUT_PERIOD,
               init=VDP_INIT):
    ratio = _vdp_steps_per_sample(dt, out_period)
    noise = np.stack([s.standard_normal(n_s * ratio) for s in streams])
    eps = np.asarray([t[0] for t in thetas], dtype=np.float64)
    sig = np.asarray([t[1] for t in thetas], dtype=np.float64)
    return _vdp_march_batch(eps, sig, noise, ratio, dt, init)


MODELS = {
    "bimodal_ar2": {
        "batch": _batch_ar2,
        "single": simulate_bimodal_ar2,
        "sample_period": 1.0,
        "prior": ((-1.0, -1.0), (1.0, 1.0)),
    },
    "ma2": {
        "batch": _batch_ma2,
        "single": simulate_ma2,
        "sample_period": 1.0,
        "prior": ((-1.0, -1.0), (1.0, 1.0)),
    },
    "vdp": {
        "batch": _batch_vdp,
        "single": simulate_vdp,
        "sample_period": VDP_OUT_PERIOD,
        "prior": ((0.0, 0.0), (5.0, 2.0)),
    },
}


def simulate_batch(model, thetas, n_s, experiment_seed, round_index, start_index=0):
    """Simulate a batch with per-index Philox streams.

    Returns (values, valid, keys): an (n, n_s) array, a finite-mask, and
    the stream keys that regenerate each row.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    keys = [
        (int(experiment_seed), rngs.SIMULATION, int(round_index), start_index + i)
        for i in range(len(thetas))
    ]
    streams = [rngs.stream(*k) for k in keys]
    values = MODELS[model]["batch"](thetas, n_s, streams)
    valid = np.all(np.isfinite(values), axis=1)
    return values, valid, keys


# -- dataset persistence ----------------------------------------------------


def write_dataset_csv(path, seeds, thetas, values):
    """One row per series: seed, theta fields, then the n_s samples."""
    thetas = np.atleast_2d(thetas)
    with open(path, "w") as fh:
        for s, th, row in zip(seeds, thetas, np.atleast_2d(values)):
            fields = [str(int(s))] + [repr(float(v)) for v in th]
            fields += [repr(float(v)) for v in row]
            fh.write(",".join(fields) + "\n")


def read_dataset_csv(path, theta_dim=2):
    seeds, thetas, values = [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if not parts or parts == [""]:
                continue
            seeds.append(int(parts[0]))
            thetas.append([float(v) for v in parts[1 : 1 + theta_dim]])
            values.append([float(v) for v in parts[1 + theta_dim :]])
    return (
        np.asarray(seeds, dtype=np.int64),
        np.asarray(thetas, dtype=np.float64),
        np.asarray(values, dtype=np.float64),
    )


def write_dataset_block(path, seeds, thetas, values):
    """Compact binary form, same container as parameter checkpoints."""
    from . import checkpoint

    checkpoint.save_arrays(
        path,
        {
            "seeds": np.asarray(seeds, dtype=np.float64),
            "thetas": np.atleast_2d(np.asarray(thetas, dtype=np.float64)),
            "values": np.atleast_2d(np.asarray(values, dtype=np.float64)),
        },
    )


def read_dataset_block(path):
    from . import checkpoint

    arrays = checkpoint.load_arrays(path)
    return (
        arrays["seeds"].astype(np.int64),
        arrays["thetas"],
        arrays["values"],
    )
