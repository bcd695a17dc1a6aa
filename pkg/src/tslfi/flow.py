"""Conditional masked autoregressive flow over a standard normal base.

Five MADE blocks, each two hidden layers of 50 units, model the density
of the (unconstrained) parameter vector given a summary vector.  The
forward pass (parameters -> noise) gives exact log densities in one shot;
sampling inverts each block one coordinate at a time in its
autoregressive order.  Block orders alternate between the natural and the
reversed ordering.

The flow itself lives on R^d.  :class:`BoxBijection` carries parameters
between the open prior box and R^d via an elementwise scaled logit, and
its exact log-Jacobian converts flow densities into box densities, so the
posterior never places mass outside the prior support.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

from .autodiff import Tensor, concat, no_grad
from .nn import ParameterStore, kaiming_uniform

__all__ = [
    "MadeBlock",
    "ConditionalFlow",
    "BoxBijection",
    "FlowNumericsError",
    "flow_logprob",
    "flow_sample",
]

LOG_SCALE_CLAMP = 7.0
_HIDDEN = 50
_N_BLOCKS = 5


class FlowNumericsError(RuntimeError):
    """Non-finite intermediate inside the flow; carries the block index."""

    def __init__(self, block_index):
        super().__init__(f"non-finite values entering MADE block {block_index}")
        self.block_index = block_index


def _degrees(order):
    """1-based autoregressive degree of each input dimension."""
    order = np.asarray(order)
    deg = np.empty(order.size, dtype=int)
    deg[order] = np.arange(1, order.size + 1)
    return deg


class MadeBlock:
    """One masked autoencoder producing per-dimension shift and log-scale.

    Masks enforce that head i depends only on inputs strictly earlier in
    this block's order; the conditioning summary vector is concatenated to
    the input of every layer and is never masked.
    """

    def __init__(self, d, n_f, order, store, rng, hidden=_HIDDEN, prefix="made"):
        self.d = int(d)
        self.n_f = int(n_f)
        self.order = np.asarray(order, dtype=int)
        deg_in = _degrees(self.order)
        self.deg_in = deg_in
        deg_hidden = 1 + (np.arange(hidden) % max(1, d - 1))

        def ones_cond(mask):
            # conditioner rows are unmasked
            return np.vstack([mask, np.ones((n_f, mask.shape[1]))])

        m1 = (deg_hidden[None, :] >= deg_in[:, None]).astype(float)
        m2 = (deg_hidden[None, :] >= deg_hidden[:, None]).astype(float)
        deg_out = np.concatenate([deg_in, deg_in])  # shift heads, then log-scale
        m3 = (deg_out[None, :] > deg_hidden[:, None]).astype(float)
        self.m1 = Tensor(ones_cond(m1))
        self.m2 = Tensor(ones_cond(m2))
        self.m3 = Tensor(ones_cond(m3))

        def param(name, shape, fan_in):
            return store.add(f"{prefix}/{name}", kaiming_uniform(shape, fan_in, rng))

        def zeros(name, shape):
            return store.add(f"{prefix}/{name}", np.zeros(shape))

        self.w1 = param("layer1/weight", (d + n_f, hidden), d + n_f)
        self.b1 = zeros("layer1/bias", (hidden,))
        self.w2 = param("layer2/weight", (hidden + n_f, hidden), hidden + n_f)
        self.b2 = zeros("layer2/bias", (hidden,))
        # zero-initialized heads make the whole flow start as the identity
        self.w3 = zeros("heads/weight", (hidden + n_f, 2 * d))
        self.b3 = zeros("heads/bias", (2 * d,))

    def __call__(self, u, s):
        h = (concat([u, s], 1) @ (self.w1 * self.m1) + self.b1).relu()
        h = (concat([h, s], 1) @ (self.w2 * self.m2) + self.b2).relu()
        out = concat([h, s], 1) @ (self.w3 * self.m3) + self.b3
        shift = out[:, : self.d]
        log_scale = out[:, self.d :].clip(-LOG_SCALE_CLAMP, LOG_SCALE_CLAMP)
        return shift, log_scale


class ConditionalFlow:
    """Stack of MADE blocks with exact log-density and sampling."""

    def __init__(self, d, n_f, n_blocks=_N_BLOCKS, hidden=_HIDDEN, store=None,
                 rng=None, prefix="flow"):
        self.d = int(d)
        self.n_f = int(n_f)
        self.store = store if store is not None else ParameterStore()
        if rng is None:
            rng = np.random.default_rng(0)
        natural = np.arange(d)
        self.blocks = []
        for i in range(n_blocks):
            order = natural if i % 2 == 0 else natural[::-1]
            self.blocks.append(
                MadeBlock(d, n_f, order, self.store, rng, hidden=hidden,
                          prefix=f"{prefix}/made{i}")
            )

    def log_prob(self, u, s):
        """Exact log q(u | s) for (B, d) inputs; returns a (B,) Tensor.

        Differentiable with respect to the flow parameters, the
        conditioner s, and u itself.
        """
        u = u if isinstance(u, Tensor) else Tensor(u)
        s = s if isinstance(s, Tensor) else Tensor(s)
        h = u
        log_det = None
        for i, block in enumerate(self.blocks):
            if not np.all(np.isfinite(h.data)):
                raise FlowNumericsError(i)
            shift, log_scale = block(h, s)
            h = (h - shift) * (-log_scale).exp()
            contrib = (-log_scale).sum(axis=1)
            log_det = contrib if log_det is None else log_det + contrib
        base = (h * h).sum(axis=1) * (-0.5) - 0.5 * self.d * math.log(2.0 * math.pi)
        return base + log_det

    def sample(self, s_vector, count, rng):
        """Draw `count` points in unconstrained space for one context.

        z ~ N(0, I) is pushed through the inverse pass, one coordinate at
        a time per block (no gradients are recorded).
        """
        s_vector = np.asarray(s_vector, dtype=np.float64).reshape(-1)
        z = rng.standard_normal((count, self.d))
        s_tile = np.broadcast_to(s_vector, (count, self.n_f)).copy()
        return self.inverse_np(z, s_tile)

    def inverse_np(self, z, s):
        """Plain-array inverse map z -> u (sequential per dimension)."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        with no_grad():
            h = z
            for block in reversed(self.blocks):
                x = np.zeros_like(h)
                for step in range(1, self.d + 1):
                    shift, log_scale = block(Tensor(x), Tensor(s))
                    sel = block.deg_in == step
                    x[:, sel] = (
                        h[:, sel] * np.exp(log_scale.data[:, sel])
                        + shift.data[:, sel]
                    )
                h = x
        return h

    def forward_np(self, u, s):
        """Plain-array forward map u -> z (used by round-trip checks)."""
        with no_grad():
            h = Tensor(np.atleast_2d(u))
            s = Tensor(np.atleast_2d(s))
            for block in self.blocks:
                shift, log_scale = block(h, s)
                h = (h - shift) * (-log_scale).exp()
            return h.data


def flow_logprob(flow, theta_u, s):
    """Spec-surface wrapper around :meth:`ConditionalFlow.log_prob`."""
    return flow.log_prob(theta_u, s)


def flow_sample(flow, s, count, rng):
    """Spec-surface wrapper around :meth:`ConditionalFlow.sample`."""
    return flow.sample(s, count, rng)


# -- box <-> R^d bijection -----------------------------------------------------


def _softplus(x):
    return np.logaddexp(0.0, x)


class BoxBijection:
    """Elementwise scaled logit between an open box and R^d."""

    def __init__(self, prior):
        self.prior = prior

    def unconstrain(self, theta):
        """Box interior -> R^d; boundary or outside points are rejected."""
        theta = np.asarray(theta, dtype=np.float64)
        t = self.prior.to_unit(theta)
        if np.any(t <= 0.0) or np.any(t >= 1.0):
            raise ValueError("unconstrain requires points strictly inside the box")
        return np.log(t) - np.log1p(-t)

    def constrain(self, u):
        """R^d -> box interior (inverse of :meth:`unconstrain`)."""
        u = np.asarray(u, dtype=np.float64)
        return self.prior.from_unit(expit(u))

    def log_jac_constrain(self, u):
        """log |d theta / d u|, summed over dimensions."""
        u = np.asarray(u, dtype=np.float64)
        per_dim = np.log(self.prior.widths) - _softplus(u) - _softplus(-u)
        return per_dim.sum(axis=-1)

    def log_prior_u(self, u):
        """Prior density pushed to unconstrained space (log scale).

        Computed directly as -log(volume) + log-Jacobian: every finite u
        maps strictly inside the box, so no interior test is needed (and
        float saturation near the boundary cannot produce -inf).
        """
        return -math.log(self.prior.volume) + self.log_jac_constrain(u)
