"""Multi-round sequential posterior estimation with atomic contrasts.

Round 1 draws parameters from the prior and trains the flow (and, when
the trainable extractor is used, the extractor jointly) by direct
negative log-density.  Later rounds draw from the current posterior at
the observation, accumulate the new pairs into the dataset, and train on
the atomic (classification) objective: each pair is contrasted against
K - 1 alternative parameter vectors resampled from its batch, which keeps
the objective a valid posterior target under non-prior proposals.

Everything is reproducible from (config, seed): simulation, shuffling,
dropout, atom selection, and proposal sampling each consume their own
keyed streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngs
from .autodiff import Tensor, logsumexp, no_grad
from .flow import BoxBijection, ConditionalFlow, FlowNumericsError
from .nn import Adam, NonFiniteGradientError
from .simulators import MODELS, TimeSeries, simulate_batch
from .summaries import AutocorrExtractor, Standardizer, YuleNetExtractor

__all__ = [
    "SnpeConfig",
    "SnpeNumericsError",
    "SnpeAbort",
    "TrainedPosterior",
    "run_snpe",
    "atomic_loss",
    "softmax_contrast_nll",
    "posterior_mass_on_box",
    "load_posterior",
    "build_extractor",
]


class SnpeNumericsError(RuntimeError):
    """Training failed twice with non-finite values; run aborted."""


class SnpeAbort(RuntimeError):
    """Run aborted (e.g. simulator invalid-rate above threshold)."""


@dataclass
class SnpeConfig:
    rounds: int = 10
    sims_per_round: int = 5000
    batch_size: int = 100
    atoms: int = 10
    learning_rate: float = 5e-4
    max_epochs: int = 200
    patience: int = 20
    val_fraction: float = 0.1
    seed: int = 0
    retrain_each_round: bool = False
    max_invalid_fraction: float = 0.2

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.sims_per_round < self.batch_size:
            raise ValueError("sims_per_round must be >= batch_size")
        if self.atoms < 2:
            raise ValueError(f"atoms must be >= 2, got {self.atoms}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")


# -- losses -------------------------------------------------------------------


def softmax_contrast_nll(logits):
    """Mean of -log softmax(logits)[exemplar] with the exemplar in column 0."""
    return (logsumexp(logits, axis=1) - logits[:, 0]).mean()


def _direct_nll(flow, u, s):
    return -flow.log_prob(u, s).mean()


def _atom_indices(batch_size, k, rng):
    """(B, K) index matrix; column 0 is the item itself, the rest are
    K-1 distinct other batch members."""
    idx = np.empty((batch_size, k), dtype=int)
    idx[:, 0] = np.arange(batch_size)
    for i in range(batch_size):
        others = rng.choice(batch_size - 1, size=k - 1, replace=False)
        idx[i, 1:] = others + (others >= i)
    return idx


def _atomic_nll(flow, bijection, u, s, k, rng):
    """Atomic contrast loss; `u` is a (B, d) constant array, `s` a (B, n_f)
    Tensor through which extractor gradients flow."""
    b = u.shape[0]
    if k > b:
        raise ValueError(f"atoms ({k}) exceed batch size ({b})")
    idx = _atom_indices(b, k, rng)
    u_flat = u[idx.ravel()]
    rep = np.repeat(np.arange(b), k)
    log_q = flow.log_prob(Tensor(u_flat), s[rep]).reshape(b, k)
    log_p = bijection.log_prior_u(u_flat).reshape(b, k)
    return softmax_contrast_nll(log_q - Tensor(log_p))


def atomic_loss(flow, extractor, standardizer, bijection, thetas, xvalues,
                k, rng, training=False, dropout_rng=None):
    """Spec-surface atomic loss on raw (theta, x) pairs."""
    u = bijection.unconstrain(np.atleast_2d(thetas))
    s = standardizer.apply(
        extractor.features(np.atleast_2d(xvalues), training=training,
                           rng=dropout_rng)
    )
    return _atomic_nll(flow, bijection, u, s, k, rng)


# -- trained posterior ---------------------------------------------------------


class TrainedPosterior:
    """Flow + extractor + standardization, conditioned on one observation.

    Densities and samples live in the original parameter box; the
    bijection Jacobian is accounted for exactly.
    """

    def __init__(self, flow, extractor, standardizer, prior, x0, model,
                 round_index):
        self.flow = flow
        self.extractor = extractor
        self.standardizer = standardizer
        self.prior = prior
        self.bijection = BoxBijection(prior)
        self.x0 = x0
        self.model = model
        self.round_index = round_index

    def context(self):
        """Standardized summary vector of the observation (eval mode)."""
        values = self.x0.values if isinstance(self.x0, TimeSeries) else self.x0
        feats = self.extractor.features_np(np.atleast_2d(values))
        return self.standardizer.apply(feats)[0]

    def sample(self, count, rng, max_tries=100):
        """Posterior draws inside the box.  The bijection bounds every
        draw, so rejection only cleans up float saturation at the edge."""
        s0 = self.context()
        out = np.empty((count, self.prior.dim))
        filled = 0
        for _ in range(max_tries):
            need = count - filled
            if need == 0:
                break
            u = self.flow.sample(s0, need, rng)
            theta = self.bijection.constrain(u)
            keep = self.prior.contains(theta) & np.all(np.isfinite(theta), axis=-1)
            kept = theta[keep]
            out[filled : filled + kept.shape[0]] = kept
            filled += kept.shape[0]
        if filled < count:
            raise SnpeNumericsError("posterior sampling kept rejecting draws")
        return out

    def log_prob(self, thetas):
        """Exact log posterior density at (n, d) box points; -inf outside."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        inside = self.prior.contains(thetas)
        out = np.full(thetas.shape[0], -np.inf)
        if np.any(inside):
            s0 = self.context()
            u = self.bijection.unconstrain(thetas[inside])
            s = np.broadcast_to(s0, (u.shape[0], s0.size))
            with no_grad():
                log_q_u = self.flow.log_prob(Tensor(u), Tensor(s.copy())).data
            out[inside] = log_q_u - self.bijection.log_jac_constrain(u)
        return out


def posterior_mass_on_box(posterior, resolution=640, chunk=65536):
    """Midpoint quadrature of the posterior density over the prior box.

    The integral equals the flow's total mass in unconstrained space (the
    bijection is measure-preserving), but the box grid stays resolvable
    even for sharply trained posteriors.
    """
    prior = posterior.prior
    c0 = prior.lower[0] + (np.arange(resolution) + 0.5) * prior.widths[0] / resolution
    c1 = prior.lower[1] + (np.arange(resolution) + 0.5) * prior.widths[1] / resolution
    g0, g1 = np.meshgrid(c0, c1, indexing="ij")
    pts = np.column_stack([g0.ravel(), g1.ravel()])
    dens = np.empty(pts.shape[0])
    for lo in range(0, pts.shape[0], chunk):
        dens[lo : lo + chunk] = np.exp(posterior.log_prob(pts[lo : lo + chunk]))
    cell = float(np.prod(prior.widths / resolution))
    return float(dens.sum() * cell)


# -- extractor construction ------------------------------------------------------


def build_extractor(kind, n_s, n_f, seed):
    if kind == "autocorr":
        return AutocorrExtractor(n_lags=n_f)
    if kind == "yulenet":
        return YuleNetExtractor(
            n_s, n_f, rng=rngs.stream(seed, rngs.INIT, 0, 0)
        )
    raise ValueError(f"unknown extractor kind {kind!r}")


# -- the multi-round procedure ----------------------------------------------------


class _Run:
    """Internal mutable state of one SNPE run."""

    def __init__(self, model, prior, extractor_kind, x0, cfg, n_f=5):
        if model not in MODELS:
            raise ValueError(f"unknown model {model!r}")
        self.model = model
        self.prior = prior
        self.cfg = cfg
        self.extractor_kind = extractor_kind
        self.x0 = x0
        self.n_s = x0.values.size if isinstance(x0, TimeSeries) else len(x0)
        self.n_f = n_f
        self.bijection = BoxBijection(prior)
        self.extractor = build_extractor(extractor_kind, self.n_s, n_f, cfg.seed)
        self.flow = ConditionalFlow(
            prior.dim, n_f, rng=rngs.stream(cfg.seed, rngs.INIT, 0, 1)
        )
        self.standardizer = None
        self.thetas = np.empty((0, prior.dim))
        self.u = np.empty((0, prior.dim))
        self.xvalues = np.empty((0, self.n_s))
        self.feats = None  # precomputed features (non-trainable extractor)
        self.diagnostics = {"rounds": [], "model": model,
                            "extractor": extractor_kind}
        self.round_checkpoints = []

    # ---- proposals ----

    def posterior_now(self, round_index):
        return TrainedPosterior(self.flow, self.extractor, self.standardizer,
                                self.prior, self.x0, self.model, round_index)

    def propose(self, round_index, count, rng):
        if round_index == 1:
            return self.prior.sample(count, rng)
        return self.posterior_now(round_index - 1).sample(count, rng)

    # ---- simulation with invalid-resampling ----

    def simulate_round(self, round_index):
        cfg = self.cfg
        rng_prop = rngs.stream(cfg.seed, rngs.PROPOSAL, round_index, 0)
        n = cfg.sims_per_round
        thetas = self.propose(round_index, n, rng_prop)
        values = np.empty((n, self.n_s))
        pending = np.arange(n)
        attempts = 0
        invalid = 0
        sim_index = 0
        while pending.size:
            vals, valid, _ = simulate_batch(
                self.model, thetas[pending], self.n_s, cfg.seed, round_index,
                start_index=sim_index,
            )
            sim_index += pending.size
            attempts += pending.size
            values[pending[valid]] = vals[valid]
            bad = pending[~valid]
            invalid += bad.size
            if invalid > cfg.max_invalid_fraction * attempts:
                raise SnpeAbort(
                    f"round {round_index}: {invalid}/{attempts} simulations "
                    f"invalid (> {cfg.max_invalid_fraction:.0%})"
                )
            if bad.size:
                thetas[bad] = self.propose(round_index, bad.size, rng_prop)
            pending = bad
        return thetas, values, invalid, attempts

    # ---- training ----

    def _loss_for(self, round_index, batch_idx, rng_atoms, training,
                  dropout_rng):
        u = self.u[batch_idx]
        if self.extractor.trainable:
            feats = self.extractor.features(
                self.xvalues[batch_idx], training=training, rng=dropout_rng
            )
        else:
            feats = Tensor(self.feats[batch_idx])
        s = self.standardizer.apply(feats)
        if round_index == 1:
            return _direct_nll(self.flow, Tensor(u), s)
        return _atomic_nll(self.flow, self.bijection, u, s, self.cfg.atoms,
                           rng_atoms)

    def _stores(self):
        stores = [self.flow.store]
        if self.extractor.trainable:
            stores.append(self.extractor.store)
        return stores

    def _snapshot(self):
        return [s.state_arrays() for s in self._stores()]

    def _restore(self, snap):
        for store, arrays in zip(self._stores(), snap):
            store.load_state_arrays(arrays)

    def train_round(self, round_index, learning_rate=None):
        """One epoch loop with early stopping; restores the best epoch."""
        cfg = self.cfg
        lr = cfg.learning_rate if learning_rate is None else learning_rate
        n = self.u.shape[0]
        n_val = max(1, int(round(cfg.val_fraction * n)))
        split_rng = rngs.stream(cfg.seed, rngs.SHUFFLE, round_index, 0)
        perm = split_rng.permutation(n)
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        val_atom_rng = rngs.stream(cfg.seed, rngs.ATOMS, round_index, 0)
        val_atom_state = val_atom_rng.bit_generator.state

        opt = Adam(self._stores(), lr=lr)
        best_val = np.inf
        best_epoch = 0
        best_state = self._snapshot()
        train_losses, val_losses = [], []
        step = 0
        for epoch in range(1, cfg.max_epochs + 1):
            order = rngs.stream(cfg.seed, rngs.SHUFFLE, round_index,
                                epoch).permutation(train_idx)
            epoch_losses = []
            for lo in range(0, order.size, cfg.batch_size):
                batch = order[lo : lo + cfg.batch_size]
                if round_index > 1 and batch.size < cfg.atoms:
                    continue  # tail too small to form a contrast set
                step += 1
                opt.zero_grad()
                loss = self._loss_for(
                    round_index, batch,
                    rngs.stream(cfg.seed, rngs.ATOMS, round_index, step),
                    training=True,
                    dropout_rng=rngs.stream(cfg.seed, rngs.DROPOUT,
                                            round_index, step),
                )
                if not np.isfinite(loss.data):
                    raise FlowNumericsError(-1)
                loss.backward()
                opt.step()
                epoch_losses.append(float(loss.data))
            with no_grad():
                val_atom_rng.bit_generator.state = val_atom_state
                val_loss = float(
                    self._loss_for(round_index, val_idx, val_atom_rng,
                                   training=False, dropout_rng=None).data
                )
            if not np.isfinite(val_loss):
                raise FlowNumericsError(-1)
            train_losses.append(float(np.mean(epoch_losses)))
            val_losses.append(val_loss)
            if val_loss < best_val:
                best_val = val_loss
                best_epoch = epoch
                best_state = self._snapshot()
            if epoch - best_epoch >= cfg.patience:
                break
        self._restore(best_state)
        return {
            "train_losses": train_losses,
            "val_losses": val_losses,
            "best_epoch": best_epoch,
            "best_val_loss": best_val,
        }

    # ---- full procedure ----

    def run(self):
        cfg = self.cfg
        for r in range(1, cfg.rounds + 1):
            thetas, values, invalid, attempts = self.simulate_round(r)
            if r == 1:
                init_feats = self.extractor.features_np(values)
                self.standardizer = Standardizer.fit(init_feats)
            self.thetas = np.vstack([self.thetas, thetas])
            self.u = np.vstack([self.u, self.bijection.unconstrain(thetas)])
            self.xvalues = np.vstack([self.xvalues, values])
            if not self.extractor.trainable:
                feats = self.extractor.features_np(values)
                self.feats = feats if self.feats is None else np.vstack(
                    [self.feats, feats]
                )
            if cfg.retrain_each_round and r > 1:
                fresh = _Run(self.model, self.prior, self.extractor_kind,
                             self.x0, cfg, n_f=self.n_f)
                self.flow = fresh.flow
                self.extractor = fresh.extractor

            pre_round = self._snapshot()
            try:
                stats = self.train_round(r)
            except (FlowNumericsError, NonFiniteGradientError):
                self._restore(pre_round)
                try:
                    stats = self.train_round(r, learning_rate=cfg.learning_rate / 2)
                    stats["restarted"] = True
                except (FlowNumericsError, NonFiniteGradientError) as exc:
                    raise SnpeNumericsError(
                        f"round {r} training non-finite twice"
                    ) from exc
            stats.update(
                {
                    "round": r,
                    "n_invalid": int(invalid),
                    "n_attempted": int(attempts),
                    "dataset_size": int(self.u.shape[0]),
                    "cumulative_budget": r * cfg.sims_per_round,
                    "proposal_thetas": thetas,
                }
            )
            self.diagnostics["rounds"].append(stats)
            self.round_checkpoints.append(self._checkpoint_arrays(r))
        return self.posterior_now(cfg.rounds), self.diagnostics

    def _checkpoint_arrays(self, round_index):
        from collections import OrderedDict

        arrays = OrderedDict()
        arrays["meta/round"] = np.array([float(round_index)])
        arrays["meta/dims"] = np.array(
            [self.prior.dim, self.n_f, self.n_s, len(self.flow.blocks)],
            dtype=np.float64,
        )
        for i, block in enumerate(self.flow.blocks):
            arrays[f"meta/order{i}"] = block.order.astype(np.float64)
        arrays["standardizer/mean"] = self.standardizer.mean.copy()
        arrays["standardizer/std"] = self.standardizer.std.copy()
        for name, t in self.flow.store.items():
            arrays[name] = t.data.copy()
        if self.extractor.trainable:
            for name, t in self.extractor.store.items():
                arrays[name] = t.data.copy()
        return arrays


def run_snpe(model, prior, extractor_kind, x0, cfg, n_f=5):
    """Train the posterior approximation for one observation.

    Returns (posterior, diagnostics); per-round checkpoint array maps are
    available as ``diagnostics["checkpoints"]`` for persistence.
    """
    runner = _Run(model, prior, extractor_kind, x0, cfg, n_f=n_f)
    posterior, diagnostics = runner.run()
    diagnostics["checkpoints"] = runner.round_checkpoints
    return posterior, diagnostics


def load_posterior(model, prior, extractor_kind, x0, arrays, seed=0):
    """Rebuild a TrainedPosterior from checkpoint arrays."""
    d, n_f, n_s, n_blocks = (int(v) for v in arrays["meta/dims"])
    extractor = build_extractor(extractor_kind, n_s, n_f, seed)
    flow = ConditionalFlow(d, n_f, n_blocks=n_blocks, rng=np.random.default_rng(0))
    flow.store.load_state_arrays(
        {k: v for k, v in arrays.items() if k.startswith("flow/")}
    )
    if extractor_kind == "yulenet":
        extractor.store.load_state_arrays(
            {k: v for k, v in arrays.items() if k.startswith("yulenet/")}
        )
    standardizer = Standardizer(arrays["standardizer/mean"],
                                arrays["standardizer/std"])
    round_index = int(arrays["meta/round"][0])
    return TrainedPosterior(flow, extractor, standardizer, prior, x0, model,
                            round_index)
