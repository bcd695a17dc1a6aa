"""Config-driven experiment orchestration and plot-data emission.

One experiment (model, extractor, observation, budgets, evaluation spec)
lives in one flat TOML file.  The command helpers below write everything
needed to reproduce or extend a run: datasets, per-round checkpoints, a
deterministic manifest, and CSV plot data (budget curves, posterior
histograms).  Wall-clock numbers go to a separate timings file so the
manifest and checkpoints are byte-identical across reruns of the same
config and seed.
"""

from __future__ import annotations

import csv
import json
import sys
import time
from collections import OrderedDict
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import checkpoint
from . import rng as rngs
from .priors import BoxPrior
from .refposterior import (
    NoAnalyticReference,
    grid_posterior,
    grid_sample,
    load_grid,
    save_grid,
)
from .simulators import (
    MODELS,
    TimeSeries,
    simulate_batch,
    write_dataset_block,
    write_dataset_csv,
)
from .snpe import SnpeConfig, load_posterior, run_snpe
from .transport import batched_eval, self_distance

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "observation_for",
    "cmd_simulate",
    "cmd_infer",
    "cmd_evaluate",
    "cmd_figure1",
    "cmd_figure2",
    "load_run",
]


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    model: str = "bimodal_ar2"
    extractor: str = "yulenet"
    n_s: int = 4096
    n_f: int = 5
    theta0: tuple = (0.5, -0.75)
    prior_lower: tuple = (-1.0, -1.0)
    prior_upper: tuple = (1.0, 1.0)
    seed: int = 0
    rounds: int = 10
    sims_per_round: int = 5000
    batch_size: int = 100
    atoms: int = 10
    learning_rate: float = 5e-4
    max_epochs: int = 200
    patience: int = 20
    val_fraction: float = 0.1
    retrain_each_round: bool = False
    max_invalid_fraction: float = 0.2
    eval_batches: int = 100
    eval_samples_per_batch: int = 100
    wasserstein_order: int = 2
    grid_resolution: int = 401
    length_study: tuple = (512, 1024, 2048, 4096)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.extractor not in ("autocorr", "yulenet"):
            raise ConfigError(f"unknown extractor {self.extractor!r}")
        self.theta0 = tuple(float(v) for v in self.theta0)
        self.prior_lower = tuple(float(v) for v in self.prior_lower)
        self.prior_upper = tuple(float(v) for v in self.prior_upper)
        self.length_study = tuple(int(v) for v in self.length_study)
        if len(self.theta0) != len(self.prior_lower):
            raise ConfigError("theta0 and prior bounds disagree on dimension")
        if self.wasserstein_order not in (1, 2):
            raise ConfigError("wasserstein_order must be 1 or 2")

    # -- (de)serialization: flat typed key/value TOML -----------------------

    def prior(self):
        return BoxPrior(self.prior_lower, self.prior_upper)

    def snpe_config(self):
        return SnpeConfig(
            rounds=self.rounds,
            sims_per_round=self.sims_per_round,
            batch_size=self.batch_size,
            atoms=self.atoms,
            learning_rate=self.learning_rate,
            max_epochs=self.max_epochs,
            patience=self.patience,
            val_fraction=self.val_fraction,
            seed=self.seed,
            retrain_each_round=self.retrain_each_round,
            max_invalid_fraction=self.max_invalid_fraction,
        )

    def as_dict(self):
        return OrderedDict((f.name, getattr(self, f.name)) for f in fields(self))

    def to_toml(self):
        lines = []
        for key, value in self.as_dict().items():
            lines.append(f"{key} = {_toml_value(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_toml(cls, text):
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"TOML parse error: {exc}") from exc
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path):
        return cls.from_toml(Path(path).read_text())


def _toml_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize config value {value!r}")


# -- observation ---------------------------------------------------------------


def observation_for(config):
    """The observed series x0: theta0 simulated on a reserved stream."""
    rng = rngs.stream(config.seed, rngs.OBSERVATION, 0, 0)
    x0 = MODELS[config.model]["single"](config.theta0, config.n_s, rng)
    if not x0.is_valid:
        raise ConfigError(
            f"observation at theta0={config.theta0} is numerically invalid"
        )
    return x0


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


# -- commands --------------------------------------------------------------------


def cmd_simulate(config, count, out_dir):
    """Draw `count` prior parameters, simulate, and persist the dataset."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prior = config.prior()
    rng_prop = rngs.stream(config.seed, rngs.PROPOSAL, 1, 0)
    thetas = prior.sample(count, rng_prop)
    values = np.empty((count, config.n_s))
    seeds = np.empty(count, dtype=np.int64)
    pending = np.arange(count)
    sim_index = 0
    invalid = 0
    while pending.size:
        vals, valid, keys = simulate_batch(
            config.model, thetas[pending], config.n_s, config.seed, 1,
            start_index=sim_index,
        )
        sim_index += pending.size
        values[pending[valid]] = vals[valid]
        seeds[pending[valid]] = [keys[i][3] for i in np.flatnonzero(valid)]
        bad = pending[~valid]
        invalid += bad.size
        if invalid > max(10, 5 * count):
            raise ConfigError("simulator keeps producing invalid output")
        if bad.size:
            thetas[bad] = prior.sample(bad.size, rng_prop)
        pending = bad
    write_dataset_csv(out / "dataset.csv", seeds, thetas, values)
    write_dataset_block(out / "dataset.block", seeds, thetas, values)
    _write_json(
        out / "manifest.json",
        {
            "kind": "dataset",
            "config": config.as_dict(),
            "count": int(count),
            "invalid_resampled": int(invalid),
            "files": ["dataset.csv", "dataset.block"],
        },
    )
    return out


def cmd_infer(config, out_dir):
    """Run the full multi-round procedure and persist every round."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings = {}
    t0 = time.perf_counter()
    x0 = observation_for(config)
    posterior, diagnostics = run_snpe(
        config.model, config.prior(), config.extractor, x0,
        config.snpe_config(), n_f=config.n_f,
    )
    timings["infer_seconds"] = time.perf_counter() - t0
    (out / "config.toml").write_text(config.to_toml())
    write_dataset_block(out / "observation.block", [0], [list(config.theta0)],
                        [x0.values])
    checkpoints = diagnostics.pop("checkpoints")
    for arrays in checkpoints:
        r = int(arrays["meta/round"][0])
        checkpoint.save_arrays(out / f"round_{r:02d}.ckpt", arrays)
    round_summaries = []
    for stats in diagnostics["rounds"]:
        stats = dict(stats)
        thetas = stats.pop("proposal_thetas")
        stats["proposal_theta_mean"] = [float(v) for v in thetas.mean(axis=0)]
        stats["proposal_theta_std"] = [float(v) for v in thetas.std(axis=0)]
        round_summaries.append(stats)
    _write_json(
        out / "manifest.json",
        {
            "kind": "run",
            "config": config.as_dict(),
            "rounds": round_summaries,
            "final_round": config.rounds,
        },
    )
    _write_json(out / "timings.json", timings)  # volatile; kept out of manifest
    return out


def load_run(run_dir):
    """(config, x0, [checkpoint arrays per round]) of a finished run."""
    run_dir = Path(run_dir)
    config = ExperimentConfig.from_file(run_dir / "config.toml")
    from .simulators import read_dataset_block

    _, thetas, values = read_dataset_block(run_dir / "observation.block")
    x0 = TimeSeries(values[0], MODELS[config.model]["sample_period"],
                    config.model, tuple(thetas[0]), ())
    ckpts = sorted(run_dir.glob("round_*.ckpt"))
    arrays = [checkpoint.load_arrays(p) for p in ckpts]
    return config, x0, arrays


def _reference_grid(config, x0, cache_dir=None):
    """Grid posterior for the run's observation, cached on disk."""
    if cache_dir is not None:
        prefix = Path(cache_dir) / f"reference_{config.model}_{config.grid_resolution}"
        if prefix.with_suffix(".json").exists():
            return load_grid(prefix)
    gp = grid_posterior(config.model, x0, config.prior(),
                        resolution=config.grid_resolution)
    if cache_dir is not None:
        save_grid(prefix, gp)
    return gp


def cmd_evaluate(run_dir, out_csv=None):
    """Budget-curve rows (one per round) against the exact reference."""
    run_dir = Path(run_dir)
    config, x0, ckpts = load_run(run_dir)
    if config.model == "vdp":
        raise NoAnalyticReference(
            "no analytic reference posterior exists for the oscillator;"
            " evaluation supports the linear models only"
        )
    gp = _reference_grid(config, x0, cache_dir=run_dir)
    ref_sampler = lambda count, rng: grid_sample(gp, count, rng)
    rows = []
    eval_rng = rngs.stream(config.seed, rngs.EVALUATION, 0, 0)
    floor = self_distance(
        ref_sampler, eval_rng, batches=config.eval_batches,
        per_batch=config.eval_samples_per_batch, order=config.wasserstein_order,
    )
    for r, arrays in enumerate(ckpts, start=1):
        posterior = load_posterior(config.model, config.prior(),
                                   config.extractor, x0, arrays)
        apx_sampler = lambda count, rng: posterior.sample(count, rng)
        report = batched_eval(
            ref_sampler, apx_sampler,
            rngs.stream(config.seed, rngs.EVALUATION, r, 0),
            batches=config.eval_batches,
            per_batch=config.eval_samples_per_batch,
            order=config.wasserstein_order,
            label=f"round_{r}",
        )
        rows.append(
            {
                "extractor": config.extractor,
                "model": config.model,
                "budget": r * config.sims_per_round,
                "wasserstein_mean": report.mean,
                "wasserstein_stderr": report.stderr,
                "order": config.wasserstein_order,
                "self_distance_floor": floor,
            }
        )
    if out_csv is not None:
        _write_csv(out_csv, rows)
    return rows


def _write_csv(path, rows):
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def _config_paths(config_path):
    p = Path(config_path)
    if p.is_dir():
        paths = sorted(p.glob("*.toml"))
        if not paths:
            raise ConfigError(f"no *.toml configs under {p}")
        return paths
    return [p]


def cmd_figure1(config_path, out_dir):
    """Distance-vs-budget data for every config in a directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    all_rows = []
    for cfg_file in _config_paths(config_path):
        config = ExperimentConfig.from_file(cfg_file)
        run_dir = out / f"run_{cfg_file.stem}"
        if not (run_dir / "manifest.json").exists():
            cmd_infer(config, run_dir)
        all_rows.extend(cmd_evaluate(run_dir))
    _write_csv(out / "figure1.csv", all_rows)
    return all_rows


def _histogram_rows(config, label, n_s, samples, bins=50):
    prior = config.prior()
    h, e0, e1 = np.histogram2d(
        samples[:, 0], samples[:, 1], bins=bins,
        range=[(prior.lower[0], prior.upper[0]), (prior.lower[1], prior.upper[1])],
    )
    c0 = 0.5 * (e0[:-1] + e0[1:])
    c1 = 0.5 * (e1[:-1] + e1[1:])
    rows = []
    for i in range(bins):
        for j in range(bins):
            if h[i, j] > 0:
                rows.append(
                    {
                        "config": label,
                        "n_s": n_s,
                        "center_0": c0[i],
                        "center_1": c1[j],
                        "count": int(h[i, j]),
                    }
                )
    return rows


def cmd_figure2(config_path, out_dir, hist_samples=10_000, bins=50):
    """Posterior histogram data per config plus the length study.

    The length study reruns the first config whose theta0 matches
    (1.0, 0.5) (else the first config) at each length in its
    `length_study`, recording both histograms and per-coordinate sample
    dispersion.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    configs = [ExperimentConfig.from_file(p) for p in _config_paths(config_path)]
    labels = [p.stem for p in _config_paths(config_path)]
    hist_rows = []
    for label, config in zip(labels, configs):
        run_dir = out / f"run_{label}"
        if not (run_dir / "manifest.json").exists():
            cmd_infer(config, run_dir)
        _, x0, ckpts = load_run(run_dir)
        posterior = load_posterior(config.model, config.prior(),
                                   config.extractor, x0, ckpts[-1])
        samples = posterior.sample(
            hist_samples, rngs.stream(config.seed, rngs.EVALUATION, 99, 0)
        )
        hist_rows.extend(_histogram_rows(config, label, config.n_s, samples,
                                         bins=bins))
    _write_csv(out / "figure2_histograms.csv", hist_rows)

    study_idx = next(
        (i for i, c in enumerate(configs) if tuple(c.theta0) == (1.0, 0.5)), 0
    )
    base = configs[study_idx]
    length_rows, length_hist_rows = [], []
    for n_s in base.length_study:
        cfg_dict = base.as_dict()
        cfg_dict["n_s"] = int(n_s)
        config = ExperimentConfig(**cfg_dict)
        run_dir = out / f"run_length_{n_s}"
        if not (run_dir / "manifest.json").exists():
            cmd_infer(config, run_dir)
        _, x0, ckpts = load_run(run_dir)
        posterior = load_posterior(config.model, config.prior(),
                                   config.extractor, x0, ckpts[-1])
        samples = posterior.sample(
            hist_samples, rngs.stream(config.seed, rngs.EVALUATION, 98, 0)
        )
        length_hist_rows.extend(
            _histogram_rows(config, f"length_{n_s}", n_s, samples, bins=bins)
        )
        length_rows.append(
            {
                "n_s": int(n_s),
                "sample_std_0": float(samples[:, 0].std()),
                "sample_std_1": float(samples[:, 1].std()),
                "sample_mean_0": float(samples[:, 0].mean()),
                "sample_mean_1": float(samples[:, 1].mean()),
            }
        )
    _write_csv(out / "figure2_length_histograms.csv", length_hist_rows)
    _write_csv(out / "figure2_length_dispersion.csv", length_rows)
    return hist_rows, length_rows
