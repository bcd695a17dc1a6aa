"""Simulation-based inference for univariate time series with jointly
learned summary features: seeded simulators, a small trainable 1-D CNN
summary extractor, a conditional masked autoregressive flow, the
multi-round atomic training procedure, exact reference posteriors for the
linear benchmark models, and exact Wasserstein evaluation."""

from .autodiff import Tensor, avgpool1d, concat, conv1d, dropout, logsumexp, no_grad
from .checkpoint import load_arrays, save_arrays
from .flow import BoxBijection, ConditionalFlow, FlowNumericsError, MadeBlock
from .nn import Adam, NonFiniteGradientError, ParameterStore
from .priors import BoxPrior
from .refposterior import (
    GridPosterior,
    NoAnalyticReference,
    ar2_exact_loglik,
    grid_posterior,
    grid_sample,
    ma2_exact_loglik,
)
from .rng import stream
from .simulators import (
    MODELS,
    TimeSeries,
    ar2_coefficients,
    ma2_coefficients,
    simulate_batch,
    simulate_bimodal_ar2,
    simulate_ma2,
    simulate_vdp,
)
from .snpe import (
    SnpeAbort,
    SnpeConfig,
    SnpeNumericsError,
    TrainedPosterior,
    atomic_loss,
    load_posterior,
    posterior_mass_on_box,
    run_snpe,
)
from .summaries import (
    AutocorrExtractor,
    Standardizer,
    YuleNet,
    YuleNetExtractor,
    autocorr_features,
    count_macs,
    count_params,
    theoretical_autocorr_ar2,
    theoretical_autocorr_ma2,
)
from .transport import WassersteinReport, batched_eval, wasserstein

__version__ = "0.1.0"
