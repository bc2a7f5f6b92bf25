"""CDI maps for ultra-reliable rate selection on synthetic fading worlds.

The pipeline: synthesize ground-truth multipath channels over a measurement
grid, reduce wideband sweeps to narrowband fading samples, estimate low
quantiles of the fading distribution, interpolate them spatially with a
Gaussian process, select transmission rates at unobserved locations, and
certify meta-probability and throughput behavior with a Monte Carlo harness.
"""

__version__ = "0.1.0"

from .channel import (
    CFRSweep,
    CIR,
    EnvironmentSpec,
    FadingSampleSet,
    FrequencyGrid,
    MultipathProfile,
    cfr_from_profile,
    cir_from_cfr,
    coherence_bandwidth,
    fading_samples_from_cfr,
    fit_pathloss_exponent,
    free_space_loss,
    synth_multipath,
    synth_world,
)
from .evaluate import (
    EvalConfig,
    EvalRecord,
    EvalReport,
    FadingWorld,
    meta_probability,
    normalized_throughput,
    run_campaign,
    world_from_sweeps,
)
from .gpmap import (
    GPHyperparameters,
    PredictiveQuantile,
    QuantileDataset,
    fit_hyperparameters,
    kernel_eval,
    log_marginal_likelihood,
    predict,
    quantile_dataset_from_samples,
)
from .rateselect import (
    RateDecision,
    inverse_erf,
    select_rate_baseline,
    select_rate_cdi,
    select_rate_genie,
)
from .scenario import (
    GridSpec,
    LinkBudget,
    Location,
    Scenario,
    SplitSpec,
    distance,
    generate_triangular_grid,
    reference_scenario,
    split_train_test,
)
from .stats import (
    QuantileEstimate,
    empirical_outage,
    empirical_quantile_log,
    outage_capacity_empirical,
)
