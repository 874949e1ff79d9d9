"""Robust, parallel Bayesian model selection for normal linear models.

Data are split into roughly equal subsets; each subset runs Bayesian model
selection with its likelihood raised to the subset count (restoring
full-data concentration); subset results are combined with geometric
medians, which makes the final model probabilities and predictions robust
to a minority of arbitrarily contaminated subsets.
"""

__version__ = "0.1.0"

from .conjugate import (McmcConfig, NigPosterior, NigPosteriorDraws, NigPrior,
                        PowerLikelihoodConfig, default_prior,
                        gibbs_beta_conditional, gibbs_sigma2_conditional,
                        log_marginal_likelihood, mle_fit, power_posterior,
                        predictive_draws, sample_posterior)
from .criteria import (CriterionVector, InclusionProbs, ModelSpec,
                       ModelUniverse, aic_r, bic_r, bma_moments,
                       enumerate_universe, inclusion_probs,
                       median_probability_model, posterior_model_probs)
from .dataset import (Dataset, OutlierPlan, Partition, SyntheticSpec,
                      generate_synthetic, inject_outliers, load_csv,
                      partition, standardize, with_intercept)
from .engine import (ParamDigest, PipelineConfig, PipelineDetail,
                     SubsetSummary, UniverseSpec, derive_seed, run_pipeline,
                     run_pipeline_detailed, run_pipeline_multi,
                     run_single_machine, run_subset)
from .errors import ConfigError, DataError, MedpostError, NumericError
from .experiments import (ExperimentResult, ExperimentSpec, MetricRecord,
                          rmse, run_experiment)
from .geomedian import (AggregateResult, WeiszfeldConfig,
                        aggregate_model_probs, aggregate_predictions,
                        aggregate_quantile_vectors, combine, geometric_median,
                        interval_from_quantiles, mixture_quantiles)
from .spikeslab import (RescaledResponse, SpikeSlabPrior, SpikeSlabState,
                        rescale_response, ss_gibbs_step, ss_run_chain)
