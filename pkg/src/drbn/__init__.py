"""Deep regression Bayesian networks: learning, inference, and restoration.

A regression Bayesian network stacks binary latent layers over a visible
layer (binary or Gaussian); every link points downward.  This package
provides the probability evaluations and ancestral sampling, MAP inference
by (augmented) coordinate ascent with constant-cost flip updates, maximum
likelihood learning through hard assignments, variational and exact
baselines, and a patch-prior image restoration pipeline, plus exact
enumeration oracles used throughout the test suite.
"""

from .errors import (
    ConfigError,
    DrbnError,
    EnumerationCapError,
    NumericalError,
    ParseError,
    PersistenceError,
    ShapeError,
    StaleCacheError,
    TrainingError,
    UnsupportedOperationError,
)
from .inference import (
    CaConfig,
    ExactPosterior,
    FlipCache,
    InferenceNet,
    InferenceReport,
    aug_ca_map,
    ca_flip_logit,
    ca_flip_ratio,
    ca_map,
    ca_map_batch,
    enumerate_states,
    exact_map,
    exact_marginal,
    exact_posterior,
    inference_net_bound,
    inference_net_map,
    inference_net_probs,
    map_states_batch,
    marginal_log_likelihood_max,
    pseudo_likelihood_posterior,
    train_inference_net,
)
from .learning import (
    LearnTrace,
    TrainConfig,
    benchmark_learning,
    classify,
    evaluate_mean_log_likelihood,
    exact_mean_log_likelihood,
    fit_exact_tiny,
    fit_rbn_unsupervised,
    fit_variational_baseline,
    finetune_global,
    finetune_supervised,
    init_params,
    m_step_binary_sgd,
    m_step_gaussian,
    pretrain_layerwise,
)
from .model import (
    BINARY,
    GAUSSIAN,
    DataBatch,
    LabelHead,
    LatentState,
    LayerParams,
    ModelParams,
    ancestral_sample,
    cond_log_prob_visible,
    energy,
    joint_log_prob,
    joint_log_prob_batch,
    label_log_posterior,
    latent_prior_prob,
    log_partition_local,
)
from .restoration import (
    ImageGray,
    NoiseModel,
    RestorationProblem,
    block_noise,
    corrupt,
    default_beta_schedule,
    epll,
    gaussian_noise,
    generate,
    psnr,
    reconstruct,
    restore_hqs,
    text_overlay,
)

__version__ = "0.1.0"
