"""
cbnlab - Central Biasing Normalization for multi-mapping translation

Numerical checks of how latent codes survive (or vanish in) normalization
layers, the central biasing generator and its LCI baseline, and synthetic
translation tasks that expose mode collapse at desk scale.
"""

__version__ = "0.1.0"

from .errors import (
    BatchSizeError,
    ConfigError,
    DegenerateBatchError,
    InsufficientSamplesError,
    InvalidExtentError,
    MissingArtifactError,
    MissingBiasNetError,
    NonFiniteLossError,
    NonScalarLossError,
    ReflectionPadError,
    ShapeMismatchError,
    ZeroFeatureError,
)
from .env_config import get_default_seed, get_thread_cap, load_env_file
from .config import Config, get_config
from .tensor_core import (
    KernelBank,
    PRNGState,
    channel_stats,
    conv2d,
    grad_check,
    transposed_conv2d,
)
from .tensor_io import load_bundle, read_tensor, save_bundle, write_tensor
from .layers import (
    AffineParams,
    BiasNet,
    MovingStats,
    NormLayer,
    activation,
    batch_norm,
    bias_net_forward,
    central_biasing_norm,
    dropout,
    instance_norm,
)
from .injection_analysis import (
    CriterionReport,
    DecompositionReport,
    LatentCode,
    check_criteria,
    demo_in_elimination,
    demo_inter_batch_identity,
    demo_intra_batch_inconsistency,
    feature_map,
    feature_stat_probe,
    lci_conv,
    replicate_latent,
)
from .generators import (
    Generator,
    GeneratorSpec,
    ParamCount,
    build_generator,
    count_params,
    format_units,
)
from .synth_tasks import (
    StyleEncoder,
    SyntheticDataset,
    TaskSpec,
    build_style_encoder,
    gen_dataset,
    hue_oracle,
)
from .training import (
    TrainConfig,
    TrainHistory,
    adam_step,
    loss_l1,
    loss_latent_regression,
    loss_lsgan,
    train,
)
from .metrics import (
    MetricConfig,
    MetricReport,
    SurrogateNet,
    consistency_score,
    diversity_score,
    domain_accuracy,
    evaluate,
    perceptual_distance,
)
from .checkpoints import load_checkpoint, save_checkpoint
from .experiment_config import ExperimentConfig, load_config, parse_config_text
from .checks import CheckResult, CheckReport, run_checks
from .experiments import bias_range_ablation, convergence_comparison, incentive_study
