"""InfoGAN-style disentanglement with an orthogonal-basis-expansion
inference channel, an alternating-optimization trainer, and the unsupervised
metric suite used to evaluate it."""

from .basis import (
    BasisMatrix,
    ChannelCombiner,
    CoefficientAssignment,
    CoefficientHead,
    ConvergenceWarning,
    ObeInference,
    OrthogonalizeResult,
    combine_channels,
    dct_basis,
    expand,
    orthogonality_loss,
    orthogonalize,
    reconstruct,
    select_coefficients,
    zigzag_order,
)
from .data import (
    FactorDataset,
    ImageBatch,
    ToyFactorSpec,
    batches,
    fixed_factor_batch,
    load_celeba_dir,
    load_dsprites,
    toy_dataset,
)
from .errors import CheckpointError, ConfigError, MetricFailure, TrainingError
from .losses import (
    InterpolatedBatch,
    LossWeights,
    ObjectiveReport,
    critic_loss,
    generator_side_loss,
    gradient_penalty,
    infer_info_loss,
    interpolate_batch,
    total_objective_report,
)
from .metrics import (
    CurveSet,
    MetricReport,
    aggregate_reports,
    correlation_curves,
    encoder_representation,
    factorvae_score,
    frechet_distance,
    mig_score,
    obe_representation,
    quality_score,
    sap_score,
    vp_score,
)
from .mi_bound import BoundReport, DiscreteToyModel, bound_oracle, posterior_tables, random_toy
from .networks import (
    Critic,
    DiscriminatorSpec,
    Encoder,
    EncoderSpec,
    Generator,
    GeneratorSpec,
    LatentSample,
    discriminate,
    encode,
    generate,
    parameter_count,
    sample_latent,
)
from .training import (
    StepReport,
    TrainConfig,
    TrainLog,
    TrainState,
    ablation_variants,
    init_state,
    train,
    train_step,
)

__version__ = "0.1.0"
