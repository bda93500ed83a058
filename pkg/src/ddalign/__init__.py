"""Semi-supervised domain adaptation with dynamically weighted kernel alignment.

A labeled source domain and an unlabeled target domain are aligned during
training through two Gaussian-kernel statistics: the marginal discrepancy
between embedding clouds and its class-conditional variant fed by
confidence-filtered pseudo-labels. Scheduled weights trade the two off as
the classifier matures.
"""

from .data import (
    FeatureDataset,
    SubjectDataset,
    SynthShiftConfig,
    generate_synth_shift,
    load_dataset,
    load_features,
    parse_config,
    save_features,
)
from .evaluation import (
    Metrics,
    ProtocolSummary,
    dump_embeddings,
    evaluate,
    loso_split,
    run_protocol,
    run_synth_protocol,
)
from .features import (
    DEFAULT_BANDS,
    BandSpec,
    FeatureVector,
    RawWindow,
    band_variance,
    build_feature_vector,
    differential_entropy,
)
from .kernels import (
    KernelConfig,
    LabeledBatch,
    cmmd,
    gaussian_kernel,
    kernel_matrix,
    median_bandwidth,
    mmd,
)
from .net import (
    LossBreakdown,
    ModelParams,
    backward,
    cross_entropy,
    forward_features,
    forward_logits,
    init_params,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
    total_loss,
)
from .schedules import (
    ScheduleConfig,
    ScheduleState,
    alpha_at,
    beta_of,
    confidence_threshold,
    learning_rate,
)
from .trainer import (
    VARIANTS,
    AblationFlags,
    TrainConfig,
    filter_pseudo_labels,
    generate_pseudo_labels,
    sgd_step,
    train,
)

__version__ = "0.1.0"
