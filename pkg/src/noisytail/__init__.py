"""Classification under simultaneous label noise and long-tail imbalance.

Two-stage method on feature-vector datasets: contrastive pre-screening
with a noise-tolerant classifier, confidence-times-rarity soft-label
refurbishment, and a shot-adaptive three-expert ensemble, plus a
simulator for long-tailed noisy benchmarks.
"""

from .datagen import (
    Dataset,
    LongTailSpec,
    MixtureSpec,
    NoiseSpec,
    Sample,
    import_embeddings,
    inject_asymmetric,
    inject_symmetric,
    load_dataset,
    longtail_counts,
    save_dataset,
    synth_dataset,
    synth_split,
)
from .ensemble import (
    EnsembleModel,
    EvalReport,
    SoftClassStats,
    Stage2Config,
    SubgroupThresholds,
    e1_loss,
    e2_loss,
    e3_loss,
    ensemble_predict,
    evaluate,
    soft_class_counts,
    train_stage2,
)
from .errors import (
    DegenerateCountError,
    InvalidInputError,
    InvalidSpecError,
    NoisytailError,
    NumericError,
    ParseError,
)
from .numerics import (
    GradCheckReport,
    Mlp,
    finite_diff_grad,
    gradient_check,
    init_mlp,
    make_rng,
    mlp_backward,
    mlp_forward,
    softmax,
)
from .pipeline import (
    PipelineConfig,
    SweepSpec,
    default_config,
    run_in_memory,
    run_pipeline,
    stage_seed,
)
from .refurbish import (
    ClassStats,
    RefurbishConfig,
    RefurbishRecord,
    SoftLabel,
    class_proportions,
    rarity,
    refurbish_dataset,
    refurbish_one,
)
from .stage1 import (
    FeatureQueue,
    Prediction,
    Stage1Config,
    Stage1Model,
    augment,
    banc_loss,
    contrastive_loss,
    cross_entropy,
    predict,
    sce_loss,
    stage1_loss,
    train_stage1,
)

__version__ = "0.1.0"
