"""Cross-modal teacher fusion and distillation engine with desk-scale
diagnostics: a task teacher's logits/features and a multi-prompt zero-shot
branch are blended into one supervision signal, a compact student is trained
against it with hand-derived gradients, and the gain is quantified through
confidence quadrants, ensemble statistics, and robustness protocols.
"""

from .cache_io import (
    BundleManifest,
    CacheTensor,
    load_bundle,
    read_tensor,
    validate_bundle,
    write_tensor,
)
from .fusion import (
    FeatureProjection,
    FusionConfig,
    average_prompt_logits,
    fuse_features,
    fuse_logits,
    perturbation,
    project_features,
)
from .losses import (
    LossBreakdown,
    cross_entropy,
    feature_loss,
    kl_div,
    logit_loss,
    softmax_t,
    total_loss,
)
from .student import (
    StudentNet,
    TrainConfig,
    TrainReport,
    backward,
    evaluate,
    forward,
    init_student,
    train,
)
from .diagnostics import (
    EnsembleStats,
    QuadrantCounts,
    RobustnessRow,
    corrupt,
    ensemble_error,
    fgsm_attack,
    fused_variance_closed_form,
    interclass_correlation,
    pgd_attack,
    quadrant_counts,
    quadrant_delta,
)
from .synth import SynthSpec, gen_synth

__version__ = "0.1.0"
