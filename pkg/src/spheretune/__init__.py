"""spheretune: prompt optimization on the unit hypersphere.

Estimates von Mises-Fisher fields over embedding populations, fuses
them into per-class anchors, and trains prompt vectors against those
anchors with an anchor-attraction loss, a spherical contrastive loss,
and a symmetric cross-entropy -- all on plain embedding matrices, no
foundation model required.
"""

from .anchors import AnchorSet, build_class_fields, build_clip_field, fuse_anchors
from .embd import read_embd, write_embd
from .evaluation import (
    BaseNovelResult,
    EpisodeSpec,
    EvalResult,
    base_to_novel,
    harmonic_mean,
    predict,
    run_episodes,
)
from .losses import (
    LossParts,
    LossWeights,
    PromptGradients,
    PromptState,
    TempSchedule,
    anchor_loss,
    dynamic_targets,
    image_logits,
    spherical_contrastive_loss,
    symmetric_ce_loss,
    tau_at,
    total_gradients,
    total_loss,
)
from .manifold import EmbeddingMatrix, UnitVector, cosine_matrix, mean_resultant, normalize_rows
from .synth import AblationTable, World, WorldSpec, ablation_suite, generate_world
from .training import TrainConfig, TrainReport, lr_at, train
from .vmf import VmfParams, estimate_vmf, log_density, log_norm_const, sample_vmf

__version__ = "0.1.0"

__all__ = [
    "AblationTable",
    "AnchorSet",
    "BaseNovelResult",
    "EmbeddingMatrix",
    "EpisodeSpec",
    "EvalResult",
    "LossParts",
    "LossWeights",
    "PromptGradients",
    "PromptState",
    "TempSchedule",
    "TrainConfig",
    "TrainReport",
    "UnitVector",
    "VmfParams",
    "World",
    "WorldSpec",
    "ablation_suite",
    "anchor_loss",
    "base_to_novel",
    "build_class_fields",
    "build_clip_field",
    "cosine_matrix",
    "dynamic_targets",
    "estimate_vmf",
    "fuse_anchors",
    "generate_world",
    "harmonic_mean",
    "image_logits",
    "log_density",
    "log_norm_const",
    "lr_at",
    "mean_resultant",
    "normalize_rows",
    "predict",
    "read_embd",
    "run_episodes",
    "sample_vmf",
    "spherical_contrastive_loss",
    "symmetric_ce_loss",
    "tau_at",
    "total_gradients",
    "total_loss",
    "train",
    "write_embd",
]
