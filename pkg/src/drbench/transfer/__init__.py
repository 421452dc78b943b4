"""Inductive transfer from lesion segmentation to multi-disease identification."""

from .ablation import (
    RUNGS,
    LadderConfig,
    LadderResult,
    TrainedRung,
    TwoDomainData,
    ladder_table,
    pretrained_source,
    run_ladder,
    run_rung,
    train_rung,
    two_domain_phantom,
)
from .branches import (
    FeaturePyramid,
    TargetBranch,
    TargetBranchConfig,
    build_source_branch,
    build_target_branch,
    logit_map_from_features,
    multi_scale_transfer,
    normalized_logit_map,
    source_config,
    source_pyramid,
    target_config_for,
)
from .discriminator import DomainDiscriminator, DomainSpecificBatchNorm, build_discriminator, discriminate
from .losses import LossWeights, adapt_loss, adversarial_losses, disc_loss, label_pos_weight, target_loss, total_loss
from .train import (
    STAGE1,
    STAGE2,
    TransferBundle,
    evaluate_multidisease,
    load_bundle,
    multidisease_report,
    predict_diseases,
    pretrain_source,
    save_bundle,
    train_joint,
    train_target,
)
