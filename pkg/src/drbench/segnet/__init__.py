from .loss import pos_weight_from_masks, seg_loss, seg_loss_from_logits, soft_dice
from .models import (
    AttentionGate,
    DenseUNet,
    SegModel,
    SegModelConfig,
    UNet,
    attention_gate,
    build_segmentation_model,
)
from .train import (
    evaluate_segmentation,
    export_masks,
    load_checkpoint,
    predict,
    save_checkpoint,
    segmentation_report,
    train_segmentation,
)

__all__ = [
    "AttentionGate", "DenseUNet", "SegModel", "SegModelConfig", "UNet", "attention_gate",
    "build_segmentation_model", "evaluate_segmentation", "export_masks", "load_checkpoint",
    "pos_weight_from_masks", "predict", "save_checkpoint", "seg_loss", "seg_loss_from_logits",
    "segmentation_report", "soft_dice", "train_segmentation",
]
