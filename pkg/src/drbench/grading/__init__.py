from .models import (
    GradeModel,
    GradeModelConfig,
    GradePrediction,
    build_grading_model,
    fuse_lesion_inputs,
    to_predictions,
)
from .train import (
    cam_from_features,
    class_activation_map,
    evaluate_grading,
    grading_report,
    load_grading_checkpoint,
    predict_grades,
    save_grading_checkpoint,
    train_grading,
    write_predictions,
)

__all__ = [
    "GradeModel", "GradeModelConfig", "GradePrediction", "build_grading_model",
    "cam_from_features", "class_activation_map", "evaluate_grading", "fuse_lesion_inputs",
    "grading_report", "load_grading_checkpoint", "predict_grades", "save_grading_checkpoint",
    "to_predictions", "train_grading", "write_predictions",
]
