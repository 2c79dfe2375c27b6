"""Landmark-free head pose estimation toolkit.

Binned classification-regression training on squared face crops, teacher
ensemble pseudo-labeling, knowledge distillation to a compact student, and
an MAE evaluation / figure export harness.
"""

from .codec import BinGrid, DEFAULT_GRID, decode, encode, one_hot, softmax
from .data import (
    AugmentationConfig,
    SampleRecord,
    SyntheticSample,
    augment,
    decode_synthetic_pose,
    load_annotations,
    make_synthetic_dataset,
    read_pseudo_labels,
    render_synthetic_image,
    write_pseudo_labels,
)
from .evaluation import (
    EvalReport,
    draw_axes,
    evaluate,
    format_results_table,
    load_reference_results,
    report_from_pairs,
    rotation_matrix,
    scatter_export,
)
from .geometry import BoundingBox, EulerPose, crop_and_resize, flip_horizontal, square_box
from .losses import (
    classification_loss,
    distillation_loss,
    ensemble,
    regression_loss,
    total_loss,
)
from .models import (
    BackboneSpec,
    CheckpointError,
    PoseModel,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    PoseDataset,
    TrainConfig,
    compute_pseudo_labels,
    cosine_lr,
    distill_student,
    initial_distillation_loss,
    parameter_checksum,
    train_teacher,
)

__version__ = "0.1.0"
