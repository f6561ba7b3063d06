"""canet: a self-contained CNN micro-framework built on numpy.

Multi-head channel attention with weighted global average pooling, a
depthwise-separable residual backbone with layer freezing, reverse-mode
tape autodiff with finite-difference gradient checking, and a full
train/evaluate/compare pipeline, all verifiable at desk scale.
"""

from .tensor import (
    ShapeError,
    Tape,
    Tensor,
    add,
    backward,
    elementwise_forward,
    grad_check,
    matmul,
    multiply,
    relu,
    reshape,
    set_finite_checks,
    sigmoid,
    tensor_sum,
)
from .layers import (
    ConvParams,
    DenseParams,
    conv2d,
    cross_entropy_loss,
    dense_forward,
    depthwise_conv2d,
    global_avg_pool2d,
    max_pool2d,
    pointwise_conv2d,
    separable_conv2d,
    softmax,
    weighted_global_avg_pool,
)
from .attention import (
    AttentionConfig,
    AttentionParams,
    attention_forward,
    compute_channel_gate,
    init_attention_params,
)
from .model import (
    CheckpointError,
    ModelSpec,
    build_xception_lite,
    freeze_layers,
    load_checkpoint,
    model_forward,
    save_checkpoint,
)
from .data import (
    ArchiveError,
    Dataset,
    ImageFormatError,
    SplitIndices,
    generate_synthetic_dataset,
    load_image,
    load_image_directory,
    normalize_pixels,
    read_dataset_archive,
    resize_bilinear,
    stratified_split,
    write_dataset_archive,
)
from .training import (
    AdamState,
    MetricsReport,
    TrainConfig,
    TrainHistory,
    TrainingDivergedError,
    adam_step,
    compare_models,
    confusion_rates,
    evaluate_model,
    metrics_from_confusion,
    one_hot,
    run_repeated,
    train_model,
)
from .verification import run_gradient_check_suite

__version__ = "0.1.0"
