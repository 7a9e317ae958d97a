"""Sim-to-real segmentation with IoU-ranked blending of real images into synthetic training sets."""

from .datamodel import (
    DEFAULT_CLASSES,
    ClassEntry,
    ClassSet,
    DatasetManifest,
    Domain,
    ManifestError,
    SampleRecord,
    Split,
    ValidationError,
    load_manifest,
    split_dataset,
    write_manifest,
)
from .irb import (
    BlendAllocation,
    BlendPolicy,
    CapacityError,
    IrbLoopError,
    IrbRunState,
    ReferenceTrainer,
    allocate_blend,
    build_blended_trainset,
    irb_loop,
    select_blend_images,
)
from .metrics import (
    ConfusionMatrix,
    EvaluationError,
    IoUReport,
    build_report,
    confusion_matrix,
    mean_iou,
    rank_classes,
    relative_improvement,
)
from .report import ReportError, emit_report
from .styletransfer import SpectralConfig, batch_stylize, spectral_blend
from .synthgen import SceneSpec, generate_domain, generate_domain_pair
from .trainer import (
    Checkpoint,
    ContractError,
    DivergenceError,
    TrainerConfig,
    evaluate_model,
    load_checkpoint,
    predict_mask,
    register_model,
    train_model,
)

__version__ = "0.1.0"
