from .checkpoint import CheckpointError, ModelCheckpoint, load_checkpoint, save_checkpoint
from .labels import LabelError, LabelSet, TASK_KINDS
from .network import (
    ModelConfig,
    ModelError,
    NonFiniteGradient,
    TokenClassBatch,
    backward,
    classify_logits,
    classify_loss,
    encode,
    forward,
    init_classifier,
    init_model,
    loss_and_grads,
    mlm_logits,
    mlm_loss,
    param_names,
)
from .optim import OptimizerConfig, adam_step, init_opt_state, lr_at
from .training import (
    MetricsLog,
    Phase,
    finetune,
    labels_for,
    piece_streams,
    predict_corpus,
    predict_labels,
    prepare_task_data,
    pretrain,
)

__all__ = [
    "CheckpointError",
    "LabelError",
    "LabelSet",
    "MetricsLog",
    "ModelCheckpoint",
    "ModelConfig",
    "ModelError",
    "NonFiniteGradient",
    "OptimizerConfig",
    "Phase",
    "TASK_KINDS",
    "TokenClassBatch",
    "adam_step",
    "backward",
    "classify_logits",
    "classify_loss",
    "encode",
    "finetune",
    "forward",
    "init_classifier",
    "init_model",
    "init_opt_state",
    "labels_for",
    "load_checkpoint",
    "loss_and_grads",
    "lr_at",
    "mlm_logits",
    "mlm_loss",
    "param_names",
    "piece_streams",
    "predict_corpus",
    "predict_labels",
    "prepare_task_data",
    "pretrain",
    "save_checkpoint",
]
