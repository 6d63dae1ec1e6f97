"""From-scratch convolutional regression network for fraction estimation."""

from .gradcheck import TINY_CONFIG, GradCheckReport, GradientCheckError, gradient_check
from .io import export_json, load_model, save_model
from .layers import leaky_relu, logcosh_loss
from .model import (
    ConfigError,
    ModelConfig,
    ModelParams,
    backward,
    forward,
    init_params,
    linear_config,
    recalibrate_batchnorm,
)
from .optim import AdamState, adam_update
from .train import (
    TrainConfig,
    TrainingDivergedError,
    TrainingLog,
    epoch_lr,
    fit,
    predict,
    predict_raw,
    predict_samples,
    train_step,
)

# window / kernel pairs used in the window-size study
WINDOW_KERNELS = {
    3: ((3, 3), (1, 1)),
    5: ((3, 3), (3, 3)),
    7: ((3, 3), (3, 3)),
    9: ((5, 5), (3, 3)),
}
