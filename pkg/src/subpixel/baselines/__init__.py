"""Linear-regression and random-forest baselines on flattened neighborhood features."""

from .features import feature_width, flatten_features
from .forest import Forest, Tree, load_forest, rf_fit, rf_predict, save_forest, write_summary
from .linear import LinearModel, lr_fit, lr_predict
