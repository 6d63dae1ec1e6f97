import numpy as np

from ..features import InputTensor


def feature_width(window: int) -> int:
    return 4 * window * window + 2


def flatten_features(t: InputTensor) -> np.ndarray:
    """One row per sample: the four band neighborhoods (band-major, then
    row-major within the window), then the center EBBI, then center band 7."""
    w, c = t.window, t.window // 2
    neigh = t.values[:, :, :4, :].transpose(3, 2, 0, 1).reshape(t.n, 4 * w * w)
    return np.concatenate([neigh, t.values[c, c, 4:6, :].T], axis=1).astype(np.float64)
