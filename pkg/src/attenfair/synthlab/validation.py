"""Input checks for image-shaped estimator arguments."""

import numpy as np
from sklearn.utils.validation import check_array, column_or_1d


def check_images(X) -> np.ndarray:
    """Return ``X`` as a finite float64 array [N, C, H, W]."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_min_samples=1)
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4:
        raise ValueError(f"expected images [N, C, H, W] or [N, H, W], got {X.ndim}-d input")
    if X.shape[2] % 4 or X.shape[3] % 4:
        raise ValueError("image sides must be multiples of 4")
    return X


def check_labels(y, n: int) -> np.ndarray:
    y = column_or_1d(y, warn=True)
    if y.shape[0] != n:
        raise ValueError(f"{y.shape[0]} labels for {n} images")
    return y


def check_masks(masks, X: np.ndarray):
    if masks is None:
        return None
    M = check_array(masks, allow_nd=True, dtype=np.float64, ensure_min_samples=1)
    if M.ndim == 3:
        M = M[:, None]
    if M.shape != (X.shape[0], 1) + X.shape[2:]:
        raise ValueError(f"masks must have dims {[X.shape[0], 1, *X.shape[2:]]}, got {list(M.shape)}")
    if not np.isin(M, (0.0, 1.0)).all():
        raise ValueError("masks must be binary")
    return M
