import numpy as np

from ..errors import DimensionError, InputError

P_CLAMP = 1e-6


def weighted_logistic_loss(pred, target, pos_weight=10.0):
    """Class-weighted pixel-wise logistic loss, mean over pixels.

    Returns ``(loss, grad)`` where ``grad`` is taken with respect to the
    pre-sigmoid activations.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    if not np.all((target == 0) | (target == 1)):
        raise InputError("target must be a binary mask with values in {0, 1}")
    n = pred.size
    p = np.clip(pred.astype(np.float64), P_CLAMP, 1 - P_CLAMP)
    y = target.astype(np.float64)
    w = np.where(y == 1, pos_weight, 1.0)
    loss = -np.sum(pos_weight * y * np.log(p) + (1 - y) * np.log(1 - p)) / n
    # scale after normalising so a contour gradient is exactly pos_weight times a background one
    grad = (w * ((pred - y) / n)).astype(pred.dtype)
    return float(loss), grad
