"""Huber loss and its IRLS weights."""
import numpy as np


def huber_loss(r, gamma):
    """Quadratic below ``gamma``, linear above; continuous with its derivative."""
    a = np.abs(r)
    return np.where(a <= gamma, 0.5 * a * a, gamma * (a - 0.5 * gamma))


def huber_weight(r, gamma):
    """IRLS weight: 1 inside the threshold, ``gamma / |r|`` outside."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    a = np.abs(np.asarray(r, dtype=float))
    return np.where(a <= gamma, 1.0, gamma / np.maximum(a, gamma))
