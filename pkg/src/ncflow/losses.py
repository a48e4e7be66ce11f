"""Square and logistic losses, their output-derivatives, and the early-phase
correlation target -l'(0, y) that defines the NCF seen by small initializations."""

from __future__ import annotations

from enum import Enum

import numpy as np


class LossKind(Enum):
    SQUARE = "square"
    LOGISTIC = "logistic"


def loss_value(kind: LossKind, yhat, y):
    yhat = np.asarray(yhat, dtype=float)
    y = np.asarray(y, dtype=float)
    if kind is LossKind.SQUARE:
        out = 0.5 * (yhat - y) ** 2
    elif kind is LossKind.LOGISTIC:
        out = np.logaddexp(0.0, -yhat * y)
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    return float(out) if out.ndim == 0 else out


def loss_prime(kind: LossKind, yhat, y):
    """Derivative of the loss in its first argument."""
    yhat = np.asarray(yhat, dtype=float)
    y = np.asarray(y, dtype=float)
    if kind is LossKind.SQUARE:
        out = yhat - y
    elif kind is LossKind.LOGISTIC:
        m = yhat * y
        # -y * sigmoid(-m), with the stable branch picked by sign(m)
        out = -y * np.where(
            m >= 0,
            np.exp(-np.abs(m)) / (1.0 + np.exp(-np.abs(m))),
            1.0 / (1.0 + np.exp(np.abs(m))),
        )
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    return float(out) if out.ndim == 0 else out


def ncf_target(kind: LossKind, y) -> np.ndarray:
    """Elementwise -l'(0, y_i): y for square loss, y/2 for logistic."""
    y = np.asarray(y, dtype=float)
    return -loss_prime(kind, np.zeros_like(y), y)


def total_loss(kind: LossKind, yhat: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(loss_value(kind, yhat, y)))
