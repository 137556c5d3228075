"""MF-BPR and CML baselines, plus the LRML configuration of MRMN."""

from __future__ import annotations

import enum
from dataclasses import replace

import numpy as np

from .data import Dataset
from .params import HyperParams, ModelParameters
from .training import GradientSet, TrainingTriplet


class BaselineKind(enum.Enum):
    MF_BPR = "mf-bpr"
    CML = "cml"
    LRML_MODE = "lrml"


def mf_bpr_score(u: np.ndarray, i: np.ndarray) -> float:
    """Inner product; higher is better."""
    if u.shape != i.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {i.shape}")
    return float(u @ i)


def mf_bpr_loss(s_pos: float, s_neg: float) -> float:
    """-log sigmoid(s_pos - s_neg), computed without overflow."""
    return float(np.logaddexp(0.0, -(s_pos - s_neg)))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    z = np.exp(x)
    return z / (1.0 + z)


def bpr_backward(triplet: TrainingTriplet, params: ModelParameters, reg: float) -> tuple[float, GradientSet]:
    """BPR loss with L2 penalty `reg * (|u|^2 + |i|^2 + |j|^2)` and its gradients."""
    user, pos, neg, _ = triplet
    u, i, j = params.users[user], params.items[pos], params.items[neg]
    x = float(u @ i) - float(u @ j)
    loss = mf_bpr_loss(x, 0.0) + reg * float(u @ u + i @ i + j @ j)
    coef = -_sigmoid(-x)
    grads = GradientSet(users={user: coef * (i - j) + 2.0 * reg * u})
    grads.add_item(pos, coef * u + 2.0 * reg * i)
    grads.add_item(neg, -coef * u + 2.0 * reg * j)
    return loss, grads


def cml_score(u: np.ndarray, i: np.ndarray) -> float:
    """Squared Euclidean distance; lower is better."""
    if u.shape != i.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {i.shape}")
    diff = u - i
    return float(diff @ diff)


def cml_backward(triplet: TrainingTriplet, params: ModelParameters, margin: float) -> tuple[float, GradientSet]:
    user, pos, neg, _ = triplet
    u, i, j = params.users[user], params.items[pos], params.items[neg]
    e_pos, e_neg = u - i, u - j
    loss = float(e_pos @ e_pos) + margin - float(e_neg @ e_neg)
    if loss <= 0.0:
        return 0.0, GradientSet()
    grads = GradientSet(users={user: 2.0 * (e_pos - e_neg)})
    grads.add_item(pos, -2.0 * e_pos)
    grads.add_item(neg, 2.0 * e_neg)
    return loss, grads


def configure_lrml(hp: HyperParams, dataset: Dataset, primary: str | None = None) -> tuple[HyperParams, Dataset]:
    """Relabel all training feedback onto one type so MRMN runs with a single relation.

    The surviving type is `primary` (default: the dataset's first type) and its
    margin becomes the only margin. Held-out records keep their original type so
    evaluation still targets the same feedback.
    """
    primary = primary or dataset.types[0]
    margin = hp.margins.get(primary)
    if margin is None:
        raise ValueError(f"no margin for primary type {primary!r}")
    return replace(hp, margins={primary: margin}), dataset.relabel(primary)
