"""Pairwise margin training: negative sampling, hinge loss, analytic gradients, SGD."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .data import Dataset
from .forward import attention_softmax
from .params import HyperParams, ModelParameters, project_unit_ball


class TrainingError(Exception):
    pass


class NoNegativeError(TrainingError):
    pass


class TrainingTriplet(NamedTuple):
    user: int
    pos_item: int
    neg_item: int
    type: str


@dataclass
class GradientSet:
    """Sparse gradients keyed by row index (users, items) or type name (keys).

    An empty set means every gradient is zero.
    """

    users: dict[int, np.ndarray] = field(default_factory=dict)
    items: dict[int, np.ndarray] = field(default_factory=dict)
    keys: dict[str, np.ndarray] = field(default_factory=dict)
    memory: Optional[np.ndarray] = None

    def add_item(self, idx: int, grad: np.ndarray) -> None:
        if idx in self.items:
            self.items[idx] = self.items[idx] + grad
        else:
            self.items[idx] = grad

    def is_zero(self) -> bool:
        parts = [*self.users.values(), *self.items.values(), *self.keys.values()]
        if self.memory is not None:
            parts.append(self.memory)
        return all(not np.any(p) for p in parts)

    def is_finite(self) -> bool:
        parts = [*self.users.values(), *self.items.values(), *self.keys.values()]
        if self.memory is not None:
            parts.append(self.memory)
        return all(np.isfinite(p).all() for p in parts)


# -- negative sampling -----------------------------------------------------


class UniformNegativeSampler:
    """Uniform draw over items the user never interacted with (any feedback type).

    `item_filter(user, item) -> bool` can further restrict eligible items,
    e.g. to a geographic neighbourhood.
    """

    def __init__(self, max_attempts: int = 100, item_filter: Callable[[int, int], bool] | None = None):
        self.max_attempts = max_attempts
        self.item_filter = item_filter

    def _eligible(self, user: int, item: int, seen: set[int]) -> bool:
        return item not in seen and (self.item_filter is None or self.item_filter(user, item))

    def __call__(self, user: int, dataset: Dataset, rng: np.random.Generator) -> int:
        seen = dataset.all_interacted[user]
        n_items = dataset.n_items
        for _ in range(self.max_attempts):
            item = int(rng.integers(n_items))
            if self._eligible(user, item, seen):
                return item
        complement = [i for i in range(n_items) if self._eligible(user, i, seen)]
        if not complement:
            raise NoNegativeError(f"user {user} has no item left to sample as a negative")
        return complement[int(rng.integers(len(complement)))]


def sample_negative(user: int, dataset: Dataset, rng: np.random.Generator) -> int:
    return UniformNegativeSampler()(user, dataset, rng)


# -- loss and gradients ----------------------------------------------------


def triplet_loss(s_pos: float, s_neg: float, margin: float) -> float:
    return max(0.0, s_pos + margin - s_neg)


def _read(u, i, keys, memory):
    v = u * i
    w = attention_softmax(v @ keys)
    return v, w, w @ memory


def _attention_backward(g_r, v, w, keys, memory):
    """Push dL/dr back through the memory read and softmax.

    Returns (dL/dv, dL/dK, dL/dM).
    """
    g_w = memory @ g_r
    g_logits = w * (g_w - w @ g_w)
    return keys @ g_logits, np.outer(v, g_logits), np.outer(w, g_r)


def backward(triplet: TrainingTriplet, params: ModelParameters, hp: HyperParams) -> tuple[float, GradientSet]:
    """Loss and exact gradients of one MRMN training triplet.

    By default the relation vector of the positive pair is reused to score the
    negative item; `hp.neg_relation == "recompute"` reads a fresh one from u*j.
    """
    user, pos, neg, ftype = triplet
    u, i, j = params.users[user], params.items[pos], params.items[neg]
    keys, memory = params.keys[ftype], params.memory

    v, w, r = _read(u, i, keys, memory)
    recompute = hp.neg_relation == "recompute"
    if recompute:
        v_n, w_n, r_n = _read(u, j, keys, memory)
    else:
        r_n = r
    e_pos = u + r - i
    e_neg = u + r_n - j
    loss = float(e_pos @ e_pos) + hp.margins[ftype] - float(e_neg @ e_neg)
    if loss <= 0.0:
        return 0.0, GradientSet()

    g_pos = 2.0 * e_pos
    g_neg = -2.0 * e_neg
    g_u = g_pos + g_neg
    g_i = -g_pos
    g_j = -g_neg
    if recompute:
        g_v, g_keys, g_mem = _attention_backward(g_pos, v, w, keys, memory)
        g_vn, g_keys_n, g_mem_n = _attention_backward(g_neg, v_n, w_n, keys, memory)
        g_keys += g_keys_n
        g_mem += g_mem_n
        g_u = g_u + g_v * i + g_vn * j
        g_j = g_j + g_vn * u
    else:
        g_v, g_keys, g_mem = _attention_backward(g_pos + g_neg, v, w, keys, memory)
        g_u = g_u + g_v * i
    g_i = g_i + g_v * u

    grads = GradientSet(users={user: g_u}, keys={ftype: g_keys}, memory=g_mem)
    grads.add_item(pos, g_i)
    grads.add_item(neg, g_j)
    return loss, grads


def sgd_step(params: ModelParameters, grads: GradientSet, lr: float, project: bool = True) -> None:
    """In-place `row -= lr * grad`; touched user/item rows then go back into the unit ball."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for idx, g in grads.users.items():
        row = params.users[idx] - lr * g
        params.users[idx] = project_unit_ball(row) if project else row
    for idx, g in grads.items.items():
        row = params.items[idx] - lr * g
        params.items[idx] = project_unit_ball(row) if project else row
    for ftype, g in grads.keys.items():
        params.keys[ftype] -= lr * g
    if grads.memory is not None:
        params.memory -= lr * grads.memory


# -- epochs ----------------------------------------------------------------


class EpochSummary(NamedTuple):
    epoch: int
    mean_loss: float
    active_fraction: float
    elapsed_ms: float

    def csv_row(self) -> str:
        return f"{self.epoch},{self.mean_loss:.10g},{self.active_fraction:.6f},{self.elapsed_ms:.1f}"


TRAIN_LOG_HEADER = "epoch,mean_loss,active_fraction,elapsed_ms"


def train_epoch(model, dataset: Dataset, rng: np.random.Generator, sampler=None, epoch: int = 0) -> EpochSummary:
    """One pass over every positive training triplet in a seeded shuffle.

    `model` must provide `backward(triplet) -> (loss, grads)` and `step(grads)`.
    """
    sampler = sampler or UniformNegativeSampler()
    positives = dataset.triplets()
    if not positives:
        raise TrainingError("dataset has no training records")
    start = time.perf_counter()
    total, active = 0.0, 0
    for n in rng.permutation(len(positives)):
        user, item, ftype = positives[n]
        neg = sampler(user, dataset, rng)
        loss, grads = model.backward(TrainingTriplet(user, item, neg, ftype))
        if loss > 0.0:
            active += 1
            total += loss
            model.step(grads)
    elapsed = (time.perf_counter() - start) * 1000.0
    return EpochSummary(epoch, total / len(positives), active / len(positives), elapsed)


def training_rng(seed: int) -> np.random.Generator:
    """Generator for shuffling and negative sampling, independent of the init stream."""
    return np.random.default_rng((seed, 1))


def fit(model, dataset: Dataset, epochs: int, seed: int, sampler=None, callback=None) -> list[EpochSummary]:
    """Train for `epochs` passes; `callback(summary)` runs after each epoch."""
    rng = training_rng(seed)
    history = []
    for epoch in range(1, epochs + 1):
        summary = train_epoch(model, dataset, rng, sampler, epoch)
        history.append(summary)
        if callback is not None:
            callback(summary)
    return history
