"""Uniform model wrappers used by the trainer and the evaluator.

Each model exposes `backward`, `step`, `score_items` and `higher_is_better`,
so every kind runs through the same sampling, training and ranking code.
"""

from __future__ import annotations

import numpy as np

from . import baselines, training
from .forward import score_batch
from .params import HyperParams, ModelParameters, init_parameters


class MRMNModel:
    kind = "mrmn"
    higher_is_better = False
    has_memory = True

    def __init__(self, params: ModelParameters, hp: HyperParams):
        self.params = params
        self.hp = hp

    def backward(self, triplet):
        return training.backward(triplet, self.params, self.hp)

    def step(self, grads):
        training.sgd_step(self.params, grads, self.hp.learning_rate)

    def resolve_type(self, ftype: str) -> str:
        """A single-relation model answers for every feedback type."""
        if ftype in self.params.keys:
            return ftype
        if len(self.params.keys) == 1:
            return next(iter(self.params.keys))
        raise KeyError(f"model has no relation for feedback type {ftype!r}")

    def score_items(self, user: int, items, ftype: str) -> np.ndarray:
        keys = self.params.keys[self.resolve_type(ftype)]
        return score_batch(self.params.users[user], self.params.items[np.asarray(items)], keys, self.params.memory)


class LRMLModel(MRMNModel):
    kind = "lrml"


class CMLModel:
    kind = "cml"
    higher_is_better = False
    has_memory = False

    def __init__(self, params: ModelParameters, hp: HyperParams, margin: float):
        self.params = params
        self.hp = hp
        self.margin = margin

    def backward(self, triplet):
        return baselines.cml_backward(triplet, self.params, self.margin)

    def step(self, grads):
        training.sgd_step(self.params, grads, self.hp.learning_rate)

    def score_items(self, user: int, items, ftype: str = None) -> np.ndarray:
        diff = self.params.users[user] - self.params.items[np.asarray(items)]
        return np.einsum("ij,ij->i", diff, diff)


class BPRModel:
    kind = "mf-bpr"
    higher_is_better = True
    has_memory = False

    def __init__(self, params: ModelParameters, hp: HyperParams):
        self.params = params
        self.hp = hp

    def backward(self, triplet):
        return baselines.bpr_backward(triplet, self.params, self.hp.reg)

    def step(self, grads):
        training.sgd_step(self.params, grads, self.hp.learning_rate, project=False)

    def score_items(self, user: int, items, ftype: str = None) -> np.ndarray:
        return self.params.items[np.asarray(items)] @ self.params.users[user]


def wrap(params: ModelParameters, hp: HyperParams, primary: str | None = None):
    """Wrap existing parameters as the model kind named in `hp.model`."""
    if hp.model == "mrmn":
        return MRMNModel(params, hp)
    if hp.model == "lrml":
        return LRMLModel(params, hp)
    if hp.model == "cml":
        if primary in hp.margins:
            return CMLModel(params, hp, hp.margins[primary])
        if not hp.margins:
            raise ValueError("CML needs a margin")
        return CMLModel(params, hp, next(iter(hp.margins.values())))
    if hp.model == "mf-bpr":
        return BPRModel(params, hp)
    raise ValueError(f"unknown model kind {hp.model!r}")


def build(hp: HyperParams, dataset, primary: str | None = None):
    """Freshly initialised model for `dataset` (already prepared for the model kind)."""
    memory = hp.model in ("mrmn", "lrml")
    if memory:
        hp.check_margins(dataset.types)
    params = init_parameters(hp, dataset.n_users, dataset.n_items, dataset.types, memory=memory)
    return wrap(params, hp, primary)
