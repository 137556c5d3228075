"""MRMN forward pass: joint embedding, key addressing, memory read, translation score.

Scores are squared distances, so lower means a better match.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .params import ModelParameters


class AttentionProfile(NamedTuple):
    type: str
    weights: np.ndarray


class RelationVector(NamedTuple):
    type: str
    r: np.ndarray


class Prediction(NamedTuple):
    score: float
    attention: AttentionProfile
    relation: RelationVector


def _check_same_length(*vecs):
    n = vecs[0].shape[-1]
    if any(v.shape[-1] != n for v in vecs[1:]):
        raise ValueError(f"dimension mismatch: {[v.shape for v in vecs]}")


def joint_embedding(u: np.ndarray, i: np.ndarray) -> np.ndarray:
    _check_same_length(u, i)
    return u * i


def key_attention(v: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Attention logits: dot product of `v` with every key column (keys is d x N)."""
    if v.shape[-1] != keys.shape[0]:
        raise ValueError(f"dimension mismatch: v {v.shape}, keys {keys.shape}")
    return v @ keys


def attention_softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, stabilised by subtracting the max."""
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def relation_vector(weights: np.ndarray, memory: np.ndarray) -> np.ndarray:
    if weights.shape[-1] != memory.shape[0]:
        raise ValueError(f"dimension mismatch: weights {weights.shape}, memory {memory.shape}")
    return weights @ memory


def score(u: np.ndarray, r: np.ndarray, i: np.ndarray) -> float:
    """Squared L2 norm of u + r - i."""
    _check_same_length(u, r, i)
    diff = u + r - i
    return float(diff @ diff)


def _lookup(params: ModelParameters, user: int, item: int, ftype: str):
    if not 0 <= user < params.users.shape[0]:
        raise IndexError(f"user index {user} out of range")
    if not 0 <= item < params.items.shape[0]:
        raise IndexError(f"item index {item} out of range")
    if ftype not in params.keys:
        raise KeyError(f"unknown feedback type {ftype!r}")
    return params.users[user], params.items[item], params.keys[ftype]


def predict(user: int, item: int, ftype: str, params: ModelParameters) -> Prediction:
    u, i, keys = _lookup(params, user, item, ftype)
    weights = attention_softmax(key_attention(joint_embedding(u, i), keys))
    r = relation_vector(weights, params.memory)
    return Prediction(score(u, r, i), AttentionProfile(ftype, weights), RelationVector(ftype, r))


def attention_batch(u: np.ndarray, items: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Attention weights for one user against many item rows; shape (n_items, N)."""
    return attention_softmax((u * items) @ keys)


def score_batch(u: np.ndarray, items: np.ndarray, keys: np.ndarray, memory: np.ndarray) -> np.ndarray:
    """Scores of one user against many item rows, each with its own relation vector."""
    rel = attention_batch(u, items, keys) @ memory
    diff = u + rel - items
    return np.einsum("ij,ij->i", diff, diff)
