"""Trainable tensors, hyperparameters and the binary checkpoint format."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MRMNCKPT"
FORMAT_VERSION = 1
NORM_EPS = 1e-6

MODEL_KINDS = ("mrmn", "lrml", "cml", "mf-bpr")


@dataclass
class HyperParams:
    dim: int = 20
    slots: int = 10
    margins: dict[str, float] = field(default_factory=dict)
    learning_rate: float = 0.05
    epochs: int = 50
    seed: int = 0
    negatives_per_eval: int = 100
    k: int = 10
    model: str = "mrmn"
    neg_relation: str = "reuse"
    reg: float = 1e-4

    def __post_init__(self):
        if self.dim < 1 or self.slots < 1:
            raise ValueError("dim and slots must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a non-negative 64-bit integer")
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.neg_relation not in ("reuse", "recompute"):
            raise ValueError(f"unknown neg_relation {self.neg_relation!r}")
        if any(m < 0 for m in self.margins.values()):
            raise ValueError("margins must be non-negative")

    def check_margins(self, types) -> None:
        missing = [t for t in types if t not in self.margins]
        if missing:
            raise ValueError(f"no margin for feedback type(s): {', '.join(missing)}")


@dataclass
class ModelParameters:
    """U (users x d), V (items x d), one d x N key matrix per type, shared memory N x d.

    Baselines without a memory carry an empty `keys` dict and an N=0 memory.
    """

    users: np.ndarray
    items: np.ndarray
    keys: dict[str, np.ndarray]
    memory: np.ndarray

    @property
    def dim(self) -> int:
        return self.users.shape[1]

    @property
    def slots(self) -> int:
        return self.memory.shape[0]

    @property
    def types(self) -> list[str]:
        return list(self.keys)

    def copy(self) -> "ModelParameters":
        return ModelParameters(
            self.users.copy(), self.items.copy(),
            {t: k.copy() for t, k in self.keys.items()}, self.memory.copy(),
        )

    def arrays(self):
        """All matrices in checkpoint order: U, V, K per type (name-sorted), M."""
        yield self.users
        yield self.items
        yield from (self.keys[t] for t in sorted(self.keys))
        yield self.memory

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def equals(self, other: "ModelParameters") -> bool:
        return (
            sorted(self.keys) == sorted(other.keys)
            and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))
        )


def init_parameters(hp: HyperParams, n_users: int, n_items: int, types, memory: bool = True) -> ModelParameters:
    """Uniform [-1/sqrt(d), 1/sqrt(d)] init from a generator seeded by hp.seed."""
    if n_users < 1 or n_items < 1:
        raise ValueError("need at least one user and one item")
    rng = np.random.default_rng(hp.seed)
    bound = 1.0 / math.sqrt(hp.dim)
    d = hp.dim

    def draw(*shape):
        return rng.uniform(-bound, bound, size=shape)

    users = draw(n_users, d)
    items = draw(n_items, d)
    if not memory:
        return ModelParameters(users, items, {}, np.zeros((0, d)))
    keys = {t: draw(d, hp.slots) for t in sorted(types)}
    return ModelParameters(users, items, keys, draw(hp.slots, d))


def project_unit_ball(vec: np.ndarray) -> np.ndarray:
    norm = math.sqrt(float(vec @ vec))
    if norm <= 1.0:
        return vec
    return vec / norm


# -- checkpoint I/O --------------------------------------------------------


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointDimensionError(CheckpointError):
    pass


_SHAPE = struct.Struct("<II")


def save_checkpoint(params: ModelParameters, hp: HyperParams, path) -> None:
    """Write magic, version, a JSON header, then shape-prefixed little-endian float64 matrices."""
    if not params.is_finite():
        raise ValueError("refusing to checkpoint non-finite parameters")
    header = {
        "dim": params.dim,
        "slots": params.slots,
        "n_users": params.users.shape[0],
        "n_items": params.items.shape[0],
        "types": sorted(params.keys),
        "hyperparams": asdict(hp),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for arr in params.arrays():
            fh.write(_SHAPE.pack(*arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _take(buf: bytes, offset: int, size: int) -> tuple[bytes, int]:
    if offset + size > len(buf):
        raise CheckpointTruncatedError(f"checkpoint truncated at byte {len(buf)}")
    return buf[offset:offset + size], offset + size


def load_checkpoint(path) -> tuple[ModelParameters, HyperParams]:
    buf = Path(path).read_bytes()
    magic, off = _take(buf, 0, len(MAGIC))
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic bytes)")
    raw, off = _take(buf, off, 8)
    version, header_len = struct.unpack("<II", raw)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    raw, off = _take(buf, off, header_len)
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header") from exc

    d, n = header["dim"], header["slots"]
    expected = [(header["n_users"], d), (header["n_items"], d)]
    expected += [(d, n)] * len(header["types"])
    expected.append((n, d))
    mats = []
    for shape in expected:
        raw, off = _take(buf, off, _SHAPE.size)
        got = _SHAPE.unpack(raw)
        if tuple(got) != shape:
            raise CheckpointDimensionError(f"{path}: matrix shape {got} does not match header {shape}")
        raw, off = _take(buf, off, 8 * shape[0] * shape[1])
        mats.append(np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64))
    if off != len(buf):
        raise CheckpointFormatError(f"{path}: {len(buf) - off} trailing bytes")

    keys = dict(zip(header["types"], mats[2:-1]))
    params = ModelParameters(mats[0], mats[1], keys, mats[-1])
    return params, HyperParams(**header["hyperparams"])
