"""Leave-one-out top-K evaluation with sampled negatives (HR@K, NDCG@K)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .data import Dataset


class EvaluationError(Exception):
    pass


class InsufficientCandidatesError(EvaluationError):
    pass


class RankingRecord(NamedTuple):
    user: int
    ground_truth: int
    candidates: list[int]
    rank: int


def candidate_rng(seed: int, user: int) -> np.random.Generator:
    """Per-user stream, so adding users never reshuffles anyone else's candidates."""
    return np.random.default_rng((seed, 2, user))


def sample_eval_candidates(
    user: int,
    ground_truth: int,
    dataset: Dataset,
    n: int,
    rng: np.random.Generator,
    item_filter: Callable[[int, int], bool] | None = None,
) -> list[int]:
    """Ground truth followed by `n` distinct items the user never interacted with."""
    if n == 0:
        return [ground_truth]
    mask = np.ones(dataset.n_items, dtype=bool)
    mask[list(dataset.all_interacted[user])] = False
    pool = np.flatnonzero(mask)
    if item_filter is not None:
        pool = pool[[item_filter(user, int(i)) for i in pool]]
    if len(pool) < n:
        raise InsufficientCandidatesError(f"user {user}: {len(pool)} eligible negatives, need {n}")
    negatives = rng.choice(pool, size=n, replace=False)
    return [ground_truth, *negatives.tolist()]


def rank_candidates(user: int, candidates: list[int], ftype: str, scorer) -> int:
    """1-based rank of `candidates[0]`; negatives tied with it are ranked ahead of it."""
    scores = np.asarray(scorer.score_items(user, candidates, ftype), dtype=np.float64)
    truth, others = scores[0], scores[1:]
    if scorer.higher_is_better:
        ahead = np.count_nonzero(others >= truth)
    else:
        ahead = np.count_nonzero(others <= truth)
    return 1 + int(ahead)


def hit_ratio_at_k(rank: int, k: int) -> int:
    return int(rank <= k)


def ndcg_at_k(rank: int, k: int) -> float:
    """Single relevant item, so the ideal DCG is 1."""
    if rank > k:
        return 0.0
    return 1.0 / math.log2(rank + 1)


@dataclass
class EvalReport:
    k: int
    per_user: list[RankingRecord]
    skipped: list[int] = field(default_factory=list)
    split: str = "test"
    eval_type: str | None = None

    @property
    def hr_at_k(self) -> float:
        if not self.per_user:
            return 0.0
        return sum(hit_ratio_at_k(rec.rank, self.k) for rec in self.per_user) / len(self.per_user)

    @property
    def ndcg_at_k(self) -> float:
        if not self.per_user:
            return 0.0
        return math.fsum(ndcg_at_k(rec.rank, self.k) for rec in self.per_user) / len(self.per_user)

    def summary(self) -> dict:
        return {
            f"hr@{self.k}": self.hr_at_k,
            f"ndcg@{self.k}": self.ndcg_at_k,
            "users_evaluated": len(self.per_user),
            "users_skipped": len(self.skipped),
            "split": self.split,
            "eval_type": self.eval_type,
        }

    def to_csv(self, user_names: list[str] | None = None) -> str:
        lines = ["user,rank,hit,ndcg"]
        for rec in self.per_user:
            name = user_names[rec.user] if user_names else str(rec.user)
            lines.append(f"{name},{rec.rank},{hit_ratio_at_k(rec.rank, self.k)},{ndcg_at_k(rec.rank, self.k):.12g}")
        lines.append(
            f"# hr@{self.k}={self.hr_at_k:.12g} ndcg@{self.k}={self.ndcg_at_k:.12g} "
            f"users_evaluated={len(self.per_user)} users_skipped={len(self.skipped)}"
        )
        return "\n".join(lines) + "\n"

    def write(self, csv_path, summary_path, user_names: list[str] | None = None) -> None:
        with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv(user_names))
        with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def evaluate(
    scorer,
    dataset: Dataset,
    k: int = 10,
    negatives: int = 100,
    seed: int = 0,
    split: str = "test",
    eval_type: str | None = None,
    item_filter: Callable[[int, int], bool] | None = None,
) -> EvalReport:
    """Rank each user's held-out item against sampled negatives.

    Only held-out records of `eval_type` are evaluated (all of them if None).
    Users without enough eligible negatives are reported as skipped.
    """
    if split not in ("valid", "test"):
        raise ValueError(f"split must be 'valid' or 'test', not {split!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    held = dataset.valid if split == "valid" else dataset.test
    targets = sorted((u, rec) for u, rec in held.items() if eval_type is None or rec.type == eval_type)
    if not targets:
        raise EvaluationError(f"{split} split has no records" + (f" of type {eval_type!r}" if eval_type else ""))

    report = EvalReport(k=k, per_user=[], split=split, eval_type=eval_type)
    for user, rec in targets:
        try:
            cands = sample_eval_candidates(user, rec.item, dataset, negatives, candidate_rng(seed, user), item_filter)
        except InsufficientCandidatesError:
            report.skipped.append(user)
            continue
        rank = rank_candidates(user, cands, rec.type, scorer)
        report.per_user.append(RankingRecord(user, rec.item, cands, rank))
    return report
