"""Interaction log parsing, activity filtering and the leave-one-out split."""

from __future__ import annotations

import io
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, TextIO

logger = logging.getLogger(__name__)


class DataError(Exception):
    """Base class for every ingestion failure."""


class ParseError(DataError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EmptyInputError(DataError):
    pass


class EmptyResultError(DataError):
    pass


class RawInteraction(NamedTuple):
    user: str
    item: str
    type: str
    timestamp: int


class Vocab:
    """Bijection between external tokens and dense indices, in first-appearance order."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens: list[str] = []
        self.index: dict[str, int] = {}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self.index.get(token)
        if idx is None:
            idx = len(self.tokens)
            self.index[token] = idx
            self.tokens.append(token)
        return idx

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, token: str) -> int:
        return self.index[token]

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def __repr__(self) -> str:
        return f"Vocab({len(self.tokens)} tokens)"


@dataclass
class InteractionLog:
    records: list[RawInteraction]
    users: Vocab
    items: Vocab
    types: Vocab
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def from_records(cls, records: Iterable[RawInteraction]) -> "InteractionLog":
        records = list(records)
        users, items, types = Vocab(), Vocab(), Vocab()
        for rec in records:
            users.add(rec.user)
            items.add(rec.item)
            types.add(rec.type)
        log = cls(records, users, items, types)
        if len(types) < 2:
            log.warnings.append(f"only {len(types)} feedback type(s) present")
        return log

    @property
    def warning_count(self) -> int:
        return len(self.warnings)

    def dumps(self, delimiter: str = ",", canonical: bool = True) -> str:
        """Text form of the log.

        Canonical output is sorted by (user index, timestamp), input order on
        ties; otherwise records keep their input order.
        """
        order = range(len(self.records))
        if canonical:
            order = sorted(order, key=lambda n: (self.users[self.records[n].user], self.records[n].timestamp))
        buf = io.StringIO()
        for n in order:
            rec = self.records[n]
            buf.write(delimiter.join((rec.user, rec.item, rec.type, str(rec.timestamp))))
            buf.write("\n")
        return buf.getvalue()


def parse_interactions(stream: TextIO | Iterable[str], delimiter: str = ",") -> InteractionLog:
    """Parse `user,item,type,timestamp` lines; `#` lines and blank lines are skipped."""
    if len(delimiter) != 1:
        raise ValueError("delimiter must be a single character")
    records = []
    for line_no, line in enumerate(stream, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(delimiter)]
        if len(fields) != 4:
            raise ParseError(line_no, f"expected 4 fields, got {len(fields)}")
        if not all(fields):
            raise ParseError(line_no, "empty field")
        user, item, ftype, ts = fields
        try:
            timestamp = int(ts)
        except ValueError:
            raise ParseError(line_no, f"timestamp {ts!r} is not an integer") from None
        records.append(RawInteraction(user, item, ftype, timestamp))
    if not records:
        raise EmptyInputError("no interaction records in input")
    log = InteractionLog.from_records(records)
    for msg in log.warnings:
        logger.warning(msg)
    return log


def filter_by_activity(log: InteractionLog, min_user: int, min_item: int) -> InteractionLog:
    """Drop inactive users, then inactive items counted on the user-filtered log.

    Counts pool all feedback types. One pass, no fixpoint iteration.
    """
    if min_user < 0 or min_item < 0:
        raise ValueError("thresholds must be non-negative")
    user_counts = Counter(rec.user for rec in log.records)
    kept = [rec for rec in log.records if user_counts[rec.user] >= min_user]
    item_counts = Counter(rec.item for rec in kept)
    kept = [rec for rec in kept if item_counts[rec.item] >= min_item]
    if not kept:
        raise EmptyResultError(f"no records survive min_user={min_user}, min_item={min_item}")
    return InteractionLog.from_records(kept)


class Held(NamedTuple):
    """A held-out record in index space; `type` keeps the feedback-type name."""

    item: int
    type: str
    timestamp: int


class TrainRecord(NamedTuple):
    user: int
    item: int
    type: str
    timestamp: int


@dataclass
class Dataset:
    users: Vocab
    items: Vocab
    types: list[str]
    train: list[TrainRecord]
    valid: dict[int, Held]
    test: dict[int, Held]
    positives: dict[str, list[set[int]]]
    all_interacted: list[set[int]]

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    def triplets(self) -> list[tuple[int, int, str]]:
        """Every distinct positive (user, item, type) triple, in a fixed order."""
        out = []
        for ftype in self.types:
            for user, items in enumerate(self.positives[ftype]):
                out.extend((user, item, ftype) for item in sorted(items))
        return out

    def restrict_types(self, keep: Iterable[str]) -> "Dataset":
        """Training signal limited to `keep`; held-out records and exclusions are unchanged."""
        keep = [t for t in self.types if t in set(keep)]
        if not keep:
            raise DataError("no feedback types left after restriction")
        train = [rec for rec in self.train if rec.type in keep]
        return Dataset(
            self.users, self.items, keep, train, self.valid, self.test,
            {t: self.positives[t] for t in keep}, self.all_interacted,
        )

    def relabel(self, ftype: str) -> "Dataset":
        """Collapse every training interaction onto the single type `ftype`."""
        train = [rec._replace(type=ftype) for rec in self.train]
        merged = [set() for _ in range(self.n_users)]
        for t in self.types:
            for user, items in enumerate(self.positives[t]):
                merged[user] |= items
        return Dataset(
            self.users, self.items, [ftype], train, self.valid, self.test,
            {ftype: merged}, self.all_interacted,
        )


def leave_one_out_split(log: InteractionLog) -> Dataset:
    """Per user: last record by time is test, second to last is valid, the rest train.

    Users with fewer than 3 records keep everything in train.
    """
    if not log.records:
        raise EmptyInputError("cannot split an empty log")
    by_user: dict[int, list[tuple[int, int, RawInteraction]]] = defaultdict(list)
    for pos, rec in enumerate(log.records):
        by_user[log.users[rec.user]].append((rec.timestamp, pos, rec))

    types = list(log.types.tokens)
    positives = {t: [set() for _ in range(len(log.users))] for t in types}
    all_interacted = [set() for _ in range(len(log.users))]
    train, valid, test = [], {}, {}
    for user in range(len(log.users)):
        history = sorted(by_user[user])
        held = []
        if len(history) >= 3:
            held = history[-2:]
            history = history[:-2]
        for ts, _, rec in history:
            item = log.items[rec.item]
            train.append(TrainRecord(user, item, rec.type, ts))
            positives[rec.type][user].add(item)
            all_interacted[user].add(item)
        for target, (ts, _, rec) in zip((valid, test), held):
            item = log.items[rec.item]
            target[user] = Held(item, rec.type, ts)
            all_interacted[user].add(item)
    return Dataset(log.users, log.items, types, train, valid, test, positives, all_interacted)


def type_statistics(log: InteractionLog) -> list[dict]:
    """Per-type user/item/interaction counts; density is over the full user x item grid."""
    grid = len(log.users) * len(log.items)
    rows = []
    for ftype in log.types.tokens:
        recs = [rec for rec in log.records if rec.type == ftype]
        rows.append({
            "type": ftype,
            "users": len({rec.user for rec in recs}),
            "items": len({rec.item for rec in recs}),
            "interactions": len(recs),
            "density": len(recs) / grid,
        })
    return rows
