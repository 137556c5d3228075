"""Planted-structure interaction logs for experiments and tests.

Users and items are split into taste clusters. Each feedback type draws a
fixed number of items per user; with probability `reliability` a draw comes
from the user's own cluster, otherwise from the whole catalogue. The first
type is the primary one and its records are timestamped after every
auxiliary record, so the leave-one-out holdout lands on primary feedback.
"""

from __future__ import annotations

import argparse
import sys
from typing import NamedTuple

import numpy as np

from .data import InteractionLog, RawInteraction


class TypeSpec(NamedTuple):
    name: str
    per_user: int
    reliability: float


def planted_log(
    n_users: int,
    n_items: int,
    n_clusters: int,
    types: list[TypeSpec],
    seed: int = 0,
) -> InteractionLog:
    rng = np.random.default_rng(seed)
    user_cluster = np.arange(n_users) % n_clusters
    item_cluster = rng.permutation(np.arange(n_items) % n_clusters)
    members = [np.flatnonzero(item_cluster == c) for c in range(n_clusters)]

    records = []
    for u in range(n_users):
        own = members[user_cluster[u]]
        timeline = []
        # auxiliary types first in time, primary last
        for phase, spec in enumerate([*types[1:], types[0]]):
            chosen: list[int] = []
            while len(chosen) < spec.per_user:
                pool = own if rng.random() < spec.reliability else np.arange(n_items)
                item = int(rng.choice(pool))
                if item not in chosen:
                    chosen.append(item)
            for step, item in enumerate(chosen):
                timeline.append(RawInteraction(f"u{u}", f"i{item}", spec.name, phase * 10_000 + step))
        records.extend(timeline)
    return InteractionLog.from_records(records)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Write a planted-structure interaction file.")
    parser.add_argument("out")
    parser.add_argument("--users", type=int, default=200)
    parser.add_argument("--items", type=int, default=300)
    parser.add_argument("--clusters", type=int, default=10)
    parser.add_argument(
        "--type", action="append", dest="types", metavar="NAME:COUNT:RELIABILITY",
        help="feedback type spec; first one is primary (default: purchase:4:0.9 click:15:0.7)",
    )
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    raw = args.types or ["purchase:4:0.9", "click:15:0.7"]
    specs = []
    for spec in raw:
        name, count, rel = spec.split(":")
        specs.append(TypeSpec(name, int(count), float(rel)))
    log = planted_log(args.users, args.items, args.clusters, specs, args.seed)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(log.dumps())
    return 0


if __name__ == "__main__":
    sys.exit(main())
