"""Interaction-log loading, leave-one-out splitting, and batching.

The input format is one user per line: a user id followed by that user's
item ids in chronological order, all space-separated positive integers.
Items are remapped to a dense 1..V range (0 is reserved for padding) and
the mapping is kept so it can be persisted beside checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import pad_context

__all__ = [
    "DataError",
    "LoadReport",
    "Corpus",
    "Split",
    "load_corpus",
    "split_loo",
    "train_examples",
    "eval_instances",
    "make_batches",
]


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class LoadReport:
    num_users: int
    num_items: int
    num_interactions: int
    avg_length: float
    sparsity: float
    dropped_users: int
    min_interactions: int

    def summary(self) -> str:
        return (
            "# Users  # Items  # Interactions  Avg. Length  Sparsity\n"
            f"{self.num_users:<8d} {self.num_items:<8d} "
            f"{self.num_interactions:<15d} {self.avg_length:<12.1f} "
            f"{100.0 * self.sparsity:.2f}%\n"
            f"(dropped {self.dropped_users} users with < "
            f"{self.min_interactions} interactions)"
        )


@dataclass
class Corpus:
    users: list
    sequences: list
    num_items: int
    item_map: dict = field(default_factory=dict)
    report: LoadReport | None = None


@dataclass
class Split:
    """Per-user leave-one-out split: history prefix, then the two held-out
    targets (second-to-last for validation, last for testing)."""

    users: list
    prefixes: list
    valid_targets: list
    test_targets: list
    num_items: int


def load_corpus(path, min_interactions: int = 5) -> Corpus:
    min_keep = max(3, min_interactions)
    raw = {}
    order = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            try:
                values = [int(tok) for tok in fields]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-integer token") from exc
            user, items = values[0], values[1:]
            if any(item < 1 for item in items):
                raise DataError(f"{path}:{lineno}: item ids must be >= 1")
            if user in raw:
                raise DataError(f"{path}:{lineno}: duplicate user {user}")
            raw[user] = items
            order.append(user)
    if not raw:
        raise DataError(f"{path}: empty corpus")

    kept = [u for u in order if len(raw[u]) >= min_keep]
    dropped = len(order) - len(kept)
    if not kept:
        raise DataError(
            f"{path}: no user has >= {min_keep} interactions; nothing to model"
        )
    distinct = sorted({item for u in kept for item in raw[u]})
    item_map = {orig: idx for idx, orig in enumerate(distinct, start=1)}
    sequences = [[item_map[item] for item in raw[u]] for u in kept]
    interactions = sum(len(s) for s in sequences)
    report = LoadReport(
        num_users=len(kept),
        num_items=len(distinct),
        num_interactions=interactions,
        avg_length=interactions / len(kept),
        sparsity=1.0 - interactions / (len(kept) * len(distinct)),
        dropped_users=dropped,
        min_interactions=min_interactions,
    )
    return Corpus(kept, sequences, len(distinct), item_map, report)


def split_loo(corpus: Corpus) -> Split:
    prefixes, valid, test = [], [], []
    for seq in corpus.sequences:
        if len(seq) < 3:
            raise DataError("every sequence needs >= 3 interactions to split")
        prefixes.append(seq[:-2])
        valid.append(seq[-2])
        test.append(seq[-1])
    return Split(list(corpus.users), prefixes, valid, test, corpus.num_items)


def train_examples(split: Split):
    """Dense next-item pairs: within each history prefix, every position
    is predicted from the items before it."""
    contexts, targets = [], []
    for prefix in split.prefixes:
        for j in range(1, len(prefix)):
            contexts.append(prefix[:j])
            targets.append(prefix[j])
    return contexts, targets


def eval_instances(split: Split, mode: str):
    """Evaluation contexts: history prefix for `valid`, prefix plus the
    validation item for `test` (so the test context is everything but the
    held-out last item)."""
    if mode == "valid":
        return list(split.prefixes), list(split.valid_targets)
    if mode == "test":
        contexts = [p + [v] for p, v in zip(split.prefixes, split.valid_targets)]
        return contexts, list(split.test_targets)
    raise ValueError(f"mode must be 'valid' or 'test', got {mode!r}")


def make_batches(contexts, targets, max_len, batch_size, rng=None):
    """Yield (ids, targets) arrays; order is shuffled when an rng is given."""
    if max_len < 1 or batch_size < 1:
        raise ValueError("max_len and batch_size must be positive")
    count = len(contexts)
    order = rng.permutation(count) if rng is not None else np.arange(count)
    for start in range(0, count, batch_size):
        chunk = order[start : start + batch_size]
        ids = np.stack([pad_context(contexts[i], max_len) for i in chunk])
        yield ids, np.asarray([targets[i] for i in chunk], dtype=np.int64)
