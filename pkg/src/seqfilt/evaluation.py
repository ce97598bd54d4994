"""Full-ranking evaluation: HR@r and NDCG@r over the whole item set.

Every prediction scores the entire catalog (no sampled negatives); the
held-out item's rank is 1 plus the number of better-scoring items, with
ties broken in favour of the lower item id so results are reproducible
across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Split, eval_instances
from .model import ModelConfig, pad_context, predict_scores_batch
from .nn import InvalidTarget

__all__ = [
    "CUTOFFS",
    "EvalReport",
    "rank_of_target",
    "metrics_from_rank",
    "aggregate_ranks",
    "evaluate",
]

CUTOFFS = (1, 5, 10, 20)


@dataclass(frozen=True)
class EvalReport:
    mode: str
    num_users: int
    num_empty_context: int
    filter_seen: bool
    hr: dict
    ndcg: dict

    def to_csv(self) -> str:
        lines = ["metric,cutoff,value"]
        for r in CUTOFFS:
            lines.append(f"HR,{r},%.17g" % self.hr[r])
        for r in CUTOFFS:
            lines.append(f"NDCG,{r},%.17g" % self.ndcg[r])
        lines.append(f"users,,{self.num_users}")
        lines.append(f"empty_contexts,,{self.num_empty_context}")
        lines.append(f"filter_seen,,{int(self.filter_seen)}")
        lines.append(f"mode,,{self.mode}")
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        head = f"{'Metric':<10}" + "".join(f"@{r:<8d}" for r in CUTOFFS)
        hr = f"{'HR':<10}" + "".join(f"{self.hr[r]:<9.4f}" for r in CUTOFFS)
        nd = f"{'NDCG':<10}" + "".join(f"{self.ndcg[r]:<9.4f}" for r in CUTOFFS)
        note = (
            f"({self.mode} split, {self.num_users} users, "
            f"{self.num_empty_context} empty contexts, "
            f"filter_seen={'on' if self.filter_seen else 'off'})"
        )
        return "\n".join([head, hr, nd, note])


def rank_of_target(scores, target, exclude=()) -> int:
    """1-based rank of `target` within `scores`, excluded indices ignored,
    ties resolved in favour of the lower index."""
    scores = np.asarray(scores, dtype=float)
    v = scores.shape[0]
    if not 0 <= target < v:
        raise InvalidTarget(f"target {target} out of range for {v} scores")
    considered = np.ones(v, dtype=bool)
    for i in exclude:
        considered[i] = False
    if not considered[target]:
        raise InvalidTarget(f"target {target} is excluded from ranking")
    considered[target] = False
    own = scores[target]
    better = scores > own
    tied_lower = (scores == own) & (np.arange(v) < target)
    return int(1 + (better & considered).sum() + (tied_lower & considered).sum())


def metrics_from_rank(rank, r):
    """HR and NDCG credit for a single relevant item at `rank`."""
    if rank < 1 or r < 1:
        raise ValueError("rank and cutoff must be >= 1")
    if rank > r:
        return 0.0, 0.0
    return 1.0, 1.0 / np.log2(rank + 1)


def aggregate_ranks(ranks, mode, num_empty_context=0, filter_seen=False) -> EvalReport:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("cannot aggregate an empty set of ranks")
    hr, ndcg = {}, {}
    for r in CUTOFFS:
        hit = ranks <= r
        hr[r] = float(hit.mean())
        gains = np.where(hit, 1.0 / np.log2(ranks + 1), 0.0)
        ndcg[r] = float(gains.mean())
    return EvalReport(mode, int(ranks.size), num_empty_context, filter_seen, hr, ndcg)


def _batched_ranks(logits, targets, contexts, filter_seen):
    """Vectorized ranks over a batch; matches rank_of_target with the
    padding id excluded (and seen items excluded when requested)."""
    b, v = logits.shape
    considered = np.ones((b, v), dtype=bool)
    considered[:, 0] = False
    if filter_seen:
        for row, context in enumerate(contexts):
            considered[row, list(context)] = False
    rows = np.arange(b)
    considered[rows, targets] = True
    own = logits[rows, targets]
    better = (logits > own[:, None]) & considered
    ids = np.arange(v)[None, :]
    tied_lower = (logits == own[:, None]) & considered & (ids < targets[:, None])
    return 1 + better.sum(axis=1) + tied_lower.sum(axis=1)


def evaluate(
    split: Split,
    params,
    cfg: ModelConfig,
    mode: str = "test",
    batch_size: int = 256,
    filter_seen: bool = False,
    frozen_ops=None,
) -> EvalReport:
    """Score every user's context, rank the held-out target over the full
    catalog, and average HR/NDCG at each cutoff."""
    contexts, targets = eval_instances(split, mode)
    if not contexts:
        raise ValueError("empty split")
    num_empty = sum(1 for c in contexts if len(c) == 0)
    all_ranks = []
    index = np.arange(len(contexts))
    for start in range(0, len(contexts), batch_size):
        chunk = index[start : start + batch_size]
        ids = np.stack([pad_context(contexts[i], cfg.max_len) for i in chunk])
        batch_targets = np.asarray([targets[i] for i in chunk], dtype=np.int64)
        logits = predict_scores_batch(params, cfg, ids, frozen_ops=frozen_ops)
        batch_contexts = [contexts[i] for i in chunk]
        all_ranks.append(_batched_ranks(logits, batch_targets, batch_contexts, filter_seen))
    ranks = np.concatenate(all_ranks)
    return aggregate_ranks(ranks, mode, num_empty, filter_seen)
