"""Training loop: cross-entropy with orthogonal basis regularization,
Adam updates, validation-based early stopping."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import Corpus, DataError, make_batches, split_loo, train_examples
from .evaluation import evaluate
from .model import ModelConfig, block_key, init_params, model_backward, model_forward, score_logits, zero_grads
from .nn import NumericError, adam_init, adam_step, ortho_penalty, softmax_xent_batch

__all__ = [
    "TrainConfig",
    "TrainLog",
    "loss_and_grads",
    "fit",
    "make_synthetic",
]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    alpha: float = 0.0
    epochs: int = 200
    batch_size: int = 256
    patience: int = 10
    seed: int = 42
    clip_norm: float | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    ce: list = field(default_factory=list)
    ortho: list = field(default_factory=list)
    valid_ndcg20: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def append(self, epoch, ce, ortho, ndcg, seconds):
        self.epochs.append(epoch)
        self.ce.append(ce)
        self.ortho.append(ortho)
        self.valid_ndcg20.append(ndcg)
        self.seconds.append(seconds)

    def to_csv(self) -> str:
        lines = ["epoch,ce,ortho,valid_ndcg20,seconds"]
        for row in zip(self.epochs, self.ce, self.ortho, self.valid_ndcg20, self.seconds):
            lines.append("%d,%.17g,%.17g,%.17g,%.17g" % row)
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


def loss_and_grads(params, cfg: ModelConfig, ids, targets, alpha, rng=None, training=True):
    """Joint objective over one batch: mean cross-entropy over the batch
    targets plus the orthogonality penalty on every layer's basis.
    Returns (loss, ce, ortho, grads)."""
    x, cache = model_forward(params, cfg, ids, rng=rng, training=training)
    x_last = x[:, -1, :]
    logits = score_logits(params, x_last)
    ce, d_logits = softmax_xent_batch(logits, np.asarray(targets))

    grads = zero_grads(params)
    ortho_total = 0.0
    for layer in range(cfg.layers):
        re_key = block_key(layer, "basis_re")
        im_key = block_key(layer, "basis_im")
        penalty, g_re, g_im = ortho_penalty(params[re_key], params[im_key], alpha)
        ortho_total += penalty
        grads[re_key] += g_re
        grads[im_key] += g_im

    grads["emb"] += d_logits.T @ x_last
    dx = np.zeros_like(x)
    dx[:, -1, :] = d_logits @ params["emb"]
    model_backward(params, cfg, cache, dx, grads)

    loss = ce + ortho_total
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss!r} (ce={ce!r}, ortho={ortho_total!r})")
    return loss, ce, ortho_total, grads


def _clip_grads(grads, max_norm):
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def _param_norms(params):
    return {key: float(np.linalg.norm(value)) for key, value in params.items()}


def fit(
    corpus: Corpus,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    timer=time.perf_counter,
    log_fn=None,
):
    """Train on the corpus; returns (best_params, TrainLog).

    Validation NDCG@20 is computed every epoch; training stops after
    `patience` epochs without improvement and the best-epoch snapshot is
    the one returned.
    """
    rng = np.random.default_rng(train_cfg.seed)
    split = split_loo(corpus)
    contexts, targets = train_examples(split)
    if not contexts:
        raise DataError("corpus yields no training examples")
    params = init_params(model_cfg, rng)
    state = adam_init(params, train_cfg.lr)
    log = TrainLog()
    best_params = {k: v.copy() for k, v in params.items()}
    best_ndcg = -np.inf
    stale = 0
    for epoch in range(1, train_cfg.epochs + 1):
        started = timer()
        ce_sum = ortho_sum = 0.0
        seen = 0
        for batch_no, (ids, batch_targets) in enumerate(
            make_batches(contexts, targets, model_cfg.max_len, train_cfg.batch_size, rng)
        ):
            try:
                _, ce, ortho, grads = loss_and_grads(
                    params, model_cfg, ids, batch_targets, train_cfg.alpha, rng=rng
                )
            except NumericError as exc:
                norms = _param_norms(params)
                raise NumericError(
                    f"epoch {epoch}, batch {batch_no}: {exc}; parameter norms: {norms}"
                ) from exc
            if train_cfg.clip_norm is not None:
                _clip_grads(grads, train_cfg.clip_norm)
            adam_step(params, grads, state)
            ce_sum += ce * len(batch_targets)
            ortho_sum += ortho * len(batch_targets)
            seen += len(batch_targets)
        report = evaluate(split, params, model_cfg, mode="valid", batch_size=train_cfg.batch_size)
        ndcg = report.ndcg[20]
        log.append(epoch, ce_sum / seen, ortho_sum / seen, ndcg, timer() - started)
        if log_fn is not None:
            log_fn(
                f"epoch {epoch:4d}  ce {ce_sum / seen:.4f}  "
                f"ortho {ortho_sum / seen:.3e}  valid ndcg@20 {ndcg:.4f}"
            )
        if ndcg > best_ndcg:
            best_ndcg = ndcg
            best_params = {k: v.copy() for k, v in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= train_cfg.patience:
                break
    return best_params, log


def make_synthetic(num_users, num_items, seq_len, rng) -> Corpus:
    """Deterministic successor-rule corpus: from a random start item s,
    each next item is (previous mod num_items) + 1."""
    if num_items < 2:
        raise ValueError("need at least two items")
    if seq_len < 3:
        raise ValueError("sequences must have length >= 3 to be splittable")
    sequences = []
    for _ in range(num_users):
        item = int(rng.integers(1, num_items + 1))
        seq = [item]
        for _ in range(seq_len - 1):
            item = (item % num_items) + 1
            seq.append(item)
        sequences.append(seq)
    return Corpus(list(range(1, num_users + 1)), sequences, num_items)
