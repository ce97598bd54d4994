"""Encoder model: embedding, stacked filter blocks, prediction head.

Item sequences are embedded, passed through L blocks (a per-position
spectral filter layer followed by a feed-forward layer, each wrapped in
dropout + residual + layer norm), and scored against the embedding table
using the final position's representation.

Parameters live in a flat dict of float64 arrays so the optimizer and the
gradient checks can treat every group uniformly.  Forward passes return
caches that the matching backward passes consume; there is no tape.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import spectral
from .nn import (
    ShapeMismatch,
    dropout,
    dropout_backward,
    gelu,
    gelu_backward,
    layer_norm,
    layer_norm_backward,
)

__all__ = [
    "ModelConfig",
    "NormalizationError",
    "OutOfVocabulary",
    "CheckpointError",
    "init_params",
    "build_tap_matrix",
    "build_tap_matrix_backward",
    "model_forward",
    "model_backward",
    "score_logits",
    "predict_scores",
    "predict_scores_batch",
    "freeze_filters",
    "count_params",
    "save_checkpoint",
    "load_checkpoint",
]

FILTER_MODES = ("causal", "circular")


class NormalizationError(RuntimeError):
    """A basis row has zero norm, so the filter cannot be normalized."""


class OutOfVocabulary(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    num_items: int
    max_len: int = 50
    dim: int = 64
    layers: int = 2
    num_bases: int = 8
    filter_order: int | None = None
    dropout: float = 0.2
    filter_mode: str = "causal"
    ln_eps: float = 1e-12
    ffn_hidden: int | None = None

    def __post_init__(self):
        if self.num_items < 1:
            raise ValueError("need at least one item")
        if self.max_len < 1 or self.dim < 1 or self.layers < 1:
            raise ValueError("max_len, dim and layers must be positive")
        if not 1 <= self.num_bases <= self.max_len:
            raise ValueError(
                f"num_bases must be in [1, max_len], got {self.num_bases}"
            )
        if self.filter_order is not None and self.filter_order < 0:
            raise ValueError("filter_order must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.filter_mode not in FILTER_MODES:
            raise ValueError(f"filter_mode must be one of {FILTER_MODES}")
        if self.ln_eps <= 0:
            raise ValueError("ln_eps must be positive")

    @property
    def order(self) -> int:
        return self.max_len if self.filter_order is None else self.filter_order

    @property
    def hidden(self) -> int:
        return self.dim if self.ffn_hidden is None else self.ffn_hidden

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


def block_key(layer: int, name: str) -> str:
    return f"block{layer}_{name}"


def init_params(cfg: ModelConfig, rng) -> dict:
    """Fresh parameter dict: weights ~ N(0, 0.02), biases/shifts 0, scales 1."""
    d, n, m, k = cfg.dim, cfg.max_len, cfg.num_bases, cfg.order
    scale = 0.02
    params = {
        "emb": rng.normal(0.0, scale, size=(cfg.num_items + 1, d)),
        "emb_ln_g": np.ones(d),
        "emb_ln_b": np.zeros(d),
    }
    for layer in range(cfg.layers):
        block = {
            "coef": rng.normal(0.0, scale, size=(n, m)),
            "basis_re": rng.normal(0.0, scale, size=(m, k + 1)),
            "basis_im": rng.normal(0.0, scale, size=(m, k + 1)),
            "w1": rng.normal(0.0, scale, size=(d, cfg.hidden)),
            "b1": np.zeros(cfg.hidden),
            "w2": rng.normal(0.0, scale, size=(cfg.hidden, d)),
            "b2": np.zeros(d),
            "ln1_g": np.ones(d),
            "ln1_b": np.zeros(d),
            "ln2_g": np.ones(d),
            "ln2_b": np.zeros(d),
        }
        for name, value in block.items():
            params[block_key(layer, name)] = value
    return params


def zero_grads(params: dict) -> dict:
    return {key: np.zeros_like(value) for key, value in params.items()}


# ---------------------------------------------------------------------------
# filter construction H = C @ (B / ||B row||)


def build_tap_matrix(coef, basis_re, basis_im):
    """Per-position taps from coefficients and a row-normalized complex basis."""
    b = basis_re + 1j * basis_im
    norms = np.sqrt((basis_re * basis_re + basis_im * basis_im).sum(axis=1))
    if not np.all(np.isfinite(norms)):
        raise NormalizationError("basis contains non-finite entries")
    if np.any(norms == 0.0):
        row = int(np.flatnonzero(norms == 0.0)[0])
        raise NormalizationError(
            f"basis row {row} is identically zero and cannot be normalized"
        )
    b_bar = b / norms[:, None]
    taps = coef @ b_bar
    return taps, (coef, b, b_bar, norms)


def build_tap_matrix_backward(cache, d_taps):
    """Gradients of a scalar through H = C B̄, including the normalization."""
    coef, b, b_bar, norms = cache
    d_coef = (d_taps @ b_bar.conj().T).real
    d_bbar = coef.T @ d_taps
    row_dot = (d_bbar * b.conj()).real.sum(axis=1)
    d_b = d_bbar / norms[:, None] - b * (row_dot / norms**3)[:, None]
    return d_coef, d_b.real, d_b.imag


# ---------------------------------------------------------------------------
# filter layer


def _filter_geometry(cfg: ModelConfig):
    n, k = cfg.max_len, cfg.order
    size = n + k if cfg.filter_mode == "causal" else n
    return n, k, size


def _to_cols(x):
    # (B, N, D) -> (N, B*D)
    b, n, d = x.shape
    return x.transpose(1, 0, 2).reshape(n, b * d), (b, n, d)


def _from_cols(x2d, shape):
    b, n, d = shape
    return x2d.reshape(n, b, d).transpose(1, 0, 2)


def _filter_forward(cfg: ModelConfig, taps, x):
    """Apply the per-position filter to a (B, N, D) block, via the
    frequency domain; returns the real output and a backward cache.

    The signal is real, so the complex transforms are carried out as
    paired real matmuls (the imaginary half of the input is zero and
    only the real half of the output survives)."""
    n, k, size = _filter_geometry(cfg)
    basis = spectral.make_basis(size, k)
    if cfg.filter_mode == "causal":
        h = np.zeros((size, k + 1), dtype=complex)
        h[:n] = taps
    else:
        h = taps
    mix = spectral.nv_mixing_matrix(basis, h)
    # contiguous components: matmul with a strided .real view bypasses BLAS
    mix_re = np.ascontiguousarray(mix.real)
    mix_im = np.ascontiguousarray(mix.imag)
    fwd_re, fwd_im = _basis_components(basis)
    x2d, shape = _to_cols(x)
    x_pad = np.zeros((size, x2d.shape[1]))
    x_pad[:n] = x2d
    z_re = fwd_re @ x_pad
    z_im = fwd_im @ x_pad
    y = (mix_re @ z_re - mix_im @ z_im)[:n]
    return _from_cols(y, shape), (basis, mix_re, mix_im, z_re, z_im, shape)


def _basis_components(basis, _cache={}):
    key = (basis.size, basis.order)
    if key not in _cache:
        _cache[key] = (
            np.ascontiguousarray(basis.forward.real),
            np.ascontiguousarray(basis.forward.imag),
        )
        if len(_cache) > 16:
            _cache.pop(next(iter(_cache)))
    return _cache[key]


def _filter_backward(cfg: ModelConfig, cache, dy):
    basis, mix_re, mix_im, z_re, z_im, shape = cache
    n, k, size = _filter_geometry(cfg)
    dy2d, _ = _to_cols(dy)
    dy_ext = np.zeros((size, dy2d.shape[1]))
    dy_ext[:n] = dy2d
    d_mix = (dy_ext @ z_re.T) - 1j * (dy_ext @ z_im.T)
    t_re = mix_re.T @ dy_ext
    t_im = mix_im.T @ dy_ext
    fwd_re, fwd_im = _basis_components(basis)
    # inverse transform = conjugate transpose of the forward matrix
    dx = (fwd_re.T @ t_re - fwd_im.T @ t_im)[:n]
    d_pow = basis.eigenvectors.conj() * d_mix
    d_taps = (d_pow @ basis.vandermonde.conj())[:n]
    return _from_cols(dx, shape), d_taps


def _frozen_filter_forward(op, x):
    y = np.tensordot(op, x, axes=(1, 1))  # (N, B, D)
    return y.transpose(1, 0, 2)


# ---------------------------------------------------------------------------
# embedding layer


def _check_ids(cfg: ModelConfig, ids):
    ids = np.asarray(ids)
    if ids.ndim != 2 or ids.shape[1] != cfg.max_len:
        raise ShapeMismatch(
            f"ids must be (batch, {cfg.max_len}), got {ids.shape}"
        )
    if ids.min() < 0 or ids.max() > cfg.num_items:
        raise OutOfVocabulary(
            f"item ids must lie in [0, {cfg.num_items}], got "
            f"[{ids.min()}, {ids.max()}]"
        )
    return ids


def _embed_forward(params, cfg, ids, rng, training):
    looked = params["emb"][ids]  # (B, N, D)
    flat = looked.reshape(-1, cfg.dim)
    normed, ln_cache = layer_norm(flat, params["emb_ln_g"], params["emb_ln_b"], cfg.ln_eps)
    out, mask = dropout(normed, cfg.dropout, rng, training)
    return out.reshape(looked.shape), (ids, ln_cache, mask, looked.shape)


def _embed_backward(params, cfg, cache, dx, grads):
    ids, ln_cache, mask, shape = cache
    flat = dropout_backward(mask, dx.reshape(-1, cfg.dim))
    d_in, d_gamma, d_beta = layer_norm_backward(ln_cache, flat)
    grads["emb_ln_g"] += d_gamma
    grads["emb_ln_b"] += d_beta
    np.add.at(grads["emb"], ids, d_in.reshape(shape))


# ---------------------------------------------------------------------------
# encoder blocks


def _block_forward(params, cfg, layer, x, rng, training, frozen_op=None):
    eps = cfg.ln_eps
    key = lambda name: params[block_key(layer, name)]
    if frozen_op is not None:
        filtered = _frozen_filter_forward(frozen_op, x)
        tap_cache = filt_cache = None
    else:
        taps, tap_cache = build_tap_matrix(
            key("coef"), key("basis_re"), key("basis_im")
        )
        filtered, filt_cache = _filter_forward(cfg, taps, x)
    drop1, mask1 = dropout(filtered, cfg.dropout, rng, training)
    res1 = x + drop1
    f2d, ln1_cache = layer_norm(res1.reshape(-1, cfg.dim), key("ln1_g"), key("ln1_b"), eps)
    h1 = f2d @ key("w1") + key("b1")
    act, act_cache = gelu(h1)
    h2 = act @ key("w2") + key("b2")
    drop2_flat, mask2 = dropout(h2, cfg.dropout, rng, training)
    res2 = f2d + drop2_flat
    out2d, ln2_cache = layer_norm(res2, key("ln2_g"), key("ln2_b"), eps)
    cache = (tap_cache, filt_cache, mask1, ln1_cache, f2d, act, act_cache, mask2, ln2_cache, filtered)
    return out2d.reshape(x.shape), cache


def _block_backward(params, cfg, layer, cache, dy, grads):
    tap_cache, filt_cache, mask1, ln1_cache, f2d, act, act_cache, mask2, ln2_cache, _ = cache
    key = lambda name: params[block_key(layer, name)]
    gkey = lambda name: grads[block_key(layer, name)]
    shape = dy.shape

    d_res2, d_g2, d_b2 = layer_norm_backward(ln2_cache, dy.reshape(-1, cfg.dim))
    gkey("ln2_g")[:] += d_g2
    gkey("ln2_b")[:] += d_b2
    d_f = d_res2.copy()
    d_h2 = dropout_backward(mask2, d_res2)
    gkey("w2")[:] += act.T @ d_h2
    gkey("b2")[:] += d_h2.sum(axis=0)
    d_act = d_h2 @ key("w2").T
    d_h1 = gelu_backward(act_cache, d_act)
    gkey("w1")[:] += f2d.T @ d_h1
    gkey("b1")[:] += d_h1.sum(axis=0)
    d_f += d_h1 @ key("w1").T

    d_res1, d_g1, d_b1 = layer_norm_backward(ln1_cache, d_f)
    gkey("ln1_g")[:] += d_g1
    gkey("ln1_b")[:] += d_b1
    dx = d_res1.reshape(shape)
    d_filtered = dropout_backward(mask1, dx)
    dx_filter, d_taps = _filter_backward(cfg, filt_cache, d_filtered)
    d_coef, d_bre, d_bim = build_tap_matrix_backward(tap_cache, d_taps)
    gkey("coef")[:] += d_coef
    gkey("basis_re")[:] += d_bre
    gkey("basis_im")[:] += d_bim
    return dx + dx_filter


def model_forward(params, cfg, ids, rng=None, training=False, frozen_ops=None):
    """Run embedding plus all blocks; returns (X_final, cache)."""
    ids = _check_ids(cfg, ids)
    x, emb_cache = _embed_forward(params, cfg, ids, rng, training)
    block_caches = []
    for layer in range(cfg.layers):
        op = None if frozen_ops is None else frozen_ops[layer]
        x, cache = _block_forward(params, cfg, layer, x, rng, training, frozen_op=op)
        block_caches.append(cache)
    return x, (emb_cache, block_caches)


def model_backward(params, cfg, cache, dx, grads):
    emb_cache, block_caches = cache
    for layer in reversed(range(cfg.layers)):
        dx = _block_backward(params, cfg, layer, block_caches[layer], dx, grads)
    _embed_backward(params, cfg, emb_cache, dx, grads)


def score_logits(params, x_last):
    """Preference scores for every item id (column 0 is the padding slot)."""
    return x_last @ params["emb"].T


def pad_context(context, max_len) -> np.ndarray:
    """Truncate to the most recent max_len items and left-pad with zeros."""
    ids = np.zeros(max_len, dtype=np.int64)
    tail = list(context)[-max_len:]
    if tail:
        ids[-len(tail):] = tail
    return ids


def predict_scores_batch(params, cfg, ids, frozen_ops=None):
    x, _ = model_forward(params, cfg, ids, training=False, frozen_ops=frozen_ops)
    return score_logits(params, x[:, -1, :])


def predict_scores(params, cfg, context, frozen_ops=None):
    """Scores for a single raw item sequence (any length)."""
    ids = pad_context(context, cfg.max_len)[None, :]
    return predict_scores_batch(params, cfg, ids, frozen_ops=frozen_ops)[0]


def freeze_filters(params, cfg) -> list:
    """Collapse each layer's trained filter into a dense real operator."""
    ops = []
    n, k, size = _filter_geometry(cfg)
    for layer in range(cfg.layers):
        taps, _ = build_tap_matrix(
            params[block_key(layer, "coef")],
            params[block_key(layer, "basis_re")],
            params[block_key(layer, "basis_im")],
        )
        if cfg.filter_mode == "causal":
            ops.append(spectral.precompute_operator(n, k, taps))
        else:
            basis = spectral.make_basis(n, k)
            mix = spectral.nv_mixing_matrix(basis, taps)
            ops.append((mix @ basis.forward).real)
    return ops


def count_params(params) -> int:
    return int(sum(v.size for v in params.values()))


# ---------------------------------------------------------------------------
# checkpoint format: magic line, header length, JSON header, raw float64


_MAGIC = b"SEQFILT-CKPT-V1\n"


def save_checkpoint(path, params, cfg: ModelConfig, meta=None) -> None:
    keys = sorted(params)
    manifest = {}
    offset = 0
    for key in keys:
        arr = params[key]
        manifest[key] = {"shape": list(arr.shape), "offset": offset}
        offset += arr.size * 8
    header = {
        "config": cfg.to_dict(),
        "manifest": manifest,
        "meta": meta or {},
        "total_bytes": offset,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(f"{len(blob)}\n".encode("ascii"))
        fh.write(blob)
        for key in keys:
            fh.write(np.ascontiguousarray(params[key], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back; returns (params, config, meta), bit-exact."""
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != _MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        try:
            header_len = int(fh.readline().strip())
        except ValueError as exc:
            raise CheckpointError(f"{path}: corrupt header length") from exc
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: corrupt header") from exc
        raw = fh.read()
    if len(raw) != header["total_bytes"]:
        raise CheckpointError(
            f"{path}: expected {header['total_bytes']} data bytes, got {len(raw)}"
        )
    params = {}
    for key, entry in header["manifest"].items():
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=start)
        params[key] = arr.reshape(shape).astype(np.float64, copy=True)
    cfg = ModelConfig.from_dict(header["config"])
    return params, cfg, header.get("meta", {})
