"""Transformer encoder with relative-spatial attention bias.

Attention logits get three learnable per-head bias terms looked up from
bucketed relative center offsets (x, y) and relative z-rank. Zeroed tables
reproduce the plain encoder bit-for-bit, which is the no-spatial ablation.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from functools import lru_cache
from typing import List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .embedder import EmbeddedItem, SequenceBatch


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    d_model: int = 128
    d_k: int = 32
    d_ff: int = 256
    dropout: float = 0.3
    spatial_bias: bool = True
    n_buckets_x: int = 32
    n_buckets_y: int = 32
    n_buckets_z: int = 16

    def validate(self) -> None:
        if self.heads * self.d_k != self.d_model:
            raise ValueError("d_model must equal heads * d_k")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


def signed_log_buckets(
    deltas: np.ndarray, n_buckets: int, min_delta: float, max_delta: float
) -> np.ndarray:
    """Map signed offsets to bucket indices, log-spaced by magnitude.

    Bucket n_buckets//2 holds |delta| < min_delta; larger magnitudes fan out
    symmetrically and clamp at the extremes.
    """
    if n_buckets % 2 != 0:
        raise ValueError("n_buckets must be even")
    half = n_buckets // 2
    mid = half
    mag = np.abs(deltas)
    with np.errstate(divide="ignore"):
        t = np.log(np.maximum(mag, min_delta) / min_delta) / np.log(
            max_delta / min_delta
        )
    k = 1 + np.floor(np.clip(t, 0.0, 1.0) * (half - 2)).astype(np.intp)
    k = np.where(mag < min_delta, 0, np.minimum(k, half - 1))
    return np.clip(np.where(deltas >= 0, mid + k, mid - k), 0, n_buckets - 1)


def spatial_bucket_indices(item: EmbeddedItem, cfg: EncoderConfig):
    """Per-pair bucket index matrices (ix, iy, iz) over real elements."""
    return _bucket_indices(
        item.layout, cfg.n_buckets_x, cfg.n_buckets_y, cfg.n_buckets_z
    )


@lru_cache(maxsize=4096)
def _bucket_indices(layout, nx: int, ny: int, nz: int):
    c = np.array([e.center for e in layout.elements])
    ranks = np.array([e.z for e in layout.elements], dtype=np.float64)
    dx = c[:, 0][:, None] - c[:, 0][None, :]
    dy = c[:, 1][:, None] - c[:, 1][None, :]
    dz = ranks[:, None] - ranks[None, :]
    ix = signed_log_buckets(dx, nx, min_delta=1e-3, max_delta=2.0)
    iy = signed_log_buckets(dy, ny, min_delta=1e-3, max_delta=2.0)
    iz = signed_log_buckets(dz, nz, min_delta=1.0, max_delta=128.0)
    return ix, iy, iz


def init_encoder_params(
    store: ParameterStore, cfg: EncoderConfig, rng: np.random.Generator
) -> None:
    cfg.validate()
    d, dk, ff = cfg.d_model, cfg.d_k, cfg.d_ff
    std = 1.0 / np.sqrt(d)
    for layer in range(cfg.layers):
        p = f"enc.l{layer}"
        for head in range(cfg.heads):
            store.add(f"{p}.h{head}.wq", rng.normal(0.0, std, (d, dk)))
            store.add(f"{p}.h{head}.wk", rng.normal(0.0, std, (d, dk)))
            store.add(f"{p}.h{head}.wv", rng.normal(0.0, std, (d, dk)))
        store.add(f"{p}.wo", rng.normal(0.0, std, (d, d)))
        store.add(f"{p}.bo", np.zeros(d))
        store.add(f"{p}.ln1_g", np.ones(d))
        store.add(f"{p}.ln1_b", np.zeros(d))
        store.add(f"{p}.ffn_w1", rng.normal(0.0, std, (d, ff)))
        store.add(f"{p}.ffn_b1", np.zeros(ff))
        store.add(f"{p}.ffn_w2", rng.normal(0.0, 1.0 / np.sqrt(ff), (ff, d)))
        store.add(f"{p}.ffn_b2", np.zeros(d))
        store.add(f"{p}.ln2_g", np.ones(d))
        store.add(f"{p}.ln2_b", np.zeros(d))
    # bias tables are shared across layers, one set per head; zero init keeps
    # the spatial model identical to the plain one at step 0
    for head in range(cfg.heads):
        store.add(f"bias.h{head}.x", np.zeros(cfg.n_buckets_x))
        store.add(f"bias.h{head}.y", np.zeros(cfg.n_buckets_y))
        store.add(f"bias.h{head}.z", np.zeros(cfg.n_buckets_z))


def attention_scores(e: Tensor, wq: Tensor, wk: Tensor) -> Tensor:
    """Scaled dot-product logits (e W_Q)(e W_K)^T / sqrt(d_k)."""
    d_k = wq.shape[1]
    q = ad.matmul(e, wq)
    k = ad.matmul(e, wk)
    return ad.scale(ad.matmul_t(q, k), 1.0 / np.sqrt(d_k))


def spatial_bias(item: EmbeddedItem, cfg: EncoderConfig, store: ParameterStore, head: int) -> Tensor:
    """Per-head (n, n) bias matrix from the three bucket tables."""
    n = item.length
    ix, iy, iz = spatial_bucket_indices(item, cfg)

    def lookup(table: Tensor, idx: np.ndarray) -> Tensor:
        col = ad.reshape(table, (table.shape[0], 1))
        return ad.reshape(ad.gather_rows(col, idx.ravel()), (n, n))

    bx = lookup(store[f"bias.h{head}.x"], ix)
    by = lookup(store[f"bias.h{head}.y"], iy)
    bz = lookup(store[f"bias.h{head}.z"], iz)
    return ad.add(ad.add(bx, by), bz)


def encode_item(
    item: EmbeddedItem,
    cfg: EncoderConfig,
    store: ParameterStore,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Run the encoder stack over one embedded layout.

    Operates on the item's padded length; padded columns are masked out of
    every softmax so they never influence real positions.
    """
    mask = item.mask
    drop = cfg.dropout if train else 0.0

    def maybe_drop(x: Tensor) -> Tensor:
        return ad.dropout(x, drop, rng) if drop > 0.0 else x

    h = item.embeddings
    biases: List[Optional[Tensor]] = [None] * cfg.heads
    if cfg.spatial_bias:
        # tables are shared across layers: gather once per forward pass
        for head in range(cfg.heads):
            b = spatial_bias(item, cfg, store, head)
            if b.shape[0] != item.mask.shape[0]:
                b = _pad_matrix(b, item.mask.shape[0])
            biases[head] = b
    for layer in range(cfg.layers):
        p = f"enc.l{layer}"
        head_outs = []
        for head in range(cfg.heads):
            logits = attention_scores(
                h, store[f"{p}.h{head}.wq"], store[f"{p}.h{head}.wk"]
            )
            if biases[head] is not None:
                logits = ad.add(logits, biases[head])
            weights = ad.row_softmax(logits, mask=mask)
            v = ad.matmul(h, store[f"{p}.h{head}.wv"])
            head_outs.append(ad.matmul(weights, v))
        attn = ad.add_bias(
            ad.matmul(ad.concat(head_outs, axis=1), store[f"{p}.wo"]),
            store[f"{p}.bo"],
        )
        h = ad.layer_norm(
            ad.add(h, maybe_drop(attn)), store[f"{p}.ln1_g"], store[f"{p}.ln1_b"]
        )
        ff = ad.add_bias(
            ad.matmul(
                ad.tanh(
                    ad.add_bias(
                        ad.matmul(h, store[f"{p}.ffn_w1"]), store[f"{p}.ffn_b1"]
                    )
                ),
                store[f"{p}.ffn_w2"],
            ),
            store[f"{p}.ffn_b2"],
        )
        h = ad.layer_norm(
            ad.add(h, maybe_drop(ff)), store[f"{p}.ln2_g"], store[f"{p}.ln2_b"]
        )
    return h


def _pad_matrix(x: Tensor, pad: int) -> Tensor:
    """Embed an (n, n) tensor into the top-left of a (pad, pad) zero matrix."""
    n = x.shape[0]

    def backward(g):
        return (g[:n, :n],)

    full = np.zeros((pad, pad))
    full[:n, :n] = x.value
    return Tensor(full, (x,), backward)


def encode_batch(
    batch: SequenceBatch,
    cfg: EncoderConfig,
    store: ParameterStore,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> List[Tensor]:
    """Contextualize every item in the batch; returns per-item (pad, d) tensors."""
    return [encode_item(item, cfg, store, train=train, rng=rng) for item in batch.items]
