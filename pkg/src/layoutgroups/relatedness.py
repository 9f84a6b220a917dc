"""Pairwise relatedness head, training loop, and checkpointing.

Two head modes are supported:

* ``sigmoid-pairwise`` (default): each directed score is an independent
  logistic probability, trained with weighted binary cross-entropy.
* ``softmax-paper``: each row of scores is a softmax distribution over all
  elements, trained against row-normalized ground truth.

Either way the final association matrix averages the two directed scores and
pins the diagonal at 1.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteGradient, ParameterStore, Tensor
from .corpus import GroundTruth, ground_truth_matrix
from .embedder import EmbedderConfig, embed_item, init_embedder_params
from .encoder import EncoderConfig, encode_item, init_encoder_params
from .model import Layout

HEAD_MODES = ("sigmoid-pairwise", "softmax-paper")

CHECKPOINT_VERSION = 1


class CheckpointMismatch(Exception):
    pass


@dataclass(frozen=True)
class AssociationMatrix:
    """Symmetric n x n relatedness scores in [0, 1] with unit diagonal."""

    ids: Tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self):
        n = len(self.ids)
        s = self.scores
        if s.shape != (n, n):
            raise ValueError(f"scores shape {s.shape} vs {n} ids")
        if not np.isfinite(s).all():
            raise ValueError("non-finite relatedness score")
        if (s < 0).any() or (s > 1).any():
            raise ValueError("relatedness scores outside [0, 1]")
        if not np.array_equal(s, s.T):
            raise ValueError("association matrix must be symmetric")
        if not np.array_equal(np.diag(s), np.ones(n)):
            raise ValueError("association matrix diagonal must be 1")

    @property
    def n(self) -> int:
        return len(self.ids)

    def value(self, id_a: str, id_b: str) -> float:
        return float(self.scores[self.ids.index(id_a), self.ids.index(id_b)])

    def to_dict(self) -> dict:
        return {"n": self.n, "ids": list(self.ids), "scores": self.scores.tolist()}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    dropout: float = 0.3
    batch_size: int = 16
    max_len: int = 128
    epochs: int = 30
    seed: int = 0
    head_mode: str = "sigmoid-pairwise"
    pos_weight_cap: float = 10.0

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.head_mode not in HEAD_MODES:
            raise ValueError(f"unknown head mode {self.head_mode!r}")


def init_head_params(
    store: ParameterStore, d_model: int, rng: np.random.Generator
) -> None:
    # small init keeps the directed logits O(1); larger scales saturate the
    # sigmoid head and stall early training
    std = 1.0 / d_model
    store.add("head.wq", rng.normal(0.0, std, (d_model, d_model)))
    store.add("head.wm", rng.normal(0.0, std, (d_model, d_model)))


def pairwise_logits(h: Tensor, store: ParameterStore) -> Tensor:
    """Directed query-memory scores (W_Q h_i) . (W_M h_j) as an (n, n) grid."""
    q = ad.matmul(h, store["head.wq"])
    m = ad.matmul(h, store["head.wm"])
    return ad.matmul_t(q, m)


def scores_from_logits(
    logits: np.ndarray, head_mode: str, mask: Optional[np.ndarray] = None
) -> np.ndarray:
    """Directed probabilities r_ij from raw logits (inference path)."""
    if head_mode == "sigmoid-pairwise":
        return ad._sigmoid(logits)
    valid = np.ones(logits.shape[1], dtype=bool) if mask is None else mask
    shifted = np.where(valid[None, :], logits, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    ex = np.where(valid[None, :], np.exp(shifted), 0.0)
    return ex / ex.sum(axis=1, keepdims=True)


def symmetrize(r: np.ndarray, ids: Sequence[str]) -> AssociationMatrix:
    """Average the two directed scores and pin the diagonal at 1."""
    if not np.isfinite(r).all():
        raise ValueError("non-finite directed scores")
    scores = (r + r.T) / 2.0
    np.fill_diagonal(scores, 1.0)
    return AssociationMatrix(ids=tuple(ids), scores=scores)


def relatedness_loss(
    logits: Tensor,
    truth: np.ndarray,
    head_mode: str,
    pos_weight: float = 1.0,
) -> Tensor:
    """Training loss for one layout's (n, n) directed logits.

    Self-pairs carry no loss in sigmoid mode; in softmax mode the diagonal
    participates via the row-normalized target (so all-singleton rows target
    the self slot).
    """
    n = logits.shape[0]
    truth = np.asarray(truth, dtype=np.float64)
    if truth.shape != (n, n):
        raise ValueError(f"truth shape {truth.shape} vs logits {logits.shape}")
    if head_mode == "sigmoid-pairwise":
        weights = np.where(truth > 0, pos_weight, 1.0)
        np.fill_diagonal(weights, 0.0)
        return ad.weighted_bce_logits(logits, truth, weights)
    targets = truth / truth.sum(axis=1, keepdims=True)
    return ad.softmax_cross_entropy_rows(logits, targets)


def corpus_pos_weight(
    truths: Sequence[np.ndarray], cap: float = 10.0
) -> float:
    """Off-diagonal negative/positive pair ratio over a corpus, capped."""
    pos = 0
    neg = 0
    for t in truths:
        n = t.shape[0]
        off = t.sum() - n  # diagonal is all ones
        pos += off
        neg += n * (n - 1) - off
    if pos <= 0:
        return cap
    return float(min(neg / pos, cap))


@dataclass
class Checkpoint:
    embedder_config: EmbedderConfig
    encoder_config: EncoderConfig
    head_mode: str
    seed: int
    store: ParameterStore
    history: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "seed": self.seed,
            "head_mode": self.head_mode,
            "embedder_config": self.embedder_config.to_dict(),
            "encoder_config": self.encoder_config.to_dict(),
            "history": self.history,
            "state": self.store.state_dict(),
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointMismatch(
                f"unsupported checkpoint version {d.get('format_version')!r}"
            )
        return cls(
            embedder_config=EmbedderConfig.from_dict(d["embedder_config"]),
            encoder_config=EncoderConfig.from_dict(d["encoder_config"]),
            head_mode=d["head_mode"],
            seed=int(d["seed"]),
            store=ParameterStore.from_state_dict(d["state"]),
            history=list(d.get("history", [])),
        )

    @classmethod
    def load(cls, path: str) -> "Checkpoint":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def init_model(
    emb_cfg: EmbedderConfig, enc_cfg: EncoderConfig, seed: int
) -> ParameterStore:
    store = ParameterStore()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    init_embedder_params(store, emb_cfg, rng)
    init_encoder_params(store, enc_cfg, rng)
    init_head_params(store, emb_cfg.d_model, rng)
    return store


def layout_logits(
    layout: Layout,
    emb_cfg: EmbedderConfig,
    enc_cfg: EncoderConfig,
    store: ParameterStore,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Full forward pass to directed pairwise logits at true length."""
    item = embed_item(layout, emb_cfg, store)
    h = encode_item(item, enc_cfg, store, train=train, rng=rng)
    return pairwise_logits(h, store)


def predict(layout: Layout, checkpoint: Checkpoint) -> AssociationMatrix:
    """Inference: association matrix for one layout, dropout off."""
    if layout.n > checkpoint.embedder_config.max_len:
        raise ValueError(f"layout of {layout.n} elements exceeds the sequence cap")
    logits = layout_logits(
        layout, checkpoint.embedder_config, checkpoint.encoder_config,
        checkpoint.store,
    )
    r = scores_from_logits(logits.value, checkpoint.head_mode)
    return symmetrize(r, layout.ids)


def heldout_accuracy(
    corpus: Sequence[Tuple[Layout, GroundTruth]],
    emb_cfg: EmbedderConfig,
    enc_cfg: EncoderConfig,
    store: ParameterStore,
    head_mode: str,
    threshold: float = 0.5,
) -> float:
    """Pairwise accuracy over unordered off-diagonal pairs."""
    matches = 0
    total = 0
    for layout, truth in corpus:
        if layout.n < 2:
            continue
        logits = layout_logits(layout, emb_cfg, enc_cfg, store)
        r = scores_from_logits(logits.value, head_mode)
        pred = symmetrize(r, layout.ids).scores >= threshold
        gt = ground_truth_matrix(truth, layout.ids) > 0
        iu = np.triu_indices(layout.n, k=1)
        matches += int((pred[iu] == gt[iu]).sum())
        total += len(iu[0])
    return matches / total if total else 0.0


def train(
    train_corpus: Sequence[Tuple[Layout, GroundTruth]],
    cfg: TrainConfig,
    emb_cfg: Optional[EmbedderConfig] = None,
    enc_cfg: Optional[EncoderConfig] = None,
    val_corpus: Optional[Sequence[Tuple[Layout, GroundTruth]]] = None,
    log=None,
) -> Checkpoint:
    """Train the relatedness model; returns the best-validation checkpoint.

    Deterministic under a fixed seed: init, dropout, and shuffling all derive
    from ``cfg.seed``. On a non-finite gradient the last good parameters are
    returned.
    """
    cfg.validate()
    if not train_corpus:
        raise ValueError("empty training corpus")
    emb_cfg = emb_cfg or EmbedderConfig(max_len=cfg.max_len)
    enc_cfg = enc_cfg or EncoderConfig(dropout=cfg.dropout)
    for layout, _ in train_corpus:
        if layout.n > emb_cfg.max_len:
            raise ValueError(f"layout {layout.id!r} exceeds max length")

    store = init_model(emb_cfg, enc_cfg, cfg.seed)
    root = np.random.SeedSequence(cfg.seed)
    shuffle_seq, dropout_seq = root.spawn(2)
    shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_seq))
    dropout_rng = np.random.Generator(np.random.PCG64(dropout_seq))

    truths = [ground_truth_matrix(t, l.ids) for l, t in train_corpus]
    pos_weight = corpus_pos_weight(truths, cap=cfg.pos_weight_cap)

    history: List[dict] = []
    best_values = store.copy_values()
    best_acc = -1.0
    aborted = False

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_corpus))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch_idx = order[start : start + cfg.batch_size]
            store.zero_grads()
            batch_loss = None
            for i in batch_idx:
                layout, _ = train_corpus[i]
                logits = layout_logits(
                    layout, emb_cfg, enc_cfg, store, train=True, rng=dropout_rng
                )
                loss = relatedness_loss(
                    logits, truths[i], cfg.head_mode, pos_weight=pos_weight
                )
                batch_loss = loss if batch_loss is None else ad.add(batch_loss, loss)
            batch_loss = ad.scale(batch_loss, 1.0 / len(batch_idx))
            ad.backward(batch_loss)
            epoch_loss += float(batch_loss.value) * len(batch_idx)
            try:
                store.adam_step(cfg.lr)
            except NonFiniteGradient:
                aborted = True
                break
        if aborted:
            break
        record = {"epoch": epoch, "loss": epoch_loss / len(train_corpus)}
        if val_corpus:
            acc = heldout_accuracy(
                val_corpus, emb_cfg, enc_cfg, store, cfg.head_mode
            )
            record["val_accuracy"] = acc
            if acc > best_acc:
                best_acc = acc
                best_values = store.copy_values()
        else:
            best_values = store.copy_values()
        history.append(record)
        if log is not None:
            log(record)

    store.load_values(best_values)
    return Checkpoint(
        embedder_config=emb_cfg,
        encoder_config=enc_cfg,
        head_mode=cfg.head_mode,
        seed=cfg.seed,
        store=store,
        history=history,
    )
