"""Evaluation metrics, the pairwise MLP baseline, and model comparison."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteGradient, ParameterStore, Tensor
from .corpus import GroundTruth, ground_truth_matrix
from .embedder import EmbedderConfig, _layout_statics
from .encoder import EncoderConfig
from .model import ETYPES, HALIGNS, VALIGNS, Layout
from .relatedness import (
    AssociationMatrix,
    Checkpoint,
    TrainConfig,
    corpus_pos_weight,
    heldout_accuracy,
    symmetrize,
    train,
)

LabeledCorpus = Sequence[Tuple[Layout, GroundTruth]]


@dataclass(frozen=True)
class EvalReport:
    model: str
    matches: int
    total: int
    split: str
    seed: int
    wall_clock_s: float

    @property
    def accuracy(self) -> float:
        return self.matches / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "matches": self.matches,
            "total": self.total,
            "accuracy": self.accuracy,
            "split": self.split,
            "seed": self.seed,
            "wall_clock_s": self.wall_clock_s,
        }


def split(
    corpus: LabeledCorpus, ratio: float = 0.8, seed: int = 0
) -> Tuple[List, List]:
    """Deterministic shuffled split at layout granularity."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio {ratio} outside (0, 1)")
    if len(corpus) < 2:
        raise ValueError("need at least 2 layouts to split")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    order = rng.permutation(len(corpus))
    cut = int(round(len(corpus) * ratio))
    cut = min(max(cut, 1), len(corpus) - 1)
    train_part = [corpus[i] for i in order[:cut]]
    test_part = [corpus[i] for i in order[cut:]]
    return train_part, test_part


def pairwise_accuracy(
    pred: AssociationMatrix,
    truth: np.ndarray,
    threshold: float = 0.5,
    ordered: bool = False,
) -> Tuple[int, int, float]:
    """(matches, total, accuracy) over off-diagonal pairs."""
    n = pred.n
    if truth.shape != (n, n):
        raise ValueError(f"truth shape {truth.shape} vs prediction n={n}")
    if n < 2:
        raise ValueError("accuracy needs at least 2 elements")
    hard = pred.scores >= threshold
    gt = truth > 0
    if ordered:
        idx = np.where(~np.eye(n, dtype=bool))
    else:
        idx = np.triu_indices(n, k=1)
    matches = int((hard[idx] == gt[idx]).sum())
    total = len(idx[0])
    return matches, total, matches / total


# --------------------------------------------------------------------------
# three-layer pairwise baseline


@dataclass
class BaselineCheckpoint:
    embedder_config: EmbedderConfig
    seed: int
    store: ParameterStore
    history: List[dict] = field(default_factory=list)


BASELINE_HIDDEN = (256, 64)


def init_baseline_params(
    store: ParameterStore, cfg: EmbedderConfig, rng: np.random.Generator
) -> None:
    store.add("emb.etype", rng.normal(0.0, 0.1, (len(ETYPES) + 1, cfg.d_type)))
    store.add("emb.halign", rng.normal(0.0, 0.1, (len(HALIGNS), cfg.d_align)))
    store.add("emb.valign", rng.normal(0.0, 0.1, (len(VALIGNS), cfg.d_align)))
    dims = (2 * cfg.concat_dim,) + BASELINE_HIDDEN + (2,)
    for k in range(3):
        fan_in = dims[k]
        store.add(f"mlp.w{k}", rng.normal(0.0, 1.0 / np.sqrt(fan_in),
                                          (fan_in, dims[k + 1])))
        store.add(f"mlp.b{k}", np.zeros(dims[k + 1]))


def _element_features(layout: Layout, cfg: EmbedderConfig, store: ParameterStore) -> Tensor:
    """Concatenated feature-embedding vectors (pre-projection), one row per element."""
    type_idx, ha_idx, va_idx, scalars = _layout_statics(layout, cfg)
    return ad.concat(
        [
            ad.gather_rows(store["emb.etype"], type_idx),
            ad.constant(scalars),
            ad.gather_rows(store["emb.halign"], ha_idx),
            ad.gather_rows(store["emb.valign"], va_idx),
        ],
        axis=1,
    )


_DIFF = np.array([[-1.0], [1.0]])  # class-1 logit from the 2-way output


def baseline_pair_logits(
    layout: Layout, cfg: EmbedderConfig, store: ParameterStore
) -> Tuple[Tensor, np.ndarray, np.ndarray]:
    """Class-1 logits for every unordered pair (i < j) of a layout."""
    n = layout.n
    iu, ju = np.triu_indices(n, k=1)
    feats = _element_features(layout, cfg, store)
    x = ad.concat([ad.gather_rows(feats, iu), ad.gather_rows(feats, ju)], axis=1)
    for k in range(3):
        x = ad.add_bias(ad.matmul(x, store[f"mlp.w{k}"]), store[f"mlp.b{k}"])
        if k < 2:
            x = ad.tanh(x)
    return ad.matmul(x, ad.constant(_DIFF)), iu, ju


def baseline_predict(layout: Layout, ckpt: BaselineCheckpoint) -> AssociationMatrix:
    logits, iu, ju = baseline_pair_logits(layout, ckpt.embedder_config, ckpt.store)
    probs = ad._sigmoid(logits.value[:, 0])
    r = np.zeros((layout.n, layout.n))
    r[iu, ju] = probs
    r[ju, iu] = probs
    return symmetrize(r, layout.ids)


def train_baseline(
    train_corpus: LabeledCorpus,
    cfg: TrainConfig,
    emb_cfg: Optional[EmbedderConfig] = None,
    val_corpus: Optional[LabeledCorpus] = None,
    log=None,
) -> BaselineCheckpoint:
    """Train the three-layer pairwise baseline with the shared loss weighting."""
    cfg.validate()
    emb_cfg = emb_cfg or EmbedderConfig(max_len=cfg.max_len)
    store = ParameterStore()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    init_baseline_params(store, emb_cfg, rng)
    shuffle_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    )

    truths = [ground_truth_matrix(t, l.ids) for l, t in train_corpus]
    pos_weight = corpus_pos_weight(truths, cap=cfg.pos_weight_cap)

    history: List[dict] = []
    best_values = store.copy_values()
    best_acc = -1.0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_corpus))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch_idx = order[start : start + cfg.batch_size]
            store.zero_grads()
            batch_loss = None
            for i in batch_idx:
                layout, _ = train_corpus[i]
                if layout.n < 2:
                    continue
                logits, iu, ju = baseline_pair_logits(layout, emb_cfg, store)
                targets = truths[i][iu, ju][:, None]
                weights = np.where(targets > 0, pos_weight, 1.0)
                loss = ad.weighted_bce_logits(logits, targets, weights)
                batch_loss = loss if batch_loss is None else ad.add(batch_loss, loss)
            if batch_loss is None:
                continue
            batch_loss = ad.scale(batch_loss, 1.0 / len(batch_idx))
            ad.backward(batch_loss)
            epoch_loss += float(batch_loss.value) * len(batch_idx)
            store.adam_step(cfg.lr)
        record = {"epoch": epoch, "loss": epoch_loss / len(train_corpus)}
        if val_corpus:
            ckpt = BaselineCheckpoint(emb_cfg, cfg.seed, store)
            acc = _baseline_accuracy(val_corpus, ckpt)
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
    return BaselineCheckpoint(
        embedder_config=emb_cfg, seed=cfg.seed, store=store, history=history
    )


def _baseline_accuracy(corpus: LabeledCorpus, ckpt: BaselineCheckpoint) -> float:
    matches = 0
    total = 0
    for layout, truth in corpus:
        if layout.n < 2:
            continue
        pred = baseline_predict(layout, ckpt)
        m, t, _ = pairwise_accuracy(pred, ground_truth_matrix(truth, layout.ids))
        matches += m
        total += t
    return matches / total if total else 0.0


# --------------------------------------------------------------------------
# model comparison and corpus statistics


MODEL_ROWS = ("baseline", "no-spatial", "spatial")


def evaluate_checkpoint(
    corpus: LabeledCorpus, checkpoint: Checkpoint, threshold: float = 0.5,
    ordered: bool = False, split_desc: str = "full", model: str = "spatial",
) -> EvalReport:
    start = time.perf_counter()
    matches = 0
    total = 0
    from .relatedness import predict

    for layout, truth in corpus:
        if layout.n < 2:
            continue
        pred = predict(layout, checkpoint)
        m, t, _ = pairwise_accuracy(
            pred, ground_truth_matrix(truth, layout.ids), threshold, ordered
        )
        matches += m
        total += t
    return EvalReport(
        model=model, matches=matches, total=total, split=split_desc,
        seed=checkpoint.seed, wall_clock_s=time.perf_counter() - start,
    )


def compare_models(
    corpus: LabeledCorpus,
    seeds: Sequence[int],
    epochs: int = 30,
    baseline_epochs: Optional[int] = None,
    ratio: float = 0.8,
    threshold: float = 0.5,
    log=None,
) -> dict:
    """Train and evaluate baseline / no-spatial / spatial on shared splits.

    All three models see the identical split per seed, so the per-seed
    accuracies are paired. The small per-pair baseline converges much earlier
    than the encoders, so it may run on a shorter schedule.
    """
    results: Dict[str, List[float]] = {name: [] for name in MODEL_ROWS}
    for seed in seeds:
        train_part, test_part = split(corpus, ratio=ratio, seed=seed)
        test_truths = [(l, ground_truth_matrix(t, l.ids)) for l, t in test_part]

        def note(msg):
            if log is not None:
                log(msg)

        cfg = TrainConfig(seed=seed, epochs=epochs)
        base_cfg = TrainConfig(seed=seed, epochs=baseline_epochs or epochs)
        note(f"seed {seed}: training baseline")
        base = train_baseline(train_part, base_cfg, val_corpus=test_part)
        acc = _baseline_accuracy(test_part, base)
        results["baseline"].append(acc)
        note(f"seed {seed}: baseline accuracy {acc:.4f}")

        for name, spatial in (("no-spatial", False), ("spatial", True)):
            note(f"seed {seed}: training {name} model")
            enc_cfg = EncoderConfig(dropout=cfg.dropout, spatial_bias=spatial)
            ckpt = train(train_part, cfg, enc_cfg=enc_cfg, val_corpus=test_part)
            report = evaluate_checkpoint(
                test_part, ckpt, threshold=threshold,
                split_desc=f"{ratio:.0%} seed={seed}", model=name,
            )
            results[name].append(report.accuracy)
            note(f"seed {seed}: {name} accuracy {report.accuracy:.4f}")

    return {
        "seeds": list(seeds),
        "models": [
            {
                "model": name,
                "per_seed": results[name],
                "mean": float(np.mean(results[name])),
            }
            for name in MODEL_ROWS
        ],
    }


def corpus_stats(corpus: LabeledCorpus, heat_bins: int = 8) -> dict:
    """Element-count histogram, type distribution, per-type spatial heat grids."""
    if not corpus:
        raise ValueError("empty corpus")
    counts = [layout.n for layout, _ in corpus]
    type_counts = {t: 0 for t in ETYPES}
    heat = {t: np.zeros((heat_bins, heat_bins), dtype=int) for t in ETYPES}
    for layout, _ in corpus:
        for e in layout.elements:
            type_counts[e.etype] += 1
            cx, cy = e.center
            bx = min(int(cx * heat_bins), heat_bins - 1)
            by = min(int(cy * heat_bins), heat_bins - 1)
            heat[e.etype][by, bx] += 1
    total = sum(type_counts.values())
    hist: Dict[int, int] = {}
    for c in counts:
        hist[c] = hist.get(c, 0) + 1
    return {
        "n_layouts": len(corpus),
        "element_count": {
            "mean": float(np.mean(counts)),
            "min": int(min(counts)),
            "max": int(max(counts)),
            "histogram": {str(k): hist[k] for k in sorted(hist)},
        },
        "type_distribution": {
            t: type_counts[t] / total if total else 0.0 for t in ETYPES
        },
        "type_counts": dict(type_counts),
        "heat_grids": {t: heat[t].tolist() for t in ETYPES},
        "groups_per_layout": {
            "mean": float(np.mean([len(t.flat) for _, t in corpus])),
            "min": int(min(len(t.flat) for _, t in corpus)),
        },
    }
