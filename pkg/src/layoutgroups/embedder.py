"""Element feature embedding: sinusoidal scalar codes plus learned tables.

Each element becomes the concatenation of type, z-rank, position, size,
rotation and alignment codes, projected through a tanh affine map to the
model dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .model import ETYPES, HALIGNS, VALIGNS, Layout, MAX_ELEMENTS, VisualElement

PAD_TYPE_INDEX = len(ETYPES)  # dedicated padding row in the type table


@dataclass(frozen=True)
class EmbedderConfig:
    """Dimensions of the per-feature encodings; all must be even."""

    d_type: int = 16
    d_z: int = 16
    d_coord: int = 16      # per bbox coordinate (4 of them)
    d_size: int = 16       # per size component (2 of them)
    d_rot: int = 16        # per rotation component sin/cos (2 of them)
    d_align: int = 8       # per alignment feature (2 of them)
    d_model: int = 128
    max_len: int = MAX_ELEMENTS

    @property
    def concat_dim(self) -> int:
        return (
            self.d_type
            + self.d_z
            + 4 * self.d_coord
            + 2 * self.d_size
            + 2 * self.d_rot
            + 2 * self.d_align
        )

    def validate(self) -> None:
        for name in ("d_z", "d_coord", "d_size", "d_rot"):
            if getattr(self, name) % 2 != 0:
                raise ValueError(f"{name} must be even for sinusoidal pairing")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EmbedderConfig":
        return cls(**d)


def encode_scalar(value: float, dims: int) -> np.ndarray:
    """Parameter-free sinusoidal code: pairs sin(v/10000^(2k/dims)), cos(...)."""
    if dims % 2 != 0:
        raise ValueError(f"dims must be even, got {dims}")
    k = np.arange(dims // 2, dtype=np.float64)
    freq = 10000.0 ** (2.0 * k / dims)
    out = np.empty(dims, dtype=np.float64)
    out[0::2] = np.sin(value / freq)
    out[1::2] = np.cos(value / freq)
    return out


def _encode_scalars(values: Sequence[float], dims: int) -> np.ndarray:
    return np.concatenate([encode_scalar(v, dims) for v in values])


def scalar_features(
    element: VisualElement, rank: int, cfg: EmbedderConfig
) -> np.ndarray:
    """Fixed (non-learned) portion of the concat vector, in Eq-order slots."""
    theta = np.deg2rad(element.rotation)
    parts = [
        encode_scalar(rank / cfg.max_len, cfg.d_z),
        _encode_scalars(element.bbox, cfg.d_coord),
        _encode_scalars(element.size, cfg.d_size),
        # sin/cos keeps 359deg adjacent to 1deg before encoding
        _encode_scalars((np.sin(theta), np.cos(theta)), cfg.d_rot),
    ]
    return np.concatenate(parts)


def init_embedder_params(
    store: ParameterStore, cfg: EmbedderConfig, rng: np.random.Generator
) -> None:
    cfg.validate()
    store.add("emb.etype", rng.normal(0.0, 0.1, (len(ETYPES) + 1, cfg.d_type)))
    store.add("emb.halign", rng.normal(0.0, 0.1, (len(HALIGNS), cfg.d_align)))
    store.add("emb.valign", rng.normal(0.0, 0.1, (len(VALIGNS), cfg.d_align)))
    fan_in = cfg.concat_dim
    store.add(
        "emb.theta_w", rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, cfg.d_model))
    )
    store.add("emb.theta_b", np.zeros(cfg.d_model))


@lru_cache(maxsize=4096)
def _layout_statics(layout: Layout, cfg: EmbedderConfig):
    """Layout-static embedding inputs (index vectors, sinusoidal scalars)."""
    n = layout.n
    type_idx = np.array([ETYPES.index(e.etype) for e in layout.elements], np.intp)
    ha_idx = np.array([HALIGNS.index(e.halign) for e in layout.elements], np.intp)
    va_idx = np.array([VALIGNS.index(e.valign) for e in layout.elements], np.intp)
    scalars = np.stack(
        [scalar_features(e, rank=e.z, cfg=cfg) for e in layout.elements]
    )
    return type_idx, ha_idx, va_idx, scalars


def embed_elements(
    layout: Layout,
    cfg: EmbedderConfig,
    store: ParameterStore,
    pad_to: Optional[int] = None,
) -> Tensor:
    """Embed a layout's elements into an (n, d_model) tensor.

    With ``pad_to`` set, extra rows are filled with the padding-token
    embedding (dedicated type row, zeroed scalar slots).
    """
    n = layout.n
    total = pad_to if pad_to is not None else n
    if n > total:
        raise ValueError(f"layout of {n} elements exceeds pad length {total}")

    t_idx, h_idx, v_idx, scal = _layout_statics(layout, cfg)
    type_idx = np.full(total, PAD_TYPE_INDEX, dtype=np.intp)
    ha_idx = np.full(total, HALIGNS.index("none"), dtype=np.intp)
    va_idx = np.full(total, VALIGNS.index("none"), dtype=np.intp)
    scalars = np.zeros((total, cfg.concat_dim - cfg.d_type - 2 * cfg.d_align))
    type_idx[:n] = t_idx
    ha_idx[:n] = h_idx
    va_idx[:n] = v_idx
    scalars[:n] = scal

    e_type = ad.gather_rows(store["emb.etype"], type_idx)
    e_align_h = ad.gather_rows(store["emb.halign"], ha_idx)
    e_align_v = ad.gather_rows(store["emb.valign"], va_idx)
    concat = ad.concat([e_type, ad.constant(scalars), e_align_h, e_align_v], axis=1)
    pre = ad.add_bias(ad.matmul(concat, store["emb.theta_w"]), store["emb.theta_b"])
    return ad.tanh(pre)


@dataclass
class EmbeddedItem:
    """One layout's embedded sequence plus the raw spatial side-channel."""

    layout: Layout
    embeddings: Tensor            # (pad, d_model)
    mask: np.ndarray              # (pad,) bool, True at real elements
    length: int
    centers: np.ndarray           # (n, 2) bbox centers
    ranks: np.ndarray             # (n,) canonical z ranks


@dataclass
class SequenceBatch:
    items: List[EmbeddedItem]
    pad_len: int

    @property
    def lengths(self) -> List[int]:
        return [it.length for it in self.items]

    @property
    def mask(self) -> np.ndarray:
        return np.stack([it.mask for it in self.items])

    @property
    def embeddings(self) -> np.ndarray:
        """Stacked embedding values, shape (batch, pad_len, d_model)."""
        return np.stack([it.embeddings.value for it in self.items])


def embed_item(
    layout: Layout,
    cfg: EmbedderConfig,
    store: ParameterStore,
    pad_to: Optional[int] = None,
) -> EmbeddedItem:
    total = pad_to if pad_to is not None else layout.n
    emb = embed_elements(layout, cfg, store, pad_to=total)
    mask = np.zeros(total, dtype=bool)
    mask[: layout.n] = True
    centers = np.array([e.center for e in layout.elements])
    ranks = np.array([e.z for e in layout.elements], dtype=np.float64)
    return EmbeddedItem(
        layout=layout, embeddings=emb, mask=mask, length=layout.n,
        centers=centers, ranks=ranks,
    )


def build_batch(
    layouts: Sequence[Layout],
    cfg: EmbedderConfig,
    store: ParameterStore,
    pad_to: Optional[int] = None,
) -> SequenceBatch:
    """Assemble a padded, masked batch (default pad length 128)."""
    pad = pad_to if pad_to is not None else cfg.max_len
    for layout in layouts:
        if layout.n > pad:
            raise ValueError(
                f"layout {layout.id!r} has {layout.n} elements, pad length {pad}"
            )
    items = [embed_item(layout, cfg, store, pad_to=pad) for layout in layouts]
    return SequenceBatch(items=items, pad_len=pad)
