"""Deterministic synthetic layouts with known hierarchical groupings.

Layouts are composed from group templates (card grids, icon+title+description
lists, timeline rows, title blocks) plus optional singleton distractors.
A per-layout density factor varies spacing so that within-group gaps in loose
layouts overlap between-group gaps in tight ones; resolving that ambiguity
requires layout context, not just the raw pair geometry.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Sequence, Tuple

import numpy as np

from .model import (
    Layout,
    RawElement,
    make_layout,
    normalize_element,
    parse_layout,
    serialize_layout,
)

Partition = Tuple[FrozenSet[str], ...]

DEFAULT_TEMPLATE_MIX = {"card_grid": 0.45, "icon_list": 0.30, "timeline": 0.25}
CANVAS = (1280.0, 720.0)


@dataclass(frozen=True)
class GeneratorSpec:
    seed: int
    n_layouts: int
    template_mix: Dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_TEMPLATE_MIX)
    )
    jitter: float = 0.02
    distractor_prob: float = 0.6

    def validate(self) -> None:
        if self.n_layouts < 1:
            raise ValueError("n_layouts must be >= 1")
        if not 0.0 <= self.jitter <= 0.05:
            raise ValueError("jitter must be in [0, 0.05]")
        if not 0.0 <= self.distractor_prob <= 1.0:
            raise ValueError("distractor probability must be in [0, 1]")
        unknown = set(self.template_mix) - set(DEFAULT_TEMPLATE_MIX)
        if unknown:
            raise ValueError(f"unknown templates {sorted(unknown)}")
        if sum(self.template_mix.values()) <= 0:
            raise ValueError("template mix weights must sum to > 0")


@dataclass(frozen=True)
class GroundTruth:
    """Flat grouping plus the full laminar hierarchy for one layout."""

    flat: Partition
    hierarchy: Tuple[Partition, ...]

    def __post_init__(self):
        all_ids = set()
        for block in self.flat:
            if all_ids & block:
                raise ValueError("flat grouping blocks overlap")
            all_ids |= block
        for level in self.hierarchy:
            covered = set()
            for block in level:
                if covered & block:
                    raise ValueError("hierarchy level blocks overlap")
                covered |= block
            if covered != all_ids:
                raise ValueError("hierarchy level does not cover all elements")
        if self.hierarchy and set().union(*self.hierarchy[0]) != all_ids:
            raise ValueError("hierarchy base does not match flat grouping ids")

    @property
    def ids(self) -> FrozenSet[str]:
        return frozenset().union(*self.flat)


def ground_truth_matrix(truth: GroundTruth, ids: Sequence[str]) -> np.ndarray:
    """Symmetric 0/1 matrix from the flat grouping; unit diagonal."""
    ids = list(ids)
    if set(ids) != set(truth.ids) or len(ids) != len(truth.ids):
        raise ValueError("ground truth ids do not match layout ids")
    index = {eid: i for i, eid in enumerate(ids)}
    n = len(ids)
    m = np.zeros((n, n))
    for block in truth.flat:
        rows = [index[eid] for eid in block]
        for a in rows:
            for b in rows:
                m[a, b] = 1.0
    np.fill_diagonal(m, 1.0)
    return m


class _Builder:
    """Accumulates raw elements and group labels for one layout."""

    def __init__(
        self,
        rng: np.random.Generator,
        jitter_px: float,
        shift: Tuple[float, float] = (0.0, 0.0),
    ):
        self.rng = rng
        self.jitter_px = jitter_px
        self.shift = shift
        self.raw: List[RawElement] = []
        self.groups: Dict[str, List[str]] = {}

    def add(
        self,
        group: str,
        etype: str,
        x: float,
        y: float,
        w: float,
        h: float,
        rotation: float = 0.0,
        halign=None,
        valign=None,
        jitter: bool = True,
        shift: bool = True,
    ) -> str:
        eid = f"e{len(self.raw)}"
        if shift:
            # whole-composition offset: absolute positions drift per layout
            # while relative offsets between grouped elements stay put
            x += self.shift[0]
            y += self.shift[1]
        if jitter and self.jitter_px > 0:
            x += self.rng.uniform(-self.jitter_px, self.jitter_px)
            y += self.rng.uniform(-self.jitter_px, self.jitter_px)
        x = min(max(x, 0.0), CANVAS[0] - w)
        y = min(max(y, 0.0), CANVAS[1] - h)
        self.raw.append(
            RawElement(
                id=eid, etype=etype, z=len(self.raw),
                bbox=(x, y, x + w, y + h), rotation=rotation,
                halign=halign, valign=valign,
            )
        )
        self.groups.setdefault(group, []).append(eid)
        return eid


def _title_block(b: _Builder, s: float) -> None:
    rng = b.rng
    w = rng.uniform(420, 700)
    x = (CANVAS[0] - w) / 2 + rng.uniform(-120, 120)
    y = rng.uniform(30, 70)
    b.add("title", "text", x, y, w, 52, halign="center", valign="middle")
    gap = s * rng.uniform(8, 16)
    b.add("title", "text", x + rng.uniform(20, 60), y + 52 + gap,
          w - rng.uniform(40, 120), 28, halign="center", valign="middle")
    if rng.random() < 0.4:
        b.add("title", "line", x + 40, y + 52 + gap + 28 + gap, w - 80, 3)


def _card(b: _Builder, group: str, x: float, y: float, w: float, h: float,
          s: float) -> None:
    rng = b.rng
    pad = s * rng.uniform(8, 20)
    if rng.random() < 0.7:
        b.add(group, "preset-geometry", x, y, w, h, jitter=False)
    icon = rng.uniform(0.16, 0.26) * h
    b.add(group, "freeform-shape", x + pad, y + pad, icon, icon)
    ty = y + pad + icon + s * rng.uniform(6, 14)
    b.add(group, "text", x + pad, ty, w - 2 * pad, 24,
          halign="left", valign="top")
    dy = ty + 24 + s * rng.uniform(4, 10)
    b.add(group, "text", x + pad, dy, w - 2 * pad,
          max(h - (dy - y) - pad, 14.0), halign="left", valign="top")
    if rng.random() < 0.35 and h - (dy - y) - pad > 40:
        b.add(group, "text", x + pad, dy + 22, w - 2 * pad - rng.uniform(0, 30),
              16, halign="left", valign="top")


def _card_grid(b: _Builder, s: float, top: float) -> None:
    rng = b.rng
    cols = int(rng.integers(2, 5))
    rows = int(rng.integers(1, 4))
    while cols * rows > 9:
        rows -= 1
    gap = s * rng.uniform(26, 64)
    margin = rng.uniform(60, 110)
    region_w = CANVAS[0] - 2 * margin
    region_h = CANVAS[1] - top - 40
    cw = (region_w - (cols - 1) * gap) / cols
    ch = (region_h - (rows - 1) * gap) / rows
    ch = min(ch, rng.uniform(150, 260))
    for r in range(rows):
        for c in range(cols):
            x = margin + c * (cw + gap)
            y = top + r * (ch + gap)
            _card(b, f"card_{r}_{c}", x, y, cw, ch, s)


def _icon_list(b: _Builder, s: float, top: float) -> None:
    rng = b.rng
    n_rows = int(rng.integers(4, 8))
    avail = CANVAS[1] - top - 40
    # cap the gap so every row keeps at least 40px of height
    row_gap = min(s * rng.uniform(26, 64), (avail - n_rows * 40) / (n_rows - 1))
    margin = rng.uniform(120, 260)
    row_h = min((avail - (n_rows - 1) * row_gap) / n_rows, rng.uniform(52, 84))
    width = CANVAS[0] - 2 * margin
    for r in range(n_rows):
        y = top + r * (row_h + row_gap)
        group = f"item_{r}"
        icon = row_h * rng.uniform(0.7, 0.95)
        b.add(group, "freeform-shape", margin, y, icon, icon)
        tx = margin + icon + s * rng.uniform(10, 22)
        b.add(group, "text", tx, y, width * rng.uniform(0.35, 0.5), 22,
              halign="left", valign="top")
        b.add(group, "text", tx, y + 22 + s * rng.uniform(3, 8),
              width * rng.uniform(0.5, 0.7), 18, halign="left", valign="top")
        if rng.random() < 0.5:
            b.add(group, "preset-geometry", tx - 8 - 6, y + 6, 6, 6)


def _timeline(b: _Builder, s: float, top: float) -> None:
    rng = b.rng
    k = int(rng.integers(4, 8))
    margin = rng.uniform(90, 150)
    y_axis = top + rng.uniform(140, 260)
    b.add("axis", "line", margin, y_axis - 2, CANVAS[0] - 2 * margin, 4,
          jitter=False)
    step = (CANVAS[0] - 2 * margin) / (k - 1)
    dot = s * rng.uniform(16, 26)
    for i in range(k):
        cx = margin + i * step
        group = f"milestone_{i}"
        b.add(group, "preset-geometry", cx - dot / 2, y_axis - dot / 2, dot, dot)
        lw = min(step * 0.8, rng.uniform(90, 150))
        b.add(group, "text", cx - lw / 2, y_axis - dot / 2 - s * rng.uniform(26, 40) - 20,
              lw, 20, halign="center", valign="bottom")
        b.add(group, "text", cx - lw / 2, y_axis + dot / 2 + s * rng.uniform(10, 24),
              lw, 18, halign="center", valign="top")
        if rng.random() < 0.3:
            b.add(group, "freeform-shape", cx - 12, y_axis - dot / 2 - 18, 24, 16)


_TEMPLATES = {
    "card_grid": _card_grid,
    "icon_list": _icon_list,
    "timeline": _timeline,
}


def generate_layout(
    spec: GeneratorSpec, index: int, seed_seq: np.random.SeedSequence
) -> Tuple[Layout, GroundTruth]:
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    s = rng.uniform(0.60, 1.50)  # density factor; creates cross-layout ambiguity
    jitter_px = min(spec.jitter * CANVAS[1], s * 10.0)
    shift = (rng.uniform(-90.0, 90.0), rng.uniform(-45.0, 60.0))
    b = _Builder(rng, jitter_px, shift=shift)

    if rng.random() < spec.distractor_prob:
        b.add("bg", "preset-geometry", 0, 0, CANVAS[0], CANVAS[1], jitter=False,
              shift=False)
    _title_block(b, s)
    names = sorted(spec.template_mix)
    weights = np.array([spec.template_mix[n] for n in names])
    template = names[rng.choice(len(names), p=weights / weights.sum())]
    top = rng.uniform(170, 230)
    _TEMPLATES[template](b, s, top)
    if rng.random() < spec.distractor_prob * 0.5:
        b.add("deco", "freeform-shape", rng.uniform(0, 60),
              CANVAS[1] - rng.uniform(60, 120), rng.uniform(40, 90),
              rng.uniform(40, 90))
    if rng.random() < spec.distractor_prob * 0.5:
        b.add("footer", "line", rng.uniform(80, 200), CANVAS[1] - 24,
              CANVAS[0] - rng.uniform(300, 500), 2)

    # shuffle stacking order so z-rank adjacency carries no group signal;
    # the background (z=0) stays at the back
    n_raw = len(b.raw)
    start = 1 if b.raw and b.raw[0].etype == "preset-geometry" and (
        b.raw[0].bbox == (0.0, 0.0, CANVAS[0], CANVAS[1])
    ) else 0
    perm = start + rng.permutation(n_raw - start)
    ranks = list(range(start)) + list(perm)
    b.raw = [replace(r, z=int(z)) for r, z in zip(b.raw, ranks)]
    elements = [normalize_element(r, CANVAS) for r in b.raw]
    layout = make_layout(f"synthetic_{spec.seed}_{index}", CANVAS, elements)

    flat = tuple(frozenset(ids) for _, ids in sorted(b.groups.items()))
    singles = {"bg", "deco", "footer", "axis"}
    body = frozenset(
        eid for name, ids in b.groups.items()
        if name not in singles and name != "title" for eid in ids
    )
    sections = [body, frozenset(b.groups["title"])]
    sections += [
        frozenset(ids) for name, ids in sorted(b.groups.items()) if name in singles
    ]
    root = (frozenset(e.id for e in elements),)
    depth = int(rng.integers(2, 4))
    if depth == 3:
        hierarchy = (flat, tuple(sections), root)
    else:
        hierarchy = (flat, root)
    return layout, GroundTruth(flat=flat, hierarchy=hierarchy)


def generate_corpus(spec: GeneratorSpec) -> List[Tuple[Layout, GroundTruth]]:
    """Generate the full corpus; byte-identical for identical (spec, seed)."""
    spec.validate()
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_layouts)
    return [generate_layout(spec, i, child) for i, child in enumerate(children)]


def _truth_to_dict(truth: GroundTruth) -> dict:
    def part(p: Partition) -> list:
        return sorted(sorted(block) for block in p)

    return {"flat": part(truth.flat), "hierarchy": [part(l) for l in truth.hierarchy]}


def _truth_from_dict(d: dict) -> GroundTruth:
    def part(blocks) -> Partition:
        return tuple(frozenset(b) for b in blocks)

    return GroundTruth(
        flat=part(d["flat"]), hierarchy=tuple(part(l) for l in d["hierarchy"])
    )


def write_corpus(
    corpus: Sequence[Tuple[Layout, GroundTruth]], out_dir: str
) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for i, (layout, truth) in enumerate(corpus):
        stem = os.path.join(out_dir, f"layout_{i:05d}")
        with open(stem + ".json", "w", encoding="utf-8") as fh:
            fh.write(serialize_layout(layout))
        with open(stem + ".truth.json", "w", encoding="utf-8") as fh:
            json.dump(_truth_to_dict(truth), fh, sort_keys=True,
                      separators=(",", ":"))


def load_corpus(in_dir: str) -> List[Tuple[Layout, GroundTruth]]:
    pattern = re.compile(r"^layout_\d+\.json$")
    out = []
    for name in sorted(os.listdir(in_dir)):
        if not pattern.match(name):
            continue
        stem = os.path.join(in_dir, name[: -len(".json")])
        with open(stem + ".json", "r", encoding="utf-8") as fh:
            layout = parse_layout(fh.read())
        with open(stem + ".truth.json", "r", encoding="utf-8") as fh:
            truth = _truth_from_dict(json.load(fh))
        out.append((layout, truth))
    if not out:
        raise FileNotFoundError(f"no layout files in {in_dir!r}")
    return out
