"""Deterministic SVG rendering of layouts and group outlines."""

from __future__ import annotations

from typing import Dict, FrozenSet, Iterable, Sequence

from .grouping import GroupingHierarchy
from .model import Layout

TYPE_FILL = {
    "preset-geometry": "#9ecae1",
    "freeform-shape": "#a1d99b",
    "text": "#fdd0a2",
    "picture": "#bcbddc",
    "line": "#969696",
    "chart": "#fc9272",
    "table": "#c6dbef",
}

_W = 640
_H = 360
_PAD = 4.0  # px padding around group outlines


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_svg(
    layout: Layout, hierarchy: GroupingHierarchy, level: int
) -> str:
    """Draw element bboxes plus one outline per non-singleton group.

    Output is deterministic: elements in z order, groups ordered by their
    smallest member id.
    """
    partition = hierarchy.level(level)  # raises on out-of-range level
    by_id = {e.id: e for e in layout.elements}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="#ffffff" '
        f'stroke="#cccccc"/>',
    ]
    for e in layout.elements:
        x1, y1, x2, y2 = e.bbox
        parts.append(
            f'<rect x="{_fmt(x1 * _W)}" y="{_fmt(y1 * _H)}" '
            f'width="{_fmt(max(x2 - x1, 0.002) * _W)}" '
            f'height="{_fmt(max(y2 - y1, 0.002) * _H)}" '
            f'fill="{TYPE_FILL[e.etype]}" fill-opacity="0.6" '
            f'stroke="#555555" stroke-width="0.5"/>'
        )
    for group in sorted(partition, key=lambda g: min(g)):
        if len(group) < 2:
            continue
        boxes = [by_id[eid].bbox for eid in group]
        x1 = min(b[0] for b in boxes) * _W - _PAD
        y1 = min(b[1] for b in boxes) * _H - _PAD
        x2 = max(b[2] for b in boxes) * _W + _PAD
        y2 = max(b[3] for b in boxes) * _H + _PAD
        parts.append(
            f'<rect x="{_fmt(x1)}" y="{_fmt(y1)}" width="{_fmt(x2 - x1)}" '
            f'height="{_fmt(y2 - y1)}" fill="none" stroke="#d62728" '
            f'stroke-width="1.5"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
