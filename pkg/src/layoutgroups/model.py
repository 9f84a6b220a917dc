"""Layout data model: visual elements, normalization, and document parsing.

A layout document is a UTF-8 JSON object::

    {"id": ..., "canvas": {"width": W, "height": H},
     "elements": [{"id", "type", "z", "bbox": [x1, y1, x2, y2],
                   "rotation"?, "halign"?, "valign"?}, ...]}

Coordinates are raw canvas units unless the document carries
``"normalized": true``, in which case they are already in [0, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

ETYPES = (
    "preset-geometry",
    "freeform-shape",
    "text",
    "picture",
    "line",
    "chart",
    "table",
)
HALIGNS = ("left", "right", "center", "mixed", "none")
VALIGNS = ("top", "middle", "bottom", "mixed", "none")

MAX_ELEMENTS = 128
CLAMP_TOL = 1e-6


class LayoutError(Exception):
    """Base class for layout ingestion errors."""


class MalformedDocument(LayoutError):
    pass


class InvalidBBox(LayoutError):
    pass


class TooManyElements(LayoutError):
    pass


class EmptyLayout(LayoutError):
    pass


class InvalidCanvas(LayoutError):
    pass


class InvalidCategory(LayoutError):
    pass


@dataclass(frozen=True)
class RawElement:
    """An element as read from a document, before normalization."""

    id: str
    etype: str
    z: int
    bbox: Tuple[float, float, float, float]
    rotation: float = 0.0
    halign: Optional[str] = None
    valign: Optional[str] = None


@dataclass(frozen=True)
class VisualElement:
    """One element's normalized spatial and categorical features.

    All four bbox coordinates lie in [0, 1]; ``size`` is recomputed from the
    bbox so it always equals the extents exactly.
    """

    id: str
    etype: str
    z: int
    bbox: Tuple[float, float, float, float]
    size: Tuple[float, float]
    rotation: float
    halign: str
    valign: str

    @property
    def center(self) -> Tuple[float, float]:
        x1, y1, x2, y2 = self.bbox
        return ((x1 + x2) / 2.0, (y1 + y2) / 2.0)

    @property
    def area(self) -> float:
        return self.size[0] * self.size[1]


@dataclass(frozen=True)
class Layout:
    """An ordered element sequence plus canvas metadata.

    Elements are sorted ascending by z; z values are dense ranks 0..n-1
    (assigned by :func:`canonicalize`).
    """

    id: str
    canvas: Tuple[float, float]
    elements: Tuple[VisualElement, ...]

    @property
    def n(self) -> int:
        return len(self.elements)

    @property
    def ids(self) -> Tuple[str, ...]:
        return tuple(e.id for e in self.elements)


def _clamp_unit(v: float, what: str, eid: str) -> float:
    if v < -CLAMP_TOL or v > 1.0 + CLAMP_TOL:
        raise InvalidBBox(
            f"element {eid!r}: {what}={v} outside [0,1] beyond tolerance"
        )
    return min(max(v, 0.0), 1.0)


def normalize_element(raw: RawElement, canvas: Tuple[float, float]) -> VisualElement:
    """Scale a raw element's bbox into [0, 1] and fill categorical defaults.

    Rotation is wrapped into [0, 360); a text element without alignment gets
    ``mixed``/``mixed``; non-text elements always carry alignment ``none``.
    """
    w, h = canvas
    if w <= 0 or h <= 0:
        raise InvalidCanvas(f"non-positive canvas dimension {canvas}")
    if raw.etype not in ETYPES:
        raise InvalidCategory(f"unknown element type {raw.etype!r}")
    x1, y1, x2, y2 = raw.bbox
    if x2 < x1 or y2 < y1:
        raise InvalidBBox(f"element {raw.id!r}: bbox {raw.bbox} has negative extent")
    nx1 = _clamp_unit(x1 / w, "x1", raw.id)
    ny1 = _clamp_unit(y1 / h, "y1", raw.id)
    nx2 = _clamp_unit(x2 / w, "x2", raw.id)
    ny2 = _clamp_unit(y2 / h, "y2", raw.id)
    if nx2 < nx1 or ny2 < ny1:
        raise InvalidBBox(f"element {raw.id!r}: bbox degenerate after clamping")

    rotation = float(raw.rotation) % 360.0

    if raw.etype == "text":
        halign = raw.halign if raw.halign is not None else "mixed"
        valign = raw.valign if raw.valign is not None else "mixed"
        if halign not in HALIGNS[:4]:
            raise InvalidCategory(f"element {raw.id!r}: bad halign {halign!r}")
        if valign not in VALIGNS[:4]:
            raise InvalidCategory(f"element {raw.id!r}: bad valign {valign!r}")
    else:
        if raw.halign not in (None, "none") or raw.valign not in (None, "none"):
            raise InvalidCategory(
                f"element {raw.id!r}: alignment is only valid on text elements"
            )
        halign = "none"
        valign = "none"

    return VisualElement(
        id=str(raw.id),
        etype=raw.etype,
        z=int(raw.z),
        bbox=(nx1, ny1, nx2, ny2),
        size=(nx2 - nx1, ny2 - ny1),
        rotation=rotation,
        halign=halign,
        valign=valign,
    )


def canonicalize(elements: Iterable[VisualElement]) -> Tuple[VisualElement, ...]:
    """Sort by (z, source index) and reassign z to dense unique ranks."""
    indexed = list(enumerate(elements))
    indexed.sort(key=lambda pair: (pair[1].z, pair[0]))
    out = []
    for rank, (_, elem) in enumerate(indexed):
        if elem.z != rank:
            elem = VisualElement(
                id=elem.id, etype=elem.etype, z=rank, bbox=elem.bbox,
                size=elem.size, rotation=elem.rotation,
                halign=elem.halign, valign=elem.valign,
            )
        out.append(elem)
    return tuple(out)


def make_layout(
    layout_id: str,
    canvas: Tuple[float, float],
    elements: Sequence[VisualElement],
) -> Layout:
    """Build a canonical Layout (z-sorted, dense z ranks)."""
    if not elements:
        raise EmptyLayout(f"layout {layout_id!r} has no elements")
    if len(elements) > MAX_ELEMENTS:
        raise TooManyElements(
            f"layout {layout_id!r} has {len(elements)} elements (cap {MAX_ELEMENTS})"
        )
    ids = [e.id for e in elements]
    if len(set(ids)) != len(ids):
        raise MalformedDocument(f"layout {layout_id!r} has duplicate element ids")
    return Layout(id=str(layout_id), canvas=(float(canvas[0]), float(canvas[1])),
                  elements=canonicalize(elements))


def parse_layout(document: str) -> Layout:
    """Parse a layout document string into a canonical Layout."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedDocument("document root must be an object")
    try:
        layout_id = doc["id"]
        canvas = (float(doc["canvas"]["width"]), float(doc["canvas"]["height"]))
        raw_elements = doc["elements"]
    except (KeyError, TypeError) as exc:
        raise MalformedDocument(f"missing or malformed field: {exc}") from exc
    if not isinstance(raw_elements, list):
        raise MalformedDocument("'elements' must be a list")

    normalized_flag = bool(doc.get("normalized", False))
    norm_canvas = (1.0, 1.0) if normalized_flag else canvas

    elements = []
    for entry in raw_elements:
        try:
            raw = RawElement(
                id=str(entry["id"]),
                etype=entry["type"],
                z=int(entry["z"]),
                bbox=tuple(float(v) for v in entry["bbox"]),
                rotation=float(entry.get("rotation", 0.0)),
                halign=entry.get("halign"),
                valign=entry.get("valign"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDocument(f"malformed element entry: {exc}") from exc
        if len(raw.bbox) != 4:
            raise MalformedDocument(f"element {raw.id!r}: bbox must have 4 entries")
        elements.append(normalize_element(raw, norm_canvas))
    return make_layout(layout_id, canvas, elements)


def serialize_layout(layout: Layout) -> str:
    """Serialize a Layout as a normalized document; round-trips exactly."""
    elements = []
    for e in layout.elements:
        entry = {
            "id": e.id,
            "type": e.etype,
            "z": e.z,
            "bbox": list(e.bbox),
            "rotation": e.rotation,
        }
        if e.etype == "text":
            entry["halign"] = e.halign
            entry["valign"] = e.valign
        elements.append(entry)
    doc = {
        "id": layout.id,
        "canvas": {"width": layout.canvas[0], "height": layout.canvas[1]},
        "normalized": True,
        "elements": elements,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))
