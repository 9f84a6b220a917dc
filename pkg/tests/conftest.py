"""Shared fixtures: tiny layouts and small trained-model scaffolding."""

import json

import numpy as np
import pytest

from layoutgroups.corpus import GeneratorSpec, generate_corpus
from layoutgroups.model import RawElement, make_layout, normalize_element


def raw_rect(eid, x, y, w, h, etype="preset-geometry", z=None, **kw):
    return RawElement(
        id=eid, etype=etype, z=z if z is not None else int(eid[1:]),
        bbox=(x, y, x + w, y + h), **kw,
    )


def layout_from_raw(raws, canvas=(1.0, 1.0), layout_id="t"):
    return make_layout(
        layout_id, canvas, [normalize_element(r, canvas) for r in raws]
    )


@pytest.fixture
def square_layout():
    """Four small boxes at the corners of the unit square."""
    raws = [
        raw_rect("e0", 0.05, 0.05, 0.1, 0.1),
        raw_rect("e1", 0.85, 0.05, 0.1, 0.1),
        raw_rect("e2", 0.05, 0.85, 0.1, 0.1),
        raw_rect("e3", 0.85, 0.85, 0.1, 0.1),
    ]
    return layout_from_raw(raws)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(GeneratorSpec(seed=11, n_layouts=12))


def document(elements, canvas=(1000, 500), layout_id="doc", **extra):
    doc = {
        "id": layout_id,
        "canvas": {"width": canvas[0], "height": canvas[1]},
        "elements": elements,
    }
    doc.update(extra)
    return json.dumps(doc)
