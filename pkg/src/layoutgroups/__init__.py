"""Recover hierarchical groupings from 2D layouts of visual elements."""

from .model import Layout, VisualElement, parse_layout, serialize_layout
from .corpus import GeneratorSpec, GroundTruth, generate_corpus, ground_truth_matrix
from .proximity import ProximityGraph, build_graph, distance
from .grouping import GroupingHierarchy, GroupingParams, hierarchical_group, truncate
from .relatedness import AssociationMatrix, Checkpoint, TrainConfig, predict, train

__all__ = [
    "Layout",
    "VisualElement",
    "parse_layout",
    "serialize_layout",
    "GeneratorSpec",
    "GroundTruth",
    "generate_corpus",
    "ground_truth_matrix",
    "ProximityGraph",
    "build_graph",
    "distance",
    "GroupingHierarchy",
    "GroupingParams",
    "hierarchical_group",
    "truncate",
    "AssociationMatrix",
    "Checkpoint",
    "TrainConfig",
    "predict",
    "train",
]

__version__ = "0.1.0"
