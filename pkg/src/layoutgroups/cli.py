"""Command-line entry points.

All commands are deterministic under fixed seeds and write JSON unless an
SVG output is requested.
"""

from __future__ import annotations

import json
import sys

import click

from .corpus import (
    GeneratorSpec,
    generate_corpus,
    ground_truth_matrix,
    load_corpus,
    write_corpus,
)
from .evaluate import compare_models, corpus_stats, evaluate_checkpoint
from .grouping import GroupingHierarchy, GroupingParams, hierarchical_group
from .model import parse_layout
from .proximity import build_graph
from .relatedness import Checkpoint, TrainConfig, predict, train


def _dump(obj, path=None):
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        click.echo(text)


def _read_layout(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_layout(fh.read())


@click.group()
def main():
    """Recover hierarchical groupings from 2D layouts of visual elements."""


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True),
              help="JSON generator spec; CLI flags override nothing in it.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n", "n_layouts", type=int, default=100, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def generate(spec_path, seed, n_layouts, out_dir):
    """Generate a labeled synthetic corpus into a directory."""
    if spec_path:
        with open(spec_path, "r", encoding="utf-8") as fh:
            spec = GeneratorSpec(**json.load(fh))
    else:
        spec = GeneratorSpec(seed=seed, n_layouts=n_layouts)
    corpus = generate_corpus(spec)
    write_corpus(corpus, out_dir)
    click.echo(f"wrote {len(corpus)} layouts to {out_dir}", err=True)


@main.command("train")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON TrainConfig overrides.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--holdout", type=float, default=0.0, show_default=True,
              help="Fraction held out for best-epoch selection.")
@click.option("--no-spatial", is_flag=True, help="Freeze spatial bias at zero.")
@click.option("--out", "out_path", required=True, type=click.Path())
def train_cmd(corpus_dir, config_path, seed, epochs, holdout, no_spatial, out_path):
    """Train the relatedness model and write a checkpoint."""
    from .encoder import EncoderConfig
    from .evaluate import split as split_corpus

    overrides = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            overrides = json.load(fh)
    overrides.setdefault("seed", seed)
    overrides.setdefault("epochs", epochs)
    cfg = TrainConfig(**overrides)
    corpus = load_corpus(corpus_dir)
    if holdout > 0:
        train_part, val_part = split_corpus(corpus, ratio=1.0 - holdout, seed=cfg.seed)
    else:
        train_part, val_part = corpus, None
    enc_cfg = EncoderConfig(dropout=cfg.dropout, spatial_bias=not no_spatial)

    def log(rec):
        click.echo(json.dumps(rec, sort_keys=True), err=True)

    ckpt = train(train_part, cfg, enc_cfg=enc_cfg, val_corpus=val_part, log=log)
    ckpt.save(out_path)
    click.echo(f"checkpoint written to {out_path}", err=True)


@main.command("predict")
@click.option("--layout", "layout_path", required=True, type=click.Path(exists=True))
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path())
def predict_cmd(layout_path, ckpt_path, out_path):
    """Predict the association matrix for one layout."""
    layout = _read_layout(layout_path)
    ckpt = Checkpoint.load(ckpt_path)
    matrix = predict(layout, ckpt)
    _dump(matrix.to_dict(), out_path)


@main.command("group")
@click.option("--layout", "layout_path", required=True, type=click.Path(exists=True))
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--params", "params_path", type=click.Path(exists=True),
              help="JSON grouping parameter overrides.")
@click.option("--out", "out_path", type=click.Path())
def group_cmd(layout_path, ckpt_path, params_path, out_path):
    """Predict relatedness and produce the grouping hierarchy."""
    layout = _read_layout(layout_path)
    ckpt = Checkpoint.load(ckpt_path)
    params = GroupingParams()
    if params_path:
        with open(params_path, "r", encoding="utf-8") as fh:
            params = GroupingParams(**json.load(fh))
    matrix = predict(layout, ckpt)
    hierarchy = hierarchical_group(build_graph(layout), matrix, params)
    _dump(hierarchy.to_dict(), out_path)


@main.command("eval")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.option("--ordered-pairs", is_flag=True,
              help="Count ordered pairs instead of unordered.")
@click.option("--out", "out_path", type=click.Path())
def eval_cmd(corpus_dir, ckpt_path, threshold, ordered_pairs, out_path):
    """Pairwise accuracy of a checkpoint over a labeled corpus."""
    corpus = load_corpus(corpus_dir)
    ckpt = Checkpoint.load(ckpt_path)
    report = evaluate_checkpoint(
        corpus, ckpt, threshold=threshold, ordered=ordered_pairs
    )
    _dump(report.to_dict(), out_path)


@main.command("compare")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--seeds", default="0,1,2", show_default=True)
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--out", "out_path", type=click.Path())
def compare_cmd(corpus_dir, seeds, epochs, out_path):
    """Train and compare baseline / no-spatial / spatial models."""
    corpus = load_corpus(corpus_dir)
    seed_list = [int(s) for s in seeds.split(",") if s.strip() != ""]
    report = compare_models(
        corpus, seed_list, epochs=epochs, log=lambda m: click.echo(m, err=True)
    )
    _dump(report, out_path)


@main.command("stats")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path())
def stats_cmd(corpus_dir, out_path):
    """Corpus statistics: counts, type distribution, heat grids."""
    corpus = load_corpus(corpus_dir)
    _dump(corpus_stats(corpus), out_path)


@main.command("render")
@click.option("--layout", "layout_path", required=True, type=click.Path(exists=True))
@click.option("--groups", "groups_path", required=True, type=click.Path(exists=True),
              help="Hierarchy JSON as written by the group command.")
@click.option("--level", type=int, default=1, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def render_cmd(layout_path, groups_path, level, out_path):
    """Render a layout with group outlines at one hierarchy level as SVG."""
    from .render import render_svg

    layout = _read_layout(layout_path)
    with open(groups_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    params = GroupingParams(
        t_initial=doc["params"]["T_initial"],
        tau_initial=doc["params"]["tau_initial"],
        alpha=doc["params"]["alpha"],
        beta=doc["params"]["beta"],
    )
    hierarchy = GroupingHierarchy(
        levels=tuple(
            tuple(frozenset(g) for g in lvl) for lvl in doc["levels"]
        ),
        params=params,
    )
    svg = render_svg(layout, hierarchy, level)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(svg)
    click.echo(f"svg written to {out_path}", err=True)


if __name__ == "__main__":
    main()
