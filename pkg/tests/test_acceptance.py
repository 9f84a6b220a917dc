"""Acceptance gate: one test per release criterion.

Each test prints a single summary line so the criterion outcomes can be read
off a verbose run. Criterion 4 trains nine models and dominates the suite's
runtime (bounded at 30 minutes).
"""

import time
from itertools import combinations

import numpy as np
import pytest

from layoutgroups import autodiff as ad
from layoutgroups.autodiff import grad_check
from layoutgroups.corpus import (
    GeneratorSpec,
    generate_corpus,
    ground_truth_matrix,
    write_corpus,
)
from layoutgroups.embedder import EmbedderConfig, embed_item
from layoutgroups.encoder import EncoderConfig, attention_scores, encode_item
from layoutgroups.evaluate import compare_models, pairwise_accuracy
from layoutgroups.grouping import (
    GroupingParams,
    hierarchical_group,
    is_coarsening,
    is_laminar,
)
from layoutgroups.proximity import (
    DisconnectedGroup,
    ProximityGraph,
    build_graph,
    internal_distance,
)
from layoutgroups.relatedness import (
    AssociationMatrix,
    Checkpoint,
    TrainConfig,
    init_model,
    layout_logits,
    predict,
    relatedness_loss,
    train,
)

from conftest import layout_from_raw, raw_rect


def random_layout(rng, n):
    raws = []
    for i in range(n):
        x, y = rng.uniform(0, 0.7, 2)
        w, h = rng.uniform(0.02, 0.3, 2)
        raws.append(raw_rect(f"e{i}", x, y, w, h, z=i))
    return layout_from_raw(raws)


def test_criterion_1_gradient_fidelity():
    """Full-model gradients match central finite differences."""
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    layout = random_layout(rng, 5)
    emb_cfg, enc_cfg = EmbedderConfig(), EncoderConfig()
    store = init_model(emb_cfg, enc_cfg, seed=0)
    truth = np.eye(5)
    truth[0, 1] = truth[1, 0] = 1.0

    def f():
        logits = layout_logits(layout, emb_cfg, enc_cfg, store)
        return relatedness_loss(logits, truth, "sigmoid-pairwise")

    err = grad_check(f, store, eps=1e-5, rng=rng, max_coords_per_param=12)
    elapsed = time.perf_counter() - start
    print(f"\n[criterion 1] max relative error {err:.2e} in {elapsed:.1f}s")
    assert err < 1e-4
    assert elapsed < 30.0


def test_criterion_2_attention_algebra():
    """Masked softmax rows sum to one; zeroed bias is an exact ablation."""
    rng = np.random.default_rng(1)
    layout = random_layout(rng, 7)
    emb_cfg = EmbedderConfig()
    store = init_model(emb_cfg, EncoderConfig(), seed=3)
    item = embed_item(layout, emb_cfg, store, pad_to=12)
    logits = attention_scores(
        item.embeddings, store["enc.l0.h0.wq"], store["enc.l0.h0.wk"]
    )
    p = ad.row_softmax(logits, mask=item.mask).value
    row_err = np.abs(p.sum(axis=1) - 1.0).max()
    assert row_err <= 1e-9

    # bias tables are zero right after initialization, so the spatial and
    # non-spatial encoders must agree bit-for-bit
    h_spatial = encode_item(item, EncoderConfig(spatial_bias=True), store).value
    h_plain = encode_item(item, EncoderConfig(spatial_bias=False), store).value
    exact = np.array_equal(h_spatial, h_plain)
    print(f"\n[criterion 2] row-sum error {row_err:.1e}, "
          f"ablation bit-exact: {exact}")
    assert exact


def test_criterion_3_permutation_equivariance():
    """predict() is exactly invariant to input element order.

    Parsing canonicalizes the sequence by (z, source index), so any
    permutation of the element list reproduces the identical computation;
    scores are compared after mapping back through the ids.
    """
    rng = np.random.default_rng(2)
    emb_cfg, enc_cfg = EmbedderConfig(), EncoderConfig()
    store = init_model(emb_cfg, enc_cfg, seed=1)
    # make the spatial bias nontrivial so the test covers it
    for head in range(enc_cfg.heads):
        for axis, nb in (("x", 32), ("y", 32), ("z", 16)):
            store[f"bias.h{head}.{axis}"].value = rng.normal(0, 0.1, nb)
    ckpt = Checkpoint(
        embedder_config=emb_cfg, encoder_config=enc_cfg,
        head_mode="sigmoid-pairwise", seed=1, store=store,
    )
    for trial in range(100):
        n = int(rng.integers(2, 12))
        raws = []
        for i in range(n):
            x, y = rng.uniform(0, 0.7, 2)
            w, h = rng.uniform(0.02, 0.3, 2)
            raws.append(raw_rect(f"e{i}", x, y, w, h, z=i))
        base = layout_from_raw(raws)
        perm = rng.permutation(n)
        shuffled = layout_from_raw([raws[i] for i in perm])

        ra = predict(base, ckpt)
        rb = predict(shuffled, ckpt)
        assert ra.ids == rb.ids  # canonical order restored
        assert np.array_equal(ra.scores, rb.scores)
    print("\n[criterion 3] 100/100 permutations exactly equivariant")


@pytest.mark.slow
def test_criterion_4_directional_accuracy_ordering():
    """spatial >= no-spatial >= baseline on the synthetic corpus.

    Trains nine models (three seeds x three models) on a 500/125 split and
    checks the accuracy ordering, the absolute spatial floor, and the
    baseline gap.
    """
    start = time.perf_counter()
    corpus = generate_corpus(GeneratorSpec(seed=7, n_layouts=625))
    report = compare_models(corpus, seeds=(0, 1, 2), epochs=60,
                            baseline_epochs=20)
    elapsed = time.perf_counter() - start
    means = {row["model"]: row["mean"] for row in report["models"]}
    print(f"\n[criterion 4] spatial {means['spatial']:.4f} >= "
          f"no-spatial {means['no-spatial']:.4f} >= "
          f"baseline {means['baseline']:.4f} in {elapsed / 60:.1f} min")
    assert means["spatial"] >= means["no-spatial"] >= means["baseline"]
    assert means["spatial"] >= 0.90
    assert means["spatial"] - means["baseline"] >= 0.02
    assert elapsed < 30 * 60


def test_criterion_5_mst_oracle():
    """Internal distance equals exhaustive spanning-tree enumeration."""
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 200:
        n = int(rng.integers(2, 7))
        edges = []
        for i, j in combinations(range(n), 2):
            if rng.random() < 0.8:
                edges.append((i, j, float(rng.uniform(0, 1))))
        g = ProximityGraph(
            ids=tuple(f"e{k}" for k in range(n)),
            bboxes=((0, 0, 1, 1),) * n,
            edges=tuple(edges),
        )
        best = None
        for subset in combinations(edges, n - 1):
            parent = list(range(n))

            def find(x):
                while parent[x] != x:
                    x = parent[x]
                return x

            ok = True
            for i, j, _ in subset:
                ri, rj = find(i), find(j)
                if ri == rj:
                    ok = False
                    break
                parent[ri] = rj
            if ok and len({find(k) for k in range(n)}) == 1:
                top = max(w for _, _, w in subset)
                best = top if best is None else min(best, top)
        if best is None:
            with pytest.raises(DisconnectedGroup):
                internal_distance(range(n), g)
            continue
        assert internal_distance(range(n), g) == best
        checked += 1
    print(f"\n[criterion 5] {checked} random groups match the exhaustive oracle")


def test_criterion_6_merge_trace():
    """Two tight pairs, far apart: H_1 is the pairs, the top is one root."""
    ids = ("a", "b", "c", "d")
    boxes = {
        "a": (0.10, 0.10, 0.15, 0.15),
        "b": (0.16, 0.10, 0.21, 0.15),   # 0.01 from a
        "c": (0.60, 0.60, 0.65, 0.65),
        "d": (0.66, 0.60, 0.71, 0.65),   # 0.01 from c
    }
    bboxes = tuple(boxes[i] for i in ids)
    from layoutgroups.proximity import bbox_gap

    edges = tuple(
        (i, j, bbox_gap(bboxes[i], bboxes[j]))
        for i in range(4) for j in range(i + 1, 4)
    )
    graph = ProximityGraph(ids=ids, bboxes=bboxes, edges=edges)
    r = np.eye(4)
    r[0, 1] = r[1, 0] = 1.0
    r[2, 3] = r[3, 2] = 1.0
    h = hierarchical_group(graph, AssociationMatrix(ids=ids, scores=r))
    assert set(h.levels[1]) == {frozenset({"a", "b"}), frozenset({"c", "d"})}
    assert h.levels[-1] == (frozenset(ids),)
    print(f"\n[criterion 6] trace reproduced: levels "
          f"{[len(l) for l in h.levels]}")


def test_criterion_7_laminarity_and_coarsening():
    """1,000 randomized grouping runs with zero structural violations."""
    rng = np.random.default_rng(7)
    for run in range(1000):
        n = int(rng.integers(1, 20))
        layout = random_layout(rng, n)
        graph = build_graph(layout)
        r = rng.random((n, n))
        r = (r + r.T) / 2
        np.fill_diagonal(r, 1.0)
        params = GroupingParams(
            t_initial=float(rng.uniform(0.4, 1.0)),
            tau_initial=float(rng.uniform(0.005, 0.05)),
            alpha=float(rng.uniform(0.7, 0.95)),
            beta=float(rng.uniform(1.05, 1.3)),
        )
        h = hierarchical_group(
            graph, AssociationMatrix(ids=layout.ids, scores=r), params
        )
        assert h.levels[-1] == (frozenset(layout.ids),)  # terminated
        assert is_laminar(h.levels)
        for fine, coarse in zip(h.levels, h.levels[1:]):
            assert is_coarsening(fine, coarse)
    print("\n[criterion 7] 1000/1000 runs laminar, coarsening, terminated")


def test_criterion_8_determinism(tmp_path):
    """generate / train / predict / group byte-reproduce under fixed seeds."""
    spec = GeneratorSpec(seed=21, n_layouts=5)
    dirs = [str(tmp_path / d) for d in ("a", "b")]
    for d in dirs:
        write_corpus(generate_corpus(spec), d)
    import os

    for name in sorted(os.listdir(dirs[0])):
        with open(os.path.join(dirs[0], name), "rb") as fa, \
             open(os.path.join(dirs[1], name), "rb") as fb:
            assert fa.read() == fb.read()

    corpus = generate_corpus(spec)
    cfg = TrainConfig(seed=4, epochs=2)
    paths = [str(tmp_path / f"ckpt_{i}.json") for i in range(2)]
    for p in paths:
        train(corpus, cfg).save(p)
    with open(paths[0], "rb") as fa, open(paths[1], "rb") as fb:
        assert fa.read() == fb.read()

    ckpt = Checkpoint.load(paths[0])
    layout = corpus[0][0]
    import json

    pa = json.dumps(predict(layout, ckpt).to_dict(), sort_keys=True)
    pb = json.dumps(predict(layout, ckpt).to_dict(), sort_keys=True)
    assert pa == pb

    graph = build_graph(layout)
    ga = hierarchical_group(graph, predict(layout, ckpt)).to_dict()
    gb = hierarchical_group(graph, predict(layout, ckpt)).to_dict()
    assert json.dumps(ga, sort_keys=True) == json.dumps(gb, sort_keys=True)
    print("\n[criterion 8] generate/train/predict/group byte-reproducible")


def test_criterion_9_scale():
    """128-element grouping < 1 s; 625-layout evaluation < 60 s."""
    rng = np.random.default_rng(9)
    layout = random_layout(rng, 128)
    emb_cfg, enc_cfg = EmbedderConfig(), EncoderConfig()
    store = init_model(emb_cfg, enc_cfg, seed=0)
    ckpt = Checkpoint(
        embedder_config=emb_cfg, encoder_config=enc_cfg,
        head_mode="sigmoid-pairwise", seed=0, store=store,
    )
    start = time.perf_counter()
    r = predict(layout, ckpt)
    hierarchical_group(build_graph(layout), r)
    single = time.perf_counter() - start
    assert single < 1.0

    corpus = generate_corpus(GeneratorSpec(seed=7, n_layouts=625))
    start = time.perf_counter()
    matches = 0
    total = 0
    for lay, truth in corpus:
        m, t, _ = pairwise_accuracy(
            predict(lay, ckpt), ground_truth_matrix(truth, lay.ids)
        )
        matches += m
        total += t
    eval_time = time.perf_counter() - start
    print(f"\n[criterion 9] 128-element grouping {single * 1000:.0f} ms, "
          f"625-layout evaluation {eval_time:.1f} s")
    assert eval_time < 60.0


def test_criterion_10_corpus_statistics():
    """1,000-layout corpus: mean count in [20, 34], >= 2 groups everywhere."""
    corpus = generate_corpus(GeneratorSpec(seed=10, n_layouts=1000))
    counts = [layout.n for layout, _ in corpus]
    mean = float(np.mean(counts))
    min_groups = min(len(truth.flat) for _, truth in corpus)
    print(f"\n[criterion 10] mean element count {mean:.2f}, "
          f"min groups per layout {min_groups}")
    assert 20.0 <= mean <= 34.0
    assert min_groups >= 2
