"""Acceptance suite: each test enforces one release criterion at its stated
tolerance and prints a PASS line on success."""

import math
import time

import numpy as np
import pytest

from roll.characters import CharacterDetection, spatio_temporal_filter
from roll.describe import generate_description
from roll.evaluate import EvalConfig, evaluate, load_corpus
from roll.fusion import (
    BranchEmbeddings,
    FusionHead,
    MWConfig,
    cross_entropy,
    fuse,
    init_fusion_head,
    mw_gradient,
    mw_loss,
    uniform_fc_head,
)
from roll.recall import FrameIndexStore, identify_episode, slice_document
from roll.scenegraph import RelationNode, SceneGraph, TypedEdge
from roll.scoring import BranchScores
from roll.synth import build_corpus

UNKNOWN = "unknown"


def _passed(name):
    print(f"\nACCEPTANCE PASS: {name}")


# ---------------------------------------------------------------------------
# 1. Table-of-rules golden suite


def _graph(characters=(), place=None, action="talking", relations=()):
    nodes, edges, objects = [], [], []
    if place is not None:
        edges.append(TypedEdge("place_action", f"place:{place}", f"action:{action}"))
    for name in characters:
        edges.append(TypedEdge("action_character", f"action:{action}", f"character:{name}"))
    for k, (subject_side, label, object_side) in enumerate(relations):
        node_id = f"r{k}"
        nodes.append(RelationNode(node_id=node_id, label=label))
        kind, name = subject_side
        if kind == "character":
            edges.append(TypedEdge("character_relation", f"character:{name}", node_id))
        else:
            objects.append(name) if name not in objects else None
            edges.append(TypedEdge("object_relation", f"object:{name}", node_id))
        for kind, name in object_side:
            if kind == "character":
                edges.append(TypedEdge("relation_character", node_id, f"character:{name}"))
            else:
                objects.append(name) if name not in objects else None
                edges.append(TypedEdge("relation_object", node_id, f"object:{name}"))
    return SceneGraph(
        characters=tuple(characters), place=place, objects=tuple(objects),
        relations=tuple(nodes), action=action, edges=tuple(edges),
    )


GOLDEN_ROWS = [
    (_graph(action="lying on the floor"), "Someone is lying on the floor."),
    (_graph(characters=("Leonard",), action="smiling"), "Leonard is smiling."),
    (_graph(characters=("Penny", "Amy"), action="holding a bag"),
     "Penny and Amy are holding a bag."),
    (_graph(place="the street", action="walking"), "Someone is walking at the street."),
    (_graph(characters=("Sheldon",), place="the bedroom", action="smiling"),
     "Sheldon is smiling at the bedroom."),
    (_graph(characters=("Amy", "Raj"), place="the room", action="talking"),
     "Amy and Raj are talking at the room."),
    (_graph(characters=("Penny",),
            relations=[(("character", "Penny"), "wearing", [("object", "shorts")])]),
     "Penny wearing shorts."),
    (_graph(characters=("Raj",),
            relations=[(("character", "Raj"), "holding",
                        [("object", "bottle"), ("object", "book")])]),
     "Raj holding bottle and book."),
    (_graph(characters=("Sheldon",),
            relations=[(("object", "board"), "behind", [("character", "Sheldon")])]),
     "Board behind Sheldon."),
    (_graph(characters=("Penny",),
            relations=[(("object", "chair"), "behind", [("character", "Penny")])]),
     "Chair, table and door behind Penny."),
]


def test_criterion_golden_template_rows():
    start = time.perf_counter()
    # row 10 needs three object subjects feeding one relation node
    multi = GOLDEN_ROWS[9][0]
    edges = list(multi.edges)
    for extra in ("table", "door"):
        edges.insert(-1, TypedEdge("object_relation", f"object:{extra}", "r0"))
    GOLDEN_ROWS[9] = (
        SceneGraph(characters=multi.characters, place=multi.place,
                   objects=("chair", "table", "door"), relations=multi.relations,
                   action=multi.action, edges=tuple(edges)),
        GOLDEN_ROWS[9][1],
    )
    for graph, expected in GOLDEN_ROWS:
        sentences = generate_description(graph).sentences
        assert expected in sentences, (expected, sentences)
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    _passed(f"golden template rows ({elapsed:.3f}s)")


# ---------------------------------------------------------------------------
# 2. Windowing grid against a brute-force oracle


def _window_oracle(words, window, stride, max_segments):
    n = max(1, math.ceil((len(words) - window) / stride) + 1)
    slices = [" ".join(words[j * stride : j * stride + window]) for j in range(n)]
    kept = slices[:max_segments]
    padding = max_segments - len(kept)
    return n, kept + [""] * padding, [False] * len(kept) + [True] * padding


def test_criterion_windowing_grid():
    start = time.perf_counter()
    for window in (50, 200):
        for stride in (25, 100):
            if stride > window:
                with pytest.raises(ValueError):
                    slice_document("word " * 10, window, stride, 5)
                continue
            for n_words in range(1, 501):
                words = [f"w{i}" for i in range(n_words)]
                segset = slice_document(" ".join(words), window, stride, 5)
                total, texts, padded = _window_oracle(words, window, stride, 5)
                assert segset.total_segments == total
                assert list(segset.texts) == texts
                assert [s.padded for s in segset.segments] == padded

    longest = slice_document(" ".join(f"w{i}" for i in range(1605)), 200, 100, 5)
    assert longest.total_segments == 16
    assert longest.n_real == 5
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0
    _passed(f"windowing grid vs oracle, 1605-word doc 16->5 ({elapsed:.3f}s)")


# ---------------------------------------------------------------------------
# 3. Loss and gradient


def _naive_ce(delta, c_star):
    exps = [math.exp(float(d)) for d in delta]
    return -math.log(exps[c_star] / math.fsum(exps))


def test_criterion_loss_and_gradient():
    rng = np.random.default_rng(97)
    config = MWConfig()

    for _ in range(1000):
        n_ca = int(rng.integers(2, 6))
        scores = BranchScores(
            read=rng.uniform(-8, 8, n_ca),
            observe=rng.uniform(-8, 8, n_ca),
            recall=rng.uniform(-8, 8, n_ca),
        )
        omega = rng.uniform(-8, 8, n_ca)
        c_star = int(rng.integers(n_ca))
        oracle = (
            0.06 * _naive_ce(scores.read, c_star)
            + 0.06 * _naive_ce(scores.observe, c_star)
            + 0.08 * _naive_ce(scores.recall, c_star)
            + 0.80 * _naive_ce(omega, c_star)
        )
        assert abs(mw_loss(scores, omega, c_star, config) - oracle) < 1e-9

    for n_ca in (2, 3, 4, 5):
        uniform = np.zeros(n_ca)
        scores = BranchScores(read=uniform, observe=uniform, recall=uniform)
        assert abs(mw_loss(scores, uniform, 0, config) - math.log(n_ca)) < 1e-9

    step = 1e-5
    for _ in range(50):
        n_ca = 4
        scores = BranchScores(
            read=rng.uniform(-3, 3, n_ca),
            observe=rng.uniform(-3, 3, n_ca),
            recall=rng.uniform(-3, 3, n_ca),
        )
        omega = rng.uniform(-3, 3, n_ca)
        c_star = int(rng.integers(n_ca))
        grads = mw_gradient(scores, omega, c_star, config)
        for name, grad in (("read", grads.read), ("observe", grads.observe),
                           ("recall", grads.recall), ("fused", grads.fused)):
            for i in range(n_ca):
                def loss_at(x):
                    vectors = {
                        "read": scores.read.copy(), "observe": scores.observe.copy(),
                        "recall": scores.recall.copy(), "fused": omega.copy(),
                    }
                    vectors[name][i] = x
                    perturbed = BranchScores(
                        read=vectors["read"], observe=vectors["observe"],
                        recall=vectors["recall"],
                    )
                    return mw_loss(perturbed, vectors["fused"], c_star, config)

                base = (omega if name == "fused" else getattr(scores, name))[i]
                numeric = (loss_at(base + step) - loss_at(base - step)) / (2 * step)
                denom = max(abs(numeric), abs(grad[i]), 1e-8)
                assert abs(numeric - grad[i]) / denom < 1e-4
    _passed("mw loss vs four-term oracle (1e-9), gradient vs central differences (1e-4)")


# ---------------------------------------------------------------------------
# 4. Fusion variants against straight-line oracles


def _ref_average(scores):
    return [(scores.read[c] + scores.observe[c] + scores.recall[c]) / 3.0
            for c in range(len(scores.read))]


def _ref_maximum(scores):
    return [max(scores.read[c], scores.observe[c], scores.recall[c])
            for c in range(len(scores.read))]


def _ref_fc(scores, head):
    return [
        head.weights[0] * scores.read[c] + head.weights[1] * scores.observe[c]
        + head.weights[2] * scores.recall[c] + head.bias
        for c in range(len(scores.read))
    ]


def _pick_recall(emb, per_segment, c):
    j_best, best = 0, -math.inf
    for j in range(emb.recall.shape[1]):
        if emb.recall_real[c][j] and per_segment[c][j] > best:
            best, j_best = per_segment[c][j], j
    return emb.recall[c, j_best]


def _ref_self_att(scores, emb, head):
    omega = []
    dim = emb.read.shape[1]
    for c in range(len(scores.read)):
        ys = [emb.read[c], emb.observe[c], _pick_recall(emb, scores.recall_per_segment, c)]
        u = [float(v) for y in ys for v in y]
        psi = [
            float(head.att_bias[m]) + sum(float(head.att_weights[m, k]) * u[k]
                                          for k in range(3 * dim))
            for m in range(3)
        ]
        fused = [sum(psi[m] * float(ys[m][d]) for m in range(3)) for d in range(dim)]
        omega.append(float(head.bias) + sum(float(head.weights[d]) * fused[d]
                                            for d in range(dim)))
    return omega


def _ref_qa_att(scores, emb, head):
    omega = []
    dim = emb.read.shape[1]
    for c in range(len(scores.read)):
        ys = [emb.read[c], emb.observe[c], _pick_recall(emb, scores.recall_per_segment, c)]
        psi = []
        for y in ys:
            acc = float(head.att_bias)
            acc += sum(float(head.att_weights[k]) * float(y[k]) for k in range(dim))
            acc += sum(float(head.att_weights[dim + k]) * float(emb.qa[c][k])
                       for k in range(dim))
            psi.append(acc)
        fused = [sum(psi[m] * float(ys[m][d]) for m in range(3)) for d in range(dim)]
        omega.append(float(head.bias) + sum(float(head.weights[d]) * fused[d]
                                            for d in range(dim)))
    return omega


def test_criterion_fusion_oracles():
    rng = np.random.default_rng(193)
    dim, n_seg = 12, 4
    self_head = init_fusion_head("self_att", dim=dim, rng=rng)
    qa_head = init_fusion_head("qa_att", dim=dim, rng=rng)
    fc_head = FusionHead(method="fc", weights=rng.normal(0, 1, 3), bias=0.2)

    for _ in range(1000):
        n_ca = int(rng.integers(2, 5))
        per_segment = rng.normal(0, 1, (n_ca, n_seg))
        real = rng.random((n_ca, n_seg)) < 0.7
        real[:, 0] = True
        per_segment = np.where(real, per_segment, np.nan)
        scores = BranchScores(
            read=rng.normal(0, 1, n_ca),
            observe=rng.normal(0, 1, n_ca),
            recall=np.nanmax(per_segment, axis=1),
            recall_per_segment=per_segment,
        )
        emb = BranchEmbeddings(
            read=rng.normal(0, 1, (n_ca, dim)),
            observe=rng.normal(0, 1, (n_ca, dim)),
            recall=rng.normal(0, 1, (n_ca, n_seg, dim)),
            recall_real=real,
            qa=rng.normal(0, 1, (n_ca, dim)),
        )
        for head, oracle in (
            (FusionHead(method="average"), _ref_average(scores)),
            (FusionHead(method="maximum"), _ref_maximum(scores)),
            (fc_head, _ref_fc(scores, fc_head)),
            (self_head, _ref_self_att(scores, emb, self_head)),
            (qa_head, _ref_qa_att(scores, emb, qa_head)),
        ):
            omega, _ = fuse(scores, head, emb)
            assert np.allclose(omega, oracle, atol=1e-12), head.method

        avg, _ = fuse(scores, FusionHead(method="average"))
        fc_uniform, _ = fuse(scores, uniform_fc_head(3))
        assert np.allclose(avg, fc_uniform, atol=1e-12)
    _passed("five fusion variants vs straight-line oracles (1e-12); uniform fc == average")


# ---------------------------------------------------------------------------
# 5. Character filter recovery


def _filter_corpus(rng, error_rate, n_scenes=100, track_len=20):
    cast = ["sheldon", "leonard", "penny", "amy", "raj"]
    scenes = []
    for s in range(n_scenes):
        true_name = cast[s % len(cast)]
        wrong_pool = [n for n in cast if n != true_name]
        n_wrong = round(error_rate * track_len)
        names = [true_name] * (track_len - n_wrong) + [
            str(rng.choice(wrong_pool)) for _ in range(n_wrong)
        ]
        rng.shuffle(names)
        detections = [
            CharacterDetection(frame_index=i, bbox=(100.0, 100.0, 40.0, 40.0),
                               name=name, knn_score=0.9)
            for i, name in enumerate(names)
        ]
        scenes.append((true_name, names, detections))
    return scenes


def _vote_oracle(names, majority=0.7):
    counts = {}
    for name in names:
        counts[name] = counts.get(name, 0) + 1
    best = sorted(counts, key=lambda n: (-counts[n], n))[0]
    return best if counts[best] / len(names) >= majority else UNKNOWN


def test_criterion_character_filter_recovery():
    rng = np.random.default_rng(211)
    for rate in (0.10, 0.20, 0.25):
        recovered = 0
        for true_name, names, detections in _filter_corpus(rng, rate):
            out = spatio_temporal_filter(detections, shots=[(0, len(names) - 1)])
            labels = {d.name for d in out}
            assert labels == {true_name}, (rate, labels)
            recovered += 1
        assert recovered == 100

    for true_name, names, detections in _filter_corpus(rng, 0.35):
        out = spatio_temporal_filter(detections, shots=[(0, len(names) - 1)])
        labels = {d.name for d in out}
        assert labels == {_vote_oracle(names)}, (names, labels)
    _passed("character filter: 100% recovery at <=25% errors; 70% rule exact at 35%")


# ---------------------------------------------------------------------------
# 6. Episode identification


def _episode_oracle(queries, store):
    votes, sims = {}, {}
    for q in queries:
        best, best_sim = None, -math.inf
        for row, episode in zip(store.rows, store.episode_ids):
            sim = float(row @ q / (np.linalg.norm(row) * np.linalg.norm(q)))
            if sim > best_sim:
                best, best_sim = episode, sim
        votes[best] = votes.get(best, 0) + 1
        sims[best] = sims.get(best, 0.0) + best_sim
    return sorted(votes, key=lambda e: (-votes[e], -sims[e], e))[0]


def test_criterion_episode_identification():
    rng = np.random.default_rng(223)
    dim, sigma = 32, 0.4
    episodes = [f"e{k}" for k in range(5)]
    centroids = {e: rng.normal(0, 1, dim) for e in episodes}
    rows, row_episodes = [], []
    for e in episodes:
        for _ in range(200):
            rows.append(centroids[e] + rng.normal(0, sigma, dim))
            row_episodes.append(e)
    store = FrameIndexStore(
        rows=np.array(rows),
        episode_ids=tuple(row_episodes),
        scene_ids=tuple(f"sc{i}" for i in range(len(rows))),
        frame_indices=tuple(range(len(rows))),
    )

    agree = impl_correct = oracle_correct = 0
    n_queries = 100
    for i in range(n_queries):
        true = episodes[i % 5]
        queries = np.array([centroids[true] + rng.normal(0, sigma, dim) for _ in range(5)])
        got = identify_episode(queries, store)
        want = _episode_oracle(queries, store)
        agree += got == want
        impl_correct += got == true
        oracle_correct += want == true

    assert agree == n_queries
    assert oracle_correct / n_queries >= 0.95  # the noise level admits the target
    assert impl_correct / n_queries >= 0.95
    _passed(
        f"episode id: 100% oracle agreement, {impl_correct}% true-episode accuracy"
    )


# ---------------------------------------------------------------------------
# 7. End-to-end harness


def test_criterion_end_to_end(tmp_path):
    start = time.perf_counter()
    keyword_dir = tmp_path / "with_keywords"
    build_corpus(keyword_dir, n_scenes=400, n_episodes=5, seed=42)
    report = evaluate(load_corpus(keyword_dir), EvalConfig())
    assert report.total == 400
    assert report.overall >= 0.95

    stripped_dir = tmp_path / "stripped"
    build_corpus(stripped_dir, n_scenes=400, n_episodes=5, keywords=False, seed=42)
    chance = evaluate(load_corpus(stripped_dir), EvalConfig())
    band = 1.96 * math.sqrt(0.25 * 0.75 / 400)
    assert abs(chance.overall - 0.25) <= band, chance.overall
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    _passed(
        f"end-to-end: keywords {report.overall:.3f} >= 0.95, stripped "
        f"{chance.overall:.3f} in 0.25 +/- {band:.3f} ({elapsed:.1f}s)"
    )


# ---------------------------------------------------------------------------
# 8. Ablation plumbing


def test_criterion_ablation_plumbing(small_corpus_dir):
    corpus = load_corpus(small_corpus_dir)
    subsets = [
        ("read",), ("observe",), ("recall",),
        ("read", "observe"), ("observe", "recall"), ("read", "recall"),
        ("read", "observe", "recall"),
    ]
    reports = {}
    for subset in subsets:
        report = evaluate(corpus, EvalConfig(branches=subset))
        assert report.total == len(corpus.samples)
        assert set(report.samples[0].scores) == set(subset)
        reports[subset] = report

    full = reports[("read", "observe", "recall")]
    no_recall = reports[("read", "observe")]
    for a, b in zip(full.samples, no_recall.samples):
        assert a.scores["read"] == b.scores["read"]
        assert a.scores["observe"] == b.scores["observe"]
    _passed("ablation plumbing: 7 branch subsets run; recall toggle isolates branches")
