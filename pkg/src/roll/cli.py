"""Command-line interface: per-stage inspection commands plus the eval harness."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .describe import generate_description
from .evaluate import Corpus, EvalConfig, PipelineConfig, evaluate, load_corpus
from .fusion import (
    DEFAULT_BETAS,
    MWConfig,
    BranchEmbeddings,
    FusionHead,
    fuse,
    init_fusion_head,
    uniform_fc_head,
)
from .characters import scene_characters
from .places import aggregate_place, load_place_vocabulary
from .recall import identify_episode, slice_document
from .scenegraph import (
    graph_to_record,
    load_graph,
    save_graph,
    scene_graph_from_annotations,
)
from .scoring import BranchScores, make_backend
from .training import TrainingSample, train

_METHOD_ALIASES = {"self-att": "self_att", "qa-att": "qa_att"}


def _data_root(args) -> Path:
    root = args.data_root or os.environ.get("ROLL_DATA_ROOT")
    if not root:
        raise SystemExit("no data root: pass --data-root or set ROLL_DATA_ROOT")
    return Path(root)


def _parse_betas(text: str) -> tuple[float, float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 4:
        raise SystemExit("betas must be four comma-separated numbers")
    return tuple(parts)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".toml"):
        try:
            import tomllib
        except ImportError:
            raise SystemExit("TOML configs need Python 3.11+; use JSON instead")
        return tomllib.loads(text)
    return json.loads(text)


def _scene(corpus: Corpus, scene_id: str):
    try:
        scene = corpus.scenes[scene_id]
    except KeyError:
        raise SystemExit(f"unknown scene {scene_id!r}")
    if corpus.store is not None and scene.frames and scene.frames[0].frame_feature is None:
        scene = corpus.store.attach_to(scene)
    return scene


def _emit(payload, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_characters(args) -> int:
    corpus = load_corpus(_data_root(args))
    scene = _scene(corpus, args.scene)
    if corpus.gallery is None:
        raise SystemExit("corpus has no face gallery")
    chars, detections = scene_characters(
        corpus.gallery,
        scene,
        knn_threshold=args.knn_threshold,
        shot_threshold=args.shot_threshold,
        dist_threshold=args.dist_threshold,
        majority=args.majority,
    )
    _emit(
        {
            "scene_id": args.scene,
            "characters": list(chars.names),
            "detections": [
                {
                    "frame_index": d.frame_index,
                    "bbox": list(d.bbox),
                    "name": d.name,
                    "knn_score": d.knn_score,
                }
                for d in detections
            ],
        },
        args.out,
    )
    return 0


def cmd_place(args) -> int:
    corpus = load_corpus(_data_root(args))
    scene = _scene(corpus, args.scene)
    vocab = corpus.place_vocab or load_place_vocabulary()
    prediction = aggregate_place(list(scene.frames), vocab)
    _emit(
        {"scene_id": args.scene, "place": prediction.label, "score": prediction.accumulated_score},
        args.out,
    )
    return 0


def _build_graph(corpus: Corpus, args):
    scene = _scene(corpus, args.scene)
    if corpus.gallery is None:
        raise SystemExit("corpus has no face gallery")
    chars, _ = scene_characters(corpus.gallery, scene)
    vocab = corpus.place_vocab or load_place_vocabulary()
    place = aggregate_place(list(scene.frames), vocab)
    return scene_graph_from_annotations(scene, chars, place, args.iou_threshold)


def cmd_graph(args) -> int:
    corpus = load_corpus(_data_root(args))
    graph = _build_graph(corpus, args)
    if args.out:
        save_graph(graph, args.out)
    else:
        _emit(graph_to_record(graph), None)
    return 0


def cmd_describe(args) -> int:
    if args.graph:
        graph = load_graph(args.graph)
    else:
        if not args.scene:
            raise SystemExit("describe needs --scene or --graph")
        corpus = load_corpus(_data_root(args))
        graph = _build_graph(corpus, args)
    print(generate_description(graph).text)
    return 0


def cmd_recall(args) -> int:
    corpus = load_corpus(_data_root(args))
    if corpus.store is None:
        raise SystemExit("corpus has no frame feature index")
    queries = corpus.store.scene_features(args.scene)
    episode = identify_episode(
        queries, corpus.store, exclude_scene_id=args.scene if args.exclude_own else None
    )
    segments = slice_document(
        corpus.kb.document(episode), args.wl, args.stride, args.max_segments
    )
    _emit(
        {
            "scene_id": args.scene,
            "episode_id": episode,
            "segments": [
                {"index": j, "padded": s.padded, "text": s.text}
                for j, s in enumerate(segments.segments)
            ],
        },
        args.out,
    )
    return 0


def cmd_fuse(args) -> int:
    method = _METHOD_ALIASES.get(args.method, args.method)
    payload = json.loads(Path(args.scores).read_text(encoding="utf-8"))
    scores = BranchScores(
        read=np.asarray(payload["read"], dtype=np.float64),
        observe=np.asarray(payload["observe"], dtype=np.float64),
        recall=np.asarray(payload["recall"], dtype=np.float64),
        recall_per_segment=(
            np.asarray(payload["recall_per_segment"], dtype=np.float64)
            if "recall_per_segment" in payload
            else None
        ),
    )
    embeddings = None
    if args.embeddings:
        data = np.load(args.embeddings)
        embeddings = BranchEmbeddings(
            read=data["read"],
            observe=data["observe"],
            recall=data["recall"],
            recall_real=data["recall_real"].astype(bool),
            qa=data["qa"] if "qa" in data else None,
        )
    if method == "fc":
        head = uniform_fc_head(3)
    elif method in ("self_att", "qa_att"):
        head = init_fusion_head(method, dim=embeddings.read.shape[1] if embeddings else 768)
    else:
        head = FusionHead(method=method)
    omega, predicted = fuse(scores, head, embeddings)
    _emit({"omega": [float(v) for v in omega], "predicted": predicted}, args.out)
    return 0


def cmd_eval(args) -> int:
    overrides = _load_config_file(args.config)
    pipeline = PipelineConfig(**overrides.get("pipeline", {}))
    config = EvalConfig(
        branches=tuple(args.branches.split(",")) if args.branches else tuple(
            overrides.get("branches", ("read", "observe", "recall"))
        ),
        fusion_method=_METHOD_ALIASES.get(args.fusion, args.fusion),
        betas=_parse_betas(args.betas) if args.betas else tuple(
            overrides.get("betas", DEFAULT_BETAS)
        ),
        backend=args.backend,
        jobs=args.jobs,
        seed=args.seed,
        heads_dir=args.heads,
        pipeline=pipeline,
    )
    corpus = load_corpus(_data_root(args))
    report = evaluate(corpus, config)
    if args.report:
        Path(args.report).write_text(report.to_json(indent=2) + "\n", encoding="utf-8")
    print(report.summary())
    if args.assert_min_accuracy is not None and report.overall < args.assert_min_accuracy:
        print(
            f"accuracy {report.overall:.4f} below required {args.assert_min_accuracy}",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_train_fusion(args) -> int:
    method = _METHOD_ALIASES.get(args.method, args.method)
    corpus = load_corpus(_data_root(args))
    config = EvalConfig(
        fusion_method="fc" if method in ("average", "maximum") else method,
        betas=_parse_betas(args.betas),
        backend=args.backend,
        seed=args.seed,
    )
    batch = _training_batch(corpus, config)
    state = train(
        batch,
        method=method,
        config=MWConfig(*config.betas),
        epochs_single=args.epochs_single,
        epochs_joint=args.epochs_joint,
        lr=args.lr,
        momentum=args.momentum,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .scoring import save_head

    for name, head in state.heads.items():
        save_head(head, name, out / f"{name}.npy")
    if state.fusion.weights is not None:
        np.save(out / "fusion_w.npy", state.fusion.weights)
    summary = {"method": method, "history": state.history}
    (out / "training.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    for entry in state.history:
        print(f"{entry['phase']}: loss={entry['loss']:.6f}")
    return 0


def _training_batch(corpus: Corpus, config: EvalConfig) -> list[TrainingSample]:
    """Cache branch embeddings for every sample with the configured backend."""
    from .evaluate import _scene_description, _scene_segments
    from .scoring import assemble_qa, embed_inputs, observe_inputs, read_inputs, recall_inputs

    backend = make_backend(config.backend, config.dim)
    batch = []
    descriptions = {}
    segments = {}
    for sample in corpus.samples:
        sid = sample.scene_id
        if sid not in descriptions:
            descriptions[sid] = _scene_description(corpus, sid, config.pipeline)
            segments[sid] = _scene_segments(corpus, sid, config.pipeline, config.exclude_own_scene)
        if segments[sid] is None:
            continue
        _, segment_set = segments[sid]
        read_emb = embed_inputs(backend, read_inputs(sample.subtitles, sample.question, sample.candidates))
        observe_emb = embed_inputs(
            backend, observe_inputs(descriptions[sid], sample.question, sample.candidates)
        )
        rec_inputs = recall_inputs(sample.question, sample.candidates, segment_set)
        real = [i for i in rec_inputs if not i.padded]
        rec_emb = embed_inputs(backend, real)
        n_ca = len(sample.candidates)
        dim = read_emb.shape[1]
        recall_matrix = np.zeros((n_ca, config.pipeline.max_segments, dim))
        real_mask = np.zeros((n_ca, config.pipeline.max_segments), dtype=bool)
        for item, row in zip(real, rec_emb):
            recall_matrix[item.candidate_index, item.segment_index] = row
            real_mask[item.candidate_index, item.segment_index] = True
        qa = np.stack([
            backend.embed(assemble_qa(sample.question, answer)) for answer in sample.candidates
        ])
        batch.append(
            TrainingSample(
                embeddings=BranchEmbeddings(
                    read=read_emb, observe=observe_emb, recall=recall_matrix,
                    recall_real=real_mask, qa=qa,
                ),
                gold=sample.gold_index,
            )
        )
    if not batch:
        raise SystemExit("no trainable samples (recall unresolvable everywhere)")
    return batch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roll", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--data-root", default=None, help="corpus directory (or ROLL_DATA_ROOT)")
        p.add_argument("--out", default=None, help="write JSON here instead of stdout")

    p = sub.add_parser("characters", help="per-scene character detections")
    add_common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--knn-threshold", type=float, default=0.5)
    p.add_argument("--shot-threshold", type=float, default=0.9)
    p.add_argument("--dist-threshold", type=float, default=50.0)
    p.add_argument("--majority", type=float, default=0.7)
    p.set_defaults(func=cmd_characters)

    p = sub.add_parser("place", help="scene place prediction")
    add_common(p)
    p.add_argument("--scene", required=True)
    p.set_defaults(func=cmd_place)

    p = sub.add_parser("graph", help="build the scene graph")
    add_common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("describe", help="generate the scene description")
    add_common(p)
    p.add_argument("--scene", default=None)
    p.add_argument("--graph", default=None, help="describe a stored graph JSON instead")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("recall", help="identify the episode and slice its plot")
    add_common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--wl", type=int, default=200)
    p.add_argument("--stride", type=int, default=100)
    p.add_argument("--max-segments", type=int, default=5)
    p.add_argument("--exclude-own", action="store_true", default=True)
    p.add_argument("--no-exclude-own", dest="exclude_own", action="store_false")
    p.set_defaults(func=cmd_recall)

    p = sub.add_parser("fuse", help="fuse branch scores from a JSON file")
    add_common(p)
    p.add_argument("--method", required=True,
                   choices=["average", "maximum", "self-att", "qa-att", "fc"])
    p.add_argument("--scores", required=True, help="JSON with read/observe/recall arrays")
    p.add_argument("--embeddings", default=None, help="npz with branch embeddings (attention)")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="run the full pipeline and report accuracy")
    add_common(p)
    p.add_argument("--config", default=None, help="JSON (or TOML) config file")
    p.add_argument("--branches", default=None, help="comma list, e.g. read,observe")
    p.add_argument("--fusion", default="fc",
                   choices=["average", "maximum", "self-att", "qa-att", "fc"])
    p.add_argument("--betas", default=None, help="four comma-separated MW weights")
    p.add_argument("--backend", default="mock", help='"mock" or "remote:<host>:<port>"')
    p.add_argument("--heads", default=None, help="directory of trained head weights")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None, help="write the full JSON report here")
    p.add_argument("--assert-min-accuracy", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train-fusion", help="train branch heads and the fusion layer")
    p.add_argument("--data-root", default=None, help="corpus directory (or ROLL_DATA_ROOT)")
    p.add_argument("--out", default="heads", help="directory for trained weights")
    p.add_argument("--method", default="fc",
                   choices=["average", "maximum", "self-att", "qa-att", "fc"])
    p.add_argument("--betas", default="0.06,0.06,0.08,0.80")
    p.add_argument("--backend", default="mock")
    p.add_argument("--epochs-single", type=int, default=50)
    p.add_argument("--epochs-joint", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_fusion)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
