"""End-to-end evaluation: run the three branches over a corpus and report accuracy.

The report is a pure function of (corpus bytes, config, backend); sample
work can fan out over threads but aggregation is order-independent and two
runs serialize byte-identically.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .characters import (
    CENTROID_DISTANCE_THRESHOLD,
    KNN_SCORE_THRESHOLD,
    SHOT_SIMILARITY_THRESHOLD,
    TRACK_MAJORITY,
    FaceGallery,
    load_gallery,
    scene_characters,
)
from .describe import generate_description
from .fusion import (
    AVERAGE,
    DEFAULT_BETAS,
    FC,
    FUSION_METHODS,
    QA_ATT,
    SELF_ATT,
    BranchEmbeddings,
    FusionHead,
    MWConfig,
    fuse,
    init_fusion_head,
    uniform_fc_head,
)
from .ingest import KnowledgeBase, QASample, SceneAnnotations, load_dataset, load_knowledge_base, load_scenes
from .places import PlaceVocabulary, aggregate_place, load_place_vocabulary
from .recall import (
    MAX_SEGMENTS,
    STRIDE,
    WINDOW_LENGTH,
    FrameIndexStore,
    identify_episode,
    load_frame_index,
    slice_document,
)
from .scenegraph import IOU_THRESHOLD, scene_graph_from_annotations
from .scoring import (
    BRANCHES,
    EMBEDDING_DIM,
    BranchScores,
    LinearHead,
    assemble_qa,
    embed_inputs,
    load_head,
    make_backend,
    observe_inputs,
    read_inputs,
    recall_inputs,
    reference_head,
)

logger = logging.getLogger(__name__)

CATEGORY_ORDER = ("visual", "textual", "temporal", "knowledge")


@dataclass(frozen=True)
class PipelineConfig:
    knn_threshold: float = KNN_SCORE_THRESHOLD
    shot_threshold: float = SHOT_SIMILARITY_THRESHOLD
    dist_threshold: float = CENTROID_DISTANCE_THRESHOLD
    majority: float = TRACK_MAJORITY
    iou_threshold: float = IOU_THRESHOLD
    window: int = WINDOW_LENGTH
    stride: int = STRIDE
    max_segments: int = MAX_SEGMENTS


@dataclass(frozen=True)
class EvalConfig:
    branches: tuple[str, ...] = BRANCHES
    fusion_method: str = FC
    betas: tuple[float, float, float, float] = DEFAULT_BETAS
    backend: str = "mock"
    dim: int = EMBEDDING_DIM
    jobs: int = 1
    seed: int = 0
    exclude_own_scene: bool = True
    heads_dir: str | None = None
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        unknown = [b for b in self.branches if b not in BRANCHES]
        if unknown or not self.branches:
            raise ValueError(f"branches must be a non-empty subset of {BRANCHES}")
        if self.fusion_method not in FUSION_METHODS:
            raise ValueError(f"unknown fusion method {self.fusion_method!r}")
        if self.fusion_method in (SELF_ATT, QA_ATT) and set(self.branches) != set(BRANCHES):
            raise ValueError(f"{self.fusion_method} fusion needs all three branches")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["branches"] = list(self.branches)
        data["betas"] = list(self.betas)
        return data

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


@dataclass
class Corpus:
    samples: list[QASample]
    scenes: dict[str, SceneAnnotations]
    kb: KnowledgeBase
    store: FrameIndexStore | None = None
    gallery: FaceGallery | None = None
    place_vocab: PlaceVocabulary | None = None


def load_corpus(data_root) -> Corpus:
    """Load a corpus from the documented on-disk layout (docs/formats.md)."""
    root = Path(data_root)
    store = None
    if (root / "features.npy").exists():
        store = load_frame_index(root / "features.npy")
    gallery = None
    if (root / "gallery.npy").exists():
        gallery = load_gallery(root / "gallery.npy")
    vocab_path = root / "places.txt"
    vocab = load_place_vocabulary(vocab_path if vocab_path.exists() else None)
    return Corpus(
        samples=load_dataset(root / "qa.jsonl"),
        scenes=load_scenes(root / "scenes.jsonl"),
        kb=load_knowledge_base(root / "kb"),
        store=store,
        gallery=gallery,
        place_vocab=vocab,
    )


@dataclass
class SampleResult:
    sample_id: str
    category: str
    gold: int
    predicted: int
    correct: bool
    scores: dict[str, list[float]]
    omega: list[float]
    recall_masked: bool = False


@dataclass
class EvalReport:
    total: int
    correct: int
    overall: float
    categories: dict[str, dict]
    warnings: dict[str, int]
    config: dict
    config_fingerprint: str
    backend: str
    samples: list[SampleResult]

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "total": self.total,
            "correct": self.correct,
            "overall": self.overall,
            "categories": self.categories,
            "warnings": self.warnings,
            "config": self.config,
            "config_fingerprint": self.config_fingerprint,
            "backend": self.backend,
            "samples": [asdict(s) for s in self.samples],
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=indent)

    def summary(self) -> str:
        lines = [f"overall  {self.overall:.4f}  ({self.correct}/{self.total})"]
        for category in CATEGORY_ORDER:
            if category in self.categories:
                entry = self.categories[category]
                lines.append(
                    f"{category:<9}{entry['accuracy']:.4f}  ({entry['correct']}/{entry['total']})"
                )
        if self.warnings.get("recall_masked"):
            lines.append(f"recall masked on {self.warnings['recall_masked']} samples")
        return "\n".join(lines)


def _scene_description(corpus: Corpus, scene_id: str, cfg: PipelineConfig) -> str:
    scene = corpus.scenes[scene_id]
    if corpus.gallery is None:
        raise ValueError("observe branch needs a face gallery")
    if corpus.store is not None and scene.frames and scene.frames[0].frame_feature is None:
        scene = corpus.store.attach_to(scene)
    chars, _ = scene_characters(
        corpus.gallery,
        scene,
        knn_threshold=cfg.knn_threshold,
        shot_threshold=cfg.shot_threshold,
        dist_threshold=cfg.dist_threshold,
        majority=cfg.majority,
    )
    vocab = corpus.place_vocab or load_place_vocabulary()
    place = aggregate_place(list(scene.frames), vocab)
    graph = scene_graph_from_annotations(scene, chars, place, cfg.iou_threshold)
    return generate_description(graph).text


def _scene_segments(corpus: Corpus, scene_id: str, cfg: PipelineConfig, exclude_own: bool):
    """(episode_id, SegmentSet) for the recall branch, or None when unresolvable."""
    if corpus.store is None:
        return None
    try:
        queries = corpus.store.scene_features(scene_id)
        episode = identify_episode(
            queries, corpus.store, exclude_scene_id=scene_id if exclude_own else None
        )
        document = corpus.kb.document(episode)
    except (ValueError, KeyError) as exc:
        logger.warning("recall masked for scene %s: %s", scene_id, exc)
        return None
    return episode, slice_document(document, cfg.window, cfg.stride, cfg.max_segments)


def _default_heads(config: EvalConfig, dim: int) -> dict[str, LinearHead]:
    if config.heads_dir:
        heads = {}
        for branch in BRANCHES:
            head, _ = load_head(Path(config.heads_dir) / f"{branch}.npy")
            heads[branch] = head
        return heads
    return {branch: reference_head(dim) for branch in BRANCHES}


def _default_fusion(config: EvalConfig, dim: int) -> FusionHead:
    if config.fusion_method == FC:
        return uniform_fc_head(len(config.branches))
    if config.fusion_method in (SELF_ATT, QA_ATT):
        return init_fusion_head(
            config.fusion_method, dim=dim, rng=np.random.default_rng(config.seed)
        )
    return FusionHead(method=config.fusion_method)


def evaluate(corpus: Corpus, config: EvalConfig, backend=None, fusion_head=None, heads=None) -> EvalReport:
    """Score every sample and aggregate per-category accuracy."""
    backend = backend or make_backend(config.backend, config.dim)
    dim = getattr(backend, "dim", config.dim)
    heads = heads or _default_heads(config, dim)
    fusion_head = fusion_head or _default_fusion(config, dim)
    needs_embeddings = config.fusion_method in (SELF_ATT, QA_ATT)
    cfg = config.pipeline

    descriptions: dict[str, str] = {}
    segments: dict[str, tuple | None] = {}
    needed_scenes = sorted({s.scene_id for s in corpus.samples})
    for scene_id in needed_scenes:
        if "observe" in config.branches:
            descriptions[scene_id] = _scene_description(corpus, scene_id, cfg)
        if "recall" in config.branches:
            segments[scene_id] = _scene_segments(corpus, scene_id, cfg, config.exclude_own_scene)

    def run_sample(sample: QASample) -> SampleResult:
        scores = BranchScores()
        embeddings = {}
        masked = False

        if "read" in config.branches:
            inputs = read_inputs(sample.subtitles, sample.question, sample.candidates)
            emb = embed_inputs(backend, inputs)
            scores.read = emb @ heads["read"].weights + heads["read"].bias
            embeddings["read"] = emb
        if "observe" in config.branches:
            inputs = observe_inputs(
                descriptions[sample.scene_id], sample.question, sample.candidates
            )
            emb = embed_inputs(backend, inputs)
            scores.observe = emb @ heads["observe"].weights + heads["observe"].bias
            embeddings["observe"] = emb
        if "recall" in config.branches:
            seg = segments.get(sample.scene_id)
            if seg is None:
                masked = True
            else:
                _, segment_set = seg
                inputs = recall_inputs(sample.question, sample.candidates, segment_set)
                real = [i for i in inputs if not i.padded]
                emb = embed_inputs(backend, real)
                values = emb @ heads["recall"].weights + heads["recall"].bias
                n_ca = len(sample.candidates)
                matrix = np.full((n_ca, cfg.max_segments), np.nan)
                emb_matrix = np.zeros((n_ca, cfg.max_segments, emb.shape[1]))
                real_mask = np.zeros((n_ca, cfg.max_segments), dtype=bool)
                for item, value, row in zip(real, values, emb):
                    matrix[item.candidate_index, item.segment_index] = value
                    emb_matrix[item.candidate_index, item.segment_index] = row
                    real_mask[item.candidate_index, item.segment_index] = True
                scores.recall = np.array([np.nanmax(matrix[c]) for c in range(n_ca)])
                scores.recall_per_segment = matrix
                embeddings["recall"] = (emb_matrix, real_mask)

        enabled = [b for b in config.branches if getattr(scores, b) is not None]
        omega, predicted = _fuse_sample(
            sample, scores, embeddings, enabled, config, fusion_head, backend, needs_embeddings
        )

        return SampleResult(
            sample_id=sample.sample_id,
            category=sample.category,
            gold=sample.gold_index,
            predicted=predicted,
            correct=predicted == sample.gold_index,
            scores={b: [round(v, 12) for v in getattr(scores, b)] for b in enabled},
            omega=[round(v, 12) for v in omega],
            recall_masked=masked,
        )

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(run_sample, corpus.samples))
    else:
        results = [run_sample(sample) for sample in corpus.samples]

    return _aggregate(results, config, getattr(backend, "name", config.backend))


def _fuse_sample(sample, scores, embeddings, enabled, config, fusion_head, backend, needs_embeddings):
    if needs_embeddings and "recall" in embeddings:
        emb_matrix, real_mask = embeddings["recall"]
        qa = None
        if config.fusion_method == QA_ATT:
            qa = np.stack([
                backend.embed(assemble_qa(sample.question, answer))
                for answer in sample.candidates
            ])
        branch_emb = BranchEmbeddings(
            read=embeddings["read"],
            observe=embeddings["observe"],
            recall=emb_matrix,
            recall_real=real_mask,
            qa=qa,
        )
        return fuse(scores, fusion_head, branch_emb, branches=enabled)

    if config.fusion_method in (SELF_ATT, QA_ATT):
        # attention fusion cannot run with the recall branch masked; fall back
        # to averaging the available branch scores
        matrix = scores.stacked(enabled)
        omega = matrix.mean(axis=1)
        return omega, int(np.argmax(omega))

    head = fusion_head
    if config.fusion_method == FC and len(enabled) != len(config.branches):
        head = uniform_fc_head(len(enabled))
    return fuse(scores, head, branches=enabled)


def _aggregate(results: list[SampleResult], config: EvalConfig, backend_name: str) -> EvalReport:
    total = len(results)
    correct = sum(r.correct for r in results)
    categories = {}
    for category in CATEGORY_ORDER:
        relevant = [r for r in results if r.category == category]
        if relevant:
            good = sum(r.correct for r in relevant)
            categories[category] = {
                "total": len(relevant),
                "correct": good,
                "accuracy": good / len(relevant),
            }
    masked = sum(r.recall_masked for r in results)
    return EvalReport(
        total=total,
        correct=correct,
        overall=correct / total if total else 0.0,
        categories=categories,
        warnings={"recall_masked": masked},
        config=config.to_dict(),
        config_fingerprint=config.fingerprint(),
        backend=backend_name,
        samples=results,
    )
