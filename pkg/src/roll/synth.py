"""Synthetic fixture corpora with keyword-recoverable gold answers.

Each generated sample plants a globally unique keyword in the gold
candidate, the subtitles, the question, and the scene's object triplet, so
the bag-of-words mock scorer can recover the answer from every branch.
With keywords stripped, no context separates the candidates and accuracy
falls to chance.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .characters import FaceGallery, save_gallery
from .ingest import (
    DetectedTriplet,
    FaceObservation,
    FrameAnnotation,
    QASample,
    SceneAnnotations,
    save_dataset,
    save_scenes,
)
from .recall import FrameIndexStore, save_frame_index

CAST = ("sheldon", "leonard", "penny", "amy", "raj", "howard", "bernadette", "stuart")
ACTIONS = ("smiling", "talking", "holding a bag", "walking", "eating dinner")
PLACES = ("a lab", "the cinema", "a restaurant", "penny's apartment", "an office")
RELATIONS = ("holding", "wearing", "near", "behind")

_FILLER = (
    "the story continues with a quiet evening at the university while everyone "
    "debates dinner plans and an experiment goes slightly wrong before the group "
    "settles the argument over comics and physics and friendship"
).split()


@dataclass
class CorpusPaths:
    root: Path
    dataset: Path
    scenes: Path
    kb_dir: Path
    features: Path
    gallery: Path


def make_gallery(rng: np.random.Generator, per_class: int = 10) -> tuple[FaceGallery, dict[str, np.ndarray]]:
    centers = {name: rng.normal(0.0, 1.0, 128) for name in CAST}
    embeddings = []
    names = []
    for name, center in centers.items():
        for _ in range(per_class):
            embeddings.append(center + rng.normal(0.0, 0.05, 128))
            names.append(name)
    return FaceGallery(embeddings=np.array(embeddings), names=tuple(names)), centers


def _make_scene(
    rng: np.random.Generator,
    scene_id: str,
    episode_id: str,
    centers: dict[str, np.ndarray],
    object_label: str,
    n_frames: int = 6,
) -> SceneAnnotations:
    pair = rng.choice(len(CAST), size=2, replace=False)
    char_a, char_b = CAST[pair[0]], CAST[pair[1]]
    place = PLACES[int(rng.integers(len(PLACES)))]
    action = ACTIONS[int(rng.integers(len(ACTIONS)))]
    box_a = (100.0, 100.0, 60.0, 80.0)
    box_b = (420.0, 120.0, 60.0, 80.0)

    frames = []
    for i in range(n_frames):
        faces = (
            FaceObservation(bbox=box_a, embedding=centers[char_a] + rng.normal(0, 0.05, 128)),
            FaceObservation(bbox=box_b, embedding=centers[char_b] + rng.normal(0, 0.05, 128)),
        )
        place_scores = {place: 0.8 + 0.1 * rng.random()}
        for other in rng.choice(PLACES, size=2, replace=False):
            place_scores.setdefault(str(other), 0.1 * rng.random())
        triplets = ()
        if i == 0:
            triplets = (
                DetectedTriplet(
                    subject_label="man",
                    relation_label=RELATIONS[int(rng.integers(len(RELATIONS)))],
                    object_label=object_label,
                    subject_bbox=box_a,
                    object_bbox=(200.0, 200.0, 40.0, 40.0),
                    score=0.9,
                ),
                DetectedTriplet(
                    subject_label="chair",
                    relation_label="behind",
                    object_label="table",
                    subject_bbox=(10.0, 10.0, 30.0, 30.0),
                    object_bbox=(50.0, 50.0, 30.0, 30.0),
                    score=0.5,
                ),
            )
        frames.append(
            FrameAnnotation(frame_index=i, faces=faces, place_scores=place_scores, triplets=triplets)
        )
    action_scores = {action: 0.9}
    for other in rng.choice(ACTIONS, size=2, replace=False):
        action_scores.setdefault(str(other), 0.2 * rng.random())
    return SceneAnnotations(
        scene_id=scene_id,
        episode_id=episode_id,
        frames=tuple(frames),
        action_scores=action_scores,
    )


def _kb_document(rng: np.random.Generator, episode_id: str, n_words: int = 260) -> str:
    words = [f"episode {episode_id} recap"]
    while sum(len(w.split()) for w in words) < n_words:
        words.append(str(rng.choice(_FILLER)))
    return " ".join(words)


def build_corpus(
    root,
    n_scenes: int = 20,
    n_candidates: int = 4,
    n_episodes: int = 4,
    feature_dim: int = 64,
    keywords: bool = True,
    seed: int = 0,
) -> CorpusPaths:
    """Write a complete corpus (dataset, scenes, KB, features, gallery) under root."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    gallery, centers = make_gallery(rng)
    episode_ids = [f"e{k + 1:02d}" for k in range(n_episodes)]
    episode_centroids = {e: rng.normal(0.0, 1.0, feature_dim) for e in episode_ids}

    samples = []
    scenes = []
    rows, row_meta = [], []
    for idx in range(n_scenes):
        scene_id = f"sc{idx:04d}"
        episode_id = episode_ids[idx % n_episodes]
        keyword = f"kw{idx}x{int(rng.integers(0, n_candidates))}"
        gold = int(keyword.rsplit("x", 1)[1])
        candidates = tuple(
            f"the kw{idx}x{c} one" if keywords else f"choice number {c}"
            for c in range(n_candidates)
        )
        if not keywords:
            # distinct but signal-free candidates; gold stays uniform
            keyword = "something"

        object_label = keyword if keywords else "bottle"
        scene = _make_scene(rng, scene_id, episode_id, centers, object_label)
        scenes.append(scene)

        for frame in scene.frames:
            rows.append(episode_centroids[episode_id] + rng.normal(0, 0.05, feature_dim))
            row_meta.append((episode_id, scene_id, frame.frame_index))

        question = (
            f"Which option matches {keyword}?" if keywords else "Which option matches best?"
        )
        subtitles = (
            f"Well, I heard about {keyword} at the lab." if keywords
            else "Well, I heard about it at the lab."
        )
        samples.append(
            QASample(
                sample_id=f"s{idx:04d}",
                scene_id=scene_id,
                question=question,
                candidates=candidates,
                gold_index=gold,
                category=("visual", "textual", "temporal", "knowledge")[idx % 4],
                subtitles=subtitles,
            )
        )

    paths = CorpusPaths(
        root=root,
        dataset=root / "qa.jsonl",
        scenes=root / "scenes.jsonl",
        kb_dir=root / "kb",
        features=root / "features.npy",
        gallery=root / "gallery.npy",
    )
    save_dataset(samples, paths.dataset)
    save_scenes(scenes, paths.scenes)

    paths.kb_dir.mkdir(exist_ok=True)
    for episode_id in episode_ids:
        (paths.kb_dir / f"{episode_id}.txt").write_text(
            _kb_document(rng, episode_id), encoding="utf-8"
        )

    store = FrameIndexStore(
        rows=np.array(rows),
        episode_ids=tuple(m[0] for m in row_meta),
        scene_ids=tuple(m[1] for m in row_meta),
        frame_indices=tuple(m[2] for m in row_meta),
    )
    save_frame_index(store, paths.features)
    save_gallery(gallery, paths.gallery)
    return paths
