"""Character identification from face embeddings.

Faces are classified with a kNN vote over a gallery of known characters, then
cleaned up by a spatio-temporal filter: detections are grouped into per-shot
tracks by bounding-box centroid proximity and each track is renamed to its
majority character, or demoted to unknown when no name covers enough frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import UNKNOWN_LABEL
from .ingest import FACE_EMBEDDING_DIM, FrameAnnotation, SceneAnnotations

KNN_SCORE_THRESHOLD = 0.5
SHOT_SIMILARITY_THRESHOLD = 0.9
CENTROID_DISTANCE_THRESHOLD = 50.0  # pixels
TRACK_MAJORITY = 0.7


@dataclass(frozen=True)
class FaceGallery:
    embeddings: np.ndarray  # (n_entries, 128)
    names: tuple[str, ...]  # per-row character name

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        object.__setattr__(self, "embeddings", emb)
        if emb.ndim != 2 or emb.shape[1] != FACE_EMBEDDING_DIM:
            raise ValueError(f"gallery embeddings must be (n, {FACE_EMBEDDING_DIM})")
        if emb.shape[0] != len(self.names) or not self.names:
            raise ValueError("gallery names must match embedding rows and be non-empty")

    @property
    def n_classes(self) -> int:
        return len(set(self.names))


@dataclass(frozen=True)
class CharacterDetection:
    frame_index: int
    bbox: tuple[float, float, float, float]
    name: str
    knn_score: float


@dataclass(frozen=True)
class CharacterSet:
    """Scene characters for graph use: known names in first-seen order."""

    names: tuple[str, ...]
    boxes: dict[str, tuple[tuple[int, tuple[float, float, float, float]], ...]]
    unknown_boxes: tuple[tuple[int, tuple[float, float, float, float]], ...] = ()

    @property
    def n_characters(self) -> int:
        # count before unknowns are dropped for graph use
        return len(self.names) + (1 if self.unknown_boxes else 0)


def load_gallery(matrix_path, sidecar_path=None) -> FaceGallery:
    matrix_path = Path(matrix_path)
    sidecar_path = Path(sidecar_path) if sidecar_path else matrix_path.with_suffix(".json")
    embeddings = np.load(matrix_path)
    sidecar = json.loads(Path(sidecar_path).read_text(encoding="utf-8"))
    return FaceGallery(embeddings=embeddings, names=tuple(sidecar["names"]))


def save_gallery(gallery: FaceGallery, matrix_path, sidecar_path=None) -> None:
    matrix_path = Path(matrix_path)
    sidecar_path = Path(sidecar_path) if sidecar_path else matrix_path.with_suffix(".json")
    np.save(matrix_path, gallery.embeddings)
    sidecar_path.write_text(
        json.dumps({"schema_version": 1, "names": list(gallery.names)}), encoding="utf-8"
    )


def classify_face(
    gallery: FaceGallery, embedding, threshold: float = KNN_SCORE_THRESHOLD
) -> tuple[str, float]:
    """kNN vote with k equal to the number of gallery classes.

    Returns (name, vote fraction); the name degrades to unknown when the
    winning fraction is below the threshold. Vote ties break by smaller mean
    distance, then lexicographic name.
    """
    query = np.asarray(embedding, dtype=np.float64)
    if query.shape != (FACE_EMBEDDING_DIM,):
        raise ValueError(f"face embedding dimension {query.shape} != ({FACE_EMBEDDING_DIM},)")
    k = gallery.n_classes
    distances = np.linalg.norm(gallery.embeddings - query, axis=1)
    order = sorted(range(len(distances)), key=lambda i: (distances[i], gallery.names[i], i))
    nearest = order[:k]

    votes: dict[str, list[float]] = {}
    for i in nearest:
        votes.setdefault(gallery.names[i], []).append(distances[i])
    winner = min(votes, key=lambda name: (-len(votes[name]), np.mean(votes[name]), name))
    score = len(votes[winner]) / k
    if score < threshold:
        return UNKNOWN_LABEL, score
    return winner, score


def classify_scene_faces(
    gallery: FaceGallery, scene: SceneAnnotations, threshold: float = KNN_SCORE_THRESHOLD
) -> list[CharacterDetection]:
    detections = []
    for frame in scene.frames:
        for face in frame.faces:
            name, score = classify_face(gallery, face.embedding, threshold)
            detections.append(
                CharacterDetection(
                    frame_index=frame.frame_index, bbox=face.bbox, name=name, knn_score=score
                )
            )
    return detections


def detect_shots(
    frames: list[FrameAnnotation], sim_threshold: float = SHOT_SIMILARITY_THRESHOLD
) -> list[tuple[int, int]]:
    """Partition frames into shots; adjacent frames merge when their retrieval
    features have cosine similarity at or above the threshold.

    Returns inclusive (first_frame_index, last_frame_index) ranges.
    """
    if not frames:
        return []
    features = []
    for frame in frames:
        if frame.frame_feature is None:
            raise ValueError(f"frame {frame.frame_index} has no frame_feature")
        vec = np.asarray(frame.frame_feature, dtype=np.float64)
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise ValueError(f"frame {frame.frame_index} has zero-norm feature")
        features.append(vec / norm)

    shots = []
    start = frames[0].frame_index
    for prev, cur, fprev, fcur in zip(frames, frames[1:], features, features[1:]):
        if float(fprev @ fcur) < sim_threshold:
            shots.append((start, prev.frame_index))
            start = cur.frame_index
    shots.append((start, frames[-1].frame_index))
    return shots


def _centroid(bbox) -> tuple[float, float]:
    x, y, w, h = bbox
    return (x + w / 2.0, y + h / 2.0)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def spatio_temporal_filter(
    detections: list[CharacterDetection],
    shots: list[tuple[int, int]],
    dist_threshold: float = CENTROID_DISTANCE_THRESHOLD,
    majority: float = TRACK_MAJORITY,
) -> list[CharacterDetection]:
    """Re-assign detection names by per-shot track coherence.

    Within a shot, detections whose centroids lie within dist_threshold of
    each other (transitively) form one track. A track is renamed to its most
    frequent name when that name appears in at least the majority fraction of
    the track's frames, and to unknown otherwise. One detection per track per
    frame survives.
    """
    def shot_of(frame_index: int) -> int:
        for s, (lo, hi) in enumerate(shots):
            if lo <= frame_index <= hi:
                return s
        raise ValueError(f"detection frame {frame_index} outside all shots")

    by_shot: dict[int, list[CharacterDetection]] = {}
    for det in detections:
        by_shot.setdefault(shot_of(det.frame_index), []).append(det)

    survivors = []
    for shot_idx in sorted(by_shot):
        members = sorted(
            by_shot[shot_idx], key=lambda d: (d.frame_index, _centroid(d.bbox), d.name)
        )
        uf = _UnionFind(len(members))
        centroids = [_centroid(d.bbox) for d in members]
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                dist = float(np.hypot(
                    centroids[i][0] - centroids[j][0], centroids[i][1] - centroids[j][1]
                ))
                if dist <= dist_threshold:
                    uf.union(i, j)

        tracks: dict[int, list[int]] = {}
        for i in range(len(members)):
            tracks.setdefault(uf.find(i), []).append(i)

        for root in sorted(tracks):
            idxs = tracks[root]
            frames_present: dict[int, list[int]] = {}
            for i in idxs:
                frames_present.setdefault(members[i].frame_index, []).append(i)
            label = _track_label([members[i] for i in idxs], majority)
            for frame_index in sorted(frames_present):
                keep = max(
                    frames_present[frame_index],
                    key=lambda i: (members[i].knn_score, members[i].name, members[i].bbox),
                )
                survivors.append(replace(members[keep], name=label))

    survivors.sort(key=lambda d: (d.frame_index, _centroid(d.bbox), d.name))
    return survivors


def _track_label(track: list[CharacterDetection], majority: float) -> str:
    """Majority vote over the distinct frames the track occupies."""
    frames_with: dict[str, set[int]] = {}
    all_frames = set()
    for det in track:
        all_frames.add(det.frame_index)
        frames_with.setdefault(det.name, set()).add(det.frame_index)
    best = min(frames_with, key=lambda name: (-len(frames_with[name]), name))
    if best == UNKNOWN_LABEL:
        return UNKNOWN_LABEL
    if len(frames_with[best]) / len(all_frames) >= majority:
        return best
    return UNKNOWN_LABEL


def build_character_set(detections: list[CharacterDetection]) -> CharacterSet:
    """Collect filtered detections into a scene character set."""
    names: list[str] = []
    boxes: dict[str, list[tuple[int, tuple[float, float, float, float]]]] = {}
    unknown = []
    for det in detections:
        if det.name == UNKNOWN_LABEL:
            unknown.append((det.frame_index, det.bbox))
            continue
        if det.name not in boxes:
            names.append(det.name)
            boxes[det.name] = []
        boxes[det.name].append((det.frame_index, det.bbox))
    return CharacterSet(
        names=tuple(names),
        boxes={name: tuple(entries) for name, entries in boxes.items()},
        unknown_boxes=tuple(unknown),
    )


def scene_characters(
    gallery: FaceGallery,
    scene: SceneAnnotations,
    knn_threshold: float = KNN_SCORE_THRESHOLD,
    shot_threshold: float = SHOT_SIMILARITY_THRESHOLD,
    dist_threshold: float = CENTROID_DISTANCE_THRESHOLD,
    majority: float = TRACK_MAJORITY,
) -> tuple[CharacterSet, list[CharacterDetection]]:
    """Full character pipeline for one scene: classify, shot-split, filter."""
    detections = classify_scene_faces(gallery, scene, knn_threshold)
    shots = detect_shots(list(scene.frames), shot_threshold)
    filtered = spatio_temporal_filter(detections, shots, dist_threshold, majority)
    return build_character_set(filtered), filtered
