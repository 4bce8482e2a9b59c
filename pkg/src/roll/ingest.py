"""On-disk data formats: QA samples, subtitles, scene annotations, knowledge base.

All loaders are pure functions of file content and return immutable values,
so loaded corpora can be shared freely across threads. Schemas are documented
in docs/formats.md.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

FACE_EMBEDDING_DIM = 128

CATEGORIES = ("visual", "textual", "temporal", "knowledge", "none")


class FormatError(ValueError):
    """A data file violates its documented schema."""


@dataclass(frozen=True)
class QASample:
    sample_id: str
    scene_id: str
    question: str
    candidates: tuple[str, ...]
    gold_index: int
    category: str = "none"
    subtitles: str = ""

    def __post_init__(self):
        if not self.candidates:
            raise FormatError(f"sample {self.sample_id}: candidates empty")
        if not 0 <= self.gold_index < len(self.candidates):
            raise FormatError(
                f"sample {self.sample_id}: gold_index {self.gold_index} out of range"
            )
        if self.category not in CATEGORIES:
            raise FormatError(f"sample {self.sample_id}: bad category {self.category!r}")

    @property
    def n_candidates(self) -> int:
        return len(self.candidates)

    def to_record(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "sample_id": self.sample_id,
            "scene_id": self.scene_id,
            "question": self.question,
            "candidates": list(self.candidates),
            "gold_index": self.gold_index,
            "category": self.category,
            "subtitles": self.subtitles,
        }


@dataclass(frozen=True)
class FaceObservation:
    bbox: tuple[float, float, float, float]  # x, y, w, h in pixels
    embedding: np.ndarray

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float64)
        object.__setattr__(self, "embedding", emb)
        if emb.shape != (FACE_EMBEDDING_DIM,):
            raise FormatError(f"face embedding dimension {emb.shape} != ({FACE_EMBEDDING_DIM},)")
        _check_box(self.bbox)


@dataclass(frozen=True)
class DetectedTriplet:
    subject_label: str
    relation_label: str
    object_label: str
    subject_bbox: tuple[float, float, float, float]
    object_bbox: tuple[float, float, float, float]
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise FormatError("triplet score not finite")
        _check_box(self.subject_bbox)
        _check_box(self.object_bbox)


@dataclass(frozen=True)
class FrameAnnotation:
    frame_index: int
    faces: tuple[FaceObservation, ...] = ()
    place_scores: dict[str, float] = field(default_factory=dict)
    triplets: tuple[DetectedTriplet, ...] = ()
    frame_feature: np.ndarray | None = None  # scene-retrieval feature, D_f floats

    def __post_init__(self):
        # raw place classifiers emit at most 365 source labels
        if len(self.place_scores) > 365:
            raise FormatError(
                f"frame {self.frame_index}: {len(self.place_scores)} place scores (max 365)"
            )


@dataclass(frozen=True)
class SceneAnnotations:
    scene_id: str
    episode_id: str
    frames: tuple[FrameAnnotation, ...]
    fps_slow: float = 1.0
    action_scores: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        indices = [f.frame_index for f in self.frames]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise FormatError(f"scene {self.scene_id}: frames not ordered by frame_index")


@dataclass(frozen=True)
class KnowledgeBase:
    entries: dict[str, str]

    def document(self, episode_id: str) -> str:
        try:
            return self.entries[episode_id]
        except KeyError:
            raise KeyError(f"episode {episode_id!r} not in knowledge base") from None

    def word_count(self, episode_id: str) -> int:
        return len(self.document(episode_id).split())

    def ensure_covers(self, episode_ids) -> None:
        missing = sorted({e for e in episode_ids if e not in self.entries})
        if missing:
            raise FormatError(f"knowledge base missing episodes: {', '.join(missing)}")


def _check_box(bbox) -> None:
    if len(bbox) != 4:
        raise FormatError(f"bbox must be (x, y, w, h), got {bbox!r}")
    x, y, w, h = bbox
    if w <= 0 or h <= 0:
        raise FormatError(f"bbox has non-positive size: {bbox!r}")


# ---------------------------------------------------------------------------
# QA dataset (JSONL, one sample per line)

_QA_REQUIRED = ("sample_id", "scene_id", "question", "candidates", "gold_index")


def _sample_from_record(record: dict, lineno: int) -> QASample:
    for name in _QA_REQUIRED:
        if name not in record:
            raise FormatError(f"missing field: {name} @ line {lineno}")
    try:
        return QASample(
            sample_id=str(record["sample_id"]),
            scene_id=str(record["scene_id"]),
            question=str(record["question"]),
            candidates=tuple(str(c) for c in record["candidates"]),
            gold_index=int(record["gold_index"]),
            category=str(record.get("category", "none")),
            subtitles=str(record.get("subtitles", "")),
        )
    except FormatError as exc:
        raise FormatError(f"{exc} @ line {lineno}") from None


def load_dataset(path) -> list[QASample]:
    """Read a JSONL question file, preserving file order."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"malformed JSON @ line {lineno}: {exc.msg}") from None
            samples.append(_sample_from_record(record, lineno))
    return samples


def save_dataset(samples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.to_record(), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Subtitles

_SRT_TIMECODE = re.compile(
    r"^\s*\d{1,2}:\d{2}:\d{2}[.,]\d{1,3}\s*-->\s*\d{1,2}:\d{2}:\d{2}[.,]\d{1,3}"
)
_MARKUP_TAGS = re.compile(r"<[^>]*>")


def parse_subtitles(raw: str, format: str = "srt") -> str:
    """Flatten subtitle text. srt cues are joined with single spaces; plain is identity."""
    if format == "plain":
        return raw
    if format != "srt":
        raise ValueError(f"unknown subtitle format {format!r}")

    cues = []
    blocks = re.split(r"\n\s*\n", raw.lstrip("﻿"))
    cue_index = 0
    for block in blocks:
        lines = [ln.strip() for ln in block.splitlines() if ln.strip()]
        if not lines:
            continue
        cue_index += 1
        if lines[0].isdigit():
            lines = lines[1:]
        if not lines or "-->" not in lines[0]:
            raise FormatError(f"cue {cue_index}: missing srt timecode line")
        if not _SRT_TIMECODE.match(lines[0]):
            raise FormatError(f"cue {cue_index}: unparseable srt timecode {lines[0]!r}")
        text = " ".join(_MARKUP_TAGS.sub("", ln) for ln in lines[1:]).strip()
        if text:
            cues.append(" ".join(text.split()))
    return " ".join(cues)


# ---------------------------------------------------------------------------
# Knowledge base (directory of plain-text plot summaries, filename = episode id)


def load_knowledge_base(path) -> KnowledgeBase:
    root = Path(path)
    files = sorted(p for p in root.iterdir() if p.is_file() and not p.name.startswith("."))
    if not files:
        raise FormatError(f"knowledge base directory {root} is empty")
    entries: dict[str, str] = {}
    for p in files:
        episode_id = p.stem
        if episode_id in entries:
            raise FormatError(f"duplicate episode id {episode_id!r} in {root}")
        text = p.read_text(encoding="utf-8")
        if not text.strip():
            logger.warning("knowledge base entry %s is empty", episode_id)
        entries[episode_id] = text
    return KnowledgeBase(entries=entries)


# ---------------------------------------------------------------------------
# Scene annotations (JSONL, one scene per line)


def _frame_from_record(record: dict) -> FrameAnnotation:
    faces = tuple(
        FaceObservation(bbox=tuple(f["bbox"]), embedding=np.asarray(f["embedding"]))
        for f in record.get("faces", [])
    )
    triplets = tuple(
        DetectedTriplet(
            subject_label=t["subject"],
            relation_label=t["relation"],
            object_label=t["object"],
            subject_bbox=tuple(t["subject_bbox"]),
            object_bbox=tuple(t["object_bbox"]),
            score=float(t["score"]),
        )
        for t in record.get("triplets", [])
    )
    feature = record.get("frame_feature")
    return FrameAnnotation(
        frame_index=int(record["frame_index"]),
        faces=faces,
        place_scores={str(k): float(v) for k, v in record.get("place_scores", {}).items()},
        triplets=triplets,
        frame_feature=None if feature is None else np.asarray(feature, dtype=np.float64),
    )


def _scene_from_record(record: dict, lineno: int) -> SceneAnnotations:
    for name in ("scene_id", "episode_id", "frames"):
        if name not in record:
            raise FormatError(f"missing field: {name} @ line {lineno}")
    try:
        return SceneAnnotations(
            scene_id=str(record["scene_id"]),
            episode_id=str(record["episode_id"]),
            frames=tuple(_frame_from_record(f) for f in record["frames"]),
            fps_slow=float(record.get("fps_slow", 1.0)),
            action_scores={str(k): float(v) for k, v in record.get("action_scores", {}).items()},
        )
    except FormatError as exc:
        raise FormatError(f"{exc} @ line {lineno}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad scene record @ line {lineno}: {exc}") from None


def load_scenes(path) -> dict[str, SceneAnnotations]:
    """Read a scene-annotation JSONL file into a scene_id -> annotations map."""
    scenes: dict[str, SceneAnnotations] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"malformed JSON @ line {lineno}: {exc.msg}") from None
            scene = _scene_from_record(record, lineno)
            if scene.scene_id in scenes:
                raise FormatError(f"duplicate scene_id {scene.scene_id!r} @ line {lineno}")
            scenes[scene.scene_id] = scene
    return scenes


def scene_to_record(scene: SceneAnnotations) -> dict:
    frames = []
    for f in scene.frames:
        record = {
            "frame_index": f.frame_index,
            "faces": [
                {"bbox": list(face.bbox), "embedding": face.embedding.tolist()}
                for face in f.faces
            ],
            "place_scores": f.place_scores,
            "triplets": [
                {
                    "subject": t.subject_label,
                    "relation": t.relation_label,
                    "object": t.object_label,
                    "subject_bbox": list(t.subject_bbox),
                    "object_bbox": list(t.object_bbox),
                    "score": t.score,
                }
                for t in f.triplets
            ],
        }
        if f.frame_feature is not None:
            record["frame_feature"] = f.frame_feature.tolist()
        frames.append(record)
    return {
        "schema_version": SCHEMA_VERSION,
        "scene_id": scene.scene_id,
        "episode_id": scene.episode_id,
        "fps_slow": scene.fps_slow,
        "action_scores": scene.action_scores,
        "frames": frames,
    }


def save_scenes(scenes, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for scene in scenes:
            fh.write(json.dumps(scene_to_record(scene), sort_keys=True) + "\n")


def with_frame_features(scene: SceneAnnotations, features) -> SceneAnnotations:
    """Return a copy of the scene with per-frame retrieval features filled in."""
    if len(features) != len(scene.frames):
        raise ValueError(
            f"scene {scene.scene_id}: {len(features)} features for {len(scene.frames)} frames"
        )
    frames = tuple(
        replace(frame, frame_feature=np.asarray(feat, dtype=np.float64))
        for frame, feat in zip(scene.frames, features)
    )
    return replace(scene, frames=frames)
