"""External knowledge acquisition: episode identification and document slicing.

The episode behind a scene is found by nearest-neighbour voting of its frame
features against an index of all frames, and the episode's plot document is
cut into overlapping fixed-width word windows for the scorer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import SceneAnnotations, with_frame_features

WINDOW_LENGTH = 200  # words
STRIDE = 100  # words
MAX_SEGMENTS = 5


@dataclass(frozen=True)
class FrameIndexStore:
    rows: np.ndarray  # (n_frames, D_f)
    episode_ids: tuple[str, ...]
    scene_ids: tuple[str, ...]
    frame_indices: tuple[int, ...]

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        object.__setattr__(self, "rows", rows)
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise ValueError("frame index store must be a non-empty 2-d matrix")
        if not (len(self.episode_ids) == len(self.scene_ids) == len(self.frame_indices) == rows.shape[0]):
            raise ValueError("frame index metadata length mismatch")
        norms = np.linalg.norm(rows, axis=1)
        if np.any(norms == 0):
            raise ValueError("frame index store contains zero-norm rows")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def scene_features(self, scene_id: str) -> np.ndarray:
        """Rows of one scene in frame order."""
        picks = [
            (fi, i) for i, (sid, fi) in enumerate(zip(self.scene_ids, self.frame_indices))
            if sid == scene_id
        ]
        picks.sort()
        return self.rows[[i for _, i in picks]]

    def attach_to(self, scene: SceneAnnotations) -> SceneAnnotations:
        features = self.scene_features(scene.scene_id)
        return with_frame_features(scene, features)


@dataclass(frozen=True)
class Segment:
    text: str
    padded: bool


@dataclass(frozen=True)
class SegmentSet:
    segments: tuple[Segment, ...]  # always max_segments entries
    window: int
    stride: int
    doc_words: int
    total_segments: int  # pre-truncation count, clamped to >= 1

    @property
    def texts(self) -> tuple[str, ...]:
        return tuple(s.text for s in self.segments)

    @property
    def n_real(self) -> int:
        return sum(1 for s in self.segments if not s.padded)


def load_frame_index(matrix_path, sidecar_path=None) -> FrameIndexStore:
    matrix_path = Path(matrix_path)
    sidecar_path = Path(sidecar_path) if sidecar_path else matrix_path.with_suffix(".json")
    rows = np.load(matrix_path)
    meta = json.loads(Path(sidecar_path).read_text(encoding="utf-8"))["rows"]
    return FrameIndexStore(
        rows=rows,
        episode_ids=tuple(m["episode_id"] for m in meta),
        scene_ids=tuple(m["scene_id"] for m in meta),
        frame_indices=tuple(int(m["frame_index"]) for m in meta),
    )


def save_frame_index(store: FrameIndexStore, matrix_path, sidecar_path=None) -> None:
    matrix_path = Path(matrix_path)
    sidecar_path = Path(sidecar_path) if sidecar_path else matrix_path.with_suffix(".json")
    np.save(matrix_path, store.rows)
    meta = [
        {"episode_id": e, "scene_id": s, "frame_index": f}
        for e, s, f in zip(store.episode_ids, store.scene_ids, store.frame_indices)
    ]
    sidecar_path.write_text(
        json.dumps({"schema_version": 1, "dim": store.dim, "rows": meta}), encoding="utf-8"
    )


def identify_episode(
    scene_frames,
    store: FrameIndexStore,
    exclude_scene_id: str | None = None,
) -> str:
    """Vote for the episode whose frames are most similar to the query frames.

    Each query frame casts one vote for the episode of its nearest store row
    by cosine similarity. Vote-count ties break by higher summed similarity,
    then lexicographic episode id. Pass exclude_scene_id to keep the query
    scene's own rows out of the search.
    """
    queries = np.asarray(scene_frames, dtype=np.float64)
    if queries.ndim == 1:
        queries = queries[None, :]
    if queries.shape[0] == 0:
        raise ValueError("no query frames")
    if queries.shape[1] != store.dim:
        raise ValueError(f"query dimension {queries.shape[1]} != store dimension {store.dim}")

    mask = np.ones(store.rows.shape[0], dtype=bool)
    if exclude_scene_id is not None:
        mask = np.array([sid != exclude_scene_id for sid in store.scene_ids])
        if not mask.any():
            raise ValueError("store has no rows outside the excluded scene")

    rows = store.rows[mask]
    episode_ids = [e for e, keep in zip(store.episode_ids, mask) if keep]
    row_norms = np.linalg.norm(rows, axis=1)

    votes: dict[str, int] = {}
    sims: dict[str, float] = {}
    for query in queries:
        qnorm = np.linalg.norm(query)
        if qnorm == 0:
            raise ValueError("zero-norm query frame")
        similarity = rows @ query / (row_norms * qnorm)
        best = int(np.argmax(similarity))
        episode = episode_ids[best]
        votes[episode] = votes.get(episode, 0) + 1
        sims[episode] = sims.get(episode, 0.0) + float(similarity[best])
    return min(votes, key=lambda e: (-votes[e], -sims[e], e))


def slice_document(
    doc: str,
    window: int = WINDOW_LENGTH,
    stride: int = STRIDE,
    max_segments: int = MAX_SEGMENTS,
) -> SegmentSet:
    """Slide a word window over the document with the given stride.

    Produces ceil((L - window) / stride) + 1 segments (at least one; short
    documents yield themselves whole), truncated to the first max_segments and
    padded with empty placeholder segments up to exactly max_segments.
    """
    if window <= 0 or stride <= 0:
        raise ValueError("window and stride must be positive")
    if stride > window:
        raise ValueError("stride must not exceed the window length")
    if max_segments <= 0:
        raise ValueError("max_segments must be positive")

    words = doc.split()
    n_words = len(words)
    total = max(1, -((window - n_words) // stride) + 1)  # ceil((L - W) / r) + 1, clamped
    segments = [
        Segment(text=" ".join(words[j * stride : j * stride + window]), padded=False)
        for j in range(min(total, max_segments))
    ]
    while len(segments) < max_segments:
        segments.append(Segment(text="", padded=True))
    return SegmentSet(
        segments=tuple(segments),
        window=window,
        stride=stride,
        doc_words=n_words,
        total_segments=total,
    )
