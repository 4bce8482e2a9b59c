"""Scene place prediction by accumulating per-frame classifier scores."""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from . import UNKNOWN_LABEL
from .ingest import FrameAnnotation

TOP_SCORES_PER_FRAME = 5


@dataclass(frozen=True)
class PlaceVocabulary:
    labels: tuple[str, ...]

    def __post_init__(self):
        if UNKNOWN_LABEL not in self.labels:
            raise ValueError("place vocabulary must contain the unknown label")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("place vocabulary labels must be unique")

    def __contains__(self, label: str) -> bool:
        return label in self.labels


@dataclass(frozen=True)
class PlacePrediction:
    label: str
    accumulated_score: float


def load_place_vocabulary(path=None) -> PlaceVocabulary:
    """Read one label per line; the unknown label is appended if absent."""
    if path is None:
        text = resources.files("roll.data").joinpath("places.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    labels = [line.strip() for line in text.splitlines() if line.strip()]
    if UNKNOWN_LABEL not in labels:
        labels.append(UNKNOWN_LABEL)
    return PlaceVocabulary(labels=tuple(labels))


def aggregate_place(
    frames: list[FrameAnnotation],
    vocab: PlaceVocabulary,
    top_k: int = TOP_SCORES_PER_FRAME,
) -> PlacePrediction:
    """Sum each frame's top-k place scores per label and return the argmax.

    Ties break lexicographically, both at the per-frame top-k cut and for the
    final winner. An empty frame list predicts unknown with score 0.
    """
    contributions: dict[str, list[float]] = {}
    for frame in frames:
        for label, score in frame.place_scores.items():
            if math.isnan(score):
                raise ValueError(f"NaN place score for {label!r} in frame {frame.frame_index}")
            if label not in vocab:
                raise ValueError(f"place label {label!r} not in vocabulary")
        ranked = sorted(frame.place_scores.items(), key=lambda kv: (-kv[1], kv[0]))
        for label, score in ranked[:top_k]:
            contributions.setdefault(label, []).append(score)
    if not contributions:
        return PlacePrediction(label=UNKNOWN_LABEL, accumulated_score=0.0)
    # fsum is exactly rounded, so the result cannot depend on frame order
    totals = {label: math.fsum(sorted(values)) for label, values in contributions.items()}
    winner = min(totals, key=lambda label: (-totals[label], label))
    return PlacePrediction(label=winner, accumulated_score=totals[winner])
