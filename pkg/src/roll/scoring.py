"""Branch input assembly, scorer backends, and per-branch linear heads.

Every branch feeds the scorer one flat string per candidate (and per document
segment in the recall branch) with literal [CLS] and [SEP] markers. Backends
map a string to a fixed-size embedding; a linear head turns embeddings into
scores. The recall score of a candidate is the max over its real segments.
"""

from __future__ import annotations

import hashlib
import json
import re
import socket
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .recall import SegmentSet

EMBEDDING_DIM = 768

READ = "read"
OBSERVE = "observe"
RECALL = "recall"
BRANCHES = (READ, OBSERVE, RECALL)

_TOKEN = re.compile(r"[a-z0-9']+")


class ScorerError(RuntimeError):
    """Backend failure, tagged with the input that caused it."""


@dataclass(frozen=True)
class BranchInput:
    branch: str
    candidate_index: int
    text: str
    segment_index: int | None = None
    padded: bool = False


@dataclass(frozen=True)
class LinearHead:
    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))

    def score(self, embedding: np.ndarray) -> float:
        return float(self.weights @ embedding + self.bias)


def _flatten(parts: list[str]) -> str:
    """Concatenate, collapsing whitespace runs so empty parts leave one space."""
    return " ".join(" ".join(parts).split())


def assemble_read(subtitles: str, question: str, answer: str, candidate_index: int = 0) -> BranchInput:
    text = _flatten(["[CLS]", subtitles, question, "[SEP]", answer, "[SEP]"])
    return BranchInput(branch=READ, candidate_index=candidate_index, text=text)


def assemble_observe(description: str, question: str, answer: str, candidate_index: int = 0) -> BranchInput:
    text = _flatten(["[CLS]", description, question, "[SEP]", answer, "[SEP]"])
    return BranchInput(branch=OBSERVE, candidate_index=candidate_index, text=text)


def assemble_recall(
    question: str,
    answer: str,
    segment: str,
    candidate_index: int = 0,
    segment_index: int = 0,
    padded: bool = False,
) -> BranchInput:
    # the segment rides in the answer block, after the candidate answer
    text = _flatten(["[CLS]", question, "[SEP]", answer, segment, "[SEP]"])
    return BranchInput(
        branch=RECALL,
        candidate_index=candidate_index,
        text=text,
        segment_index=segment_index,
        padded=padded,
    )


def assemble_qa(question: str, answer: str) -> str:
    """Question-plus-answer string used by the QA-attention fusion."""
    return _flatten(["[CLS]", question, "[SEP]", answer, "[SEP]"])


def read_inputs(subtitles: str, question: str, candidates) -> list[BranchInput]:
    return [assemble_read(subtitles, question, a, c) for c, a in enumerate(candidates)]


def observe_inputs(description: str, question: str, candidates) -> list[BranchInput]:
    return [assemble_observe(description, question, a, c) for c, a in enumerate(candidates)]


def recall_inputs(question: str, candidates, segments: SegmentSet) -> list[BranchInput]:
    """One input per (candidate, segment) pair, padded segments flagged."""
    return [
        assemble_recall(question, a, seg.text, c, j, seg.padded)
        for c, a in enumerate(candidates)
        for j, seg in enumerate(segments.segments)
    ]


# ---------------------------------------------------------------------------
# Backends


class MockBackend:
    """Deterministic bag-of-words hashing embedder for tests and fixtures.

    Coordinate 0 carries the number of distinct tokens shared between the
    context block (before the first [SEP]) and the answer block (between the
    first and second [SEP]); the remaining coordinates accumulate md5-hashed
    token counts. With the reference head (weight 1 on coordinate 0) the
    score equals the context-answer token overlap. Documented in
    docs/scorer-protocol.md so golden values are portable.
    """

    def __init__(self, dim: int = EMBEDDING_DIM):
        if dim < 2:
            raise ValueError("mock backend needs at least 2 dimensions")
        self.dim = dim
        self.name = "mock"
        self.calls = 0

    def embed(self, text: str) -> np.ndarray:
        self.calls += 1
        context, answer = split_blocks(text)
        vec = np.zeros(self.dim)
        vec[0] = float(len(set(context) & set(answer)))
        for token in context + answer:
            digest = hashlib.md5(token.encode("utf-8")).digest()
            index = 1 + int.from_bytes(digest[:8], "big") % (self.dim - 1)
            vec[index] += 1.0
        return vec


def split_blocks(text: str) -> tuple[list[str], list[str]]:
    """Tokenize the two [SEP]-delimited blocks of an assembled input string."""
    parts = text.split("[SEP]")
    context = _TOKEN.findall(parts[0].replace("[CLS]", " ").lower())
    answer = _TOKEN.findall(parts[1].lower()) if len(parts) > 1 else []
    return context, answer


def reference_head(dim: int = EMBEDDING_DIM) -> LinearHead:
    """Head recovering the mock backend's overlap coordinate."""
    weights = np.zeros(dim)
    weights[0] = 1.0
    return LinearHead(weights=weights, bias=0.0)


class RemoteBackend:
    """Client for the newline-delimited JSON scorer protocol (docs/scorer-protocol.md)."""

    def __init__(self, address: str, timeout: float = 30.0):
        host, _, port = address.rpartition(":")
        self._address = (host or "127.0.0.1", int(port))
        self._timeout = timeout
        self._lock = threading.Lock()
        self._sock = None
        self._reader = None
        self._next_id = 0
        self.name = f"remote:{address}"
        self.dim = None
        self._connect()

    def _connect(self):
        self._sock = socket.create_connection(self._address, timeout=self._timeout)
        self._reader = self._sock.makefile("r", encoding="utf-8")
        handshake = json.loads(self._reader.readline())
        if handshake.get("type") != "handshake":
            raise ScorerError(f"expected handshake, got {handshake!r}")
        self.dim = int(handshake["dim"])
        self.name = f"remote:{handshake.get('name', 'scorer')}"

    def embed(self, text: str) -> np.ndarray:
        with self._lock:
            self._next_id += 1
            request_id = self._next_id
            payload = json.dumps({"id": request_id, "text": text}) + "\n"
            self._sock.sendall(payload.encode("utf-8"))
            line = self._reader.readline()
            if not line:
                raise ScorerError("scorer connection closed")
            response = json.loads(line)
        if response.get("id") != request_id:
            raise ScorerError(f"response id {response.get('id')} != request id {request_id}")
        if "error" in response:
            raise ScorerError(f"scorer error: {response['error']}")
        embedding = np.asarray(response["embedding"], dtype=np.float64)
        if embedding.shape != (self.dim,):
            raise ScorerError(f"embedding dimension {embedding.shape} != ({self.dim},)")
        return embedding

    def close(self):
        with self._lock:
            if self._sock is not None:
                self._sock.close()
                self._sock = None


def make_backend(descriptor: str, dim: int = EMBEDDING_DIM):
    """Build a backend from a CLI-style descriptor: "mock" or "remote:<host>:<port>"."""
    if descriptor == "mock":
        return MockBackend(dim=dim)
    if descriptor.startswith("remote:"):
        return RemoteBackend(descriptor.split(":", 1)[1])
    raise ValueError(f"unknown backend {descriptor!r}")


# ---------------------------------------------------------------------------
# Scoring


def embed_inputs(backend, inputs: list[BranchInput]) -> np.ndarray:
    """Embed every input, wrapping backend failures with the input identity."""
    rows = []
    for item in inputs:
        try:
            rows.append(np.asarray(backend.embed(item.text), dtype=np.float64))
        except ScorerError:
            raise
        except Exception as exc:
            raise ScorerError(
                f"backend {getattr(backend, 'name', '?')} failed on "
                f"branch={item.branch} candidate={item.candidate_index} "
                f"segment={item.segment_index}: {exc}"
            ) from exc
    return np.stack(rows) if rows else np.zeros((0, getattr(backend, "dim", EMBEDDING_DIM)))


def score_branch(backend, head: LinearHead, inputs: list[BranchInput]) -> np.ndarray:
    """Per-candidate scores; recall inputs are max-reduced over real segments."""
    if inputs and inputs[0].branch == RECALL:
        scores, _ = score_recall(backend, head, inputs)
        return scores
    embeddings = embed_inputs(backend, inputs)
    scores = embeddings @ head.weights + head.bias
    n_candidates = 1 + max((i.candidate_index for i in inputs), default=-1)
    out = np.empty(n_candidates)
    for item, value in zip(inputs, scores):
        out[item.candidate_index] = value
    return out


def score_recall(
    backend, head: LinearHead, inputs: list[BranchInput]
) -> tuple[np.ndarray, np.ndarray]:
    """Recall scores: (per-candidate max over real segments, per-segment matrix).

    Padded segments are never sent to the backend and the matrix holds NaN in
    their cells.
    """
    real = [item for item in inputs if not item.padded]
    embeddings = embed_inputs(backend, real)
    values = embeddings @ head.weights + head.bias if len(real) else np.zeros(0)

    n_candidates = 1 + max((i.candidate_index for i in inputs), default=-1)
    n_segments = 1 + max((i.segment_index or 0 for i in inputs), default=-1)
    matrix = np.full((n_candidates, n_segments), np.nan)
    for item, value in zip(real, values):
        matrix[item.candidate_index, item.segment_index] = value
    scores = np.array([np.nanmax(matrix[c]) for c in range(n_candidates)])
    return scores, matrix


@dataclass
class BranchScores:
    """Per-candidate scores from the enabled branches."""

    read: np.ndarray | None = None
    observe: np.ndarray | None = None
    recall: np.ndarray | None = None
    recall_per_segment: np.ndarray | None = None

    def stacked(self, branches=BRANCHES) -> np.ndarray:
        """(n_candidates, n_branches) matrix in the given branch order."""
        columns = [getattr(self, b) for b in branches if getattr(self, b) is not None]
        if not columns:
            raise ValueError("no branch scores available")
        return np.stack(columns, axis=1)


# ---------------------------------------------------------------------------
# Head persistence (binary weights with a JSON sidecar)


def save_head(head: LinearHead, branch: str, matrix_path) -> None:
    matrix_path = Path(matrix_path)
    np.save(matrix_path, head.weights)
    matrix_path.with_suffix(".json").write_text(
        json.dumps({"schema_version": 1, "dim": len(head.weights), "branch": branch,
                    "bias": head.bias}),
        encoding="utf-8",
    )


def load_head(matrix_path) -> tuple[LinearHead, str]:
    matrix_path = Path(matrix_path)
    weights = np.load(matrix_path)
    meta = json.loads(matrix_path.with_suffix(".json").read_text(encoding="utf-8"))
    if meta["dim"] != len(weights):
        raise ValueError(f"head sidecar dim {meta['dim']} != weights length {len(weights)}")
    return LinearHead(weights=weights, bias=float(meta["bias"])), meta["branch"]
