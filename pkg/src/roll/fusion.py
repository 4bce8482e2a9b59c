"""Branch-score fusion and the modality-weighting training loss.

Five fusion variants produce the final candidate score vector: plain average,
elementwise maximum, a linear layer over the stacked branch scores, and two
attention mechanisms that re-weight the branch embeddings before a final
linear scoring layer. The modality-weighting loss is a beta-weighted sum of
the per-branch and fused cross-entropies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scoring import BranchScores

AVERAGE = "average"
MAXIMUM = "maximum"
SELF_ATT = "self_att"
QA_ATT = "qa_att"
FC = "fc"
FUSION_METHODS = (AVERAGE, MAXIMUM, SELF_ATT, QA_ATT, FC)

DEFAULT_BETAS = (0.06, 0.06, 0.08, 0.80)


@dataclass(frozen=True)
class MWConfig:
    beta_read: float = DEFAULT_BETAS[0]
    beta_observe: float = DEFAULT_BETAS[1]
    beta_recall: float = DEFAULT_BETAS[2]
    beta_fused: float = DEFAULT_BETAS[3]

    def __post_init__(self):
        betas = self.as_tuple()
        if any(b < 0 for b in betas):
            raise ValueError("betas must be non-negative")
        if abs(sum(betas) - 1.0) > 1e-9:
            raise ValueError(f"betas must sum to 1, got {sum(betas)}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.beta_read, self.beta_observe, self.beta_recall, self.beta_fused)


@dataclass
class FusionHead:
    """Parameters for one fusion method; unused fields stay None."""

    method: str
    weights: np.ndarray | None = None  # w_c: (n_branches,) for fc, (D_h,) for attention
    bias: float = 0.0
    att_weights: np.ndarray | None = None  # W_self (3, 3*D_h) or w_att (2*D_h,)
    att_bias: np.ndarray | float | None = None

    def __post_init__(self):
        if self.method not in FUSION_METHODS:
            raise ValueError(f"unknown fusion method {self.method!r}")


@dataclass
class BranchEmbeddings:
    """Scorer embeddings needed by the attention fusion methods."""

    read: np.ndarray  # (n_candidates, D_h)
    observe: np.ndarray  # (n_candidates, D_h)
    recall: np.ndarray  # (n_candidates, max_segments, D_h)
    recall_real: np.ndarray  # (n_candidates, max_segments) bool, False on padding
    qa: np.ndarray | None = None  # (n_candidates, D_h) for qa_att


def init_fusion_head(
    method: str,
    n_branches: int = 3,
    dim: int = 768,
    rng: np.random.Generator | None = None,
) -> FusionHead:
    """Zero biases, small uniform weights scaled by 1/sqrt(fan-in)."""
    if method in (AVERAGE, MAXIMUM):
        return FusionHead(method=method)
    rng = rng or np.random.default_rng(0)
    if method == FC:
        bound = 1.0 / np.sqrt(n_branches)
        return FusionHead(method=FC, weights=rng.uniform(-bound, bound, n_branches), bias=0.0)
    bound = 1.0 / np.sqrt(dim)
    weights = rng.uniform(-bound, bound, dim)
    if method == SELF_ATT:
        att_bound = 1.0 / np.sqrt(3 * dim)
        return FusionHead(
            method=SELF_ATT,
            weights=weights,
            bias=0.0,
            att_weights=rng.uniform(-att_bound, att_bound, (3, 3 * dim)),
            att_bias=np.zeros(3),
        )
    att_bound = 1.0 / np.sqrt(2 * dim)
    return FusionHead(
        method=QA_ATT,
        weights=weights,
        bias=0.0,
        att_weights=rng.uniform(-att_bound, att_bound, 2 * dim),
        att_bias=0.0,
    )


def uniform_fc_head(n_branches: int = 3) -> FusionHead:
    """fc head equal to the average fusion."""
    return FusionHead(method=FC, weights=np.full(n_branches, 1.0 / n_branches), bias=0.0)


def recall_argmax_embeddings(embeddings: BranchEmbeddings, per_segment: np.ndarray) -> np.ndarray:
    """Recall embedding per candidate at its best real segment."""
    picked = []
    for c in range(per_segment.shape[0]):
        row = np.where(embeddings.recall_real[c], per_segment[c], -np.inf)
        picked.append(embeddings.recall[c, int(np.argmax(row))])
    return np.stack(picked)


def fuse(
    scores: BranchScores,
    head: FusionHead,
    embeddings: BranchEmbeddings | None = None,
    branches=None,
) -> tuple[np.ndarray, int]:
    """Fused score vector and the predicted candidate (ties to lowest index)."""
    matrix = scores.stacked(branches) if branches else scores.stacked()

    if head.method == AVERAGE:
        omega = matrix.mean(axis=1)
    elif head.method == MAXIMUM:
        omega = matrix.max(axis=1)
    elif head.method == FC:
        if head.weights is None or len(head.weights) != matrix.shape[1]:
            raise ValueError("fc weights do not match the enabled branch count")
        omega = matrix @ head.weights + head.bias
    elif head.method in (SELF_ATT, QA_ATT):
        omega = _attention_fuse(scores, head, embeddings)
    else:
        raise ValueError(f"unknown fusion method {head.method!r}")
    return omega, int(np.argmax(omega))


def _attention_fuse(scores: BranchScores, head: FusionHead, embeddings) -> np.ndarray:
    if embeddings is None:
        raise ValueError(f"{head.method} fusion requires branch embeddings")
    if head.method == QA_ATT and embeddings.qa is None:
        raise ValueError("qa_att fusion requires the question-answer embedding")
    if scores.recall_per_segment is None:
        raise ValueError(f"{head.method} fusion requires per-segment recall scores")

    y_recall = recall_argmax_embeddings(embeddings, scores.recall_per_segment)
    omega = np.empty(embeddings.read.shape[0])
    for c in range(len(omega)):
        ys = (embeddings.read[c], embeddings.observe[c], y_recall[c])
        if head.method == SELF_ATT:
            psi = head.att_weights @ np.concatenate(ys) + head.att_bias
        else:
            psi = np.array([
                float(head.att_weights @ np.concatenate([y, embeddings.qa[c]]) + head.att_bias)
                for y in ys
            ])
        y_fused = psi[0] * ys[0] + psi[1] * ys[1] + psi[2] * ys[2]
        omega[c] = head.weights @ y_fused + head.bias
    return omega


def cross_entropy(delta, c_star: int) -> float:
    """Multi-class cross-entropy -log softmax(delta)[c_star], overflow-safe."""
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(np.isnan(delta)):
        raise ValueError("NaN score input")
    if not 0 <= c_star < len(delta):
        raise ValueError(f"correct-answer index {c_star} out of range")
    shifted = delta - delta.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[c_star])


def softmax(delta) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float64)
    shifted = np.exp(delta - delta.max())
    return shifted / shifted.sum()


def mw_loss(scores: BranchScores, omega, c_star: int, config: MWConfig) -> float:
    """Beta-weighted sum of the three branch losses and the fused loss."""
    beta_r, beta_o, beta_ll, beta_w = config.as_tuple()
    return (
        beta_r * cross_entropy(scores.read, c_star)
        + beta_o * cross_entropy(scores.observe, c_star)
        + beta_ll * cross_entropy(scores.recall, c_star)
        + beta_w * cross_entropy(omega, c_star)
    )


@dataclass
class MWGradients:
    read: np.ndarray
    observe: np.ndarray
    recall: np.ndarray
    fused: np.ndarray


def _ce_gradient(delta, c_star: int) -> np.ndarray:
    grad = softmax(delta)
    grad[c_star] -= 1.0
    return grad


def mw_gradient(scores: BranchScores, omega, c_star: int, config: MWConfig) -> MWGradients:
    """Analytic gradients of mw_loss with respect to each score vector."""
    beta_r, beta_o, beta_ll, beta_w = config.as_tuple()
    return MWGradients(
        read=beta_r * _ce_gradient(scores.read, c_star),
        observe=beta_o * _ce_gradient(scores.observe, c_star),
        recall=beta_ll * _ce_gradient(scores.recall, c_star),
        fused=beta_w * _ce_gradient(omega, c_star),
    )
