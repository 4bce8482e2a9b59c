"""Two-phase gradient training of branch heads and the fusion head.

The scorer backends stay frozen: training operates on cached embeddings.
Phase one fits each branch's linear head on its own cross-entropy; phase two
fine-tunes the heads together with the fusion parameters under the
modality-weighting loss, using plain SGD with momentum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fusion import (
    AVERAGE,
    FC,
    MAXIMUM,
    MWConfig,
    QA_ATT,
    SELF_ATT,
    BranchEmbeddings,
    FusionHead,
    fuse,
    init_fusion_head,
    mw_gradient,
    mw_loss,
    softmax,
)
from .scoring import BranchScores, LinearHead

LEARNING_RATE = 0.001
MOMENTUM = 0.9


@dataclass
class TrainingSample:
    embeddings: BranchEmbeddings
    gold: int


@dataclass
class TrainState:
    heads: dict[str, LinearHead]
    fusion: FusionHead
    history: list[dict] = field(default_factory=list)


def _recall_argmax(sample: TrainingSample, head: LinearHead) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Per-segment recall scores, per-candidate max, and argmax segment index."""
    emb = sample.embeddings
    per_segment = emb.recall @ head.weights + head.bias  # (n_candidates, n_segments)
    masked = np.where(emb.recall_real, per_segment, -np.inf)
    j_max = [int(np.argmax(masked[c])) for c in range(masked.shape[0])]
    return per_segment, masked.max(axis=1), j_max


def branch_scores(heads: dict[str, LinearHead], sample: TrainingSample) -> tuple[BranchScores, list[int]]:
    emb = sample.embeddings
    per_segment, recall_max, j_max = _recall_argmax(sample, heads["recall"])
    masked = np.where(emb.recall_real, per_segment, np.nan)
    scores = BranchScores(
        read=emb.read @ heads["read"].weights + heads["read"].bias,
        observe=emb.observe @ heads["observe"].weights + heads["observe"].bias,
        recall=recall_max,
        recall_per_segment=masked,
    )
    return scores, j_max


def _zeros_like_params(heads, fusion) -> dict[str, np.ndarray]:
    grads = {}
    for name, head in heads.items():
        grads[f"{name}.w"] = np.zeros_like(head.weights)
        grads[f"{name}.b"] = np.zeros(1)
    if fusion.weights is not None:
        grads["fusion.w"] = np.zeros_like(fusion.weights)
        grads["fusion.b"] = np.zeros(1)
    if fusion.att_weights is not None:
        grads["fusion.aw"] = np.zeros_like(fusion.att_weights)
        grads["fusion.ab"] = np.zeros_like(np.atleast_1d(fusion.att_bias))
    return grads


def mw_objective(
    heads: dict[str, LinearHead],
    fusion: FusionHead,
    batch: list[TrainingSample],
    config: MWConfig,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean modality-weighting loss over the batch and its parameter gradients."""
    grads = _zeros_like_params(heads, fusion)
    total = 0.0
    for sample in batch:
        scores, j_max = branch_scores(heads, sample)
        omega, _ = fuse(scores, fusion, sample.embeddings)
        total += mw_loss(scores, omega, sample.gold, config)
        g = mw_gradient(scores, omega, sample.gold, config)
        d_alpha = {"read": g.read, "observe": g.observe, "recall": g.recall}
        _accumulate_fusion_grads(fusion, sample, scores, j_max, g.fused, grads, d_alpha)
        _accumulate_head_grads(heads, sample, j_max, d_alpha, grads)
    n = len(batch)
    for key in grads:
        grads[key] /= n
    return total / n, grads


def _accumulate_fusion_grads(fusion, sample, scores, j_max, g_fused, grads, d_alpha):
    """Backprop the fused-loss term into fusion parameters and branch scores."""
    emb = sample.embeddings
    alpha = scores.stacked()  # (n_candidates, 3)
    if fusion.method == AVERAGE:
        for i, name in enumerate(("read", "observe", "recall")):
            d_alpha[name] = d_alpha[name] + g_fused / alpha.shape[1]
    elif fusion.method == MAXIMUM:
        winners = np.argmax(alpha, axis=1)
        for c, m in enumerate(winners):
            name = ("read", "observe", "recall")[m]
            d_alpha[name] = d_alpha[name].copy()
            d_alpha[name][c] += g_fused[c]
    elif fusion.method == FC:
        grads["fusion.w"] += alpha.T @ g_fused
        grads["fusion.b"] += g_fused.sum()
        for i, name in enumerate(("read", "observe", "recall")):
            d_alpha[name] = d_alpha[name] + g_fused * fusion.weights[i]
    elif fusion.method in (SELF_ATT, QA_ATT):
        _attention_grads(fusion, emb, scores, j_max, g_fused, grads)


def _attention_grads(fusion, emb, scores, j_max, g_fused, grads):
    # the argmax segment choice is held fixed, so no gradient reaches the
    # recall scores through the fused term
    for c in range(len(g_fused)):
        ys = (emb.read[c], emb.observe[c], emb.recall[c, j_max[c]])
        if fusion.method == SELF_ATT:
            u = np.concatenate(ys)
            psi = fusion.att_weights @ u + fusion.att_bias
        else:
            pairs = [np.concatenate([y, emb.qa[c]]) for y in ys]
            psi = np.array([float(fusion.att_weights @ p + fusion.att_bias) for p in pairs])
        y_fused = psi[0] * ys[0] + psi[1] * ys[1] + psi[2] * ys[2]

        grads["fusion.w"] += g_fused[c] * y_fused
        grads["fusion.b"] += g_fused[c]
        d_psi = np.array([g_fused[c] * float(fusion.weights @ y) for y in ys])
        if fusion.method == SELF_ATT:
            grads["fusion.aw"] += np.outer(d_psi, u)
            grads["fusion.ab"] += d_psi
        else:
            for m in range(3):
                grads["fusion.aw"] += d_psi[m] * pairs[m]
            grads["fusion.ab"] += d_psi.sum()


def _accumulate_head_grads(heads, sample, j_max, d_alpha, grads):
    emb = sample.embeddings
    grads["read.w"] += emb.read.T @ d_alpha["read"]
    grads["read.b"] += d_alpha["read"].sum()
    grads["observe.w"] += emb.observe.T @ d_alpha["observe"]
    grads["observe.b"] += d_alpha["observe"].sum()
    picked = np.stack([emb.recall[c, j] for c, j in enumerate(j_max)])
    grads["recall.w"] += picked.T @ d_alpha["recall"]
    grads["recall.b"] += d_alpha["recall"].sum()


def single_branch_objective(
    head: LinearHead, branch: str, batch: list[TrainingSample]
) -> tuple[float, np.ndarray, float]:
    """Mean cross-entropy of one branch and its head gradients."""
    total = 0.0
    grad_w = np.zeros_like(head.weights)
    grad_b = 0.0
    for sample in batch:
        if branch == "recall":
            _, alpha, j_max = _recall_argmax(sample, head)
            ys = np.stack([sample.embeddings.recall[c, j] for c, j in enumerate(j_max)])
        else:
            ys = getattr(sample.embeddings, branch)
            alpha = ys @ head.weights + head.bias
        shifted = alpha - alpha.max()
        total += float(np.log(np.exp(shifted).sum()) - shifted[sample.gold])
        probs = softmax(alpha)
        probs[sample.gold] -= 1.0
        grad_w += ys.T @ probs
        grad_b += probs.sum()
    n = len(batch)
    return total / n, grad_w / n, grad_b / n


def train(
    batch: list[TrainingSample],
    method: str = FC,
    config: MWConfig | None = None,
    dim: int | None = None,
    epochs_single: int = 50,
    epochs_joint: int = 100,
    lr: float = LEARNING_RATE,
    momentum: float = MOMENTUM,
    seed: int = 0,
) -> TrainState:
    """Phase-one per-branch fitting, then joint fine-tuning with the MW loss."""
    if not batch:
        raise ValueError("empty training batch")
    config = config or MWConfig()
    dim = dim or batch[0].embeddings.read.shape[1]
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(dim)
    heads = {
        name: LinearHead(weights=rng.uniform(-bound, bound, dim), bias=0.0)
        for name in ("read", "observe", "recall")
    }
    fusion = init_fusion_head(method, n_branches=3, dim=dim, rng=rng)
    state = TrainState(heads=heads, fusion=fusion)

    for name in ("read", "observe", "recall"):
        velocity_w = np.zeros(dim)
        velocity_b = 0.0
        loss = None
        for _ in range(epochs_single):
            loss, grad_w, grad_b = single_branch_objective(state.heads[name], name, batch)
            velocity_w = momentum * velocity_w - lr * grad_w
            velocity_b = momentum * velocity_b - lr * grad_b
            state.heads[name] = LinearHead(
                weights=state.heads[name].weights + velocity_w,
                bias=state.heads[name].bias + velocity_b,
            )
        state.history.append({"phase": f"single:{name}", "loss": loss})

    velocity = {k: np.zeros_like(v) for k, v in _zeros_like_params(state.heads, fusion).items()}
    loss = None
    for _ in range(epochs_joint):
        loss, grads = mw_objective(state.heads, state.fusion, batch, config)
        for key, grad in grads.items():
            velocity[key] = momentum * velocity[key] - lr * grad
        _apply_updates(state, velocity)
    state.history.append({"phase": "joint", "loss": loss})
    return state


def _apply_updates(state: TrainState, velocity: dict[str, np.ndarray]) -> None:
    for name in ("read", "observe", "recall"):
        head = state.heads[name]
        state.heads[name] = LinearHead(
            weights=head.weights + velocity[f"{name}.w"],
            bias=head.bias + float(velocity[f"{name}.b"][0]),
        )
    fusion = state.fusion
    if fusion.weights is not None:
        fusion.weights = fusion.weights + velocity["fusion.w"]
        fusion.bias = fusion.bias + float(velocity["fusion.b"][0])
    if fusion.att_weights is not None:
        fusion.att_weights = fusion.att_weights + velocity["fusion.aw"]
        if np.ndim(fusion.att_bias) == 0:
            fusion.att_bias = float(fusion.att_bias + velocity["fusion.ab"][0])
        else:
            fusion.att_bias = fusion.att_bias + velocity["fusion.ab"]
