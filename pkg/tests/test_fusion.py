import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roll.fusion import (
    BranchEmbeddings,
    FusionHead,
    MWConfig,
    cross_entropy,
    fuse,
    init_fusion_head,
    mw_gradient,
    mw_loss,
    uniform_fc_head,
)
from roll.scoring import BranchScores


def _scores(read, observe, recall, per_segment=None):
    return BranchScores(
        read=np.asarray(read, dtype=float),
        observe=np.asarray(observe, dtype=float),
        recall=np.asarray(recall, dtype=float),
        recall_per_segment=None if per_segment is None else np.asarray(per_segment, dtype=float),
    )


def test_average_example():
    scores = _scores([0.2], [0.4], [0.6])
    omega, _ = fuse(scores, FusionHead(method="average"))
    assert omega[0] == pytest.approx(0.4)


def test_maximum_example():
    scores = _scores([0.2], [0.4], [0.6])
    omega, _ = fuse(scores, FusionHead(method="maximum"))
    assert omega[0] == pytest.approx(0.6)


def test_fc_uniform_weights_equals_average():
    rng = np.random.default_rng(0)
    for _ in range(50):
        scores = _scores(rng.normal(0, 1, 4), rng.normal(0, 1, 4), rng.normal(0, 1, 4))
        avg, _ = fuse(scores, FusionHead(method="average"))
        fc, _ = fuse(scores, uniform_fc_head(3))
        assert np.allclose(avg, fc, atol=1e-15)


def test_tie_breaks_to_lowest_index():
    scores = _scores([1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [1.0, 1.0, 0.0])
    _, predicted = fuse(scores, FusionHead(method="average"))
    assert predicted == 0


def test_attention_without_embeddings_rejected():
    scores = _scores([0.1], [0.2], [0.3], per_segment=[[0.3]])
    head = init_fusion_head("self_att", dim=8)
    with pytest.raises(ValueError, match="embeddings"):
        fuse(scores, head)


def _random_case(rng, n_ca=4, n_seg=5, dim=16):
    per_segment = rng.normal(0, 1, (n_ca, n_seg))
    real = rng.random((n_ca, n_seg)) < 0.8
    real[:, 0] = True  # at least one real segment per candidate
    per_segment = np.where(real, per_segment, np.nan)
    scores = _scores(
        rng.normal(0, 1, n_ca),
        rng.normal(0, 1, n_ca),
        np.nanmax(per_segment, axis=1),
        per_segment,
    )
    embeddings = BranchEmbeddings(
        read=rng.normal(0, 1, (n_ca, dim)),
        observe=rng.normal(0, 1, (n_ca, dim)),
        recall=rng.normal(0, 1, (n_ca, n_seg, dim)),
        recall_real=real,
        qa=rng.normal(0, 1, (n_ca, dim)),
    )
    return scores, embeddings


def _self_att_oracle(scores, emb, head):
    """Element-by-element restatement of the self-attention fusion."""
    n_ca, dim = emb.read.shape
    omega = []
    for c in range(n_ca):
        j_best, best = 0, -math.inf
        for j in range(emb.recall.shape[1]):
            if emb.recall_real[c][j] and scores.recall_per_segment[c][j] > best:
                best = scores.recall_per_segment[c][j]
                j_best = j
        y = [emb.read[c], emb.observe[c], emb.recall[c, j_best]]
        u = [float(v) for vec in y for v in vec]
        psi = []
        for m in range(3):
            acc = float(head.att_bias[m])
            for k in range(3 * dim):
                acc += float(head.att_weights[m, k]) * u[k]
            psi.append(acc)
        fused = [psi[0] * y[0][d] + psi[1] * y[1][d] + psi[2] * y[2][d] for d in range(dim)]
        value = float(head.bias)
        for d in range(dim):
            value += float(head.weights[d]) * fused[d]
        omega.append(value)
    return np.array(omega)


def _qa_att_oracle(scores, emb, head):
    n_ca, dim = emb.read.shape
    omega = []
    for c in range(n_ca):
        j_best, best = 0, -math.inf
        for j in range(emb.recall.shape[1]):
            if emb.recall_real[c][j] and scores.recall_per_segment[c][j] > best:
                best = scores.recall_per_segment[c][j]
                j_best = j
        y = [emb.read[c], emb.observe[c], emb.recall[c, j_best]]
        psi = []
        for m in range(3):
            acc = float(head.att_bias)
            for k in range(dim):
                acc += float(head.att_weights[k]) * float(y[m][k])
            for k in range(dim):
                acc += float(head.att_weights[dim + k]) * float(emb.qa[c][k])
            psi.append(acc)
        fused = [psi[0] * y[0][d] + psi[1] * y[1][d] + psi[2] * y[2][d] for d in range(dim)]
        value = float(head.bias)
        for d in range(dim):
            value += float(head.weights[d]) * fused[d]
        omega.append(value)
    return np.array(omega)


def test_self_att_matches_straight_line_oracle():
    rng = np.random.default_rng(31)
    head = init_fusion_head("self_att", dim=16, rng=rng)
    for _ in range(100):
        scores, emb = _random_case(rng)
        omega, _ = fuse(scores, head, emb)
        assert np.allclose(omega, _self_att_oracle(scores, emb, head), atol=1e-12)


def test_qa_att_matches_straight_line_oracle():
    rng = np.random.default_rng(37)
    head = init_fusion_head("qa_att", dim=16, rng=rng)
    for _ in range(100):
        scores, emb = _random_case(rng)
        omega, _ = fuse(scores, head, emb)
        assert np.allclose(omega, _qa_att_oracle(scores, emb, head), atol=1e-12)


def test_padded_segments_never_picked_by_attention():
    rng = np.random.default_rng(41)
    head = init_fusion_head("self_att", dim=8, rng=rng)
    scores, emb = _random_case(rng, n_ca=2, n_seg=3, dim=8)
    # plant a huge score on a padded cell; it must not influence fusion
    emb.recall_real[0, 2] = False
    scores.recall_per_segment[0, 2] = np.nan
    baseline, _ = fuse(scores, head, emb)
    scores.recall_per_segment[0, 2] = 1e9
    spiked, _ = fuse(scores, head, emb)
    assert np.allclose(baseline, spiked)


# ---------------------------------------------------------------------------
# cross entropy


def test_uniform_scores_ln4():
    assert cross_entropy([1.0, 1.0, 1.0, 1.0], 2) == pytest.approx(math.log(4), abs=1e-12)


def test_extreme_scores_no_overflow():
    assert cross_entropy([1000.0, 0.0, 0.0, 0.0], 0) == pytest.approx(0.0, abs=1e-9)


def test_nan_rejected():
    with pytest.raises(ValueError, match="NaN"):
        cross_entropy([0.0, float("nan")], 0)


def _naive_ce(delta, c_star):
    exps = [math.exp(float(d)) for d in delta]
    return -math.log(exps[c_star] / math.fsum(exps))


def test_random_inputs_match_naive_oracle():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        delta = rng.uniform(-10, 10, int(rng.integers(2, 6)))
        c_star = int(rng.integers(len(delta)))
        assert cross_entropy(delta, c_star) == pytest.approx(
            _naive_ce(delta, c_star), abs=1e-9
        )


@given(
    st.lists(st.floats(-50, 50), min_size=2, max_size=6),
    st.floats(-100, 100),
)
@settings(max_examples=100)
def test_shift_invariance(delta, shift):
    base = cross_entropy(delta, 0)
    shifted = cross_entropy([d + shift for d in delta], 0)
    assert shifted == pytest.approx(base, abs=1e-9)


def test_loss_non_negative():
    rng = np.random.default_rng(11)
    for _ in range(200):
        delta = rng.uniform(-20, 20, 4)
        assert cross_entropy(delta, int(rng.integers(4))) >= 0.0


# ---------------------------------------------------------------------------
# modality-weighting loss


def test_beta_omega_one_reduces_to_fused_ce():
    config = MWConfig(0.0, 0.0, 0.0, 1.0)
    scores = _scores([1.0, 2.0], [0.5, 0.1], [0.0, 3.0])
    omega = np.array([0.7, 0.2])
    assert mw_loss(scores, omega, 1, config) == pytest.approx(cross_entropy(omega, 1))


def test_default_betas_uniform_scores_ln4():
    config = MWConfig()
    scores = _scores([0.0] * 4, [0.0] * 4, [0.0] * 4)
    omega = np.zeros(4)
    assert mw_loss(scores, omega, 0, config) == pytest.approx(math.log(4), abs=1e-12)


def test_betas_must_sum_to_one():
    with pytest.raises(ValueError, match="sum to 1"):
        MWConfig(0.5, 0.5, 0.5, 0.5)
    with pytest.raises(ValueError, match="non-negative"):
        MWConfig(-0.1, 0.1, 0.2, 0.8)


def test_mw_loss_matches_four_term_oracle():
    rng = np.random.default_rng(13)
    config = MWConfig()
    for _ in range(1000):
        n_ca = int(rng.integers(2, 6))
        scores = _scores(
            rng.uniform(-5, 5, n_ca), rng.uniform(-5, 5, n_ca), rng.uniform(-5, 5, n_ca)
        )
        omega = rng.uniform(-5, 5, n_ca)
        c_star = int(rng.integers(n_ca))
        oracle = (
            0.06 * _naive_ce(scores.read, c_star)
            + 0.06 * _naive_ce(scores.observe, c_star)
            + 0.08 * _naive_ce(scores.recall, c_star)
            + 0.80 * _naive_ce(omega, c_star)
        )
        assert mw_loss(scores, omega, c_star, config) == pytest.approx(oracle, abs=1e-9)


def test_mw_loss_lower_bound_by_fused_term():
    rng = np.random.default_rng(17)
    config = MWConfig()
    for _ in range(100):
        scores = _scores(rng.uniform(-5, 5, 4), rng.uniform(-5, 5, 4), rng.uniform(-5, 5, 4))
        omega = rng.uniform(-5, 5, 4)
        c_star = int(rng.integers(4))
        assert mw_loss(scores, omega, c_star, config) >= 0.8 * cross_entropy(omega, c_star) - 1e-12


# ---------------------------------------------------------------------------
# gradients


def test_gradient_closed_form_at_uniform_scores():
    config = MWConfig()
    scores = _scores([0.0] * 4, [0.0] * 4, [0.0] * 4)
    omega = np.zeros(4)
    grads = mw_gradient(scores, omega, 1, config)
    expected = np.full(4, 0.25)
    expected[1] -= 1.0
    assert np.allclose(grads.read, 0.06 * expected)
    assert np.allclose(grads.observe, 0.06 * expected)
    assert np.allclose(grads.recall, 0.08 * expected)
    assert np.allclose(grads.fused, 0.80 * expected)


def test_zero_beta_zeroes_gradient():
    config = MWConfig(0.0, 0.1, 0.1, 0.8)
    scores = _scores([1.0, 2.0], [0.5, 0.1], [0.0, 3.0])
    grads = mw_gradient(scores, np.array([0.7, 0.2]), 0, config)
    assert np.allclose(grads.read, 0.0)


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(19)
    config = MWConfig()
    step = 1e-5
    for _ in range(30):
        n_ca = 4
        scores = _scores(
            rng.uniform(-2, 2, n_ca), rng.uniform(-2, 2, n_ca), rng.uniform(-2, 2, n_ca)
        )
        omega = rng.uniform(-2, 2, n_ca)
        c_star = int(rng.integers(n_ca))
        grads = mw_gradient(scores, omega, c_star, config)
        for field, vector in (
            ("read", grads.read), ("observe", grads.observe),
            ("recall", grads.recall), ("fused", grads.fused),
        ):
            for i in range(n_ca):
                def loss_at(value):
                    r = {k: getattr(scores, k).copy() for k in ("read", "observe", "recall")}
                    w = omega.copy()
                    if field == "fused":
                        w[i] = value
                    else:
                        r[field][i] = value
                    perturbed = _scores(r["read"], r["observe"], r["recall"])
                    return mw_loss(perturbed, w, c_star, config)

                base = omega[i] if field == "fused" else getattr(scores, field)[i]
                numeric = (loss_at(base + step) - loss_at(base - step)) / (2 * step)
                denom = max(abs(numeric), abs(vector[i]), 1e-8)
                assert abs(numeric - vector[i]) / denom < 1e-4


# ---------------------------------------------------------------------------
# argmax shift properties


@given(
    st.lists(st.floats(-5, 5), min_size=2, max_size=5),
    st.floats(-3, 3),
)
@settings(max_examples=60)
def test_average_argmax_invariant_to_common_shift(base, shift):
    n = len(base)
    scores = _scores(base, [b + 1 for b in base], [b - 1 for b in base])
    shifted = _scores(
        [b + shift for b in base],
        [b + 1 + shift for b in base],
        [b - 1 + shift for b in base],
    )
    _, p1 = fuse(scores, FusionHead(method="average"))
    _, p2 = fuse(shifted, FusionHead(method="average"))
    assert p1 == p2


@given(st.floats(-3, 3))
@settings(max_examples=40)
def test_fc_positive_weights_shift_equivariance(shift):
    rng = np.random.default_rng(43)
    head = FusionHead(method="fc", weights=np.array([0.2, 0.5, 0.3]), bias=0.1)
    scores = _scores(rng.normal(0, 1, 4), rng.normal(0, 1, 4), rng.normal(0, 1, 4))
    shifted = _scores(scores.read + shift, scores.observe + shift, scores.recall + shift)
    _, p1 = fuse(scores, head)
    _, p2 = fuse(shifted, head)
    assert p1 == p2
