import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sta import tensor as T
from sta.attention import AttentionOutputs
from sta.heads import (
    FusedRepresentation,
    TaskSpec,
    classify_frame,
    cross_entropy_loss,
    fuse_modalities,
    fuse_segments,
    hinge_loss,
    hinge_loss_batch,
    mse_loss,
    predict_count,
    predict_option,
    round_count,
    score_multichoice,
)
from sta.layers import LinearLayer
from sta.tensor import Tensor, backward, grad_check


def outs(v, e):
    return AttentionOutputs(Tensor(v), Tensor(e), Tensor([1.0]), Tensor([[1.0]]))


def scalar(x):
    return Tensor(np.float64(x))


# ------------------------------------------------------------------ fusion


def test_fuse_segments_single_is_identity():
    v, e = fuse_segments([outs([1.0, 2.0], [3.0, 4.0])])
    assert v.data.tolist() == [1.0, 2.0] and e.data.tolist() == [3.0, 4.0]


def test_fuse_segments_doubles_identical():
    o = outs([1.0, -2.0], [0.5, 4.0])
    v, e = fuse_segments([o, o])
    assert v.data.tolist() == [2.0, -4.0] and e.data.tolist() == [1.0, 8.0]


def test_fuse_segments_empty():
    with pytest.raises(ValueError):
        fuse_segments([])


def identity_layer(d):
    layer = LinearLayer(d, d)
    layer.weight.data = np.eye(d)
    layer.bias.data[:] = 0.0
    return layer


def test_fuse_modalities_identity_is_hadamard():
    v, e = np.array([1.0, 2.0, 0.0]), np.array([3.0, 0.5, 7.0])
    h = fuse_modalities(Tensor(v), Tensor(e), identity_layer(3), identity_layer(3)).h.data
    np.testing.assert_array_equal(h, v * e)


def test_fuse_modalities_negative_branch_closes_gate():
    h = fuse_modalities(Tensor([-1.0, -2.0]), Tensor([5.0, 5.0]), identity_layer(2), identity_layer(2)).h.data
    assert not h.any()


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_fused_vector_is_nonnegative(seed):
    rng = np.random.default_rng(seed)
    wfv, wfq = LinearLayer(4, 3, rng=rng), LinearLayer(4, 3, rng=rng)
    h = fuse_modalities(Tensor(rng.normal(size=4)), Tensor(rng.normal(size=4)), wfv, wfq).h.data
    assert np.all(h >= 0)


def test_fuse_modalities_gradcheck():
    rng = np.random.default_rng(0)
    wfv, wfq = LinearLayer(4, 3, rng=rng), LinearLayer(4, 3, rng=rng)
    wfv.bias.data = rng.normal(size=3)
    wfq.bias.data = rng.normal(size=3)
    v, e = Tensor(rng.normal(size=4), requires_grad=True), Tensor(rng.normal(size=4), requires_grad=True)
    params = [v, e] + list(wfv.parameters().values()) + list(wfq.parameters().values())
    assert grad_check(lambda: T.sum_all(fuse_modalities(v, e, wfv, wfq).h), params).passed


# ------------------------------------------------------------- multichoice


def test_identical_options_tie_to_first():
    head = LinearLayer(3, 1, rng=np.random.default_rng(0))
    h = FusedRepresentation(Tensor([1.0, 2.0, 3.0]))
    s = score_multichoice([h] * 5, head)
    assert np.all(s.data == s.data[0])
    assert predict_option(s) == 0


def test_zero_head_scores_equal_bias():
    head = LinearLayer(3, 1)
    head.weight.data[:] = 0.0
    head.bias.data[:] = 0.7
    s = score_multichoice([FusedRepresentation(Tensor(np.random.default_rng(i).normal(size=3))) for i in range(4)], head)
    np.testing.assert_array_equal(s.data, [0.7] * 4)


def test_single_option_rejected():
    with pytest.raises(ValueError):
        score_multichoice([FusedRepresentation(Tensor([1.0]))], LinearLayer(1, 1))


@pytest.mark.parametrize(
    "pos,negs,expected",
    [(2.0, [0.0], 0.0), (0.0, [0.0], 1.0), (0.5, [0.2, 0.6], 1.8)],
)
def test_hinge_examples(pos, negs, expected):
    assert hinge_loss(scalar(pos), [scalar(n) for n in negs]).item() == pytest.approx(expected, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(pos=st.floats(-5, 5), negs=st.lists(st.floats(-5, 5), min_size=1, max_size=6))
def test_hinge_zero_iff_all_margins_hold(pos, negs):
    loss = hinge_loss(scalar(pos), [scalar(n) for n in negs]).item()
    assert loss >= 0
    assert (loss == 0.0) == all(pos >= 1.0 + n for n in negs)


def test_hinge_batch_matches_per_example():
    rng = np.random.default_rng(1)
    scores = rng.normal(size=(4, 5))
    answers = np.array([0, 3, 4, 1])
    batch = hinge_loss_batch(Tensor(scores), answers).item()
    single = [
        hinge_loss(scalar(s[a]), [scalar(x) for j, x in enumerate(s) if j != a]).item() for s, a in zip(scores, answers)
    ]
    assert batch == pytest.approx(np.mean(single), abs=1e-14)


def test_hinge_batch_gradcheck():
    rng = np.random.default_rng(2)
    scores = Tensor(rng.normal(size=(3, 4)) * 0.3, requires_grad=True)
    assert grad_check(lambda: hinge_loss_batch(scores, np.array([1, 0, 3])), [scores]).passed


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-100, 100))
def test_argmax_shift_invariance(seed, shift):
    s = np.random.default_rng(seed).normal(size=5)
    assert predict_option(s + shift) == predict_option(s)


# ------------------------------------------------------------------- count


@pytest.mark.parametrize("raw,answer", [(3.4, 3), (10.7, 10), (-0.3, 0), (2.5, 3), (0.49, 0), (9.5, 10)])
def test_round_count_examples(raw, answer):
    assert round_count(raw) == answer


@settings(max_examples=300, deadline=None)
@given(raw=st.floats(allow_nan=True, allow_infinity=True))
def test_count_prediction_always_in_range(raw):
    assert 0 <= round_count(raw) <= 10


def test_predict_count_through_head():
    head = LinearLayer(2, 1)
    head.weight.data = np.array([[1.0, 1.0]])
    head.bias.data[:] = 0.0
    raw, answer = predict_count(FusedRepresentation(Tensor([1.5, 2.0])), head)
    assert raw.item() == 3.5 and answer == 4


@pytest.mark.parametrize("raw,target,expected", [(4.0, 4, 0.0), (3.0, 5, 4.0)])
def test_mse_examples(raw, target, expected):
    assert mse_loss(scalar(raw), target).item() == expected


def test_mse_gradient():
    raw = Tensor(np.float64(3.0), requires_grad=True)
    backward(mse_loss(raw, 5))
    assert raw.grad == pytest.approx(-4.0)


def test_mse_rejects_out_of_range_target():
    with pytest.raises(ValueError):
        mse_loss(scalar(1.0), 11)


# ----------------------------------------------------------------- frameqa


def test_classify_zero_logits_uniform():
    head = LinearLayer(3, 4)
    head.weight.data[:] = 0.0
    p = classify_frame(FusedRepresentation(Tensor([1.0, 2.0, 3.0])), head).data
    np.testing.assert_allclose(p, 0.25, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.01, 100))
def test_classify_is_a_distribution(seed, scale):
    rng = np.random.default_rng(seed)
    head = LinearLayer(5, 6, rng=rng)
    head.weight.data *= scale
    p = classify_frame(FusedRepresentation(Tensor(rng.normal(size=5) * scale)), head).data
    assert np.all(p >= 0) and abs(p.sum() - 1.0) <= 1e-9


def test_classify_needs_two_classes():
    with pytest.raises(ValueError):
        classify_frame(FusedRepresentation(Tensor([1.0])), LinearLayer(1, 1))


def test_cross_entropy_uniform_four_classes():
    assert cross_entropy_loss(Tensor(np.zeros(4)), 2).item() == pytest.approx(math.log(4), abs=1e-15)
    assert cross_entropy_loss(Tensor(np.zeros(4)), 2).item() == pytest.approx(1.38629, abs=1e-5)


def test_cross_entropy_confident_correct_goes_to_zero():
    assert cross_entropy_loss(Tensor([0.0, 60.0, 0.0]), 1).item() < 1e-20


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.integers(2, 10))
def test_cross_entropy_stable_matches_naive(seed, c):
    rng = np.random.default_rng(seed)
    o = rng.normal(size=c) * 5
    target = int(rng.integers(c))
    naive = -np.log(np.exp(o)[target] / np.exp(o).sum())
    assert abs(cross_entropy_loss(Tensor(o), target).item() - naive) <= 1e-10


def test_cross_entropy_extreme_logits_finite():
    assert np.isfinite(cross_entropy_loss(Tensor([1000.0, -1000.0]), 1).item())


def test_cross_entropy_batch_gradcheck():
    rng = np.random.default_rng(3)
    logits = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    assert grad_check(lambda: cross_entropy_loss(logits, np.array([0, 3, 1])), [logits]).passed


def test_cross_entropy_bad_target():
    with pytest.raises(ValueError):
        cross_entropy_loss(Tensor(np.zeros(3)), 3)


# -------------------------------------------------------------- task kinds


def test_task_spec_validation():
    TaskSpec("count")
    with pytest.raises(ValueError):
        TaskSpec("regression")
    with pytest.raises(ValueError):
        TaskSpec("frameqa", num_classes=1)
    with pytest.raises(ValueError):
        TaskSpec("multichoice", num_options=1)
