import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sta.encoders import (
    FrameFeatureSequence,
    TokenSequence,
    concat_question_option,
    encode_multichoice,
    encode_question,
    encode_video,
    pad_sequences,
    sample_frame_indices,
    sample_frames,
    segment,
)
from sta.layers import Embedding, LstmParameters, lstm_sequence, lstm_step
from sta.tensor import Tensor


def test_sample_frames_identity_when_lengths_match():
    raw = np.random.default_rng(0).normal(size=(36, 5))
    np.testing.assert_array_equal(sample_frames(raw, 36), raw)


def test_sample_frames_every_second_frame():
    assert sample_frame_indices(72, 36).tolist() == list(range(0, 72, 2))


def test_sample_frames_short_video_repeats():
    idx = sample_frame_indices(10, 36)
    oracle = [int(np.floor(j * 10 / 36)) for j in range(36)]
    assert idx.tolist() == oracle
    raw = np.arange(10.0)[:, None]
    np.testing.assert_array_equal(sample_frames(raw, 36)[:, 0], oracle)


def test_sample_frames_empty():
    with pytest.raises(ValueError):
        sample_frames(np.zeros((0, 4)), 36)


@settings(max_examples=100, deadline=None)
@given(t_raw=st.integers(1, 500), target=st.integers(1, 64))
def test_sample_indices_in_range_and_monotone(t_raw, target):
    idx = sample_frame_indices(t_raw, target)
    assert len(idx) == target
    assert idx[0] == 0 and idx[-1] < t_raw
    assert np.all(np.diff(idx) >= 0)


def test_encode_video_matches_step_loop():
    rng = np.random.default_rng(1)
    p = LstmParameters(6, 5, rng)
    frames = rng.normal(size=(7, 6))
    out = encode_video(FrameFeatureSequence(Tensor(frames), "v0"), p).data
    h = c = Tensor(np.zeros(5))
    for t in range(7):
        h, c = lstm_step(p, Tensor(frames[t]), h, c)
        np.testing.assert_allclose(out[t], h.data, atol=1e-13)


def test_encode_video_zero_parameters_gives_zero_states():
    p = LstmParameters(4, 3)
    for t in p.parameters().values():
        t.data[:] = 0.0
    assert not encode_video(Tensor(np.random.default_rng(0).normal(size=(5, 4))), p).data.any()


def test_encode_video_default_width_is_512():
    p = LstmParameters(8, 512, np.random.default_rng(0))
    assert encode_video(Tensor(np.zeros((36, 8))), p).shape == (36, 512)


def test_segment_36_states_into_4():
    h = Tensor(np.random.default_rng(2).normal(size=(36, 3)))
    segs = segment(h, 4)
    assert segs.n == 4 and segs.k == 9


def test_segment_n1_identity():
    h = Tensor(np.random.default_rng(3).normal(size=(10, 3)))
    np.testing.assert_array_equal(segment(h, 1).segments[0].data, h.data)


def test_segment_drops_remainder():
    h = Tensor(np.arange(20.0).reshape(10, 2))
    segs = segment(h, 3)
    assert [s.shape for s in segs.segments] == [(3, 2)] * 3
    np.testing.assert_array_equal(np.concatenate([s.data for s in segs.segments]), h.data[:9])


def test_segment_too_many():
    with pytest.raises(ValueError):
        segment(Tensor(np.zeros((3, 2))), 4)


@settings(max_examples=60, deadline=None)
@given(t=st.integers(1, 40), data=st.data())
def test_segment_partition_property(t, data):
    n = data.draw(st.integers(1, t))
    h = np.random.default_rng(t).normal(size=(2, t, 3))
    segs = segment(Tensor(h), n)
    flat = np.concatenate([s.data for s in segs.segments], axis=1)
    k = t // n
    assert segs.k == k
    assert flat.tobytes() == np.ascontiguousarray(h[:, : n * k]).tobytes()


def _text_params(rng, vocab=12, d_e=4, hidden=5):
    return Embedding(vocab, d_e, rng), LstmParameters(d_e, hidden, rng)


def test_encode_question_single_token():
    rng = np.random.default_rng(4)
    emb, lstm = _text_params(rng)
    enc = encode_question(TokenSequence.from_ids([7]), emb, lstm)
    h, _ = lstm_step(lstm, Tensor(emb.table.data[7]), Tensor(np.zeros(5)), Tensor(np.zeros(5)))
    np.testing.assert_allclose(enc.states.data[0], h.data, atol=1e-15)


def test_encode_question_matches_embedding_plus_loop():
    rng = np.random.default_rng(5)
    emb, lstm = _text_params(rng)
    ids = [3, 9, 2, 2, 11]
    enc = encode_question(TokenSequence.from_ids(ids), emb, lstm)
    expected = lstm_sequence(lstm, Tensor(emb.table.data[ids])).data
    np.testing.assert_allclose(enc.states.data, expected, atol=1e-15)
    assert enc.states.shape == (5, 5)


def test_padded_positions_exist_and_are_marked():
    rng = np.random.default_rng(6)
    emb, lstm = _text_params(rng)
    q = pad_sequences([[3, 4, 5], [6]])
    enc = encode_question(q, emb, lstm)
    assert enc.states.shape == (2, 3, 5)
    assert enc.pad_mask.tolist() == [[False, False, False], [False, True, True]]


def test_padding_never_changes_real_states():
    rng = np.random.default_rng(7)
    emb, lstm = _text_params(rng)
    alone = encode_question(TokenSequence.from_ids([6, 4]), emb, lstm).states.data
    padded = encode_question(pad_sequences([[6, 4], [1, 2, 3, 4, 5]]), emb, lstm).states.data
    np.testing.assert_allclose(padded[0, :2], alone, atol=1e-15)


def test_multichoice_concatenation_length():
    rng = np.random.default_rng(8)
    emb, lstm = _text_params(rng)
    enc = encode_multichoice(TokenSequence.from_ids([3, 4, 5]), TokenSequence.from_ids([6, 7]), emb, lstm)
    assert enc.states.shape[0] == 5


def test_multichoice_is_deterministic():
    rng = np.random.default_rng(9)
    emb, lstm = _text_params(rng)
    q, o = TokenSequence.from_ids([3, 4]), TokenSequence.from_ids([8])
    a = encode_multichoice(q, o, emb, lstm).states.data
    b = encode_multichoice(q, o, emb, lstm).states.data
    assert a.tobytes() == b.tobytes()


def test_multichoice_rejects_empty_option():
    with pytest.raises(ValueError):
        concat_question_option([3, 4], [])
