import numpy as np
import pytest

from sta import tensor as T
from sta.layers import (
    Embedding,
    LinearLayer,
    LstmParameters,
    VocabularyError,
    dropout_apply,
    embedding_lookup,
    linear_forward,
    load_checkpoint,
    lstm_sequence,
    lstm_step,
    save_checkpoint,
)
from sta.tensor import Tensor, backward, grad_check


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_step_oracle(p: LstmParameters, x, h, c):
    """Plain numpy evaluation of the gate equations."""
    D = p.hidden
    z = x @ p.input_weights.data + h @ p.recurrent_weights.data + p.gate_biases.data
    i, f, g, o = sigmoid(z[:D]), sigmoid(z[D : 2 * D]), np.tanh(z[2 * D : 3 * D]), sigmoid(z[3 * D :])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


# ------------------------------------------------------------------ linear


def test_linear_identity_weight():
    layer = LinearLayer(3, 3)
    layer.weight.data = np.eye(3)
    x = Tensor([[1.0, -2.0, 0.5]])
    np.testing.assert_array_equal(linear_forward(layer, x).data, x.data)


def test_linear_hand_product():
    layer = LinearLayer(2, 1)
    layer.weight.data = np.array([[1.0, 1.0]])
    layer.bias.data = np.array([0.5])
    assert layer(Tensor([[2.0, 3.0]])).data.tolist() == [[5.5]]


def test_linear_dimension_mismatch():
    with pytest.raises(T.DimensionError):
        LinearLayer(3, 2)(Tensor(np.zeros((1, 4))))


def test_weight_norm_with_gain_equal_norm_matches_plain():
    rng = np.random.default_rng(0)
    plain = LinearLayer(5, 3, rng=np.random.default_rng(1))
    wn = LinearLayer(5, 3, weight_norm=True, rng=np.random.default_rng(1))
    v = rng.normal(size=(3, 5))
    plain.weight.data = v.copy()
    wn.weight.data = v.copy()
    wn.gain.data = np.linalg.norm(v, axis=1)
    x = Tensor(rng.normal(size=(4, 5)))
    np.testing.assert_allclose(wn(x).data, plain(x).data, atol=1e-12)


def test_weight_norm_gradients():
    rng = np.random.default_rng(2)
    layer = LinearLayer(4, 3, weight_norm=True, rng=rng)
    layer.bias.data = rng.normal(size=3)
    x = Tensor(rng.normal(size=(5, 4)))
    f = lambda: T.sum_all(T.tanh(layer(x)))  # noqa: E731
    assert grad_check(f, list(layer.parameters().values())).passed


def test_linear_gradients_rank3_input():
    rng = np.random.default_rng(3)
    layer = LinearLayer(4, 2, rng=rng)
    layer.bias.data = rng.normal(size=2)
    x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    f = lambda: T.sum_all(T.square(layer(x)))  # noqa: E731
    assert grad_check(f, [x] + list(layer.parameters().values())).passed


# --------------------------------------------------------------- embedding


def test_embedding_repeated_ids_give_identical_rows():
    table = Embedding(5, 4, np.random.default_rng(0))
    out = table([3, 3]).data
    np.testing.assert_array_equal(out[0], out[1])


def test_embedding_equals_one_hot_matmul():
    rng = np.random.default_rng(1)
    table = Tensor(rng.normal(size=(7, 3)))
    ids = [4, 0, 6, 4, 2]
    onehot = np.eye(7)[ids]
    np.testing.assert_allclose(embedding_lookup(table, ids).data, onehot @ table.data, atol=1e-15)


def test_embedding_gradient_touches_only_looked_up_row():
    table = Tensor(np.random.default_rng(2).normal(size=(4, 3)), requires_grad=True)
    backward(T.sum_all(embedding_lookup(table, [2])))
    expected = np.zeros((4, 3))
    expected[2] = 1.0
    np.testing.assert_array_equal(table.grad, expected)


def test_embedding_out_of_vocabulary():
    with pytest.raises(VocabularyError):
        embedding_lookup(Tensor(np.zeros((4, 2))), [1, 4])


def test_embedding_pad_row_is_zero():
    assert not Embedding(6, 3, np.random.default_rng(0)).table.data[0].any()


# -------------------------------------------------------------------- lstm


def test_lstm_forget_bias_initialised_to_one():
    p = LstmParameters(3, 4)
    np.testing.assert_array_equal(p.gate_biases.data[4:8], 1.0)
    np.testing.assert_array_equal(np.delete(p.gate_biases.data, range(4, 8)), 0.0)


def test_lstm_zero_everything_gives_zero_state():
    p = LstmParameters(3, 4)
    for t in p.parameters().values():
        t.data[:] = 0.0
    h, c = lstm_step(p, Tensor(np.zeros(3)), Tensor(np.zeros(4)), Tensor(np.zeros(4)))
    assert not h.data.any() and not c.data.any()


def test_lstm_saturated_forget_gate_keeps_cell():
    rng = np.random.default_rng(0)
    p = LstmParameters(3, 4, rng)
    D = 4
    b = np.zeros(4 * D)
    b[:D] = -50.0  # input gate closed
    b[D : 2 * D] = 50.0  # forget gate open
    p.gate_biases.data = b
    x, h_prev, c_prev = rng.normal(size=3), rng.uniform(-1, 1, size=D), rng.normal(size=D)
    _, c = lstm_step(p, Tensor(x), Tensor(h_prev), Tensor(c_prev))
    _, c_oracle = lstm_step_oracle(p, x, h_prev, c_prev)
    np.testing.assert_allclose(c.data, c_prev, atol=1e-3)
    np.testing.assert_allclose(c_oracle, c_prev, atol=1e-3)


def test_lstm_step_matches_numpy_oracle():
    rng = np.random.default_rng(5)
    p = LstmParameters(3, 4, rng)
    x, h0, c0 = rng.normal(size=3), rng.normal(size=4), rng.normal(size=4)
    h, c = lstm_step(p, Tensor(x), Tensor(h0), Tensor(c0))
    h_o, c_o = lstm_step_oracle(p, x, h0, c0)
    np.testing.assert_allclose(h.data, h_o, atol=1e-14)
    np.testing.assert_allclose(c.data, c_o, atol=1e-14)
    assert np.all(np.abs(h.data) <= 1.0)


def test_lstm_three_chained_steps_gradcheck():
    rng = np.random.default_rng(6)
    p = LstmParameters(3, 4, rng)
    xs = [Tensor(rng.normal(size=3), requires_grad=True) for _ in range(3)]

    def f():
        h = c = Tensor(np.zeros(4))
        for x in xs:
            h, c = lstm_step(p, x, h, c)
        return T.sum_all(T.mul(h, Tensor([1.0, -2.0, 0.5, 3.0])))

    assert grad_check(f, list(p.parameters().values()) + xs).passed


def test_lstm_sequence_single_step_equals_lstm_step():
    rng = np.random.default_rng(7)
    p = LstmParameters(3, 5, rng)
    x = rng.normal(size=(1, 3))
    h, _ = lstm_step(p, Tensor(x[0]), Tensor(np.zeros(5)), Tensor(np.zeros(5)))
    np.testing.assert_allclose(lstm_sequence(p, Tensor(x)).data[0], h.data, atol=1e-15)


def test_lstm_sequence_matches_step_loop():
    rng = np.random.default_rng(8)
    p = LstmParameters(3, 4, rng)
    xs = rng.normal(size=(5, 3))
    h, c = np.zeros(4), np.zeros(4)
    expected = []
    for x in xs:
        h, c = lstm_step_oracle(p, x, h, c)
        expected.append(h)
    np.testing.assert_allclose(lstm_sequence(p, Tensor(xs)).data, np.array(expected), atol=1e-13)


def test_lstm_sequence_prefix_property():
    rng = np.random.default_rng(9)
    p = LstmParameters(2, 3, rng)
    xs = rng.normal(size=(6, 2))
    full = lstm_sequence(p, Tensor(xs)).data
    for t in range(1, 7):
        np.testing.assert_allclose(lstm_sequence(p, Tensor(xs[:t])).data, full[:t], rtol=0, atol=1e-15)


def test_lstm_sequence_causality_under_suffix_perturbation():
    rng = np.random.default_rng(10)
    p = LstmParameters(2, 3, rng)
    xs = rng.normal(size=(7, 2))
    ys = xs.copy()
    ys[4:] = rng.normal(size=(3, 2)) * 10
    a, b = lstm_sequence(p, Tensor(xs)).data, lstm_sequence(p, Tensor(ys)).data
    np.testing.assert_array_equal(a[:4], b[:4])


def test_lstm_sequence_batched_rows_are_independent():
    rng = np.random.default_rng(11)
    p = LstmParameters(2, 3, rng)
    xs = rng.normal(size=(3, 5, 2))
    batched = lstm_sequence(p, Tensor(xs)).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], lstm_sequence(p, Tensor(xs[i])).data, atol=1e-15)


def test_lstm_sequence_empty():
    with pytest.raises(ValueError):
        lstm_sequence(LstmParameters(2, 3), Tensor(np.zeros((1, 0, 2))))


def test_lstm_sequence_gradcheck():
    rng = np.random.default_rng(12)
    p = LstmParameters(3, 4, rng)
    xs = Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 4, 4)))
    assert grad_check(lambda: T.sum_all(T.mul(lstm_sequence(p, xs), w)), [xs] + list(p.parameters().values())).passed


# ----------------------------------------------------------------- dropout


def test_dropout_p_zero_is_identity():
    x = Tensor(np.ones(10))
    assert dropout_apply(x, 0.0, True, 0) is x


def test_dropout_eval_mode_is_identity():
    x = Tensor(np.ones(10))
    assert dropout_apply(x, 0.9, False, 0) is x


def test_dropout_monte_carlo():
    x = Tensor(np.ones(100_000))
    out = dropout_apply(x, 0.5, True, np.random.default_rng(0)).data
    assert abs((out != 0).mean() - 0.5) < 0.02
    assert abs(out.mean() - 1.0) < 0.02
    assert set(np.unique(out)) <= {0.0, 2.0}


def test_dropout_rejects_bad_probability():
    for p in (-0.1, 1.0):
        with pytest.raises(ValueError):
            dropout_apply(Tensor(np.ones(3)), p, True, 0)


# -------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    params = {"a.weight": rng.normal(size=(3, 4)), "b": rng.normal(size=7), "s": np.array(3.5)}
    save_checkpoint(tmp_path / "x.bin", params, {"note": "hi"})
    loaded, meta = load_checkpoint(tmp_path / "x.bin")
    assert meta == {"note": "hi"}
    for k, v in params.items():
        assert loaded[k].shape == v.shape
        assert loaded[k].tobytes() == v.tobytes()


def test_checkpoint_bytes_are_deterministic(tmp_path):
    params = {"w": np.arange(6.0).reshape(2, 3)}
    save_checkpoint(tmp_path / "a.bin", params)
    save_checkpoint(tmp_path / "b.bin", params)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    (tmp_path / "junk").write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "junk")
