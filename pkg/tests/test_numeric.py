import math
import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from tfm.numeric import tensor as T
from tfm.numeric.checkpoint import CorruptCheckpoint, VersionMismatch, decode, encode
from tfm.numeric.gradcheck import grad_check
from tfm.numeric.nn import ParamView, gru_cell, init_gru, mlp, init_mlp, softmax, time_encode
from tfm.numeric.params import ParamStore, adam_step
from tfm.numeric.tensor import NotScalarLoss, ShapeMismatch, Tape, Tensor, backward, variable


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------- time encoding

def test_time_encode_zero_params():
    out = time_encode(7.3, Tensor(np.zeros(4)), Tensor(np.zeros(4)))
    np.testing.assert_allclose(out.data, [0.5, 0.5, 0.5, 0.5], rtol=0, atol=1e-15)


def test_time_encode_cos_pi():
    out = time_encode(1.0, Tensor(np.array([math.pi])), Tensor(np.zeros(1)))
    np.testing.assert_allclose(out.data, [-1.0], atol=1e-15)


def test_time_encode_matches_formula():
    rng = np.random.default_rng(3)
    w, b = rng.normal(size=8), rng.normal(size=8)
    expected = [math.cos(w[i] * 3.5 + b[i]) / math.sqrt(8) for i in range(8)]
    out = time_encode(3.5, Tensor(w), Tensor(b))
    np.testing.assert_allclose(out.data, expected, rtol=1e-14)


# ---------------------------------------------------------------- softmax

def test_softmax_symmetric():
    np.testing.assert_allclose(softmax(Tensor(np.zeros(2))).data, [0.5, 0.5], atol=1e-15)


def test_softmax_ln2():
    np.testing.assert_allclose(softmax(Tensor(np.array([math.log(2), 0.0]))).data, [2 / 3, 1 / 3], atol=1e-15)


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)), st.floats(-1e3, 1e3))
def test_softmax_shift_invariant(x, c):
    a = softmax(Tensor(x)).data
    b = softmax(Tensor(x + c)).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert abs(a.sum() - 1.0) < 1e-12


def test_masked_softmax_and_log_softmax():
    x = Tensor(np.array([1.0, 2.0, 3.0]))
    mask = np.array([True, False, True])
    p = T.softmax(x, mask=mask).data
    assert p[1] == 0.0
    np.testing.assert_allclose(p[[0, 2]], [1 / (1 + math.e ** 2), 1 / (1 + math.e ** -2)], atol=1e-15)
    lp = T.log_softmax(x, mask=mask).data
    assert lp[1] == -math.inf
    np.testing.assert_allclose(np.exp(lp[[0, 2]]), p[[0, 2]], atol=1e-15)
    assert np.all(T.softmax(x, mask=np.zeros(3, bool)).data == 0.0)
    with pytest.raises(ValueError):
        T.log_softmax(x, mask=np.zeros(3, bool))


# ---------------------------------------------------------------- GRU

def gru_store(d_in, d_h, rng=None, zero=False):
    store = ParamStore()
    init_gru(store, "g", d_in, d_h, rng or np.random.default_rng(0))
    if zero:
        for p in store:
            p.value[...] = 0.0
    return store


def test_gru_zero_params_halves_hidden():
    store = gru_store(3, 4, zero=True)
    h = np.array([[1.0, -2.0, 0.5, 4.0]])
    out = gru_cell(ParamView(store, "g"), Tensor(np.array([[7.0, 8.0, 9.0]])), Tensor(h))
    np.testing.assert_allclose(out.data, 0.5 * h, atol=1e-15)


def test_gru_all_zero_inputs():
    store = gru_store(3, 4)
    for name in ("g.bz", "g.br", "g.bh"):
        store[name].value[...] = 0.0
    out = gru_cell(ParamView(store, "g"), Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 4))))
    assert np.all(out.data == 0.0)


def test_gru_matches_three_gate_formula():
    rng = np.random.default_rng(11)
    store = gru_store(3, 5, rng)
    for p in store:
        p.value[...] = rng.normal(size=p.value.shape)
    x, h = rng.normal(size=(2, 3)), rng.normal(size=(2, 5))
    v = {n.split(".")[1]: store[n].value for n in store.names()}
    expected = []
    for xi, hi in zip(x, h):
        xh = np.concatenate([xi, hi])
        z = sigmoid(v["wz"] @ xh + v["bz"])
        r = sigmoid(v["wr"] @ xh + v["br"])
        cand = np.tanh(v["wh"] @ np.concatenate([xi, r * hi]) + v["bh"])
        expected.append((1 - z) * hi + z * cand)
    out = gru_cell(ParamView(store, "g"), Tensor(x), Tensor(h))
    np.testing.assert_allclose(out.data, expected, rtol=1e-13)


def test_gru_shape_mismatch():
    store = gru_store(3, 4)
    with pytest.raises(ShapeMismatch):
        gru_cell(ParamView(store, "g"), Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 4))))


# ---------------------------------------------------------------- backward

def test_linear_gradient_rows_equal_input():
    store = ParamStore()
    store.add("w", np.arange(6.0).reshape(2, 3))
    x = np.array([0.5, -1.0, 2.0])
    with Tape() as tape:
        loss = T.tensor_sum(T.linear(Tensor(x), store.tensor("w")))
    backward(tape, loss, store)
    np.testing.assert_array_equal(store["w"].grad, [x, x])


def test_squared_norm_gradient():
    x = variable([1.0, -2.0, 3.5])
    with Tape() as tape:
        loss = T.tensor_sum(T.square(x))
    backward(tape, loss)
    np.testing.assert_array_equal(x.grad, 2 * x.data)


def test_backward_needs_scalar_and_reports_disconnected():
    store = ParamStore()
    store.add("used", np.ones(2))
    store.add("unused", np.ones(2))
    with Tape() as tape:
        y = T.mul(store.tensor("used"), 3.0)
    with pytest.raises(NotScalarLoss):
        backward(tape, y, store)
    with Tape() as tape:
        loss = T.tensor_sum(T.mul(store.tensor("used"), 3.0))
    rep = backward(tape, loss, store)
    assert rep.disconnected == ["unused"]
    np.testing.assert_array_equal(store["used"].grad, [3.0, 3.0])


def test_no_tape_records_nothing():
    store = ParamStore()
    store.add("w", np.ones(2))
    out = T.mul(store.tensor("w"), 2.0)
    assert not out.requires_grad


OPS = {
    "relu": lambda a, b: T.relu(a),
    "sigmoid": lambda a, b: T.sigmoid(a),
    "tanh": lambda a, b: T.tanh(a),
    "cos": lambda a, b: T.cos(a),
    "exp": lambda a, b: T.exp(a),
    "log": lambda a, b: T.log(T.add(T.square(a), 1.0)),
    "mul": lambda a, b: T.mul(a, b),
    "sub_broadcast": lambda a, b: T.sub(a, T.gather(b, 0)),
    "matmul": lambda a, b: T.matmul(a, T.reshape(b, (b.shape[1], b.shape[0]))),
    "linear": lambda a, b: T.linear(a, b, T.gather(T.reshape(b, (-1,)), np.array([0, 4]))),
    "concat": lambda a, b: T.concat([a, b], axis=0),
    "softmax": lambda a, b: T.mul(T.softmax(a, mask=np.array([[1, 0, 1], [1, 1, 1]], bool)), b),
    "log_softmax": lambda a, b: T.mul(T.log_softmax(a, axis=0), b),
    "gather": lambda a, b: T.gather(a, np.array([1, 0, 1])),
    "row_update": lambda a, b: T.row_update(T.mul(a, 1.0), np.array([1]), T.gather(b, np.array([0]))),
    "sum_axis": lambda a, b: T.tensor_sum(T.mul(a, b), axis=1, keepdims=True),
    "mean": lambda a, b: T.mean(T.mul(a, a)),
    "broadcast": lambda a, b: T.broadcast_to(T.gather(a, np.array([0])), (4, 3)),
    "pick": lambda a, b: T.pick(a, (1, 2)),
    "pair_scores": lambda a, b: T.pair_scores(a, T.gather(b, 0), T.gather(b, 1), T.pick(b, (0, 0))),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_central_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    store = ParamStore()
    store.add("a", rng.normal(size=(2, 3)))
    store.add("b", rng.normal(size=(2, 3)))
    weights = rng.normal(size=64)

    def fn(s):
        out = OPS[name](s.tensor("a"), s.tensor("b"))
        flat = T.reshape(out, (-1,))
        return T.tensor_sum(T.mul(flat, Tensor(weights[:flat.shape[0]])))

    rep = grad_check(fn, store, h=1e-6)
    assert rep.max_rel_error < 1e-6, rep.lines()


# ---------------------------------------------------------------- grad_check

def test_grad_check_quadratic_is_exact():
    store = ParamStore()
    store.add("x", np.array([0.3, -1.2, 2.0]))
    rep = grad_check(lambda s: T.tensor_sum(T.square(s.tensor("x"))), store)
    assert rep.max_rel_error < 1e-9


def test_grad_check_softmax_cos_gru_chain():
    rng = np.random.default_rng(5)
    store = ParamStore()
    init_gru(store, "g", 3, 4, rng)
    init_mlp(store, "m", 4, 5, 3, rng)
    store.glorot("t.w", (3,), rng)
    store.glorot("t.b", (3,), rng)
    x = rng.normal(size=(2, 3))

    def fn(s):
        view = ParamView(s, "g")
        phi = time_encode(np.array([1.5, 2.5]), s.tensor("t.w"), s.tensor("t.b"))
        h = gru_cell(view, T.add(Tensor(x), phi), Tensor(np.ones((2, 4)) * 0.1))
        p = T.softmax(mlp(ParamView(s, "m"), h))
        return T.tensor_sum(T.mul(p, Tensor(x)))

    assert grad_check(fn, store).max_rel_error < 1e-4


def test_grad_check_ignored_parameter():
    store = ParamStore()
    store.add("x", np.array([1.0, 2.0]))
    store.add("ignored", np.array([3.0]))
    rep = grad_check(lambda s: T.tensor_sum(T.square(s.tensor("x"))), store)
    c = rep.params["ignored"]
    assert c.analytic == 0.0 and c.numeric == 0.0 and c.max_rel_error == 0.0


# ---------------------------------------------------------------- Adam

def test_adam_first_step_moves_by_lr():
    store = ParamStore()
    store.add("x", np.array([1.0]))
    store["x"].grad[...] = 1.0
    adam_step(store, lr=0.1, t=1)
    delta = 1.0 - store["x"].value[0]
    assert 0.0999 <= delta <= 0.1


def test_adam_zero_gradient_keeps_value():
    store = ParamStore()
    store.add("x", np.array([1.0, -4.0]))
    adam_step(store, lr=0.1, t=1)
    np.testing.assert_array_equal(store["x"].value, [1.0, -4.0])


def test_adam_minimizes_square_like_scalar_recurrence():
    store = ParamStore()
    store.add("x", np.array([1.0]))
    # independent scalar recurrence
    x, m, v = 1.0, 0.0, 0.0
    for t in range(1, 101):
        store["x"].grad[...] = 2.0 * store["x"].value
        adam_step(store, lr=0.05, t=t)
        g = 2.0 * x
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.05 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert abs(store["x"].value[0]) < 0.1
    assert store["x"].value[0] == pytest.approx(x, abs=1e-12)
    with pytest.raises(ValueError):
        adam_step(store, t=0)


def test_clip_grad_norm():
    store = ParamStore()
    store.add("x", np.zeros(2))
    store["x"].grad[...] = [3.0, 4.0]
    assert store.clip_grad_norm(1.0) == 5.0
    np.testing.assert_allclose(store["x"].grad, [0.6, 0.8])


# ---------------------------------------------------------------- checkpoint container

def test_checkpoint_round_trip_and_errors():
    params = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([1.5], dtype=np.float32)}
    blob = encode(params, {"k": 1}, seed=3, step=7)
    header, back = decode(blob)
    assert header["seed"] == 3 and header["step"] == 7 and header["config"] == {"k": 1}
    for k in params:
        assert back[k].dtype == params[k].dtype
        assert back[k].tobytes() == params[k].tobytes()
    with pytest.raises(CorruptCheckpoint):
        decode(blob[:-3])
    with pytest.raises(CorruptCheckpoint):
        decode(blob + b"\x00")
    with pytest.raises(CorruptCheckpoint):
        decode(b"garbage" * 4)
    tampered = blob.replace(b'"format_version":1', b'"format_version":9')
    with pytest.raises(VersionMismatch):
        decode(tampered)
