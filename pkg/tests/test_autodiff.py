import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hetskel.autodiff import (
    Adam,
    BatchNorm1d,
    OptimizerState,
    Parameter,
    Tape,
    Tensor,
    adam_step,
    attention,
    batch_norm_1d,
    gradient_check,
    leaky_relu,
    matmul,
    softmax,
)
from hetskel.autodiff import tensor as T
from hetskel.checks import TOLERANCE, primitive_suites
from hetskel.errors import DegenerateBatchError, NonFiniteError, ShapeError

shapes = st.lists(st.integers(1, 8), min_size=1, max_size=3).map(tuple)


def leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


# matmul


def test_matmul_identity():
    out = matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [4.0]])


def test_matmul_row_times_column():
    assert matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_gradient_matches_finite_differences(rng):
    a, b = leaf(rng, 3, 3), leaf(rng, 3, 3)
    assert gradient_check(lambda: matmul(a, b).sum(), [a], h=1e-4) < 1e-6


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_backward_rules(rng):
    a, b = leaf(rng, 2, 3), leaf(rng, 3, 4)
    g = rng.normal(size=(2, 4))
    matmul(a, b).backward(g)
    np.testing.assert_allclose(a.grad, g @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ g)


# leaky relu


def test_leaky_relu_values():
    assert leaky_relu(Tensor(2.0), 0.01).item() == 2.0
    assert leaky_relu(Tensor(-3.0), 0.01).item() == pytest.approx(-0.03)


def test_leaky_relu_tie_at_zero_takes_positive_branch():
    x = Tensor(0.0, requires_grad=True)
    y = leaky_relu(x, 0.01)
    y.backward()
    assert y.item() == 0.0
    assert x.grad == 1.0


def test_leaky_relu_negative_factor_is_slope():
    x = Tensor([-1.0, 4.0], requires_grad=True)
    leaky_relu(x, 0.2).sum().backward()
    np.testing.assert_allclose(x.grad, [0.2, 1.0])


# batch norm


def test_batch_norm_fixed_point():
    x = np.array([[1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [-1.0, -1.0]])
    out = batch_norm_1d(Tensor(x), BatchNorm1d(2), "train")
    np.testing.assert_allclose(out.data, x, atol=1e-5)
    assert np.max(np.abs(out.data - x)) < 1e-5 * 1.0 + 1e-6


def test_batch_norm_constant_column_is_zero():
    x = np.column_stack([np.full(5, 3.7), np.arange(5.0)])
    out = batch_norm_1d(Tensor(x), BatchNorm1d(2), "train")
    np.testing.assert_array_equal(out.data[:, 0], 0.0)
    assert np.all(np.isfinite(out.data))


def test_batch_norm_gradient(rng):
    x = leaf(rng, 4, 3)
    bn = BatchNorm1d(3)
    bn.weight.data = rng.normal(size=3)
    c = rng.normal(size=(4, 3))
    err = gradient_check(lambda: (batch_norm_1d(x, bn, "train") * c).sum(), [x, bn.weight, bn.bias])
    assert err < 1e-4


def test_batch_norm_needs_two_rows_in_train_mode():
    with pytest.raises(DegenerateBatchError):
        batch_norm_1d(Tensor(np.ones((1, 3))), BatchNorm1d(3), "train")


def test_batch_norm_eval_uses_running_stats(rng):
    bn = BatchNorm1d(2)
    x = rng.normal(2.0, 3.0, size=(50, 2))
    for _ in range(200):
        batch_norm_1d(Tensor(x), bn, "train")
    np.testing.assert_allclose(bn._buffers["running_mean"], x.mean(axis=0), rtol=1e-6)
    np.testing.assert_allclose(bn._buffers["running_var"], x.var(axis=0, ddof=1), rtol=1e-6)
    out = batch_norm_1d(Tensor(x[:1]), bn, "eval")
    expected = (x[:1] - x.mean(axis=0)) / np.sqrt(x.var(axis=0, ddof=1) + 1e-5)
    np.testing.assert_allclose(out.data, expected, rtol=1e-6)


# attention


def test_attention_single_token_passes_value_through(rng):
    q, k, v = (Tensor(rng.normal(size=(1, 4))) for _ in range(3))
    np.testing.assert_array_equal(attention(q, k, v).data, v.data)


def test_attention_zero_query_averages_values(rng):
    k, v = Tensor(rng.normal(size=(5, 3))), Tensor(rng.normal(size=(5, 3)))
    out = attention(Tensor(np.zeros((5, 3))), k, v)
    np.testing.assert_allclose(out.data, np.broadcast_to(v.data.mean(axis=0), (5, 3)), atol=1e-15)


def test_attention_gradient_wrt_query(rng):
    q, k, v = leaf(rng, 3, 2), leaf(rng, 3, 2), leaf(rng, 3, 2)
    c = rng.normal(size=(3, 2))
    assert gradient_check(lambda: (attention(q, k, v) * c).sum(), [q]) < 1e-4


def test_attention_matches_direct_formula(rng):
    q, k, v = (rng.normal(size=(2, 4, 3)) for _ in range(3))
    s = q @ np.swapaxes(k, -1, -2) / np.sqrt(3)
    w = np.exp(s - s.max(axis=-1, keepdims=True))
    w /= w.sum(axis=-1, keepdims=True)
    out = attention(Tensor(q), Tensor(k), Tensor(v))
    np.testing.assert_allclose(out.data, w @ v, rtol=1e-12)


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_attention_output_in_convex_hull_of_values(length, d, seed):
    rng = np.random.default_rng(seed)
    q, k, v = (rng.normal(size=(length, d)) for _ in range(3))
    out = attention(Tensor(q), Tensor(k), Tensor(v)).data
    tol = 1e-12
    assert np.all(out >= v.min(axis=0) - tol)
    assert np.all(out <= v.max(axis=0) + tol)


@given(shapes, st.integers(0, 2**32 - 1))
def test_softmax_rows_sum_to_one(shape, seed):
    x = np.random.default_rng(seed).normal(scale=5.0, size=shape)
    out = softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)


# adam


def test_adam_zero_gradient_keeps_parameter():
    p = Parameter(np.array([1.5, -2.0]))
    state = OptimizerState(lr=0.1)
    for _ in range(3):
        adam_step({"w": p}, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(p.data, [1.5, -2.0])
    np.testing.assert_array_equal(state.first["w"], 0.0)


def test_adam_zero_gradient_decays_moments():
    p = Parameter(np.array([1.5]))
    state = OptimizerState(lr=0.1)
    state.first["w"] = np.array([0.5])
    state.second["w"] = np.array([0.25])
    adam_step({"w": p}, {"w": np.zeros(1)}, state)
    assert state.first["w"][0] == pytest.approx(0.45)
    assert state.second["w"][0] == pytest.approx(0.24975)


def test_adam_first_step_on_square():
    w = Parameter(np.array([1.0]))
    opt = Adam([("w", w)], lr=0.1)
    (w * w).sum().backward()
    opt.step()
    # the bias-corrected first step has magnitude lr / (1 + eps / |g|)
    assert w.data[0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8 / 2.0), abs=1e-15)
    assert w.data[0] == pytest.approx(0.9, abs=1e-8)


def test_adam_converges_on_shifted_square():
    w = Parameter(np.array([0.0]))
    opt = Adam([("w", w)], lr=0.1)
    for _ in range(500):
        ((w - 3.0) * (w - 3.0)).sum().backward()
        opt.step()
    assert abs(w.data[0] - 3.0) < 1e-3


def test_adam_rejects_non_finite_gradient_by_name():
    p = Parameter(np.zeros(2))
    with pytest.raises(NonFiniteError, match="encoder.w"):
        adam_step({"encoder.w": p}, {"encoder.w": np.array([0.0, np.nan])}, OptimizerState())
    np.testing.assert_array_equal(p.data, 0.0)


def test_adam_step_counter_increases_and_moment_shapes_match():
    p = Parameter(np.ones((2, 3)))
    state = OptimizerState()
    for i in range(3):
        adam_step({"p": p}, {"p": np.ones((2, 3))}, state)
        assert state.step == i + 1
    assert state.first["p"].shape == state.second["p"].shape == (2, 3)


def test_adam_is_deterministic():
    def run():
        w = Parameter(np.array([0.3, -1.2]))
        opt = Adam([("w", w)], lr=0.05)
        for _ in range(20):
            (w * w * w).sum().backward()
            opt.step()
        return w.data

    np.testing.assert_array_equal(run(), run())


# gradient check harness


def test_gradient_check_sum_of_squares(rng):
    x = leaf(rng, 4, 3)
    assert gradient_check(lambda: (x * x).sum(), [x]) < 1e-8


def test_gradient_check_detects_wrong_backward(rng):
    def bad_square(a):
        return Tensor._result(a.data**2, (a,), lambda g: (g * 3.0 * a.data,), "bad_square")

    x = leaf(rng, 5)
    assert gradient_check(lambda: bad_square(x).sum(), [x]) > 1e-2


def test_gradient_check_rejects_nonpositive_step(rng):
    x = leaf(rng, 2)
    with pytest.raises(ValueError):
        gradient_check(lambda: x.sum(), [x], h=0.0)


def test_every_primitive_suite_passes():
    results = primitive_suites(seed=3)
    assert len(results) >= 25
    failed = [(r.name, r.error) for r in results if r.error > TOLERANCE]
    assert not failed


unary = {
    "exp": T.exp,
    "tanh_like": lambda x: T.exp(x) / (T.exp(x) + 1.0),
    "square": T.square,
    "softmax": lambda x: T.softmax(x, axis=-1),
    "log_softmax": lambda x: T.log_softmax(x, axis=-1),
    "mean": lambda x: T.mean(x, axis=-1, keepdims=True),
    "leaky_relu": lambda x: T.leaky_relu(x * 1.0 + 0.05, 0.1),
}


@given(shapes, st.sampled_from(sorted(unary)), st.integers(0, 2**32 - 1))
def test_primitive_gradients_on_random_shapes(shape, name, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=shape), requires_grad=True)
    if name == "leaky_relu":
        # stay clear of the kink for central differences
        x.data = np.where(np.abs(x.data + 0.05) < 1e-2, 0.5, x.data)
    out = unary[name](x)
    c = rng.normal(size=out.shape)
    assert gradient_check(lambda: (unary[name](x) * c).sum(), [x]) < 1e-4


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_matmul_and_broadcast_gradients_on_random_shapes(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b, bias = leaf(rng, m, k), leaf(rng, k, n), leaf(rng, n)
    c = rng.normal(size=(m, n))
    assert gradient_check(lambda: ((matmul(a, b) + bias) * c).sum(), [a, b, bias]) < 1e-4


# tape


def test_tape_replay_gives_identical_gradients(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
    out = T.softmax(matmul(a, b), axis=-1).sum(axis=0)
    loss = (out * out).sum()
    tape = Tape(loss)
    tape.backward()
    first = (a.grad.copy(), b.grad.copy())
    tape.backward()
    np.testing.assert_array_equal(a.grad, first[0])
    np.testing.assert_array_equal(b.grad, first[1])


def test_tape_is_topologically_ordered(rng):
    a = leaf(rng, 3)
    h = T.exp(a) * a
    loss = (h + h).sum()
    tape = Tape(loss)
    position = {id(n): i for i, n in enumerate(tape.nodes)}
    assert len(position) == len(tape.nodes)
    for node in tape.nodes:
        for parent in node._parents:
            assert position[id(parent)] < position[id(node)]


def test_shared_subexpression_accumulates(rng):
    a = leaf(rng, 3)
    (a * a + a).sum().backward()
    np.testing.assert_allclose(a.grad, 2 * a.data + 1)


@given(shapes, st.integers(0, 2**32 - 1))
def test_forward_is_bitwise_deterministic(shape, seed):
    x = np.random.default_rng(seed).normal(size=shape)

    def f():
        t = Tensor(x)
        return T.layer_norm(T.softmax(t, axis=-1), Tensor(np.ones(shape[-1])), Tensor(np.zeros(shape[-1]))).data

    assert f().tobytes() == f().tobytes()


@given(shapes, st.integers(0, 2**32 - 1))
def test_finite_inputs_give_finite_outputs(shape, seed):
    x = Tensor(np.random.default_rng(seed).normal(scale=30.0, size=shape))
    for out in (T.softmax(x), T.log_softmax(x), T.relu(x), T.leaky_relu(x), x * x):
        assert np.all(np.isfinite(out.data))


def test_no_grad_records_nothing(rng):
    a = leaf(rng, 2)
    with T.no_grad():
        out = a * 2.0
    assert not out.requires_grad
    assert out.is_leaf


def test_scalar_backward_requires_scalar(rng):
    with pytest.raises(ShapeError):
        (leaf(rng, 3) * 2.0).backward()


def test_watch_margins_records_closest_approach():
    x = Tensor(np.array([-0.5, 0.002, 3.0]))
    with T.watch_margins() as seen:
        T.relu(x)
        T.leaky_relu(x * 2.0, 0.1)
        T.sqrt(Tensor(np.array([4.0, 1e-6])))
    assert seen == {"relu": 0.002, "leaky_relu": 0.004, "sqrt": 1e-6}
    # nothing is recorded outside the context
    T.relu(Tensor(np.zeros(2)))
    assert seen["relu"] == 0.002
