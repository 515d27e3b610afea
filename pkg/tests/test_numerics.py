import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lattice_ftm.numerics import (
    BatchNormState,
    GradCheckError,
    Parameter,
    Tensor,
    batch_norm,
    bce_loss,
    grad_check,
    grad_check_report,
    init_glorot,
    layer_norm,
    masked_mean_pool,
    masked_row_softmax,
    matmul,
    mul,
    no_grad,
    relu,
    sigmoid,
    total,
    transpose,
    reshape,
    add,
)

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


class TestMaskedSoftmax:
    def test_single(self):
        np.testing.assert_array_equal(masked_row_softmax([[3.7]], [[1]]).data, [[1.0]])

    def test_uniform(self):
        p = masked_row_softmax(np.full((1, 5), 0.3), [[1, 0, 1, 1, 0]]).data
        np.testing.assert_allclose(p, [[1 / 3, 0, 1 / 3, 1 / 3, 0]], atol=1e-15)

    def test_direct_evaluation(self):
        p = masked_row_softmax([[2.0, 1.0, 0.0]], [[1, 1, 0]]).data[0]
        z = math.exp(2) + math.exp(1)
        np.testing.assert_allclose(p, [math.exp(2) / z, math.exp(1) / z, 0.0], rtol=1e-15)
        assert p[2] == 0.0
        assert p[0] == pytest.approx(0.7311, abs=1e-4)

    def test_large_logits_stable(self):
        p = masked_row_softmax([[1000.0, 999.0, -1000.0]], [[1, 1, 1]]).data
        assert np.isfinite(p).all()
        assert p[0, 0] == pytest.approx(1 / (1 + math.exp(-1)))

    def test_empty_row_rejected(self):
        with pytest.raises(ValueError):
            masked_row_softmax(np.zeros((2, 2)), [[1, 0], [0, 0]])

    @settings(max_examples=80, deadline=None)
    @given(hnp.arrays(np.float64, (4, 4), elements=finite),
           hnp.arrays(np.bool_, (4, 4)), st.lists(finite, min_size=4, max_size=4))
    def test_rows_and_shift_invariance(self, logits, mask, shift):
        mask = mask | np.eye(4, dtype=bool)
        p = masked_row_softmax(logits, mask).data
        assert np.abs(p.sum(axis=1) - 1).max() < 1e-12
        assert (p[~mask] == 0).all()
        q = masked_row_softmax(logits + np.array(shift)[:, None], mask).data
        assert np.abs(p - q).max() < 1e-12


class TestMeanPool:
    def test_cases(self):
        np.testing.assert_array_equal(masked_mean_pool([[1.0, 2.0]], [1]).data, [1.0, 2.0])
        np.testing.assert_array_equal(masked_mean_pool([[1.0, 1], [3, 3]], [1, 1]).data, [2, 2])
        np.testing.assert_array_equal(
            masked_mean_pool([[1.0, 1], [3, 3], [99, 99]], [1, 1, 0]).data, [2, 2])

    def test_no_valid_rows(self):
        with pytest.raises(ValueError):
            masked_mean_pool([[1.0]], [0])

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)), elements=finite))
    def test_all_valid_is_plain_mean(self, h):
        out = masked_mean_pool(h, np.ones(h.shape[0])).data
        np.testing.assert_allclose(out, h.mean(axis=0), atol=1e-12)


class TestBce:
    def test_values(self):
        assert float(bce_loss([0.5], [1]).data) == pytest.approx(math.log(2), abs=1e-12)
        assert float(bce_loss([0.9], [0]).data) == pytest.approx(-math.log(0.1), abs=1e-12)
        assert float(bce_loss([0.9], [0]).data) == pytest.approx(2.302585, abs=1e-6)
        assert float(bce_loss([1 - 1e-7], [1]).data) == pytest.approx(1e-7, rel=1e-3)

    def test_clamped_extremes_finite(self):
        assert float(bce_loss([1.0], [1]).data) == pytest.approx(1e-7, rel=1e-3)
        assert np.isfinite(bce_loss([0.0, 1.0], [1, 0]).data)
        assert float(bce_loss([0.0], [1]).data) == pytest.approx(-math.log(1e-7))

    def test_batch_mean(self):
        p, y = [0.2, 0.7, 0.9], [0, 1, 1]
        expected = np.mean([-math.log(0.8), -math.log(0.7), -math.log(0.9)])
        assert float(bce_loss(p, y).data) == pytest.approx(expected, abs=1e-14)


class TestBatchNorm:
    def test_hand_computed(self):
        state = BatchNormState(1)
        out = batch_norm(np.array([[1.0], [3.0]]), np.ones(1), np.zeros(1), state, True).data
        # mean 2, biased var 1
        np.testing.assert_allclose(out[:, 0], [-1 / math.sqrt(1 + 1e-5), 1 / math.sqrt(1 + 1e-5)])
        np.testing.assert_allclose(state.running_mean, [0.2])
        np.testing.assert_allclose(state.running_var, [0.9 + 0.1 * 1.0])

    def test_inference_identity(self):
        x = np.random.default_rng(0).normal(size=(5, 3))
        out = batch_norm(x, np.ones(3), np.zeros(3), BatchNormState(3), False).data
        np.testing.assert_allclose(out, x / math.sqrt(1 + 1e-5), rtol=1e-14)
        np.testing.assert_allclose(out, x, atol=1e-4)

    def test_constant_column(self):
        out = batch_norm(np.full((4, 1), 7.0), np.ones(1), np.full(1, 0.25), BatchNormState(1), True)
        np.testing.assert_array_equal(out.data, np.full((4, 1), 0.25))

    def test_padded_rows_excluded(self):
        x = np.array([[[1.0], [3.0], [500.0]]])
        s1, s2 = BatchNormState(1), BatchNormState(1)
        masked = batch_norm(x, np.ones(1), np.zeros(1), s1, True, valid=[[1, 1, 0]]).data
        plain = batch_norm(x[:, :2], np.ones(1), np.zeros(1), s2, True).data
        np.testing.assert_array_equal(masked[0, :2], plain[0])
        assert masked[0, 2, 0] == 0.0
        np.testing.assert_array_equal(s1.running_mean, s2.running_mean)
        np.testing.assert_array_equal(s1.running_var, s2.running_var)


def test_layer_norm_rows():
    x = np.random.default_rng(1).normal(size=(3, 8)) * 5 + 2
    y = layer_norm(x, np.ones(8), np.zeros(8)).data
    np.testing.assert_allclose(y.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=1), 1, atol=1e-4)


class TestGlorot:
    def test_deterministic_and_bounded(self):
        a, b = init_glorot(20, 64, 5), init_glorot(20, 64, 5)
        np.testing.assert_array_equal(a, b)
        assert np.abs(a).max() <= math.sqrt(6 / 84)
        assert not np.array_equal(a, init_glorot(20, 64, 6))

    def test_bad_dims(self):
        with pytest.raises(ValueError):
            init_glorot(0, 3, 1)


# ---------------------------------------------------------------------------
# reverse mode vs central differences, primitive by primitive
# ---------------------------------------------------------------------------


def test_grad_check_square():
    w = Parameter([3.0], "w")
    assert grad_check(lambda: total(mul(w, w)), [w]) < 1e-10
    w.zero_grad()
    total(mul(w, w)).backward()
    assert w.grad[0] == 6.0


def _away_from_zero(rng, shape):
    x = rng.uniform(0.2, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _projected(out, proj):
    return total(mul(out, proj))


PRIMITIVES = {
    "matmul": lambda rng: (
        [Parameter(rng.normal(size=(3, 4)), "a"), Parameter(rng.normal(size=(2, 4, 5)), "b")],
        lambda a, b: matmul(a, b), (2, 3, 5)),
    "broadcast_add": lambda rng: (
        [Parameter(rng.normal(size=(2, 3, 4)), "a"), Parameter(rng.normal(size=(4,)), "b")],
        lambda a, b: add(a, b), (2, 3, 4)),
    "relu": lambda rng: (
        [Parameter(_away_from_zero(rng, (3, 4)), "x")], lambda x: relu(x), (3, 4)),
    "sigmoid": lambda rng: (
        [Parameter(rng.normal(size=(3, 4)) * 3, "x")], lambda x: sigmoid(x), (3, 4)),
    "masked_softmax": lambda rng: (
        [Parameter(rng.normal(size=(2, 4, 4)), "x")],
        lambda x: masked_row_softmax(x, np.tril(np.ones((4, 4)))), (2, 4, 4)),
    "masked_mean_pool": lambda rng: (
        [Parameter(rng.normal(size=(2, 4, 3)), "x")],
        lambda x: masked_mean_pool(x, [[1, 1, 0, 0], [1, 1, 1, 1]]), (2, 3)),
    "transpose_reshape": lambda rng: (
        [Parameter(rng.normal(size=(2, 3, 4)), "x")],
        lambda x: reshape(transpose(x, (2, 0, 1)), (4, 6)), (4, 6)),
    "layer_norm": lambda rng: (
        [Parameter(rng.normal(size=(3, 5)), "x"), Parameter(rng.normal(size=5), "g"),
         Parameter(rng.normal(size=5), "b")],
        lambda x, g, b: layer_norm(x, g, b), (3, 5)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_primitive_gradients(name, seed):
    rng = np.random.default_rng(seed)
    params, fn, out_shape = PRIMITIVES[name](rng)
    proj = rng.normal(size=out_shape)
    assert grad_check(lambda: _projected(fn(*params), proj), params) < 1e-4


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_batch_norm_training_gradient(seed):
    rng = np.random.default_rng(seed)
    x = Parameter(rng.normal(size=(2, 4, 3)), "x")
    g = Parameter(rng.normal(size=3), "g")
    b = Parameter(rng.normal(size=3), "b")
    valid = np.array([[1, 1, 1, 0], [1, 1, 0, 0]])
    proj = rng.normal(size=(2, 4, 3))
    state = BatchNormState(3)
    f = lambda: _projected(batch_norm(x, g, b, state, True, valid), proj)
    assert grad_check(f, [x, g, b]) < 1e-4
    x.zero_grad()
    f().backward()
    assert (x.grad[valid == 0] == 0).all()


def test_batch_norm_inference_gradient():
    rng = np.random.default_rng(3)
    x = Parameter(rng.normal(size=(5, 3)), "x")
    g = Parameter(rng.normal(size=3), "g")
    b = Parameter(rng.normal(size=3), "b")
    state = BatchNormState(3, running_mean=rng.normal(size=3), running_var=rng.uniform(0.5, 2, 3))
    proj = rng.normal(size=(5, 3))
    assert grad_check(lambda: _projected(batch_norm(x, g, b, state, False), proj), [x, g, b]) < 1e-4


@pytest.mark.parametrize("labels", [[0, 1, 1], [1, 0, 0]])
def test_bce_sigmoid_gradient(labels):
    z = Parameter([0.3, -1.2, 2.0], "z")
    assert grad_check(lambda: bce_loss(sigmoid(z), labels), [z]) < 1e-4


def test_grad_check_detects_wrong_gradient():
    w = Parameter([1.5, -0.5], "w")

    def bump(grads):
        grads[0][0] *= 1.01

    report = grad_check_report(lambda: total(mul(w, w)), [w], analytic_hook=bump)
    assert report.max_error > 1e-3
    assert report.worst_parameter == "w" and report.worst_index == (0,)


def test_grad_check_non_finite():
    w = Parameter([1.0], "w")
    with pytest.raises(GradCheckError):
        grad_check(lambda: total(mul(w, np.inf)), [w])


def test_no_grad_skips_graph():
    w = Parameter([2.0], "w")
    with no_grad():
        out = mul(w, w)
    assert not out.requires_grad
    assert mul(w, w).requires_grad


def test_shared_subexpression_accumulates():
    w = Parameter([2.0, 3.0], "w")
    y = mul(w, w)
    out = total(add(y, y))
    w.zero_grad()
    out.backward()
    np.testing.assert_array_equal(w.grad, [8.0, 12.0])
    assert isinstance(out, Tensor)
