import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lidnet.tensor import (
    ContractError,
    DimensionError,
    InvalidMaskError,
    Parameter,
    Tensor,
    affine,
    backward,
    cross_entropy,
    grad_check,
    matmul,
    mul,
    precision,
    relu_map,
    softmax_rows,
    tanh_map,
    weighted_sum,
)


def test_tensor_rejects_zero_dimension():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((0, 3)))


def test_default_dtype_is_float32_and_precision_switches():
    assert Tensor([1.0]).data.dtype == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).data.dtype == np.float64
    assert Tensor([1.0]).data.dtype == np.float32


class TestAffine:
    def test_identity(self):
        out = affine(Tensor([[1, 2]]), Tensor([[1, 0], [0, 1]]), Tensor([0, 0]))
        np.testing.assert_array_equal(out.data, [[1, 2]])

    def test_bias_shift(self):
        out = affine(Tensor([[1, 2]]), Tensor([[1, 0], [0, 1]]), Tensor([3, 4]))
        np.testing.assert_array_equal(out.data, [[4, 6]])

    def test_hand_multiply(self):
        out = affine(Tensor([[1, 2], [3, 4]]), Tensor([[1, 1], [1, -1]]), Tensor([0, 0]))
        np.testing.assert_array_equal(out.data, [[3, -1], [7, -1]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(1, 3\).*\(2, 2\)"):
            affine(Tensor([[1, 2, 3]]), Tensor(np.eye(2)), Tensor([0, 0]))

    def test_output_shape(self):
        out = affine(Tensor(np.ones((7, 3))), Tensor(np.ones((3, 5))), Tensor(np.zeros(5)))
        assert out.shape == (7, 5)


class TestElementwise:
    def test_tanh_values(self):
        assert tanh_map(Tensor([0.0])).data[0] == 0
        assert abs(tanh_map(Tensor([1e6])).data[0] - 1.0) < 1e-7
        assert tanh_map(Tensor([1.0])).data[0] == pytest.approx(math.tanh(1.0), abs=1e-7)

    def test_relu_values(self):
        np.testing.assert_array_equal(relu_map(Tensor([-1, 0, 2])).data, [0, 0, 2])
        np.testing.assert_array_equal(relu_map(Tensor([-3, -1e-3])).data, [0, 0])
        assert relu_map(Tensor([3.5])).data[0] == 3.5

    def test_relu_subgradient_at_zero_is_zero(self):
        x = Parameter("x", [0.0, 1.0, -1.0])
        relu_map(x).sum().backward()
        np.testing.assert_array_equal(x.grad, [0, 1, 0])

    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-50, 50)))
    def test_shape_preserved(self, x):
        assert tanh_map(Tensor(x)).shape == x.shape
        assert relu_map(Tensor(x)).shape == x.shape


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_rows(Tensor([[0, 0, 0]])).data, [[1 / 3] * 3], atol=1e-7)

    def test_large_logits_stable(self):
        s = softmax_rows(Tensor([[1000.0, 0.0]])).data
        assert np.all(np.isfinite(s))
        np.testing.assert_allclose(s, [[1.0, 0.0]], atol=1e-7)

    def test_closed_form(self):
        s = softmax_rows(Tensor([[math.log(2), 0.0]])).data
        np.testing.assert_allclose(s, [[2 / 3, 1 / 3]], atol=1e-6)

    def test_masked_entries_exactly_zero(self):
        s = softmax_rows(Tensor([[1.0, 5.0, 2.0]]), mask=[[True, False, True]]).data
        assert s[0, 1] == 0.0
        assert s[0].sum() == pytest.approx(1.0, abs=1e-6)

    def test_fully_masked_row(self):
        with pytest.raises(InvalidMaskError):
            softmax_rows(Tensor([[1.0, 2.0], [0.0, 0.0]]), mask=[[True, True], [False, False]])

    @settings(max_examples=60)
    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 12)), elements=st.floats(-80, 80)))
    def test_rows_are_distributions(self, x):
        s = softmax_rows(Tensor(x)).data
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-5)
        assert np.all((s >= 0) & (s <= 1))


class TestBackward:
    def test_sum_gives_ones(self):
        x = Parameter("x", np.arange(6.0).reshape(2, 3))
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_tanh_derivative(self):
        rng = np.random.default_rng(0)
        with precision(np.float64):
            x = Parameter("x", rng.normal(size=(4, 3)))
            tanh_map(x).sum().backward()
        np.testing.assert_allclose(x.grad, 1 - np.tanh(x.data) ** 2, atol=1e-12)

    def test_unused_parameter_gets_zero_grad(self):
        x, unused = Parameter("x", [1.0, 2.0]), Parameter("unused", [3.0])
        grads = backward(x.sum(), [x, unused])
        np.testing.assert_array_equal(grads["unused"], [0.0])
        np.testing.assert_array_equal(grads["x"], [1.0, 1.0])

    def test_non_scalar_loss(self):
        with pytest.raises(ContractError):
            Parameter("x", [1.0, 2.0]).backward()

    def test_shared_subgraph_accumulates(self):
        x = Parameter("x", [2.0])
        y = mul(x, x)
        (y + y).sum().backward()
        assert x.grad[0] == pytest.approx(8.0)

    def test_second_backward_doubles(self):
        rng = np.random.default_rng(1)
        with precision(np.float64):
            w = Parameter("w", rng.normal(size=(3, 2)))
            x = Tensor(rng.normal(size=(4, 3)))
            loss = tanh_map(matmul(x, w)).sum()
            loss.backward()
            first = w.grad.copy()
            loss.backward()
        np.testing.assert_allclose(w.grad, 2 * first, rtol=1e-12)


class TestGradCheck:
    def test_quadratic(self):
        rng = np.random.default_rng(2)
        with precision(np.float64):
            p = Parameter("p", rng.normal(size=5))
            err = grad_check(lambda: mul(mul(p, p).sum(), 0.5), [p], eps=1e-3)
        assert err < 1e-6

    def test_constant(self):
        p = Parameter("p", [1.0, 2.0])
        assert grad_check(lambda: Tensor(3.0), [p]) == 0.0

    def test_relu_away_from_zero(self):
        with precision(np.float64):
            p = Parameter("p", [0.5, -0.7, 1.3, -2.0])
            assert grad_check(lambda: relu_map(p).sum(), [p], eps=1e-3) < 1e-4

    def test_composition_float64_and_float32(self):
        rng = np.random.default_rng(3)
        for dtype, tol in ((np.float64, 1e-5), (np.float32, 1e-3)):
            with precision(dtype):
                w = Parameter("w", rng.normal(size=(3, 4)) * 0.5)
                b = Parameter("b", rng.normal(size=4) * 0.1)
                x = Tensor(rng.normal(size=(5, 3)))
                labels = [0, 1, 2, 3, 0]
                err = grad_check(lambda: cross_entropy(tanh_map(affine(x, w, b)), labels), [w, b])
            assert err < tol, dtype


class TestCrossEntropy:
    def test_uniform(self):
        assert float(cross_entropy(Tensor(np.zeros(16)), 3).data) == pytest.approx(math.log(16), abs=1e-6)

    def test_saturated(self):
        z = np.zeros(16)
        z[5] = 100
        assert float(cross_entropy(Tensor(z), 5).data) < 1e-8

    def test_closed_form(self):
        assert float(cross_entropy(Tensor([math.log(2), 0.0]), 0).data) == pytest.approx(0.405465, abs=1e-6)

    def test_label_out_of_range(self):
        with pytest.raises(ContractError):
            cross_entropy(Tensor(np.zeros(4)), 4)

    @given(arrays(np.float64, 6, elements=st.floats(-20, 20)), st.integers(0, 5), st.floats(-50, 50))
    def test_shift_invariance(self, z, label, c):
        with precision(np.float64):
            a = float(cross_entropy(Tensor(z), label).data)
            b = float(cross_entropy(Tensor(z + c), label).data)
        assert a == pytest.approx(b, abs=1e-6)
        assert a >= 0


def test_weighted_sum_matches_einsum():
    rng = np.random.default_rng(4)
    w, x = rng.random((2, 5)), rng.normal(size=(2, 5, 3))
    out = weighted_sum(Tensor(w), Tensor(x)).data
    np.testing.assert_allclose(out, np.einsum("nt,ntc->nc", w, x), rtol=1e-5)
