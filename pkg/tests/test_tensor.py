import math

import numpy as np
import pytest

from healnet.models import tensor as T
from healnet.models.tensor import GradTape, Parameter, Tensor, backward
from healnet.utils.errors import ContractError, DimensionError


class TestForward:
    def test_matmul_identity(self):
        out = T.matmul(Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_matmul_row_by_column(self):
        out = Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_matmul_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    @pytest.mark.parametrize(
        "values, expected",
        [
            ([0.0, 0.0], [0.5, 0.5]),
            ([math.log(1.0), math.log(3.0)], [0.25, 0.75]),
            ([1000.0, 1000.0], [0.5, 0.5]),
        ],
    )
    def test_softmax(self, values, expected):
        out = T.softmax(Tensor(values), axis=-1)
        np.testing.assert_allclose(out.data, expected, rtol=1e-6)
        assert np.all(np.isfinite(out.data))

    def test_softmax_invalid_axis(self):
        with pytest.raises(DimensionError):
            T.softmax(Tensor(np.ones((2, 3))), axis=2)

    def test_selu_fixed_points(self):
        out = T.selu(Tensor([0.0, 1.0]))
        assert out.data[0] == 0.0
        assert out.data[1] == pytest.approx(T.SELU_LAMBDA, rel=1e-6)

    def test_selu_self_normalizes(self):
        x = np.random.default_rng(0).standard_normal(1_000_000)
        out = T.selu(Tensor(x)).data.astype(np.float64)
        assert abs(out.mean()) < 0.05
        assert abs(out.var() - 1.0) < 0.1

    def test_sigmoid_saturates_without_nan(self):
        out = T.sigmoid(Tensor([0.0, -100.0, 100.0]))
        assert out.data[0] == 0.5
        assert 0.0 <= out.data[1] <= 1e-6
        assert out.data[2] == pytest.approx(1.0)
        assert not np.any(np.isnan(out.data))

    def test_dropout_is_identity_at_inference(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        assert T.dropout(x, 0.5, training=False) is x

    def test_dropout_needs_generator_when_training(self):
        with pytest.raises(ContractError):
            T.dropout(Tensor(np.ones(3)), 0.5, training=True)

    def test_dropout_keeps_expectation(self):
        x = Tensor(np.ones(200_000))
        out = T.dropout(x, 0.3, training=True, generator=np.random.default_rng(0))
        assert out.data.mean() == pytest.approx(1.0, abs=0.01)
        values = np.unique(out.data)
        assert len(values) == 2
        assert values[0] == 0.0
        assert values[1] == pytest.approx(1 / 0.7, rel=1e-6)

    def test_layer_norm_of_constant_row_is_zero(self):
        out = T.layer_norm(Tensor(np.full((2, 5), 3.5)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 5)))

    def test_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))

    def test_concat_and_reshape(self):
        a, b = Tensor(np.ones((2, 1))), Tensor(np.zeros((2, 2)))
        out = T.concat_last_axis([a, b])
        assert out.shape == (2, 3)
        assert T.reshape(out, (3, -1)).shape == (3, 2)
        with pytest.raises(DimensionError):
            T.reshape(out, (4, -1))

    def test_cumprod_last(self):
        out = T.cumprod_last(Tensor([[0.5, 0.5, 2.0]]))
        np.testing.assert_allclose(out.data, [[0.5, 0.25, 0.5]])


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Parameter(np.random.default_rng(1).normal(size=(3, 4)), name="x")
        with GradTape():
            loss = T.reduce_sum(x)
        grads = backward(loss, {"x": x})
        np.testing.assert_array_equal(grads["x"].data, np.ones((3, 4)))

    def test_unused_parameter_gets_zero_gradient(self):
        x = Parameter(np.ones(3), name="x")
        unused = Parameter(np.ones((2, 2)), name="unused")
        with GradTape():
            loss = T.reduce_sum(T.square(x))
        grads = backward(loss, {"x": x, "unused": unused})
        np.testing.assert_array_equal(grads["x"].data, [2.0, 2.0, 2.0])
        np.testing.assert_array_equal(grads["unused"].data, np.zeros((2, 2)))

    def test_non_scalar_loss_is_rejected(self):
        x = Parameter(np.ones(3), name="x")
        with GradTape():
            out = T.scale(x, 2.0)
        with pytest.raises(ContractError):
            backward(out, {"x": x})

    def test_loss_outside_a_tape_is_rejected(self):
        x = Parameter(np.ones(3), name="x")
        with pytest.raises(ContractError):
            backward(T.reduce_sum(x), {"x": x})

    def test_reused_input_accumulates(self):
        x = Parameter([2.0], name="x")
        with GradTape():
            loss = T.reduce_sum(T.mul(x, x) + x)
        grads = backward(loss, {"x": x})
        assert grads["x"].data[0] == pytest.approx(5.0)

    def test_broadcast_gradient_is_reduced(self):
        bias = Parameter(np.zeros(4), name="bias")
        with GradTape():
            loss = T.reduce_sum(T.add(Tensor(np.ones((3, 4))), bias))
        grads = backward(loss, {"bias": bias})
        np.testing.assert_array_equal(grads["bias"].data, np.full(4, 3.0))

    def test_nothing_recorded_without_tape(self):
        x = Parameter(np.ones(2), name="x")
        out = T.scale(x, 3.0)
        assert out.tape is None
        assert not T.is_recording()

    def test_assign_checks_shape(self):
        p = Parameter(np.zeros((2, 2)), name="w")
        with pytest.raises(DimensionError, match="'w'"):
            p.assign(np.zeros(3))
