#!/usr/bin/env python3
"""
Tests for the tensor primitives, tape autodiff, gradient check and Adam
"""

import copy
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from gsmt_errors import ConfigError, ContractError, DimensionError, NumericError, TapeIntegrityError
from gsmt_numerics import (
    AdamState,
    ComputationTape,
    Tensor,
    absolute,
    adam_step,
    add,
    backward,
    concat,
    exp,
    gradient_check,
    leaky_relu,
    mae_loss,
    matmul,
    mul,
    primitive_forward,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    row_softmax,
    sigmoid,
    sub,
    tanh,
)


class TestTensor:
    """Tensor storage invariants"""

    def test_tensor_is_float64_and_read_only(self):
        """Data is float64 and cannot be mutated in place"""
        t = Tensor([1, 2, 3])
        assert t.data.dtype == np.float64
        assert t.shape == (3,)
        with pytest.raises(ValueError):
            t.data[0] = 5.0

    def test_non_finite_rejected(self):
        """NaN and Inf never enter a tensor"""
        with pytest.raises(NumericError):
            Tensor([1.0, np.nan])
        with pytest.raises(NumericError):
            Tensor([np.inf])

    def test_item_needs_single_element(self):
        """item() on a vector is a contract violation"""
        assert Tensor(2.5).item() == 2.5
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()

    def test_operators_route_to_primitives(self):
        """+, -, * and @ give the same values as the named primitives"""
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[0.5, -1.0], [2.0, 0.0]])
        np.testing.assert_array_equal((a + b).data, add(a, b).data)
        np.testing.assert_array_equal((a - b).data, sub(a, b).data)
        np.testing.assert_array_equal((a * b).data, mul(a, b).data)
        np.testing.assert_array_equal((a @ b).data, matmul(a, b).data)


class TestPrimitives:
    """Forward values and shape rules"""

    def test_row_softmax_uniform(self):
        """Equal scores give equal weights"""
        out = row_softmax([0.0, 0.0, 0.0])
        np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_row_softmax_mask_gives_exact_zero(self):
        """Masked entries get weight exactly 0 and the rest still sum to 1"""
        x = np.array([[1.0, 2.0, 3.0], [0.5, 0.5, 9.0]])
        mask = np.array([[True, False, True], [True, True, False]])
        out = row_softmax(x, mask).data
        assert out[0, 1] == 0.0
        assert out[1, 2] == 0.0
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
        np.testing.assert_allclose(out[1, :2], [0.5, 0.5], atol=1e-15)

    def test_row_softmax_fully_masked_row(self):
        """A row with nothing unmasked is a contract error"""
        with pytest.raises(ContractError):
            row_softmax([[1.0, 2.0]], np.array([[False, False]]))

    def test_row_softmax_dominant_score(self):
        """A score 100 above the rest takes essentially all weight"""
        out = row_softmax([100.0, 0.0]).data
        assert out[0] == pytest.approx(1.0, abs=1e-15)
        assert out[1] < 1e-40

    def test_relu(self):
        """relu zeroes negatives"""
        np.testing.assert_array_equal(relu([-1.0, 0.0, 2.0]).data, [0.0, 0.0, 2.0])

    def test_leaky_relu_slope(self):
        """Negative side is scaled by the slope"""
        np.testing.assert_allclose(leaky_relu([-2.0, 3.0], 0.2).data, [-0.4, 3.0])

    def test_sigmoid_is_overflow_safe(self):
        """Large magnitudes saturate without warnings or NaN"""
        out = sigmoid([-1000.0, 0.0, 1000.0]).data
        np.testing.assert_allclose(out, [0.0, 0.5, 1.0])

    def test_matmul_matches_triple_loop(self):
        """2x3 @ 3x4 equals a naive multiply"""
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 4))
        expected = np.zeros((2, 4))
        for i in range(2):
            for j in range(4):
                for k in range(3):
                    expected[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(matmul(a, b).data, expected, rtol=1e-14, atol=1e-14)

    def test_matmul_broadcasts_batch(self):
        """Leading dims broadcast like numpy"""
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=(5, 2, 3)), rng.normal(size=(3, 4))
        assert matmul(a, b).shape == (5, 2, 4)

    def test_matmul_shape_mismatch_names_primitive(self):
        """Inner dimension mismatch is a dimension error naming matmul"""
        with pytest.raises(DimensionError, match="matmul"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_add_non_broadcastable(self):
        """Incompatible shapes fail with a dimension error"""
        with pytest.raises(DimensionError, match="add"):
            add(np.ones(3), np.ones(4))

    def test_concat_and_reshape(self):
        """concat joins along the axis; reshape keeps element count"""
        out = concat([np.ones((2, 1)), np.zeros((2, 2))], axis=-1)
        assert out.shape == (2, 3)
        assert reshape(out, (3, 2)).shape == (3, 2)
        with pytest.raises(DimensionError):
            reshape(out, (4, 2))

    def test_exp_overflow_is_numeric_error(self):
        """Overflowing results are surfaced, not stored"""
        with pytest.raises(NumericError, match="exp"):
            exp([1000.0])

    def test_unknown_primitive(self):
        """primitive_forward rejects unknown kinds and wrong arity"""
        with pytest.raises(ContractError):
            primitive_forward("conv", [1.0])
        with pytest.raises(ContractError):
            primitive_forward("add", [1.0])

    def test_no_recording_without_tape(self):
        """Outside a tape nothing is recorded"""
        x = Tensor([1.0], requires_grad=True)
        y = add(x, x)
        assert y._record is None

    def test_constants_not_recorded(self):
        """Inputs without requires_grad are not put on the tape"""
        with ComputationTape() as tape:
            add(Tensor([1.0]), Tensor([2.0]))
        assert len(tape) == 0


class TestBackward:
    """Reverse pass semantics"""

    def test_sum_gives_ones(self):
        """d sum(x) / dx == 1"""
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with ComputationTape() as tape:
            loss = reduce_sum(x)
        grads = backward(loss, tape)
        np.testing.assert_array_equal(grads[x], np.ones((2, 3)))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_mae_gradient(self):
        """mean(|x - y|) with x=[1,3], y=[2,2] has gradient [-0.5, 0.5]"""
        x = Tensor([1.0, 3.0], requires_grad=True)
        with ComputationTape() as tape:
            loss = mae_loss(x, [2.0, 2.0])
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, [-0.5, 0.5])

    def test_fan_out_accumulates(self):
        """z = x + x contributes twice"""
        x = Tensor([1.0, -1.0, 4.0], requires_grad=True)
        with ComputationTape() as tape:
            loss = reduce_sum(add(x, x))
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, [2.0, 2.0, 2.0])

    def test_grad_accumulates_across_calls(self):
        """Two backward passes on two tapes add into .grad until zero_grad"""
        x = Tensor([1.0, 2.0], requires_grad=True)
        for _ in range(2):
            with ComputationTape() as tape:
                loss = reduce_sum(x)
            backward(loss, tape)
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])
        x.zero_grad()
        assert x.grad is None

    def test_non_scalar_loss(self):
        """backward needs a scalar"""
        x = Tensor([1.0, 2.0], requires_grad=True)
        with ComputationTape() as tape:
            y = add(x, 1.0)
        with pytest.raises(ContractError):
            backward(y, tape)

    def test_consumed_tape(self):
        """A tape supports exactly one backward pass"""
        x = Tensor([1.0], requires_grad=True)
        with ComputationTape() as tape:
            loss = reduce_sum(x)
        backward(loss, tape)
        with pytest.raises(TapeIntegrityError):
            backward(loss, tape)

    def test_detached_loss(self):
        """A loss computed off the tape is rejected"""
        x = Tensor([1.0], requires_grad=True)
        loss = reduce_sum(x)
        with ComputationTape() as tape:
            pass
        with pytest.raises(TapeIntegrityError):
            backward(loss, tape)

    def test_input_from_other_tape(self):
        """Mixing tapes is a tape-integrity error"""
        x = Tensor([1.0, 2.0], requires_grad=True)
        with ComputationTape():
            y = mul(x, 2.0)
        with ComputationTape() as tape:
            loss = reduce_sum(y)
        with pytest.raises(TapeIntegrityError):
            backward(loss, tape)

    def test_nested_tapes(self):
        """The innermost tape is the active one"""
        with ComputationTape() as outer:
            with ComputationTape() as inner:
                assert ComputationTape.active() is inner
            assert ComputationTape.active() is outer
        assert ComputationTape.active() is None


class TestGradientCheck:
    """Finite-difference agreement"""

    def test_square_sum(self):
        """sum(x^2) at [1, 2, 3]"""
        err = gradient_check(lambda x: reduce_sum(mul(x, x)), np.array([1.0, 2.0, 3.0]))
        assert err < 1e-6

    def test_constant_function(self):
        """A constant function has zero gradient on both sides"""
        err = gradient_check(lambda x: reduce_sum(Tensor([4.0])), np.array([1.0, 2.0]))
        assert err == 0.0

    @pytest.mark.parametrize(
        "fn",
        [
            lambda x: reduce_sum(matmul(x, x)),
            lambda x: reduce_sum(mul(add(x, 1.0), sub(x, 0.5))),
            lambda x: reduce_sum(concat([x, mul(x, 3.0)], axis=0)),
            lambda x: reduce_sum(mul(reshape(x, (9,)), np.arange(9.0))),
            lambda x: reduce_sum(mul(relu(x), x)),
            lambda x: reduce_sum(leaky_relu(mul(x, 2.0), 0.2)),
            lambda x: reduce_sum(sigmoid(x)),
            lambda x: reduce_sum(tanh(x)),
            lambda x: reduce_sum(exp(x)),
            lambda x: reduce_mean(absolute(x)),
            lambda x: reduce_sum(mul(row_softmax(x, np.eye(3, dtype=bool) | np.eye(3, k=1, dtype=bool)), np.arange(9.0).reshape(3, 3))),
            lambda x: reduce_sum(mul(reduce_mean(x, axis=0), reduce_sum(x, axis=1))),
        ],
        ids=["matmul", "add-sub-mul", "concat", "reshape", "relu", "leaky_relu", "sigmoid", "tanh", "exp", "abs", "softmax", "sum-mean"],
    )
    def test_every_primitive(self, fn):
        """Each primitive's adjoint agrees with central differences"""
        # away from the kinks of relu/abs
        x = np.array([[0.3, -0.7, 1.1], [-0.4, 0.9, -1.3], [0.6, 0.2, -0.8]])
        assert gradient_check(fn, x) < 1e-4

    def test_named_point(self):
        """A dict point differentiates each named array"""

        def f(p):
            return reduce_sum(mul(matmul(p["a"], p["b"]), p["a"]))

        rng = np.random.default_rng(0)
        point = {"a": rng.normal(size=(2, 2)), "b": rng.normal(size=(2, 2))}
        assert gradient_check(f, point) < 1e-6

    def test_sampled_coordinates(self):
        """max_coords limits the differenced coordinates"""
        err = gradient_check(lambda x: reduce_sum(mul(x, x)), np.arange(50.0), max_coords=5, seed=1)
        assert err < 1e-6

    def test_bad_step(self):
        """step must be positive"""
        with pytest.raises(ContractError):
            gradient_check(lambda x: reduce_sum(x), np.ones(2), step=0.0)


class TestAdam:
    """Bias-corrected Adam"""

    def test_first_step_on_square(self):
        """f = x^2 at x = 1 with lr 0.1 moves x to about 0.9"""
        params = {"x": np.array([1.0])}
        state = AdamState.create(params, lr=0.1)
        new, state = adam_step(params, {"x": np.array([2.0])}, state)
        np.testing.assert_allclose(new["x"], [0.9], atol=1e-7)
        assert state.t == 1

    def test_zero_gradient(self):
        """Zero gradient keeps parameters and still counts the step"""
        params = {"w": np.array([[1.0, -2.0]])}
        state = AdamState.create(params)
        new, state = adam_step(params, {"w": np.zeros((1, 2))}, state)
        np.testing.assert_array_equal(new["w"], params["w"])
        assert state.t == 1

    def test_inputs_not_mutated(self):
        """adam_step is functional"""
        params = {"w": np.array([1.0, 2.0])}
        state = AdamState.create(params)
        adam_step(params, {"w": np.array([0.5, 0.5])}, state)
        np.testing.assert_array_equal(params["w"], [1.0, 2.0])
        assert state.t == 0
        np.testing.assert_array_equal(state.m["w"], [0.0, 0.0])

    @pytest.mark.parametrize("seed", range(10))
    def test_deterministic(self, seed):
        """Copies of one state given the same inputs step to bit-identical results"""
        rng = np.random.default_rng(seed)
        params = {"w": rng.normal(size=(3, 4)), "b": rng.normal(size=4)}
        state = AdamState.create(params, lr=0.01)
        for _ in range(3):
            params, state = adam_step(params, {k: rng.normal(size=p.shape) for k, p in params.items()}, state)
        grads = {k: rng.normal(size=p.shape) for k, p in params.items()}

        first_params, first = adam_step(copy.deepcopy(params), copy.deepcopy(grads), copy.deepcopy(state))
        second_params, second = adam_step(copy.deepcopy(params), copy.deepcopy(grads), copy.deepcopy(state))
        assert first.t == second.t == 4
        for name in params:
            assert np.array_equal(first_params[name], second_params[name])
            assert np.array_equal(first.m[name], second.m[name])
            assert np.array_equal(first.v[name], second.v[name])

    def test_second_moment_non_negative(self):
        """v stays >= 0 and t increases by one per step"""
        rng = np.random.default_rng(9)
        params = {"w": rng.normal(size=4)}
        state = AdamState.create(params)
        for step in range(1, 6):
            params, state = adam_step(params, {"w": rng.normal(size=4)}, state)
            assert state.t == step
            assert np.all(state.v["w"] >= 0)

    def test_shape_mismatch(self):
        """Gradient shape must match"""
        params = {"w": np.zeros(3)}
        with pytest.raises(ContractError):
            adam_step(params, {"w": np.zeros(2)}, AdamState.create(params))

    def test_bad_eps(self):
        """eps <= 0 is a configuration error"""
        params = {"w": np.zeros(3)}
        state = AdamState.create(params, eps=0.0)
        with pytest.raises(ConfigError):
            adam_step(params, {"w": np.zeros(3)}, state)
