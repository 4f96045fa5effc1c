import numpy as np
import pytest

from trifuse.core.exceptions import ArgumentError, AutodiffError, NumericalError
from trifuse.services.layers import ModelParams
from trifuse.services.optimizer import OptimizerState, optimizer_step


def single_param(value, grad):
    params = ModelParams()
    tensor = params.add("p", np.array(value, dtype=np.float64))
    tensor.grad = np.array(grad, dtype=tensor.data.dtype)
    return params, tensor


def test_learning_rate_decays_in_steps():
    state = OptimizerState(learning_rate=1e-4, decay_factor=0.8, decay_every=5000)
    assert state.current_lr(0) == pytest.approx(1e-4)
    assert state.current_lr(4999) == pytest.approx(1e-4)
    assert state.current_lr(5000) == pytest.approx(8e-5)
    assert state.current_lr(12000) == pytest.approx(1e-4 * 0.64)


def test_first_adam_step_moves_by_learning_rate():
    params, tensor = single_param([1.0, -2.0, 0.5], [0.3, -4.0, 1e-3])
    lr = optimizer_step(params, OptimizerState(learning_rate=0.01))
    assert lr == pytest.approx(0.01)
    np.testing.assert_allclose(tensor.data, [0.99, -1.99, 0.49], atol=1e-5)


def test_moments_persist_across_steps():
    params, tensor = single_param([0.0], [1.0])
    state = OptimizerState(learning_rate=0.1)
    optimizer_step(params, state)
    tensor.grad = np.array([1.0], dtype=tensor.data.dtype)
    optimizer_step(params, state)
    assert state.step_count == 2
    np.testing.assert_allclose(state.first_moment["p"], [0.19], rtol=1e-5)
    np.testing.assert_allclose(tensor.data, [-0.2], atol=1e-5)


def test_non_finite_gradient_stops_training():
    params, _ = single_param([1.0], [np.nan])
    with pytest.raises(NumericalError):
        optimizer_step(params, OptimizerState())


def test_missing_gradient_is_an_error():
    params = ModelParams()
    params.add("p", np.zeros(2))
    with pytest.raises(AutodiffError):
        optimizer_step(params, OptimizerState())


def test_invalid_schedule():
    with pytest.raises(ArgumentError):
        OptimizerState(learning_rate=0.0)
    with pytest.raises(ArgumentError):
        OptimizerState(decay_every=0)


def test_zero_gradients_leave_parameters_untouched():
    params, tensor = single_param([1.5, -0.25, 3.0], [0.0, 0.0, 0.0])
    before = tensor.data.copy()
    state = OptimizerState(learning_rate=0.1)
    for _ in range(3):
        tensor.grad = np.zeros_like(tensor.data)
        optimizer_step(params, state)
    np.testing.assert_array_equal(tensor.data, before)


def test_quadratic_loss_descends_monotonically():
    params, tensor = single_param([10.0], [0.0])
    state = OptimizerState(learning_rate=0.01)
    losses = []
    for _ in range(200):
        tensor.grad = 2.0 * tensor.data
        optimizer_step(params, state)
        losses.append(float(tensor.data[0] ** 2))
    assert all(later < earlier for earlier, later in zip(losses[5:], losses[6:]))
    assert losses[-1] < 100.0
