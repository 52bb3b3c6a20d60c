# tests/test_optimizer.py
"""Tests for the learning-rate schedule and the Adam optimizer."""

import numpy as np
import pytest

from ppisp.calib.optimizer import OptimizerState, adam_step
from ppisp.calib.schedule import LrSchedule, lr_at
from ppisp.errors import ShapeMismatchError


class TestLrSchedule:
    """Test lr_at."""

    def test_warmup_start(self):
        assert lr_at(0, LrSchedule()) == pytest.approx(2e-5, rel=1e-12)

    def test_warmup_end(self):
        assert lr_at(500, LrSchedule()) == pytest.approx(0.002, rel=1e-12)

    def test_final_factor(self):
        assert lr_at(30500, LrSchedule()) == pytest.approx(2e-5, rel=1e-9)

    def test_warmup_linear(self):
        sc = LrSchedule()
        assert lr_at(250, sc) == pytest.approx(0.002 * (0.01 + 0.99 * 0.5), rel=1e-12)

    def test_delay(self):
        sc = LrSchedule(s_d=10)
        assert lr_at(5, sc) == 0.0
        assert lr_at(10, sc) == pytest.approx(2e-5, rel=1e-12)

    def test_monotonic_decay(self):
        sc = LrSchedule()
        rates = [lr_at(s, sc) for s in range(500, 5000, 500)]
        assert all(a > b for a, b in zip(rates, rates[1:]))

    def test_negative_step(self):
        with pytest.raises(ValueError):
            lr_at(-1, LrSchedule())

    def test_invalid_schedule(self):
        with pytest.raises(ValueError):
            LrSchedule(f_f=0.0)
        with pytest.raises(ValueError):
            LrSchedule(s_max=0)


class TestAdam:
    """Test adam_step."""

    def test_zero_gradient(self):
        params = {'x': np.array([1.0, -2.0])}
        updated, _ = adam_step(params, {'x': np.zeros(2)}, OptimizerState(), lr=0.1)
        np.testing.assert_array_equal(updated['x'], params['x'])

    def test_first_step_is_lr_sign(self):
        params = {'x': np.array([0.0, 0.0, 0.0])}
        grads = {'x': np.array([3.0, -0.01, 250.0])}
        updated, _ = adam_step(params, grads, OptimizerState(), lr=0.01)
        np.testing.assert_allclose(updated['x'], [-0.01, 0.01, -0.01], rtol=1e-5)

    def test_second_step_not_larger(self):
        state = OptimizerState()
        params = {'x': np.array([0.5])}
        grads = {'x': np.array([0.7])}
        p1, state = adam_step(params, grads, state, lr=0.01)
        p2, state = adam_step(p1, grads, state, lr=0.01)
        first = abs(p1['x'][0] - params['x'][0])
        second = abs(p2['x'][0] - p1['x'][0])
        assert second <= first + 1e-9

    def test_does_not_modify_input(self):
        params = {'x': np.array([1.0])}
        adam_step(params, {'x': np.array([1.0])}, OptimizerState(), lr=0.1)
        assert params['x'][0] == 1.0

    def test_sparse_block_counts(self):
        """A block's bias correction counts only its own updates."""
        state = OptimizerState()
        params = {'a': np.array([0.0]), 'b': np.array([0.0])}
        grads = {'a': np.array([1.0]), 'b': np.array([1.0])}
        params, state = adam_step(params, grads, state, lr=0.01)
        params, state = adam_step({'a': params['a']}, {'a': grads['a']}, state, lr=0.01)
        assert state.counts == {'a': 2, 'b': 1}
        assert state.step == 2

        # b's second update behaves like a second step, not a third.
        fresh = OptimizerState()
        ref, fresh = adam_step({'b': np.array([0.0])}, {'b': np.array([1.0])}, fresh, lr=0.01)
        ref, fresh = adam_step(ref, {'b': np.array([1.0])}, fresh, lr=0.01)
        updated, state = adam_step({'b': params['b']}, {'b': grads['b']}, state, lr=0.01)
        np.testing.assert_allclose(updated['b'], ref['b'], rtol=1e-12)

    def test_missing_gradient(self):
        with pytest.raises(ShapeMismatchError):
            adam_step({'x': np.zeros(2)}, {}, OptimizerState(), lr=0.1)

    def test_wrong_shape(self):
        with pytest.raises(ShapeMismatchError):
            adam_step({'x': np.zeros(2)}, {'x': np.zeros(3)}, OptimizerState(), lr=0.1)

    def test_converges_on_quadratic(self):
        state = OptimizerState()
        params = {'x': np.array([2.0, -1.0])}
        for _ in range(2000):
            params, state = adam_step(params, {'x': 2.0 * params['x']}, state, lr=0.01)
        np.testing.assert_allclose(params['x'], 0.0, atol=0.05)
