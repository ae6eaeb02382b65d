import numpy as np
import pytest

from linecounter.errors import NonFiniteError
from linecounter.optim import Adam, PlateauScheduler, adamStep
from linecounter.tensor import Parameter


class TestAdam:
    def test_minimizes_a_quadratic(self):
        param = Parameter(np.array([3.0, -2.0, 0.5]), name="x")
        optimizer = Adam([param], lr=0.1)
        for _ in range(500):
            optimizer.zeroGrad()
            (param * param).sum().backward()
            optimizer.step()
        assert optimizer.t == 500
        assert np.all(np.abs(param.data) < 0.1)

    def test_converges_to_the_shifted_minimum(self):
        param = Parameter(np.array([0.0]), name="w")
        optimizer = Adam([param], lr=0.1)
        for _ in range(200):
            optimizer.zeroGrad()
            shifted = param - 3.0
            (shifted * shifted).sum().backward()
            optimizer.step()
        assert abs(param.data[0] - 3.0) < 0.05

    def test_zero_gradient_leaves_parameters_unchanged(self):
        param = Parameter(np.array([1.5, -0.25, 0.0]), name="x")
        before = param.data.copy()
        for t in range(1, 11):
            adamStep([param], lr=0.1, t=t, grads=[np.zeros(3)])
        np.testing.assert_array_equal(param.data, before)

    def test_unit_gradient_first_step_is_lr(self):
        param = Parameter(np.array([2.0]), name="x")
        adamStep([param], lr=1e-3, t=1, grads=[np.array([1.0])])
        assert abs((2.0 - param.data[0]) - 1e-3) < 1e-6

    def test_first_step_moves_by_lr(self):
        # bias correction makes the first update exactly lr * sign(grad)
        param = Parameter(np.array([1.0, -1.0]), name="x")
        adamStep([param], lr=0.01, t=1, grads=[np.array([4.0, -0.5])])
        np.testing.assert_allclose(param.data, [0.99, -0.99], rtol=1e-5)

    def test_non_finite_gradient_leaves_everything_untouched(self):
        good = Parameter(np.array([1.0, 2.0]), name="good")
        bad = Parameter(np.array([1.0]), name="bad")
        with pytest.raises(NonFiniteError) as excinfo:
            adamStep([good, bad], lr=0.1, grads=[np.array([1.0, 1.0]), np.array([np.nan])])
        assert excinfo.value.where == "bad"
        np.testing.assert_array_equal(good.data, [1.0, 2.0])
        np.testing.assert_array_equal(good.adam_m, 0)

    def test_step_index_starts_at_one(self):
        with pytest.raises(ValueError):
            adamStep([Parameter(np.zeros(1))], lr=0.1, t=0)


class TestPlateauScheduler:
    def test_flat_metric_halves_lr_at_epoch_21(self):
        optimizer = Adam([Parameter(np.zeros(1))], lr=1e-4)
        scheduler = PlateauScheduler(optimizer, patience=20, factor=0.5)
        history = []
        for _ in range(21):
            scheduler.step(0.5)
            history.append(optimizer.lr)
        assert history[19] == pytest.approx(1e-4)
        assert history[20] == pytest.approx(5e-5)

    def test_improvement_resets_the_counter(self):
        optimizer = Adam([Parameter(np.zeros(1))], lr=1.0)
        scheduler = PlateauScheduler(optimizer, patience=3)
        for metric in [0.1, 0.1, 0.1, 0.2, 0.2, 0.2]:
            scheduler.step(metric)
        assert optimizer.lr == 1.0
        assert scheduler.step(0.2)
        assert optimizer.lr == 0.5

    def test_equal_metric_is_not_an_improvement(self):
        scheduler = PlateauScheduler(Adam([Parameter(np.zeros(1))]), patience=20)
        scheduler.step(0.7)
        scheduler.step(0.7)
        assert scheduler.bad_epochs == 1

    def test_state_round_trip(self):
        scheduler = PlateauScheduler(Adam([Parameter(np.zeros(1))]), patience=5)
        for metric in [0.3, 0.2, 0.1]:
            scheduler.step(metric)
        restored = PlateauScheduler(Adam([Parameter(np.zeros(1))]), patience=5)
        restored.loadState(scheduler.getState())
        assert restored.best == 0.3
        assert restored.bad_epochs == 2
