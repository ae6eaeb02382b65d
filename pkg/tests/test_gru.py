import numpy as np
import pytest

from linecounter.errors import ConfigError, ShapeError
from linecounter.gradcheck import gradientCheck
from linecounter.gru import Axis, GruCellParams, SpatialGru, SpatialGruConfig, gruCellStep, runSequence, spatialGru
from linecounter.tensor import Tensor, noGrad, precision

IN_CHANNELS = 3
HIDDEN = 4


@pytest.fixture
def params64():
    with precision(64):
        return GruCellParams(IN_CHANNELS, HIDDEN, np.random.default_rng(7))


def _run(layer, x):
    with noGrad():
        return layer(Tensor(x)).data


class TestCell:
    def test_step_shape(self, params64):
        h = gruCellStep(Tensor(np.zeros((5, IN_CHANNELS))), Tensor(np.zeros((5, HIDDEN))), params64)
        assert h.shape == (5, HIDDEN)

    def test_step_rejects_wrong_input_width(self, params64):
        with pytest.raises(ShapeError):
            gruCellStep(Tensor(np.zeros((5, IN_CHANNELS + 1))), Tensor(np.zeros((5, HIDDEN))), params64)

    def test_state_stays_in_tanh_range(self, params64, rng):
        out = runSequence(Tensor(rng.standard_normal((3, 20, IN_CHANNELS)) * 5), params64)
        assert np.all(np.abs(out.data) <= 1.0)

    def test_zero_params_halve_the_previous_state(self, rng):
        params = GruCellParams(IN_CHANNELS, HIDDEN, rng)
        for param in params.parameters():
            param.data[...] = 0.0
        v = rng.standard_normal((5, HIDDEN))
        h = gruCellStep(Tensor(np.ones((5, IN_CHANNELS))), Tensor(v), params)
        np.testing.assert_allclose(h.data, 0.5 * v, rtol=1e-6)
        h = gruCellStep(Tensor(np.ones((5, IN_CHANNELS))), Tensor(np.zeros((5, HIDDEN))), params)
        np.testing.assert_array_equal(h.data, 0.0)

    def test_update_gate_keeps_the_previous_state(self, params64, rng):
        x = rng.standard_normal((5, IN_CHANNELS))
        h_prev = rng.uniform(-1.0, 1.0, (5, HIDDEN))
        p = {name: param.data for name, param in params64.namedParameters()}

        def hardSigmoid(v):
            return np.clip(0.2 * v + 0.5, 0.0, 1.0)

        z = hardSigmoid(x @ p["w_z"].T + h_prev @ p["u_z"].T + p["b_z"])
        r = hardSigmoid(x @ p["w_r"].T + h_prev @ p["u_r"].T + p["b_r"])
        h_cand = np.tanh(x @ p["w_h"].T + (r * h_prev) @ p["u_h"].T + p["b_h"])
        with precision(64):
            h = gruCellStep(Tensor(x), Tensor(h_prev), params64)
        np.testing.assert_allclose(h.data, z * h_prev + (1 - z) * h_cand, rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("reverse", [False, True])
    def test_gradient_unrolled_over_eight_steps(self, params64, rng, reverse):
        sequence = rng.standard_normal((2, 8, IN_CHANNELS)) * 0.5
        error = gradientCheck(
            lambda s: runSequence(s, params64, reverse=reverse),
            [sequence],
            epsilon=1e-6,
            params=params64.parameters(),
        )
        assert error < 1e-4


class TestSpatialGru:
    def test_config_rejects_non_positive_hidden(self):
        with pytest.raises(ConfigError):
            SpatialGruConfig(Axis.HORIZONTAL, True, 0)

    @pytest.mark.parametrize("bidirectional, channels", [(True, 2 * HIDDEN), (False, HIDDEN)])
    def test_output_shape(self, rng, bidirectional, channels):
        layer = SpatialGru(IN_CHANNELS, SpatialGruConfig(Axis.VERTICAL, bidirectional, HIDDEN), rng)
        out = _run(layer, rng.standard_normal((2, IN_CHANNELS, 5, 6)))
        assert out.shape == (2, channels, 5, 6)

    def test_horizontal_rows_are_independent(self, rng):
        layer = SpatialGru(IN_CHANNELS, SpatialGruConfig(Axis.HORIZONTAL, True, HIDDEN), rng)
        x = rng.standard_normal((1, IN_CHANNELS, 5, 6))
        perturbed = x.copy()
        perturbed[:, :, 2, :] += 1.0
        diff = np.abs(_run(layer, x) - _run(layer, perturbed)).sum(axis=(0, 1, 3))
        assert diff[2] > 0
        np.testing.assert_array_equal(np.delete(diff, 2), 0)

    def test_vertical_columns_are_independent(self, rng):
        layer = SpatialGru(IN_CHANNELS, SpatialGruConfig(Axis.VERTICAL, True, HIDDEN), rng)
        x = rng.standard_normal((1, IN_CHANNELS, 5, 6))
        perturbed = x.copy()
        perturbed[:, :, :, 4] += 1.0
        diff = np.abs(_run(layer, x) - _run(layer, perturbed)).sum(axis=(0, 1, 2))
        assert diff[4] > 0
        np.testing.assert_array_equal(np.delete(diff, 4), 0)

    def test_each_direction_only_sees_its_past(self, rng):
        layer = SpatialGru(IN_CHANNELS, SpatialGruConfig(Axis.HORIZONTAL, True, HIDDEN), rng)
        x = rng.standard_normal((1, IN_CHANNELS, 3, 7))
        perturbed = x.copy()
        perturbed[:, :, :, 3] += 1.0
        diff = np.abs(_run(layer, x) - _run(layer, perturbed))
        forward, backward = diff[:, :HIDDEN], diff[:, HIDDEN:]
        np.testing.assert_array_equal(forward[..., :3], 0)
        np.testing.assert_array_equal(backward[..., 4:], 0)
        assert forward[..., 3:].sum() > 0
        assert backward[..., :4].sum() > 0

    def test_zero_params_give_zero_output(self, rng):
        layer = SpatialGru(IN_CHANNELS, SpatialGruConfig(Axis.HORIZONTAL, True, HIDDEN), rng)
        for param in layer.parameters():
            param.data[...] = 0.0
        out = _run(layer, rng.standard_normal((2, IN_CHANNELS, 4, 5)))
        np.testing.assert_array_equal(out, 0.0)

    def test_constant_width_input_gives_identical_rows(self, rng):
        layer = SpatialGru(IN_CHANNELS, SpatialGruConfig(Axis.HORIZONTAL, False, HIDDEN), rng)
        x = np.broadcast_to(rng.standard_normal((1, IN_CHANNELS, 1, 1)), (1, IN_CHANNELS, 4, 6)).copy()
        out = _run(layer, x)
        for row in range(1, 4):
            np.testing.assert_allclose(out[:, :, row], out[:, :, 0], atol=1e-6)
        assert not np.allclose(out[:, :, 0, 0], out[:, :, 0, -1])

    def test_bidirectional_halves_match_single_direction_runs(self, rng):
        layer = SpatialGru(IN_CHANNELS, SpatialGruConfig(Axis.HORIZONTAL, True, HIDDEN), rng)
        single = SpatialGruConfig(Axis.HORIZONTAL, False, HIDDEN)
        x = rng.standard_normal((2, IN_CHANNELS, 3, 6))
        with noGrad():
            both = layer(Tensor(x)).data
            forward = spatialGru(Tensor(x), single, layer.fwd).data
            backward = spatialGru(Tensor(x[..., ::-1]), single, layer.bwd).data[..., ::-1]
        np.testing.assert_array_equal(both[:, :HIDDEN], forward)
        np.testing.assert_array_equal(both[:, HIDDEN:], backward)

    def test_vertical_unidirectional_is_causal(self, rng):
        layer = SpatialGru(IN_CHANNELS, SpatialGruConfig(Axis.VERTICAL, False, HIDDEN), rng)
        x = rng.standard_normal((1, IN_CHANNELS, 6, 4))
        perturbed = x.copy()
        perturbed[:, :, 3, :] += 1.0
        base, moved = _run(layer, x), _run(layer, perturbed)
        np.testing.assert_array_equal(base[:, :, :3], moved[:, :, :3])
        assert np.abs(base[:, :, 3:] - moved[:, :, 3:]).sum() > 0
