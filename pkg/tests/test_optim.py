import numpy as np
import pytest

from orderalign.optim import AdamState, PlateauSchedule, adam_step, plateau_update
from orderalign.tensor import Tensor


def param(values, grad=None):
    p = Tensor(np.asarray(values, dtype=np.float64))
    if grad is not None:
        p.grad[...] = grad
    return p


class TestAdam:
    def test_zero_gradient_is_a_no_op(self, rng):
        p = param(rng.standard_normal(5))
        before = p.data.copy()
        state = AdamState.for_params([p])
        for _ in range(3):
            adam_step(state, [p])
        assert np.array_equal(p.data, before)

    def test_first_step_with_unit_gradient(self):
        p = param([0.0], grad=[1.0])
        adam_step(AdamState(lr=1e-3), [p])
        assert p.data[0] == pytest.approx(-1e-3 / (1 + 1e-8), abs=1e-15)

    def test_first_step_magnitude_is_lr_for_any_scale(self, rng):
        g = rng.standard_normal(6) * 50
        p = param(np.zeros(6), grad=g)
        adam_step(AdamState(lr=0.01), [p])
        np.testing.assert_allclose(p.data, -0.01 * np.sign(g), rtol=1e-6)

    def test_matches_reference_recurrence(self, rng):
        grads = rng.standard_normal((10, 4))
        p = param(np.zeros(4))
        state = AdamState(lr=0.05)
        ref = np.zeros(4)
        m = np.zeros(4)
        v = np.zeros(4)
        for t, g in enumerate(grads, start=1):
            p.grad[...] = g
            adam_step(state, [p])
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(p.data, ref, rtol=0, atol=1e-13)
        assert state.step == 10

    def test_deterministic(self, rng):
        grads = rng.standard_normal((5, 3))

        def run():
            p = param(np.ones(3))
            state = AdamState()
            for g in grads:
                p.grad[...] = g
                adam_step(state, [p])
            return p.data.tobytes()

        assert run() == run()

    def test_shape_drift_rejected(self):
        p = param(np.zeros(3))
        state = AdamState.for_params([p])
        with pytest.raises(ValueError, match="shape"):
            adam_step(state, [param(np.zeros(4))])
        with pytest.raises(ValueError, match="tracks 1"):
            adam_step(state, [p, p])

    def test_convex_toy_converges(self, rng):
        target = rng.standard_normal(8)
        p = param(np.zeros(8))
        state = AdamState(lr=1e-2)
        for _ in range(5000):
            p.grad[...] = p.data - target
            adam_step(state, [p])
        assert np.linalg.norm(p.data - target) < 1e-3


class TestPlateau:
    def test_constant_metric_decays_after_patience(self):
        sched = PlateauSchedule(patience=3)
        state = AdamState(lr=1e-3)
        fired = [plateau_update(sched, state, 5.0) for _ in range(4)]
        # first epoch sets the best; the next three are non-improving
        assert fired == [False, False, False, True]
        assert state.lr == pytest.approx(1e-4)

    def test_improvement_resets_counter(self):
        sched = PlateauSchedule(patience=3)
        state = AdamState(lr=1e-3)
        for v in (5.0, 5.0, 5.0, 4.0, 4.0, 4.0):
            assert not plateau_update(sched, state, v)
        assert state.lr == 1e-3
        assert plateau_update(sched, state, 4.0)

    def test_equal_metric_is_not_improvement(self):
        sched = PlateauSchedule(patience=1)
        state = AdamState(lr=1.0)
        plateau_update(sched, state, 2.0)
        assert plateau_update(sched, state, 2.0)

    def test_floor_at_min_lr(self):
        sched = PlateauSchedule(patience=1, min_lr=1e-7)
        state = AdamState(lr=5e-7)
        plateau_update(sched, state, 1.0)
        assert plateau_update(sched, state, 1.0)
        assert state.lr == 1e-7
        assert not plateau_update(sched, state, 1.0)
        assert state.lr == 1e-7

    def test_lr_never_increases(self, rng):
        sched = PlateauSchedule()
        state = AdamState(lr=1e-3)
        last = state.lr
        for v in rng.standard_normal(200).cumsum():
            plateau_update(sched, state, float(v))
            assert state.lr <= last
            last = state.lr

    @pytest.mark.parametrize("kwargs", [{"factor": 1.0}, {"patience": 0}])
    def test_invalid_settings(self, kwargs):
        with pytest.raises(ValueError):
            PlateauSchedule(**kwargs)
