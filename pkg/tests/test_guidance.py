# -*- coding: utf-8 -*-
import logging
from types import SimpleNamespace

import numpy as np
import pytest

from navfilter.guidance import (CorrectionFilter, DriftOffset, alpha_for_absorption,
                                breadcrumb_drift_offset, condition_state)


class Test_condition_state:
    def test_step_absorbed_geometrically(self):
        """單次步階 δ：控制用狀態先跳 (1−α)δ，之後殘差依 α^k 衰減"""
        f = CorrectionFilter(alpha=0.98)
        delta = np.array([10.0, -4.0, 2.0])
        r_nav = np.zeros(3)
        r_ctrl, _, f = condition_state(r_nav, np.zeros(3), delta, None, f)
        np.testing.assert_allclose(r_ctrl - (r_nav - delta), 0.02 * delta, atol=1e-12)
        for k in range(2, 50):
            r_ctrl, _, f = condition_state(r_nav, np.zeros(3), None, None, f)
            np.testing.assert_allclose(r_nav - r_ctrl, 0.98 ** k * delta, rtol=1e-12)

    def test_first_jump_bounded(self):
        f = CorrectionFilter(alpha=0.98)
        delta = np.array([0.0, 5.0, 0.0])
        before = np.array([100.0, 200.0, -50.0])
        after = before + delta
        r_ctrl, _, _ = condition_state(after, np.zeros(3), delta, None, f)
        assert np.linalg.norm(r_ctrl - before) <= 0.02 * np.linalg.norm(delta) + 1e-12

    def test_velocity_channel(self):
        f = CorrectionFilter(alpha=0.5)
        _, v_ctrl, f = condition_state(np.zeros(3), np.ones(3), None, [0.2, 0.0, 0.0], f)
        np.testing.assert_allclose(v_ctrl, [0.9, 1.0, 1.0])
        np.testing.assert_allclose(f.z_vel, [0.1, 0.0, 0.0])
        np.testing.assert_array_equal(f.z_pos, np.zeros(3))

    def test_does_not_mutate_input(self):
        f = CorrectionFilter(alpha=0.9)
        condition_state(np.zeros(3), np.zeros(3), np.ones(3), np.ones(3), f)
        np.testing.assert_array_equal(f.z_pos, np.zeros(3))

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5])
    def test_invalid_alpha(self, alpha):
        with pytest.raises(ValueError):
            CorrectionFilter(alpha=alpha)


class Test_alpha_for_absorption:
    def test_absorbs_fraction(self):
        alpha = alpha_for_absorption(5.0, 10.0)
        assert alpha ** 50 == pytest.approx(0.05)

    @pytest.mark.parametrize("args", [(0.0, 10.0), (5.0, 0.0), (5.0, 10.0, 1.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            alpha_for_absorption(*args)

    def test_from_config(self):
        guidance = SimpleNamespace(alpha=0.98, absorption_time_s=None)
        assert CorrectionFilter.from_config(guidance, 10.0).alpha == 0.98
        guidance = SimpleNamespace(alpha=0.98, absorption_time_s=2.0)
        assert CorrectionFilter.from_config(guidance, 10.0).alpha == pytest.approx(0.05 ** (1 / 20))


class Test_drift_offset:
    def test_low_pass(self):
        state = DriftOffset(alpha=0.5)
        state = breadcrumb_drift_offset([4.0, 0.0, 0.0], [0.0, 0.0, 0.0], state)
        np.testing.assert_allclose(state.offset, [2.0, 0.0, 0.0])
        state = breadcrumb_drift_offset([4.0, 0.0, 0.0], [0.0, 0.0, 0.0], state)
        np.testing.assert_allclose(state.offset, [3.0, 0.0, 0.0])
        assert state.initialized

    def test_no_crumb_keeps_state(self):
        state = DriftOffset(offset=[1.0, 2.0, 3.0])
        assert breadcrumb_drift_offset(None, [0.0, 0.0, 0.0], state) is state

    def test_clipped(self, caplog):
        state = DriftOffset(alpha=0.1, max_norm=10.0)
        with caplog.at_level(logging.WARNING, logger='navfilter.guidance'):
            state = breadcrumb_drift_offset([100.0, 0.0, 0.0], [0.0, 0.0, 0.0], state)
        assert np.linalg.norm(state.offset) == pytest.approx(10.0)
        assert any('漂移補償量' in r.getMessage() for r in caplog.records)
