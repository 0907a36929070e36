# -*- coding: utf-8 -*-
import logging

import numpy as np
import pytest

from navfilter.ekf import (Measurement, MeasurementKind, NavFilter, ProcessModel,
                           PropagationContext, apply_corrections, augment_image_state,
                           check_covariance, clear_slot, initial_covariance, move_slot,
                           process_model, propagate_covariance, static_process_model,
                           transfer_heading, update)
from navfilter.errors import CovarianceError
from navfilter.frames import TitanConstants, dcm_to_quat, euler_to_dcm, rotvec_to_dcm
from navfilter.measurements import zero_velocity_measurement
from navfilter.state import STATE_DIM, STATE_INDEX as IDX, ErrorState, FogmSpec
from navfilter.strapdown import ImuId, NavState


def _measurement(H, z, R, kind=MeasurementKind.ZERO_POSITION):
    return Measurement(kind, z, H, R)


class Test_state_index:
    def test_layout(self):
        assert IDX.dim == STATE_DIM == 47
        assert len(IDX.labels()) == 47
        assert IDX.r == slice(0, 3)
        assert IDX['r_hbc'].stop == 47

    def test_bias_groups(self):
        b_a, b_g = IDX.bias_groups(ImuId.B)
        assert (b_a, b_g) == (IDX.b_aB, IDX.b_gB)

    def test_unknown_slot(self):
        with pytest.raises(ValueError):
            IDX.slot('tr3')


class Test_Measurement:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="H 形狀"):
            _measurement(np.zeros((2, 46)), [0.0, 0.0], np.eye(2))

    def test_r_shape(self):
        with pytest.raises(ValueError, match="R 形狀"):
            _measurement(np.zeros((2, STATE_DIM)), [0.0, 0.0], np.eye(3))

    def test_r_asymmetric(self):
        with pytest.raises(ValueError, match="對稱"):
            _measurement(np.zeros((2, STATE_DIM)), [0.0, 0.0], [[1.0, 0.1], [0.0, 1.0]])


class Test_update:
    def test_matches_batch_kalman(self, covariance, rng):
        """Cholesky 去相關後的純量序列更新等於批次 Kalman 更新"""
        H = rng.normal(size=(2, STATE_DIM))
        R = np.array([[2.0, 0.6], [0.6, 1.0]])
        dx = rng.normal(size=STATE_DIM) * 0.01
        z = rng.normal(size=2)
        result = update(covariance, dx, _measurement(H, z, R), gate_sigma=None)

        S = H @ covariance @ H.T + R
        K = covariance @ H.T @ np.linalg.inv(S)
        assert result.accepted
        np.testing.assert_allclose(result.P, covariance - K @ H @ covariance, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(result.dx, dx + K @ (z - H @ dx), rtol=1e-8, atol=1e-10)
        np.testing.assert_array_equal(result.P, result.P.T)

    def test_joseph_form(self, covariance, rng):
        """結果等於批次 Joseph 形式 (I − KH)P(I − KH)ᵀ + K R Kᵀ"""
        H = rng.normal(size=(2, STATE_DIM))
        R = np.array([[0.5, -0.2], [-0.2, 0.8]])
        result = update(covariance, np.zeros(STATE_DIM), _measurement(H, [0.1, -0.1], R),
                        gate_sigma=None)
        K = covariance @ H.T @ np.linalg.inv(H @ covariance @ H.T + R)
        IKH = np.eye(STATE_DIM) - K @ H
        expected = IKH @ covariance @ IKH.T + K @ R @ K.T
        np.testing.assert_allclose(result.P, expected, rtol=1e-8, atol=1e-10)

    def test_precise_measurement_stays_positive(self):
        """大先驗、極小 R 時共變異數仍為半正定"""
        P = np.diag(np.full(STATE_DIM, 1e6))
        P[0, 1] = P[1, 0] = 9.99e5
        H = np.zeros((1, STATE_DIM))
        H[0, 0] = 1.0
        result = update(P, np.zeros(STATE_DIM), _measurement(H, [0.0], [[1e-10]]), gate_sigma=None)
        assert np.all(np.diag(result.P) >= 0.0)
        assert np.min(np.linalg.eigvalsh(result.P)) > -1e-6

    def test_underweight_scales_r(self, covariance, rng):
        H = rng.normal(size=(1, STATE_DIM))
        m = _measurement(H, [0.3], [[0.5]])
        a = update(covariance, np.zeros(STATE_DIM), m, underweight=2.0, gate_sigma=None)
        b = update(covariance, np.zeros(STATE_DIM), _measurement(H, [0.3], [[1.0]]), gate_sigma=None)
        np.testing.assert_allclose(a.P, b.P, rtol=1e-12)

    def test_gate_rejects(self, diagonal_covariance):
        H = np.zeros((1, STATE_DIM))
        H[0, 0] = 1.0
        result = update(diagonal_covariance, np.zeros(STATE_DIM),
                        _measurement(H, [100.0], [[1.0]]), gate_sigma=5.0)
        assert not result.accepted
        assert "閘門" in result.reason
        assert result.P is diagonal_covariance

    def test_non_positive_r(self, diagonal_covariance):
        H = np.zeros((1, STATE_DIM))
        H[0, 0] = 1.0
        result = update(diagonal_covariance, np.zeros(STATE_DIM), _measurement(H, [0.0], [[-1.0]]))
        assert not result.accepted

    def test_variance_never_increases(self, covariance, rng):
        H = rng.normal(size=(3, STATE_DIM))
        result = update(covariance, np.zeros(STATE_DIM), _measurement(H, np.zeros(3), np.eye(3)))
        assert np.all(np.diag(result.P) <= np.diag(covariance) + 1e-12)


class Test_propagate:
    def test_invalid_dt(self, diagonal_covariance, nav_state):
        with pytest.raises(ValueError):
            propagate_covariance(diagonal_covariance, nav_state, 0.0, static_process_model())

    def test_velocity_feeds_position(self):
        P = np.zeros((STATE_DIM, STATE_DIM))
        P[IDX.v, IDX.v] = np.eye(3)
        nav = NavState(np.zeros(3), np.zeros(3), [1.0, 0.0, 0.0, 0.0])
        constants = TitanConstants(omega=0.0)
        ctx = PropagationContext(f_body=constants.static_specific_force(), constants=constants)
        P1 = propagate_covariance(P, nav, 2.0, static_process_model(), ctx)
        np.testing.assert_allclose(P1[IDX.r, IDX.r], 4.0 * np.eye(3), atol=1e-12)
        np.testing.assert_allclose(P1[IDX.r, IDX.v], 2.0 * np.eye(3), atol=1e-12)

    def test_tilt_feeds_velocity(self):
        """水平速度誤差由傾斜誤差與比力耦合產生"""
        P = np.zeros((STATE_DIM, STATE_DIM))
        P[IDX.psi, IDX.psi] = 1e-6 * np.eye(3)
        nav = NavState(np.zeros(3), np.zeros(3), [1.0, 0.0, 0.0, 0.0])
        constants = TitanConstants(omega=0.0)
        ctx = PropagationContext(f_body=constants.static_specific_force(), constants=constants)
        P1 = propagate_covariance(P, nav, 1.0, static_process_model(), ctx)
        g = 1.352
        assert P1[IDX.v, IDX.v][0, 0] == pytest.approx(1e-6 * g ** 2, rel=1e-6)
        assert P1[IDX.v, IDX.v][2, 2] == pytest.approx(0.0, abs=1e-18)

    def test_fogm_decay(self, nav_state):
        P = np.zeros((STATE_DIM, STATE_DIM))
        P[IDX.rho, IDX.rho] = 4.0
        model = static_process_model()
        fogm = dict(model.fogm, rho=FogmSpec(10.0, 2.0))
        model = type(model)(fogm=fogm)
        P1 = propagate_covariance(P, nav_state, 1.0, model)
        assert P1[IDX.rho, IDX.rho][0, 0] == pytest.approx(4.0)

    def test_rotation_adds_attitude_noise(self):
        """陀螺安裝誤差只在轉動時增加姿態雜訊"""
        nav = NavState(np.zeros(3), np.zeros(3), [1.0, 0.0, 0.0, 0.0])
        constants = TitanConstants(omega=0.0)
        model = ProcessModel(fogm=static_process_model().fogm, gyro_install=5e-4,
                             install_correlation_s=10.0)
        P = np.zeros((STATE_DIM, STATE_DIM))
        still = PropagationContext(f_body=constants.static_specific_force(), constants=constants)
        turning = PropagationContext(f_body=constants.static_specific_force(), constants=constants,
                                     omega_body=np.array([0.0, 0.0, 0.3]))
        assert not np.any(propagate_covariance(P, nav, 0.1, model, still)[IDX.psi, IDX.psi])
        P1 = propagate_covariance(P, nav, 0.1, model, turning)
        np.testing.assert_allclose(P1[IDX.psi, IDX.psi], (5e-4 * 0.3) ** 2 * 10.0 * 0.1 * np.eye(3),
                                   rtol=1e-12)


    def test_vehicle_rotation_keeps_attitude_block(self):
        """ψ 定義在參考座標，載具單純轉動時 P_ψψ 不變"""
        constants = TitanConstants(omega=0.0)
        P = np.zeros((STATE_DIM, STATE_DIM))
        P[IDX.psi, IDX.psi] = np.diag([1e-6, 4e-6, 9e-6])
        P[IDX.v, IDX.v] = 0.01 * np.eye(3)
        before = P[IDX.psi, IDX.psi].copy()
        for k in range(30):
            attitude = euler_to_dcm(0.1 * np.sin(0.2 * k), 0.05 * k, 0.2 * k)
            nav = NavState(np.zeros(3), np.zeros(3), dcm_to_quat(attitude))
            ctx = PropagationContext(f_body=attitude.T @ -constants.gravity, constants=constants,
                                     omega_body=np.array([0.1, 0.05, 0.2]))
            P = propagate_covariance(P, nav, 0.5, static_process_model(), ctx)
        np.testing.assert_allclose(P[IDX.psi, IDX.psi], before, rtol=0, atol=1e-18)
        assert P[IDX.v, IDX.v][0, 0] > 0.01


class Test_FogmSpec:
    def test_discrete(self):
        spec = FogmSpec(tau=100.0, sigma_ss=0.5)
        phi, q = spec.discrete(10.0)
        assert phi == pytest.approx(np.exp(-0.1))
        assert phi ** 2 * 0.25 + q == pytest.approx(0.25)
        assert spec.psd == pytest.approx(2 * 0.25 / 100.0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            FogmSpec(tau=0.0, sigma_ss=1.0)


class Test_check_covariance:
    def test_nan(self, diagonal_covariance):
        P = diagonal_covariance.copy()
        P[IDX.d, IDX.d] = np.nan
        with pytest.raises(CovarianceError) as info:
            check_covariance(P, t=12.0)
        assert info.value.snapshot['t'] == 12.0
        assert 'd' in info.value.snapshot['states']

    def test_negative_diagonal(self, diagonal_covariance):
        P = diagonal_covariance.copy()
        P[IDX.rho, IDX.rho] = -1.0
        with pytest.raises(CovarianceError, match="rho"):
            check_covariance(P)


class Test_slots:
    def test_augment_copies_position(self, covariance):
        dx = np.arange(STATE_DIM, dtype=float)
        P, dx2 = augment_image_state(covariance, dx, 'tc')
        np.testing.assert_allclose(P[IDX.r_tc, IDX.r_tc], covariance[IDX.r, IDX.r])
        np.testing.assert_allclose(P[IDX.r_tc, IDX.r], covariance[IDX.r, IDX.r])
        np.testing.assert_allclose(P[IDX.r_tc, IDX.psi], covariance[IDX.r, IDX.psi])
        np.testing.assert_array_equal(dx2[IDX.r_tc], dx[IDX.r])

    def test_move_keeps_cross_terms(self, covariance):
        dx = np.zeros(STATE_DIM)
        P, _ = augment_image_state(covariance, dx, 'tc')
        P2, _ = move_slot(P, dx, 'tc', 'tr1')
        np.testing.assert_allclose(P2[IDX.r_tr1, IDX.r], P[IDX.r_tc, IDX.r])
        np.testing.assert_allclose(P2[IDX.r_tr1, IDX.r_tr1], P[IDX.r_tc, IDX.r_tc])

    def test_clear(self, covariance):
        P, dx = clear_slot(covariance, np.ones(STATE_DIM), 'hbc')
        assert not np.any(P[IDX.r_hbc, :])
        assert not np.any(dx[IDX.r_hbc])


class Test_transfer_heading:
    def test_moves_heading_to_gamma2(self, covariance):
        dx = np.zeros(STATE_DIM)
        dx[IDX.psi.start + 2] = 0.01
        P, dx2 = transfer_heading(covariance, dx)
        psi_z, gamma2 = IDX.psi.start + 2, IDX.gamma2.start
        assert P[gamma2, gamma2] == pytest.approx(covariance[psi_z, psi_z])
        np.testing.assert_allclose(P[gamma2, IDX.r], -covariance[psi_z, IDX.r])
        assert not np.any(P[psi_z, :])
        assert dx2[gamma2] == pytest.approx(-0.01)
        assert dx2[psi_z] == 0.0


class Test_apply_corrections:
    def test_small_correction(self, nav_state):
        dx = np.zeros(STATE_DIM)
        dx[IDX.r] = [1.0, -2.0, 0.5]
        dx[IDX.v] = [0.1, 0.0, 0.0]
        dx[IDX.psi] = [1e-3, -2e-3, 5e-4]
        nav, cleared = apply_corrections(nav_state, dx)
        np.testing.assert_allclose(nav.r, nav_state.r + dx[IDX.r])
        np.testing.assert_allclose(nav.v, nav_state.v + dx[IDX.v])
        np.testing.assert_allclose(nav.dcm, rotvec_to_dcm(dx[IDX.psi]) @ nav_state.dcm, atol=1e-12)
        assert not np.any(cleared)

    def test_large_correction_split(self, nav_state, caplog):
        dx = np.zeros(STATE_DIM)
        dx[IDX.psi] = [0.0, 0.0, 0.35]
        with caplog.at_level(logging.WARNING, logger='navfilter.ekf'):
            nav, _ = apply_corrections(nav_state, dx)
        assert any('分 4 步' in r.getMessage() for r in caplog.records)
        np.testing.assert_allclose(nav.dcm, rotvec_to_dcm(dx[IDX.psi]) @ nav_state.dcm, atol=1e-12)


class Test_initial_covariance:
    def test_defaults(self, config):
        P = initial_covariance(config)
        assert P[IDX.gamma2, IDX.gamma2][0, 0] == 0.0
        assert not np.any(P[IDX.r_tc, IDX.r_tc])
        assert P[IDX.d, IDX.d][0, 0] == pytest.approx(config.initial_sigma.d_m ** 2)

    def test_accel_bias_includes_install(self, config):
        g = config.environment.gravity_m_s2
        expected = config.sensors.effective_accel_bias(g)
        assert expected > config.sensors.accel_bias
        P = initial_covariance(config)
        assert np.sqrt(P[IDX.b_aB, IDX.b_aB][1, 1]) == pytest.approx(expected)
        assert process_model(config).fogm['b_aA'].sigma_ss == pytest.approx(expected)

    def test_terrain_distance_stationary_at_rest(self, config):
        """靜止時 d 的變異數停在起始值（不被 FOGM 拉低）"""
        spec = process_model(config, horizontal_speed=0.0).fogm['d']
        assert spec.sigma_ss == pytest.approx(config.initial_sigma.d_m)
        phi, q = spec.discrete(900.0)
        assert phi ** 2 * config.initial_sigma.d_m ** 2 + q == pytest.approx(config.initial_sigma.d_m ** 2)

    def test_heading_override(self, config):
        P = initial_covariance(config, heading_sigma=np.deg2rad(2.0))
        assert np.sqrt(P[IDX.psi.start + 2, IDX.psi.start + 2]) == pytest.approx(np.deg2rad(2.0))


class Test_ErrorState:
    def test_sigma_and_block(self, diagonal_covariance):
        es = ErrorState(P=diagonal_covariance)
        np.testing.assert_allclose(es.sigma('r'), [3.0, 3.0, 3.0])
        assert es.block('r', 'v').shape == (3, 3)
        assert es.is_symmetric()


class Test_NavFilter:
    @pytest.fixture
    def nav_filter(self, config):
        initial = NavState(np.zeros(3), [0.02, -0.01, 0.0], dcm_to_quat(euler_to_dcm(0.0, 0.0, 0.5)))
        P0 = initial_covariance(config, heading_sigma=np.deg2rad(1.0))
        return NavFilter(config, initial, P0)

    def test_zero_velocity_update(self, nav_filter):
        before = nav_filter.sigma('v').copy()
        result = nav_filter.process(zero_velocity_measurement(nav_filter.nav, 0.001))
        assert result.accepted
        assert np.all(nav_filter.sigma('v') < before)
        dr, dv = nav_filter.apply_corrections()
        assert np.linalg.norm(nav_filter.nav.v) < 0.02
        assert not np.any(nav_filter.state.dx)

    def test_covariance_only_ignores_residual(self, nav_filter):
        nav_filter.covariance_only = True
        nav_filter.process(zero_velocity_measurement(nav_filter.nav, 0.001))
        assert not np.any(nav_filter.state.dx)
        assert nav_filter.sigma('v')[0] < 0.01

    def test_slots(self, nav_filter):
        nav_filter.augment('tc')
        assert nav_filter.slot('tc').valid
        np.testing.assert_array_equal(nav_filter.slot_position('tc'), nav_filter.nav.r)
        nav_filter.move_slot('tc', 'tr1')
        assert nav_filter.slot('tr1').valid
        nav_filter.clear_slot('tc')
        assert not nav_filter.slot('tc').valid

    def test_backup_synced_after_correction(self, nav_filter):
        nav_filter.process(zero_velocity_measurement(nav_filter.nav, 0.001))
        nav_filter.apply_corrections()
        np.testing.assert_allclose(nav_filter.navigators[nav_filter.backup].state.v, nav_filter.nav.v)
