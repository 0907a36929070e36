# -*- coding: utf-8 -*-
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from navfilter.errors import NonMonotonicSampleError, UnrecoverableFaultError
from navfilter.frames import TitanConstants, dcm_to_quat, euler_to_dcm, heading_of, r3
from navfilter.strapdown import (BiasCorrection, FaultStatus, ImuId, ImuSample, ImuWindow,
                                 NavState, Navigator, ParityThresholds, integrate_increments,
                                 load_imu_log, parity_check, propagate, save_imu_log,
                                 switch_primary)
from simulation.sensors import ImuEmulator
from simulation.trajectory import TruthState, gyrocompass_profile, ideal_increments

ALIGN_A = np.eye(3)
ALIGN_B = r3(np.pi / 2)


def _static_truth(t, attitude):
    return TruthState(t, np.zeros(3), np.zeros(3), np.zeros(3), dcm_to_quat(attitude))


class Test_integrate:
    def test_static_closure(self, constants):
        """理想靜止增量下位置、速度與姿態都不漂移"""
        attitude = euler_to_dcm(0.02, -0.01, 0.8)
        state = NavState(np.zeros(3), np.zeros(3), dcm_to_quat(attitude))
        nav = Navigator(ImuId.A, state, constants=constants)
        dt = 1.0 / 200.0
        prev = _static_truth(0.0, attitude)
        for k in range(1, 2001):
            cur = _static_truth(k * dt, attitude)
            dtheta, dv = ideal_increments(prev, cur, constants)
            nav.step(ImuSample(cur.t, dtheta, dv, ImuId.A))
            prev = cur
        assert np.linalg.norm(nav.state.r) < 1e-6
        assert np.linalg.norm(nav.state.v) < 1e-7
        np.testing.assert_allclose(nav.state.dcm, attitude, atol=1e-10)
        assert nav.state.t == pytest.approx(10.0)
        assert nav.state.steps == 2000

    def test_constant_yaw_rate(self):
        constants = TitanConstants(omega=0.0, gravity=[0.0, 0.0, 0.0])
        state = NavState(np.zeros(3), np.zeros(3), [1.0, 0.0, 0.0, 0.0])
        rate, dt = 0.1, 0.01
        for _ in range(100):
            state = integrate_increments(state, [0.0, 0.0, rate * dt], np.zeros(3), dt, constants)
        assert heading_of(state.dcm) == pytest.approx(rate * 1.0, abs=1e-12)
        np.testing.assert_allclose(state.v, np.zeros(3), atol=1e-15)

    def test_forward_backward_reversible(self, rng):
        """無雜訊時正向積分再反向積分回到初始狀態"""
        constants = TitanConstants(omega=0.0)
        start = NavState(np.array([10.0, -5.0, -80.0]), np.array([1.0, 0.5, -0.2]),
                         dcm_to_quat(euler_to_dcm(0.05, -0.03, 1.2)))
        dt = 1.0 / 200.0
        steps = [(rng.normal(0.0, 1e-3, 3), rng.normal(0.0, 1e-2, 3) - constants.gravity * dt)
                 for _ in range(2000)]
        state = start
        for dtheta, dv in steps:
            state = integrate_increments(state, dtheta, dv, dt, constants)
        for dtheta, dv in reversed(steps):
            state = integrate_increments(state, -dtheta, -dv, -dt, constants)
        np.testing.assert_allclose(state.r, start.r, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(state.v, start.v, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(state.dcm, start.dcm, atol=1e-9)

    def test_hover_holds_position(self, constants):
        """推力抵銷重力的懸停 60 秒，位置只有積分截斷誤差"""
        attitude = euler_to_dcm(0.0, 0.0, -0.4)
        r0 = np.array([0.0, 0.0, -150.0])

        def hover(t):
            return TruthState(t, r0, np.zeros(3), np.zeros(3), dcm_to_quat(attitude))

        state = NavState(r0, np.zeros(3), dcm_to_quat(attitude))
        nav = Navigator(ImuId.A, state, constants=constants)
        dt = 1.0 / 200.0
        prev = hover(0.0)
        for k in range(1, 12001):
            cur = hover(k * dt)
            dtheta, dv = ideal_increments(prev, cur, constants)
            nav.step(ImuSample(cur.t, dtheta, dv, ImuId.A))
            prev = cur
        assert nav.state.t == pytest.approx(60.0)
        assert np.linalg.norm(nav.state.r - r0) < 1e-5
        assert np.linalg.norm(nav.state.v) < 1e-7

    def test_bias_correction_removed(self, constants):
        """扣除的偏差與注入的偏差相同時結果不變"""
        attitude = np.eye(3)
        prev, cur = _static_truth(0.0, attitude), _static_truth(0.01, attitude)
        dtheta, dv = ideal_increments(prev, cur, constants)
        b_g, b_a = np.array([1e-5, -2e-5, 3e-5]), np.array([1e-3, 0.0, -2e-3])
        state = NavState(np.zeros(3), np.zeros(3), [1.0, 0.0, 0.0, 0.0])
        clean = propagate(state, ImuSample(0.01, dtheta, dv), BiasCorrection(), constants)
        biased = propagate(state, ImuSample(0.01, dtheta + b_g * 0.01, dv + b_a * 0.01),
                           BiasCorrection(b_g, b_a), constants)
        np.testing.assert_allclose(biased.v, clean.v, atol=1e-15)
        np.testing.assert_allclose(biased.q, clean.q, atol=1e-15)

    @pytest.mark.parametrize("t", [0.0, -0.01])
    def test_non_monotonic_sample(self, constants, t):
        state = NavState(np.zeros(3), np.zeros(3), [1.0, 0.0, 0.0, 0.0], t=0.0)
        with pytest.raises(NonMonotonicSampleError):
            propagate(state, ImuSample(t, np.zeros(3), np.zeros(3)), BiasCorrection(), constants)


class Test_Navigator:
    def test_wrong_imu(self):
        nav = Navigator('A', NavState(np.zeros(3), np.zeros(3), [1.0, 0.0, 0.0, 0.0]))
        with pytest.raises(ValueError):
            nav.step(ImuSample(0.01, np.zeros(3), np.zeros(3), ImuId.B))

    def test_sync_pose_keeps_steps(self):
        a = Navigator(ImuId.A, NavState(np.ones(3), np.zeros(3), [1.0, 0.0, 0.0, 0.0], steps=5))
        b = Navigator(ImuId.B, NavState(np.zeros(3), np.zeros(3), [1.0, 0.0, 0.0, 0.0], steps=42))
        b.sync_pose(a.state)
        np.testing.assert_array_equal(b.state.r, np.ones(3))
        assert b.state.steps == 42

    def test_alignment_maps_to_body(self, constants):
        """B 的 IMU 座標增量經 R_B^b 轉回機體座標後與 A 相同"""
        attitude = euler_to_dcm(0.0, 0.0, 0.3)
        start = NavState(np.zeros(3), np.zeros(3), dcm_to_quat(attitude))
        a = Navigator(ImuId.A, start, ALIGN_A, constants)
        b = Navigator(ImuId.B, start, ALIGN_B, constants)
        dtheta_b, dv_b = np.array([1e-4, 2e-4, -1e-4]), np.array([0.01, 0.0, -0.0135])
        a.step(ImuSample(0.01, ALIGN_A.T @ dtheta_b, ALIGN_A.T @ dv_b, ImuId.A))
        b.step(ImuSample(0.01, ALIGN_B.T @ dtheta_b, ALIGN_B.T @ dv_b, ImuId.B))
        np.testing.assert_allclose(a.state.v, b.state.v, atol=1e-15)
        np.testing.assert_allclose(a.state.q, b.state.q, atol=1e-15)


# ========== 同位檢查 ==========

THRESHOLDS = ParityThresholds(sigma_multiple=5.0, consecutive=3, motion_coefficient=1e-3,
                              gyro_arw=1e-6, gyro_white=1e-7, gyro_bias=1e-8,
                              accel_vrw=1e-5, accel_white=1e-6, accel_bias=1e-6)


def _window(index, gyro_fault_a=0.0, n=10, dt=0.1):
    """一秒視窗；A 的 x 軸可加上陀螺步階偏差 (rad/s)"""
    rate_b = np.array([2e-5, 0.0, -1e-5])
    force_b = np.array([0.0, 0.0, -1.352])
    samples_a, samples_b = [], []
    for k in range(1, n + 1):
        t = index * n * dt + k * dt
        fault = np.array([gyro_fault_a, 0.0, 0.0]) * dt
        samples_a.append(ImuSample(t, ALIGN_A.T @ rate_b * dt + fault, ALIGN_A.T @ force_b * dt, 'A'))
        samples_b.append(ImuSample(t, ALIGN_B.T @ rate_b * dt, ALIGN_B.T @ force_b * dt, 'B'))
    return samples_a, samples_b


def _run(faults):
    status = None
    for index, fault in enumerate(faults):
        wa, wb = _window(index, fault)
        status = parity_check(wa, wb, (ALIGN_A, ALIGN_B), status, THRESHOLDS)
    return status


class Test_parity:
    def test_clean_windows(self):
        status = _run([0.0] * 5)
        assert not status.fault_declared
        assert status.gyro_parity < 1.0
        assert status.accel_parity < 1.0

    def test_gyro_fault_declared_on_a(self):
        status = _run([0.0, 1e-4, 1e-4, 1e-4])
        assert status.fault_declared
        assert status.faulted == frozenset({ImuId.A})
        assert status.faulty_sensor == 'gyro'
        assert status.axis == 0
        switched = switch_primary(status)
        assert switched.primary is ImuId.B

    def test_needs_consecutive_windows(self):
        status = _run([0.0, 1e-4, 1e-4, 0.0, 1e-4, 1e-4])
        assert not status.fault_declared
        assert status.gyro_count == 2

    def test_unsynchronized_window_skipped(self):
        wa, _ = _window(0)
        _, wb = _window(1)
        status = parity_check(wa, wb, (ALIGN_A, ALIGN_B), None, THRESHOLDS)
        assert status.skipped
        assert status.gyro_count == 0

    def test_window_from_samples(self):
        wa, _ = _window(2)
        window = ImuWindow.from_samples(wa)
        assert window.duration == pytest.approx(1.0)
        assert window.t_end == pytest.approx(3.0)

    def test_single_sample_window_needs_period(self):
        wa, _ = _window(0, n=1, dt=1.0)
        with pytest.raises(ValueError, match="取樣週期"):
            ImuWindow.from_samples(wa)
        window = ImuWindow.from_samples(wa, period=1.0)
        assert window.duration == pytest.approx(1.0)
        assert window.t_start == pytest.approx(0.0)

    def test_single_sample_windows_stay_finite(self):
        status = None
        for index in range(5):
            wa, wb = _window(index, n=1, dt=1.0)
            status = parity_check(wa, wb, (ALIGN_A, ALIGN_B), status, THRESHOLDS, period=1.0)
        assert np.all(np.isfinite(np.concatenate(status.means)))
        assert status.gyro_parity < 1.0
        assert not status.fault_declared

    def test_sigma_grows_with_window(self):
        assert THRESHOLDS.sigma('gyro', 10.0, 0.0) > THRESHOLDS.sigma('gyro', 1.0, 0.0)

    def test_install_errors_widen_sigma(self, config):
        thr = ParityThresholds.from_config(config.parity, config.sensors)
        bare = replace(thr, accel_install=0.0)
        assert thr.sigma('accel', 1.0, 1.352) > bare.sigma('accel', 1.0, 1.352)

    @pytest.mark.parametrize("rate_hz, seconds", [(1.0, 900), (200.0, 60)])
    def test_healthy_imus_false_alarms(self, config, constants, rate_hz, seconds):
        """完整誤差規格、沒有故障的兩顆 IMU：每個視窗都不該超標太多次，也不宣告故障"""
        dt = 1.0 / rate_hz
        per_window = int(round(config.parity.window_s * rate_hz))
        traj = gyrocompass_profile({'duration_s': seconds + 1.0, 'heading_deg': 30.0}, constants)
        states = traj.sample(np.arange(0.0, seconds + dt / 2, dt))
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(7).spawn(2)]
        imus = {imu: ImuEmulator(imu, config.sensors, config.imu.alignment(imu.value), rng)
                for imu, rng in zip(ImuId, rngs)}
        alignments = (config.imu.alignment('A'), config.imu.alignment('B'))
        thr = ParityThresholds.from_config(config.parity, config.sensors)
        samples = {imu: [imus[imu].sample(prev, cur, constants)
                         for prev, cur in zip(states[:-1], states[1:])] for imu in ImuId}
        status, exceed, windows = None, 0, 0
        for start in range(0, len(states) - 1 - per_window + 1, per_window):
            wa = samples[ImuId.A][start:start + per_window]
            wb = samples[ImuId.B][start:start + per_window]
            status = parity_check(wa, wb, alignments, status, thr, period=dt)
            windows += 1
            exceed += max(status.gyro_parity, status.accel_parity) > thr.sigma_multiple
        assert np.isfinite(status.gyro_parity) and np.isfinite(status.accel_parity)
        assert exceed / windows < 0.01
        assert not status.fault_declared
        assert status.faulted == frozenset()

    def test_double_fault_unrecoverable(self):
        status = FaultStatus(fault_declared=True, faulted=frozenset({ImuId.A, ImuId.B}))
        with pytest.raises(UnrecoverableFaultError):
            switch_primary(status)

    def test_no_switch_without_fault(self):
        status = FaultStatus(primary=ImuId.A)
        assert switch_primary(status).primary is ImuId.A


# ========== IMU 記錄檔 ==========

class Test_imu_log:
    def test_save_load(self, tmp_path):
        samples = [ImuSample(0.005 * k, [1e-6 * k, 0.0, 0.0], [0.0, 0.0, -0.00676], imu)
                   for k in range(1, 6) for imu in ('A', 'B')]
        path = str(tmp_path / "imu.csv")
        save_imu_log(samples, path)
        loaded = load_imu_log(path)
        assert len(loaded) == len(samples)
        assert loaded[3].imu_id is ImuId.B
        np.testing.assert_array_equal(loaded[4].dtheta, samples[4].dtheta)

    def test_non_monotonic(self, tmp_path):
        samples = [ImuSample(t, np.zeros(3), np.zeros(3), 'A') for t in (0.01, 0.02, 0.02, 0.03)]
        path = str(tmp_path / "imu.csv")
        save_imu_log(samples, path)
        with pytest.raises(NonMonotonicSampleError):
            load_imu_log(path)

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "imu.csv"
        pd.DataFrame({'t': [0.01], 'imu_id': ['A']}).to_csv(path, index=False)
        with pytest.raises(ValueError, match="缺少欄位"):
            load_imu_log(str(path))
