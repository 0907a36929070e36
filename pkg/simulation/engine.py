# -*- coding: utf-8 -*-
"""
模擬引擎核心
單一案例：真值軌跡 → 感測器 → 濾波器 → 遙測

- FlightSimulator：一次飛行（起飛前對準、航向轉移、量測排程、麵包屑）
- SimulationEngine：組合一個案例（leapfrog 為兩次飛行加資料庫重新錨定）

covariance_only 時沿參考軌跡只傳播共變異數（線性共變異數分析）：
導航狀態每個週期重設為真值、不模擬 IMU 誤差、量測殘差固定為 0。
"""
import logging
from collections import deque
from dataclasses import dataclass, replace
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from navfilter.breadcrumbs import (Breadcrumb, BreadcrumbDb, CrumbModality, LandingRecord,
                                   PathSample, curvature_rotation, load_breadcrumb,
                                   remap_database, select_reference, should_save_breadcrumb)
from navfilter.config import NavConfig, Profile, Scenario
from navfilter.ekf import NavFilter, SlotRecord, initial_covariance
from navfilter.errors import (BreadcrumbError, CovarianceError, MeasurementRejected,
                              UnrecoverableFaultError)
from navfilter.frames import dcm_to_quat, dcm_to_rotvec, heading_of, r3, rotvec_to_dcm
from navfilter.guidance import CorrectionFilter, DriftOffset, breadcrumb_drift_offset, condition_state
from navfilter.measurements import (CameraModel, EtsModality, ImageState, LidarMode, PressureModel,
                                    breadcrumb_measurement, gyrocompass_measurement,
                                    heading_rotation, lidar_los_set, lidar_measurement,
                                    lidar_mode_for_altitude, nullspace_basis,
                                    nullspace_measurement, pressure_measurement,
                                    velocimetry_measurement, zero_position_measurement,
                                    zero_velocity_measurement)
from navfilter.state import STATE_INDEX as IDX
from navfilter.strapdown import FaultStatus, ImuId, ImuSample, NavState, ParityThresholds, parity_check

from .environment import Environment
from .sensors import (ImuEmulator, ImuFault, LidarEmulator, TruthImage, emulate_ets,
                      emulate_pressure)
from .telemetry import state_columns, telemetry_columns
from .trajectory import (Trajectory, TruthState, build_trajectory, ideal_increments,
                         leapfrog_profiles, planned_path)

logger = logging.getLogger(__name__)

# 兩次飛行之間的地面停留 (s)
FLIGHT_GAP_S = 600.0

CRUMB_TO_ETS = {
    CrumbModality.ONLINE: EtsModality.ONLINE_BC,
    CrumbModality.HISTORIC: EtsModality.HISTORIC_BC,
    CrumbModality.TERMINAL: EtsModality.TERMINAL_BC,
}

RNG_STREAMS = ('env', 'init', 'imu_a', 'imu_b', 'lidar', 'pressure', 'ets')


def spawn_rngs(seed_seq: np.random.SeedSequence) -> Dict[str, np.random.Generator]:
    """每個亂數來源一條獨立的子序列"""
    return {name: np.random.default_rng(child)
            for name, child in zip(RNG_STREAMS, seed_seq.spawn(len(RNG_STREAMS)))}


def next_flight_trajectory(scenario: Scenario, constants) -> Trajectory:
    """下一趟的規劃軌跡（leapfrog 為第二趟，其他剖面沿用本身）"""
    if scenario.profile is Profile.LEAPFROG:
        return leapfrog_profiles(scenario.params, constants)[1]
    return build_trajectory(scenario, constants)


def remap_for_next_flight(db: BreadcrumbDb, trajectory: Trajectory, constants,
                          settings) -> BreadcrumbDb:
    """
    以降落紀錄把資料庫搬到下一趟的 TOF，並依下一趟路徑篩選

    Raises:
        BreadcrumbError: 資料庫沒有降落紀錄
    """
    if db.landing is None:
        raise BreadcrumbError("資料庫沒有降落紀錄，無法重新錨定")
    frame_rot = curvature_rotation(db.landing.r_tof, float(np.linalg.norm(constants.r0_tof)),
                                   constants.latitude)
    next_path = [PathSample(p, h) for p, h in planned_path(trajectory)]
    site = trajectory.state(trajectory.duration).r
    return remap_database(db, frame_rot, next_path, site, settings)


@dataclass
class FlightResult:
    """一次飛行的輸出"""
    rows: List[dict]
    events: List[dict]
    status: str = 'ok'
    message: str = ''
    filter: Optional[NavFilter] = None
    gamma_true: float = 0.0
    t_end: float = 0.0
    landing: Optional[LandingRecord] = None
    db: Optional[BreadcrumbDb] = None


class FlightSimulator:
    """
    一次飛行的模擬

    Args:
        config: 已套用情境頻率的設定
        scenario: 情境
        trajectory: 真值軌跡（座標原點為起飛台）
        environment: 真值環境
        rngs: spawn_rngs 產生的亂數來源
        flight_id: 飛行編號
        case_index: 案例編號（寫入遙測）
        db: 麵包屑資料庫（None 表示停用）
        truth_crumbs: 麵包屑編號 → 擷取時的真值影像
        imus: 共用的 IMU 模擬器（leapfrog 兩次飛行沿用同一組）
        t_offset: 任務時鐘起點
        covariance_only: 線性共變異數模式
        heading_sigma: 起始航向誤差 1σ (rad)
        gamma1_true / gamma1_variance: 上一趟 TOF 的航向真值與其變異數
    """

    def __init__(self, config: NavConfig, scenario: Scenario, trajectory: Trajectory,
                 environment: Environment, rngs: Dict[str, np.random.Generator], *,
                 flight_id: int = 1, case_index: int = 0, db: Optional[BreadcrumbDb] = None,
                 truth_crumbs: Optional[Dict[int, TruthImage]] = None,
                 imus: Optional[Dict[ImuId, ImuEmulator]] = None, t_offset: float = 0.0,
                 covariance_only: bool = False, heading_sigma: Optional[float] = None,
                 gamma1_true: float = 0.0, gamma1_variance: Optional[float] = None):
        self.config = config
        self.scenario = scenario
        self.trajectory = trajectory
        self.env = environment
        self.constants = environment.constants
        self.rngs = rngs
        self.flight_id = flight_id
        self.case_index = case_index
        self.db = db
        self.truth_crumbs = {} if truth_crumbs is None else truth_crumbs
        self.t_offset = float(t_offset)
        self.covariance_only = covariance_only
        self.sensor_errors = scenario.sensor_errors and not covariance_only
        self.heading_sigma = (scenario.initial_heading_sigma if heading_sigma is None
                              else heading_sigma)
        self.gamma1_true = gamma1_true
        self.gamma1_variance = gamma1_variance

        self.rate = config.filter.rate_hz
        self.dt = config.filter.dt
        ratio = config.imu.rate_hz / self.rate
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(f"IMU 頻率 {config.imu.rate_hz} Hz 必須是濾波頻率 {self.rate} Hz 的整數倍")
        self.imu_per_tick = int(round(ratio))

        self.truth_spec = config.sensors if self.sensor_errors else config.sensors.zeroed()
        self.alignments = {imu: config.imu.alignment(imu.value) for imu in ImuId}
        self.imus = imus
        if self.imus is None and not covariance_only:
            fault = ImuFault.from_config(scenario.fault)
            self.imus = {
                ImuId.A: ImuEmulator(ImuId.A, self.truth_spec, self.alignments[ImuId.A],
                                     rngs['imu_a'], fault),
                ImuId.B: ImuEmulator(ImuId.B, self.truth_spec, self.alignments[ImuId.B],
                                     rngs['imu_b'], fault),
            }
        self.camera = CameraModel.from_config(config.ets)
        self.pressure_model = PressureModel.from_config(config.pressure, self.constants)
        self.lidar = LidarEmulator(environment.terrain, self.truth_spec.lidar_pointing,
                                   self.truth_spec.lidar_noise, rngs['lidar'])
        self.parity_thresholds = ParityThresholds.from_config(config.parity, config.sensors)
        self.use_crumbs = db is not None and bool(scenario.params.get('breadcrumbs', True))
        self.null_basis = None
        if config.filter.nullspace_enabled and scenario.enabled('nullspace'):
            try:
                self.null_basis = nullspace_basis([self.alignments[ImuId.A], self.alignments[ImuId.B]])
            except MeasurementRejected as e:
                logger.warning(f"零空間模型停用: {e}")

        self.filter: Optional[NavFilter] = None
        self.truth: Optional[TruthState] = None
        self.gamma_true = 0.0
        self.transferred = False
        self.pad = np.zeros(3)
        self.fault_status = FaultStatus()
        self.correction = CorrectionFilter.from_config(config.guidance, self.rate)
        self.drift = DriftOffset(alpha=config.guidance.alpha, max_norm=config.guidance.drift_max_m)
        self.r_ctrl = np.zeros(3)
        self.v_ctrl = np.zeros(3)
        self.samples: Dict[ImuId, List[ImuSample]] = {imu: [] for imu in ImuId}
        self.window_start: Dict[str, float] = {}
        self.tick_force = deque(maxlen=max(2, self._every(config.filter.gyrocompass_tau_acc_s)))
        self.truth_images: Dict[str, TruthImage] = {}
        self.pending: Optional[dict] = None
        self.hbc_crumb: Optional[Breadcrumb] = None
        self.events: List[dict] = []

    # ----- 小工具 -----
    def _every(self, period_s: float) -> int:
        return max(1, int(round(period_s * self.rate)))

    def _event(self, t: float, kind: str, detail: str = ""):
        self.events.append({'t': round(float(t), 6), 'flight': self.flight_id, 'kind': kind,
                            'detail': detail})

    def _truth(self, t_local: float) -> TruthState:
        return replace(self.trajectory.state(t_local), t=t_local + self.t_offset)

    def _filter_frame(self, truth: TruthState):
        """真值轉到本趟濾波座標（起飛前為 NED，之後為真值 TOF）"""
        rot = r3(self.gamma_true)
        return rot @ truth.r, rot @ truth.v, rot @ truth.dcm

    def _truth_image(self, truth: TruthState) -> TruthImage:
        return TruthImage(truth.r.copy(), truth.dcm, self.env.terrain.agl(truth.r), truth.t)

    def _true_normal(self, truth: TruthState) -> np.ndarray:
        normal = self.env.terrain.normal(truth.r[0], truth.r[1])
        return (r3(self.gamma_true) @ normal)[:2]

    def _process(self, build, t: float):
        """建立並處理一筆量測；建立時被拒絕則只記錄"""
        try:
            m = build()
        except MeasurementRejected as e:
            logger.debug(f"t={t:.2f} 量測略過: {e}")
            return None
        return self.filter.process(m)

    # ----- 初始化 -----
    def _initialize(self):
        cfg = self.config
        init = cfg.initial_sigma
        rng = self.rngs['init']
        truth = self._truth(0.0)
        self.truth = truth
        self.pad = truth.r.copy()
        tilt = self.scenario.initial_tilt_sigma
        if self.sensor_errors:
            psi0 = np.array([rng.normal(0.0, tilt), rng.normal(0.0, tilt),
                             rng.normal(0.0, self.heading_sigma)])
            dr = rng.normal(0.0, init.position_m, 3)
            dv = rng.normal(0.0, init.velocity_m_s, 3)
            dd = rng.normal(0.0, init.d_m)
        else:
            psi0, dr, dv, dd = np.zeros(3), np.zeros(3), np.zeros(3), 0.0
        attitude = rotvec_to_dcm(psi0).T @ truth.dcm
        nav0 = NavState(truth.r + dr, truth.v + dv, dcm_to_quat(attitude), truth.t)
        P0 = initial_covariance(cfg, heading_sigma=self.heading_sigma, tilt_sigma=tilt)
        if self.gamma1_variance is not None:
            P0[IDX.gamma1, IDX.gamma1] = self.gamma1_variance
        self.filter = NavFilter(cfg, nav0, P0, self.constants)
        self.filter.covariance_only = self.covariance_only
        self.filter.x_aux[IDX.d] = self.env.terrain.plane_distance(truth.r) + dd
        if self.covariance_only:
            self.filter.x_aux[IDX.n] = self._true_normal(truth)
        for name in ('gyrocompass', 'nullspace', 'parity'):
            self.window_start[name] = truth.t
        logger.debug(f"飛行 {self.flight_id} 初始化：ψ0 = {np.degrees(psi0).round(3)}°")

    # ----- 主迴圈 -----
    def run(self) -> FlightResult:
        rows: List[dict] = []
        status, message = 'ok', ''
        try:
            self._initialize()
            n_ticks = int(np.floor(self.trajectory.duration * self.rate + 1e-9))
            for k in range(1, n_ticks + 1):
                self._tick(k)
                rows.append(self._telemetry_row(k))
        except (CovarianceError, UnrecoverableFaultError) as e:
            status, message = 'failed', str(e)
            t = self.filter.t if self.filter is not None else self.t_offset
            logger.error(f"案例 {self.case_index} 飛行 {self.flight_id} 失敗 (t={t:.2f}): {e}")
            self._event(t, 'failed', message)
        if self.filter is not None:
            self.events.extend(dict(e, flight=self.flight_id) for e in self.filter.events)
        return FlightResult(rows=rows, events=self.events, status=status, message=message,
                            filter=self.filter, gamma_true=self.gamma_true,
                            t_end=self.filter.t if self.filter is not None else self.t_offset,
                            landing=self._landing_record() if status == 'ok' else None,
                            db=self.db)

    def _tick(self, k: int):
        t_local = k * self.dt
        t = t_local + self.t_offset
        prev = self.truth
        if self.covariance_only:
            cur = self._truth(t_local)
            omega = self._ideal_samples(prev, cur)
            self._propagate_reference(cur, omega)
        else:
            cur = self._step_imus(prev, t_local)
            self.filter.propagate(t)
        self.truth = cur

        takeoff = self.trajectory.takeoff_time
        if not self.transferred and takeoff is not None and t_local >= takeoff - 1e-9:
            self._transfer_heading(t)

        static = self.trajectory.is_static(t_local)
        self._measure(k, t, t_local, static)
        dr, dv = self.filter.apply_corrections()
        nav = self.filter.nav
        self.r_ctrl, self.v_ctrl, self.correction = condition_state(nav.r, nav.v, dr, dv, self.correction)
        self._purge_samples()

    def _step_imus(self, prev: TruthState, t_local: float) -> TruthState:
        start = t_local - self.dt
        state = prev
        dv_sum = np.zeros(3)
        for j in range(1, self.imu_per_tick + 1):
            cur = self._truth(start + j * self.dt / self.imu_per_tick)
            for imu_id, emulator in self.imus.items():
                sample = emulator.sample(state, cur, self.constants)
                self.filter.imu_step(sample)
                self.samples[imu_id].append(sample)
                if imu_id is self.filter.primary:
                    dv_sum += sample.dv
            state = cur
        self.tick_force.append(float(np.linalg.norm(dv_sum)) / self.dt)
        return state

    def _ideal_samples(self, prev: TruthState, cur: TruthState):
        """共變異數模式：以無誤差增量填滿量測視窗，回傳本週期的平均機體角速度"""
        dtheta_b, dv_b = ideal_increments(prev, cur, self.constants)
        for imu_id, rot in self.alignments.items():
            self.samples[imu_id].append(ImuSample(cur.t, rot.T @ dtheta_b, rot.T @ dv_b, imu_id))
        self.tick_force.append(float(np.linalg.norm(dv_b)) / self.dt)
        return dtheta_b / self.dt

    def _propagate_reference(self, cur: TruthState, omega_body: np.ndarray):
        r, v, dcm = self._filter_frame(cur)
        self.filter.reset_pose(NavState(r, v, dcm_to_quat(dcm), cur.t))
        f_body = cur.dcm.T @ self.trajectory.specific_force(cur.r, cur.v, cur.a)
        self.filter.propagate(cur.t, f_body=f_body, omega_body=omega_body)
        self.filter.x_aux[IDX.d] = self.env.terrain.plane_distance(cur.r)
        self.filter.x_aux[IDX.n] = self._true_normal(cur)

    def _window(self, name: str, t: float) -> Dict[ImuId, List[ImuSample]]:
        start = self.window_start[name]
        self.window_start[name] = t
        return {imu: [s for s in samples if start < s.t <= t + 1e-9]
                for imu, samples in self.samples.items()}

    def _purge_samples(self):
        oldest = min(self.window_start.values())
        for imu, samples in self.samples.items():
            if samples and samples[0].t <= oldest:
                self.samples[imu] = [s for s in samples if s.t > oldest]

    def _transfer_heading(self, t: float):
        """起飛：TOF 取估計航向，真值座標改為 r3(γ₂)·NED"""
        _, _, dcm_true = self._filter_frame(self.truth)
        psi_true = dcm_to_rotvec(dcm_true @ self.filter.nav.dcm.T)
        self.filter.transfer_heading()
        self.filter.x_aux[IDX.gamma2] = 0.0
        self.gamma_true = -float(psi_true[2])
        self.transferred = True
        self._event(t, 'takeoff', f"γ2 真值 {np.degrees(self.gamma_true):.4f}°")

    # ----- 量測排程 -----
    def _measure(self, k: int, t: float, t_local: float, static: bool):
        cfg = self.config
        sc = self.scenario
        takeoff = self.trajectory.takeoff_time
        before_takeoff = takeoff is None or t_local < takeoff - 1e-9

        if static and sc.enabled('zero_velocity'):
            nav = self.filter.nav
            self._process(lambda: zero_velocity_measurement(nav, cfg.filter.zero_velocity_sigma_m_s, t), t)
            if before_takeoff:
                self._process(lambda: zero_position_measurement(
                    nav, cfg.filter.zero_position_sigma_m, self.pad, t), t)

        if k % self._every(cfg.filter.gyrocompass_tau_acc_s) == 0:
            windows = self._window('gyrocompass', t)
            if static and before_takeoff and sc.enabled('gyrocompass'):
                self._gyrocompass(windows, t)

        if k % self._every(cfg.filter.nullspace_tau_s) == 0:
            windows = self._window('nullspace', t)
            if self.null_basis is not None:
                self._nullspace(windows, t)

        if k % self._every(cfg.parity.window_s) == 0:
            windows = self._window('parity', t)
            if not self.covariance_only:
                self._parity(windows, t)

        if sc.enabled('pressure') and k % self._every(1.0 / cfg.pressure.rate_hz) == 0:
            self._pressure(t)
        if sc.enabled('lidar'):
            self._lidar(k, t)
        if sc.enabled('ets'):
            self._ets(k, t, static)

    def _gyrocompass(self, windows: Dict[ImuId, List[ImuSample]], t: float):
        cfg = self.config
        tau = cfg.filter.gyrocompass_tau_acc_s
        rates = {imu: np.sum([s.dtheta for s in w], axis=0) / tau for imu, w in windows.items() if w}
        if not rates:
            return
        forces = list(self.tick_force)[-self._every(tau):]
        accel_std = float(np.std(forces)) if len(forces) >= 2 else None
        f = self.filter
        bias_hat = {imu: f.x_aux[IDX.bias_groups(imu)[1]] for imu in rates}
        alignments = {imu: f.navigators[imu].alignment for imu in rates}
        nav = f.nav
        self._process(lambda: gyrocompass_measurement(
            rates, nav.dcm, alignments, bias_hat, tau, cfg.sensors.gyro_arw, cfg.sensors.gyro_white,
            accel_std, cfg.filter.static_accel_std_max, t), t)

    def _nullspace(self, windows: Dict[ImuId, List[ImuSample]], t: float):
        wa, wb = windows[ImuId.A], windows[ImuId.B]
        if not wa or not wb:
            return
        cfg = self.config
        f = self.filter
        tau = cfg.filter.nullspace_tau_s
        alignments = [self.alignments[ImuId.A], self.alignments[ImuId.B]]
        coef = cfg.parity.motion_coefficient
        specs = (('gyro', 'dtheta', 'b_gA', 'b_gB', cfg.sensors.gyro_arw, cfg.sensors.gyro_white),
                 ('accel', 'dv', 'b_aA', 'b_aB', cfg.sensors.accel_vrw, cfg.sensors.accel_white))
        for sensor, attr, name_a, name_b, walk, white in specs:
            sum_a = np.sum([getattr(s, attr) for s in wa], axis=0)
            sum_b = np.sum([getattr(s, attr) for s in wb], axis=0)
            motion = 0.5 * (np.linalg.norm(sum_a) + np.linalg.norm(sum_b))
            white_eff = float(np.sqrt(white ** 2 + 0.5 * (coef * motion) ** 2))
            self._process(lambda: nullspace_measurement(
                sum_a, sum_b, alignments, f.x_aux[IDX[name_a]], f.x_aux[IDX[name_b]], tau, sensor,
                walk, white_eff, t, self.null_basis), t)

    def _parity(self, windows: Dict[ImuId, List[ImuSample]], t: float):
        wa, wb = windows[ImuId.A], windows[ImuId.B]
        if not wa or not wb:
            return
        f = self.filter
        was_declared = self.fault_status.fault_declared
        status = parity_check(wa, wb, (self.alignments[ImuId.A], self.alignments[ImuId.B]),
                              self.fault_status, self.parity_thresholds,
                              f.navigators[ImuId.A].bias, f.navigators[ImuId.B].bias,
                              period=1.0 / self.config.imu.rate_hz)
        self.fault_status = f.handle_fault(status)
        if self.fault_status.fault_declared and not was_declared:
            faulted = ",".join(sorted(i.value for i in self.fault_status.faulted))
            self._event(t, 'fault', f"{self.fault_status.faulty_sensor} IMU {faulted} "
                                    f"軸 {self.fault_status.axis}")

    def _pressure(self, t: float):
        cfg = self.config
        f = self.filter
        truth = self.truth
        height = self.pressure_model.height(truth.r) - self.pressure_model.h0
        v_rel = truth.dcm.T @ (truth.v - self.env.wind)
        rng = self.rngs['pressure']
        for sensor, atmosphere in (('A', self.env.atmosphere_a), ('B', self.env.atmosphere_b)):
            raw = emulate_pressure(atmosphere, height, v_rel, self.truth_spec.pressure_noise, rng)
            nav = f.nav
            self._process(lambda: pressure_measurement(
                raw, sensor, nav, self.pressure_model, f.x_aux[IDX.dH][0],
                f.x_aux[IDX['b_p' + sensor]][0], cfg.sensors.pressure_noise, t), t)

    def _lidar(self, k: int, t: float):
        cfg = self.config
        f = self.filter
        mode = lidar_mode_for_altitude(f.altitude_agl(), cfg.lidar, cfg.filter.lidar_min_altitude_m)
        if mode is None:
            return
        pyramid = mode is LidarMode.PYRAMID
        rate = cfg.lidar.pyramid_rate_hz if pyramid else cfg.lidar.altimetry_rate_hz
        if k % self._every(1.0 / rate):
            return
        max_range = cfg.lidar.pyramid_max_range_m if pyramid else cfg.lidar.altimetry_max_range_m
        truth = self.truth
        nav = f.nav
        d_hat, n_hat = f.altitude_agl(), f.x_aux[IDX.n].copy()
        for los in lidar_los_set(mode, cfg.lidar.pyramid_half_angle_deg):
            slant = self.lidar.measure(truth.r, truth.dcm, los.point, max_range)
            if slant is None:
                logger.debug(f"t={t:.2f} 光達 {los.los_id.value} 沒有回波")
                continue
            self._process(lambda: lidar_measurement(
                los, slant, nav, d_hat, n_hat, cfg.sensors.lidar_noise,
                grazing_min=cfg.filter.lidar_grazing_min,
                min_altitude=cfg.filter.lidar_min_altitude_m, t=t), t)

    # ----- 影像 -----
    def _ets(self, k: int, t: float, static: bool):
        ets = self.config.ets
        if self.pending is not None and k >= self.pending['due']:
            pending, self.pending = self.pending, None
            self._process_images(pending, t)
        if static or k % self._every(1.0 / ets.rate_hz):
            return
        agl = self.filter.altitude_agl()
        if agl <= ets.min_altitude_m:
            return
        self._capture(k, t, agl)
        if self.pending['due'] <= k:
            pending, self.pending = self.pending, None
            self._process_images(pending, t)

    def _capture(self, k: int, t: float, agl: float):
        f = self.filter
        nav = f.nav
        positions = {slot: f.slot_position(slot) for slot in ('tr1', 'tr2')}
        choice = select_reference(nav.r, agl, f.slots, positions, self.config.ets,
                                  self.config.breadcrumbs, self.db if self.use_crumbs else None,
                                  heading_of(nav.dcm), t, self.flight_id)
        if choice.crumb is not None and choice.crumb.id in self.truth_crumbs:
            self._load_crumb(choice.crumb, choice.crumb_slot, t)
        else:
            choice.crumb = None
        f.augment('tc')
        self.truth_images['tc'] = self._truth_image(self.truth)
        latency = int(round(self.config.ets.latency_s * self.rate))
        self.pending = {'due': k + latency, 't_capture': t, 'choice': choice}

    def _load_crumb(self, crumb: Breadcrumb, slot: str, t: float):
        f = self.filter
        rec = f.slot(slot)
        if rec.valid and rec.crumb is not None and rec.crumb.id == crumb.id:
            return
        bc = self.config.breadcrumbs
        f.state.P = load_breadcrumb(f.P, crumb, slot, bc.a_f_fraction, bc.z_scale,
                                    variance_floor=bc.relative_variance_floor_m2)
        f.state.dx[IDX.slot(slot)] = 0.0
        f.x_aux[IDX.slot(slot)] = crumb.r_tof
        f.slots[slot] = SlotRecord(True, crumb.t, crumb.dcm, crumb.height_agl, crumb)
        logger.info(f"t={t:.1f} 載入 {crumb.modality.value} 麵包屑 #{crumb.id} 到 {slot}")
        self._event(t, 'crumb_loaded', f"{slot} #{crumb.id} ({crumb.modality.value})")

    def _process_images(self, pending: dict, t: float):
        cfg = self.config
        f = self.filter
        choice = pending['choice']
        rec_tc = f.slot('tc')
        current = ImageState(f.slot_position('tc'), rec_tc.attitude, rec_tc.agl, rec_tc.t)
        truth_cur = self.truth_images['tc']
        rng = self.rngs['ets']
        common = dict(camera=self.camera, terrain=self.env.terrain, pixel_noise=cfg.ets.pixel_noise,
                      slope_gain=cfg.ets.slope_bias_gain, rng=rng, sensor_errors=self.sensor_errors)

        slot = choice.velocimetry_slot
        if slot is not None and slot in self.truth_images:
            rec = f.slot(slot)
            reference = ImageState(f.slot_position(slot), rec.attitude, rec.agl, rec.t)
            meas = emulate_ets(truth_cur, self.truth_images[slot], modality=EtsModality.VELOCIMETRY,
                               ref_slot=slot, t_ref=rec.t, **common)
            self._process(lambda: velocimetry_measurement(
                meas, current, reference, self.camera, f.x_aux[IDX.b_ETS], rec.valid, t), t)

        crumb = choice.crumb
        if crumb is not None:
            slot = choice.crumb_slot
            rec = f.slot(slot)
            crumb_image = ImageState(f.slot_position(slot), crumb.dcm, crumb.height_agl, crumb.t)
            att_cov = crumb.P_att if crumb.P_att is not None else f.state.block('psi')
            meas = emulate_ets(truth_cur, self.truth_crumbs[crumb.id],
                               modality=CRUMB_TO_ETS[crumb.modality], ref_slot=slot, t_ref=crumb.t,
                               **common)
            result = self._process(lambda: breadcrumb_measurement(
                meas, current, crumb_image, self.camera, f.x_aux[IDX.gamma1][0],
                f.x_aux[IDX.gamma2][0], rec.valid and rec.crumb is not None and rec.crumb.id == crumb.id,
                t, att_cov), t)
            if slot == 'hbc' and result is not None and result.accepted:
                self.hbc_crumb = crumb
                hbc_est = f.slot_position('hbc') + f.state.dx[IDX.slot('hbc')]
                self.drift = breadcrumb_drift_offset(hbc_est, crumb.r_tof, self.drift)

        self._save_breadcrumb(rec_tc, truth_cur)

        if choice.push_reference:
            if cfg.ets.reference_slots == 2 and f.slot('tr1').valid:
                f.move_slot('tr1', 'tr2')
                self.truth_images['tr2'] = self.truth_images['tr1']
            f.move_slot('tc', 'tr1')
            self.truth_images['tr1'] = truth_cur

    def _save_breadcrumb(self, rec_tc: SlotRecord, truth_cur: TruthImage):
        if not self.use_crumbs:
            return
        f = self.filter
        position = f.slot_position('tc') + f.state.dx[IDX.slot('tc')]
        if not should_save_breadcrumb(position, rec_tc.agl, self.db.last(self.flight_id),
                                      self.config.breadcrumbs):
            return
        tc = IDX.slot('tc')
        crumb = Breadcrumb(id=self.db.next_id, flight_id=self.flight_id, r_tof=position,
                           attitude=dcm_to_quat(rec_tc.attitude), height_agl=rec_tc.agl,
                           P_pos=f.P[tc, tc].copy(), modality=CrumbModality.ONLINE,
                           heading_at_capture=heading_of(rec_tc.attitude), t=rec_tc.t,
                           P_att=rec_tc.attitude_cov)
        self.db.add(crumb)
        self.truth_crumbs[crumb.id] = truth_cur
        self._event(f.t, 'crumb_saved', f"#{crumb.id} AGL {rec_tc.agl:.1f} m")

    # ----- 輸出 -----
    def _landing_record(self) -> LandingRecord:
        f = self.filter
        rec = f.slot('obc')
        crumb_id = rec.crumb.id if rec.valid and rec.crumb is not None else None
        return LandingRecord(r_tof=f.nav.r, P=f.P.copy(), t=f.t, crumb_id=crumb_id, slot='obc',
                             heading=heading_of(f.nav.dcm), flight_id=self.flight_id)

    def _true_vector(self) -> np.ndarray:
        truth = self.truth
        true = np.zeros(IDX.dim)
        r, v, dcm = self._filter_frame(truth)
        true[IDX.r], true[IDX.v] = r, v
        true[IDX.psi] = dcm_to_rotvec(dcm @ self.filter.nav.dcm.T)
        if self.imus is not None:
            for imu_id, emulator in self.imus.items():
                b_a, b_g = IDX.bias_groups(imu_id)
                gyro, accel = emulator.true_bias
                true[b_g], true[b_a] = gyro, accel
        v_rel = truth.dcm.T @ (truth.v - self.env.wind)
        true[IDX.b_pA] = self.env.atmosphere_a.dynamic_pressure(v_rel)
        true[IDX.b_pB] = self.env.atmosphere_b.dynamic_pressure(v_rel)
        true[IDX.dH] = self.env.scale_height_offset
        true[IDX.d] = self.env.terrain.plane_distance(truth.r)
        true[IDX.n] = self._true_normal(truth)
        true[IDX.gamma1] = self.gamma1_true
        true[IDX.gamma2] = self.gamma_true
        return true

    def _telemetry_row(self, k: int) -> dict:
        f = self.filter
        nav = f.nav
        truth = self.truth
        est = f.x_aux.copy()
        est[IDX.r], est[IDX.v], est[IDX.psi] = nav.r, nav.v, 0.0
        true = self._true_vector() if not self.covariance_only else est.copy()
        if self.covariance_only:
            true[IDX.psi] = 0.0
        sig = np.sqrt(np.clip(np.diag(f.P), 0.0, None))
        row = {'t': f.t, 'case': self.case_index, 'flight': self.flight_id,
               'phase': self.trajectory.phase(k * self.dt), 'primary': f.primary.value}
        for name, i, col in state_columns():
            idx = IDX[name].start + i
            row[f'est_{col}'] = est[idx]
            row[f'true_{col}'] = true[idx]
            row[f'sig_{col}'] = sig[idx]
        for axis, label in enumerate('ned'):
            row[f'ctrl_r_{label}'] = self.r_ctrl[axis]
        for axis, label in enumerate('ned'):
            row[f'ctrl_v_{label}'] = self.v_ctrl[axis]
        for axis, label in enumerate('ned'):
            row[f'drift_{label}'] = self.drift.offset[axis]

        r_tof, _, _ = self._filter_frame(truth)
        row['err_ned_lat'] = float(np.linalg.norm(nav.r[:2] - truth.r[:2]))
        row['err_tof_lat'] = float(np.linalg.norm(nav.r[:2] - r_tof[:2]))
        row['err_bc_lat'] = self._breadcrumb_error()
        return row

    def _breadcrumb_error(self) -> float:
        """目前位置相對歷史麵包屑的橫向誤差（在上一趟 TOF 軸向比較）"""
        crumb = self.hbc_crumb
        if crumb is None or crumb.id not in self.truth_crumbs:
            return float('nan')
        f = self.filter
        rot = heading_rotation(f.x_aux[IDX.gamma1][0], f.x_aux[IDX.gamma2][0])
        rel_est = rot @ f.nav.r - f.slot_position('hbc')
        rel_true = r3(self.gamma1_true) @ (self.truth.r - self.truth_crumbs[crumb.id].position)
        return float(np.linalg.norm(rel_est[:2] - rel_true[:2]))


# ========== 案例 ==========

class SimulationEngine:
    """
    模擬引擎

    組合環境、軌跡與一或兩次飛行，輸出一個案例的遙測
    """

    def __init__(self, config: NavConfig):
        """
        初始化模擬引擎

        Args:
            config: 導航設定（情境頻率在 run 時套用）
        """
        self.config = config

    def run(self, scenario: Scenario, case_index: int = 0,
            seed_seq: Optional[np.random.SeedSequence] = None,
            covariance_only: bool = False) -> dict:
        """
        執行一個案例

        Args:
            scenario: 情境
            case_index: 案例編號
            seed_seq: 本案例的亂數種子序列（預設由 scenario.seed 與編號組成）
            covariance_only: 線性共變異數模式

        Returns:
            dict: {
                'case': 案例編號,
                'status': 'ok' 或 'failed',
                'message': 失敗原因,
                'telemetry': 遙測 DataFrame,
                'events': 事件列表,
                'flights': 每次飛行的狀態,
                'db': 第一趟的麵包屑資料庫（含降落紀錄）,
                'remapped_db': 重新錨定後的資料庫（leapfrog）,
                'landing': 最後一次降落紀錄
            }
        """
        cfg = self.config.with_scenario_rates(scenario)
        seed_seq = seed_seq or np.random.SeedSequence([scenario.seed, case_index])
        rngs = spawn_rngs(seed_seq)
        sensor_errors = scenario.sensor_errors and not covariance_only
        offset_pct = scenario.params.get('scale_height_offset_pct')
        offset = None if offset_pct is None else cfg.pressure.scale_height_m * float(offset_pct) / 100.0
        if covariance_only and offset is None:
            offset = 0.0
        env = Environment.from_config(cfg, rngs['env'], sensor_errors, offset)
        db = BreadcrumbDb()
        common = dict(case_index=case_index, covariance_only=covariance_only)

        if scenario.profile is Profile.LEAPFROG:
            flights = self._leapfrog(cfg, scenario, env, rngs, db, common)
        else:
            traj = build_trajectory(scenario, env.constants)
            flights = [FlightSimulator(cfg, scenario, traj, env, rngs, db=db, **common).run()]
            db.landing = flights[0].landing

        failed = [fl for fl in flights if fl.status != 'ok']
        rows = [row for fl in flights for row in fl.rows]
        return {
            'case': case_index,
            'scenario': scenario.name,
            'status': 'failed' if failed else 'ok',
            'message': failed[0].message if failed else '',
            'telemetry': pd.DataFrame(rows, columns=telemetry_columns()),
            'events': [e for fl in flights for e in fl.events],
            'flights': [{'flight': i + 1, 'status': fl.status, 't_end': fl.t_end,
                         'gamma_true': fl.gamma_true} for i, fl in enumerate(flights)],
            'db': flights[0].db,
            'remapped_db': flights[1].db if len(flights) > 1 else None,
            'landing': flights[-1].landing,
        }

    def _leapfrog(self, cfg: NavConfig, scenario: Scenario, env: Environment,
                  rngs: Dict[str, np.random.Generator], db: BreadcrumbDb, common: dict):
        """第一趟偵察 → 重新錨定資料庫 → 第二趟降落在偵察點"""
        traj1, traj2 = leapfrog_profiles(scenario.params, env.constants)
        heading_sigma = scenario.heading_per_flight_sigma or scenario.initial_heading_sigma
        truth_crumbs: Dict[int, TruthImage] = {}
        first = FlightSimulator(cfg, scenario, traj1, env, rngs, flight_id=1, db=db,
                                truth_crumbs=truth_crumbs, heading_sigma=heading_sigma, **common)
        result1 = first.run()
        if result1.status != 'ok':
            return [result1]

        landing = result1.landing
        db.landing = landing
        remapped = remap_for_next_flight(db, traj2, env.constants, cfg.breadcrumbs)
        gamma2 = IDX.gamma2.start
        second = FlightSimulator(cfg, scenario, traj2, env, rngs, flight_id=2, db=remapped,
                                 truth_crumbs=truth_crumbs, imus=first.imus,
                                 t_offset=result1.t_end + FLIGHT_GAP_S,
                                 heading_sigma=heading_sigma, gamma1_true=result1.gamma_true,
                                 gamma1_variance=float(landing.P[gamma2, gamma2]), **common)
        result2 = second.run()
        return [result1, result2]
