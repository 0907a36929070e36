# -*- coding: utf-8 -*-
"""
捷聯慣性導航模組
兩台 Navigator 的整值傳播、IMU 同位檢查（parity）與主備切換

傳播在 TOF 座標中進行（TOF 與 NED 軸向一致），
含 Titan 自轉的科氏與離心項。
"""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import NonMonotonicSampleError, UnrecoverableFaultError
from .frames import (REORTHONORMALIZE_EVERY, TitanConstants, quat_multiply, quat_normalize,
                     quat_to_dcm, rotvec_to_quat)

logger = logging.getLogger(__name__)


class ImuId(Enum):
    """IMU 代號"""
    A = "A"
    B = "B"

    @property
    def other(self) -> 'ImuId':
        return ImuId.B if self is ImuId.A else ImuId.A


def _as_imu_id(value) -> ImuId:
    return value if isinstance(value, ImuId) else ImuId(str(value).upper())


# ========== 資料型別 ==========

@dataclass(frozen=True)
class ImuSample:
    """
    單一 IMU 樣本

    Attributes:
        t: 取樣結束時間 (s)
        dtheta: 區間內積分角速率 (rad, IMU 座標)
        dv: 區間內積分比力 (m/s, IMU 座標)
        imu_id: A 或 B
    """
    t: float
    dtheta: np.ndarray
    dv: np.ndarray
    imu_id: ImuId = ImuId.A

    def __post_init__(self):
        object.__setattr__(self, 'dtheta', np.asarray(self.dtheta, dtype=float).reshape(3))
        object.__setattr__(self, 'dv', np.asarray(self.dv, dtype=float).reshape(3))
        object.__setattr__(self, 'imu_id', _as_imu_id(self.imu_id))


@dataclass(frozen=True)
class NavState:
    """
    整值導航狀態

    Attributes:
        r: TOF 位置 (m)
        v: TOF 速度 (m/s)
        q: 姿態四元數，quat_to_dcm(q) = R_b^tof
        t: 時間 (s)
        steps: 自上次初始化以來的傳播步數（決定重新正規化時機）
    """
    r: np.ndarray
    v: np.ndarray
    q: np.ndarray
    t: float = 0.0
    steps: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'r', np.asarray(self.r, dtype=float).reshape(3))
        object.__setattr__(self, 'v', np.asarray(self.v, dtype=float).reshape(3))
        object.__setattr__(self, 'q', np.asarray(self.q, dtype=float).reshape(4))

    @property
    def dcm(self) -> np.ndarray:
        """R_b^tof"""
        return quat_to_dcm(self.q)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.r)) and np.all(np.isfinite(self.v))
                    and np.all(np.isfinite(self.q)))


@dataclass(frozen=True)
class BiasCorrection:
    """從 EKF 回授給 Navigator 的偏差（IMU 座標）"""
    gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))     # rad/s
    accel: np.ndarray = field(default_factory=lambda: np.zeros(3))    # m/s²


# ========== 傳播 ==========

def mid_attitude(q: np.ndarray, dtheta_b: np.ndarray) -> np.ndarray:
    """區間中點姿態 R_b^tof(t + dt/2)，用於轉換 Δv"""
    return quat_to_dcm(quat_multiply(q, rotvec_to_quat(0.5 * np.asarray(dtheta_b))))


def integrate_increments(state: NavState, dtheta_b, dv_b, dt: float,
                         constants: TitanConstants,
                         reorthonormalize_every: int = REORTHONORMALIZE_EVERY) -> NavState:
    """
    以機體座標增量推進一步（dt 可為負，用於可逆性檢查）

    姿態：C⁺ = exp(−[Ω]dt)·C·exp([Δθ])
    速度：v⁺ = v + C_mid·Δv + (g − 2Ω×v − Ω×(Ω×r₀))·dt
    位置：梯形積分
    """
    dtheta_b = np.asarray(dtheta_b, dtype=float)
    dv_b = np.asarray(dv_b, dtype=float)
    omega = constants.omega_ned

    c_mid = mid_attitude(state.q, dtheta_b)
    q = quat_multiply(quat_multiply(rotvec_to_quat(-omega * dt), state.q), rotvec_to_quat(dtheta_b))

    accel = constants.gravity - 2.0 * np.cross(omega, state.v) - constants.centripetal
    v = state.v + c_mid @ dv_b + accel * dt
    r = state.r + 0.5 * (state.v + v) * dt

    steps = state.steps + 1
    if steps % reorthonormalize_every == 0:
        q = quat_normalize(q)
    return NavState(r, v, q, state.t + dt, steps)


def propagate(state: NavState, sample: ImuSample, bias_correction: BiasCorrection,
              constants: TitanConstants, alignment: Optional[np.ndarray] = None,
              reorthonormalize_every: int = REORTHONORMALIZE_EVERY) -> NavState:
    """
    以一個 IMU 樣本推進導航狀態

    Args:
        state: 目前狀態
        sample: IMU 樣本（IMU 座標）
        bias_correction: 偏差修正（IMU 座標）
        constants: Titan 常數
        alignment: R_imu^b，預設單位矩陣

    Returns:
        NavState: 新狀態

    Raises:
        NonMonotonicSampleError: 樣本時間沒有晚於目前狀態
    """
    dt = sample.t - state.t
    if not dt > 0:
        raise NonMonotonicSampleError(
            f"IMU {sample.imu_id.value} 樣本時間 {sample.t:.6f} 不晚於狀態時間 {state.t:.6f}")
    rot = np.eye(3) if alignment is None else alignment
    dtheta_b = rot @ (sample.dtheta - bias_correction.gyro * dt)
    dv_b = rot @ (sample.dv - bias_correction.accel * dt)
    return integrate_increments(state, dtheta_b, dv_b, dt, constants, reorthonormalize_every)


class Navigator:
    """
    單一 IMU 的捷聯導航器

    主 Navigator 接收 EKF 修正；備援 Navigator 每個濾波週期
    與主姿態同步，之間只用自己的 IMU 積分。
    """

    def __init__(self, imu_id: Union[ImuId, str], state: NavState,
                 alignment: Optional[np.ndarray] = None,
                 constants: Optional[TitanConstants] = None,
                 reorthonormalize_every: int = REORTHONORMALIZE_EVERY):
        self.imu_id = _as_imu_id(imu_id)
        self.state = state
        self.alignment = np.eye(3) if alignment is None else np.asarray(alignment, dtype=float)
        self.constants = constants or TitanConstants()
        self.reorthonormalize_every = reorthonormalize_every
        self.bias = BiasCorrection()

    def step(self, sample: ImuSample) -> NavState:
        if sample.imu_id is not self.imu_id:
            raise ValueError(f"Navigator {self.imu_id.value} 收到 IMU {sample.imu_id.value} 的樣本")
        self.state = propagate(self.state, sample, self.bias, self.constants,
                               self.alignment, self.reorthonormalize_every)
        return self.state

    def set_bias(self, gyro: np.ndarray, accel: np.ndarray):
        self.bias = BiasCorrection(np.array(gyro, dtype=float), np.array(accel, dtype=float))

    def sync_pose(self, source: NavState):
        """把姿態、速度、位置對齊到另一台 Navigator（保留自己的步數計數）"""
        self.state = replace(source, steps=self.state.steps)


# ========== 同位檢查 ==========

@dataclass(frozen=True)
class ImuWindow:
    """一個同位檢查視窗內的積分量（IMU 座標）"""
    imu_id: ImuId
    t_start: float
    t_end: float
    dtheta: np.ndarray
    dv: np.ndarray
    period: float

    @classmethod
    def from_samples(cls, samples: Sequence[ImuSample], period: Optional[float] = None) -> 'ImuWindow':
        """
        Args:
            samples: 視窗內的樣本（每個樣本涵蓋它之前的一個取樣週期）
            period: 已知取樣週期；未給時取樣本間隔中位數
        """
        if not samples:
            raise ValueError("同位檢查視窗不可為空")
        times = np.array([s.t for s in samples])
        if period is None:
            if len(times) < 2:
                raise ValueError("單一樣本的視窗必須指定取樣週期")
            period = float(np.median(np.diff(times)))
        if not period > 0:
            raise ValueError(f"取樣週期必須為正: {period}")
        return cls(imu_id=samples[0].imu_id,
                   t_start=float(times[0] - period),
                   t_end=float(times[-1]),
                   dtheta=np.sum([s.dtheta for s in samples], axis=0),
                   dv=np.sum([s.dv for s in samples], axis=0),
                   period=float(period))

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class ParityThresholds:
    """
    同位檢查門檻

    每軸差值的 1σ 由下列項目組成（兩顆 IMU 各一份）：
    - ARW/VRW 隨機漫步：σ_rw²·T
    - 量化雜訊（首尾相消）：2σ_w²
    - 偏差不確定度：(σ_b·T)²
    - 刻度因子與安裝誤差：((sf² + 2·mis²)^½ · |運動量|)²
    另外加上與運動量成正比的對準誤差項 motion_coefficient。
    """
    sigma_multiple: float = 5.0
    consecutive: int = 3
    motion_coefficient: float = 1e-3
    gyro_arw: float = 0.0
    gyro_white: float = 0.0
    gyro_bias: float = 0.0
    gyro_install: float = 0.0
    accel_vrw: float = 0.0
    accel_white: float = 0.0
    accel_bias: float = 0.0
    accel_install: float = 0.0
    floor: float = 1e-12

    @classmethod
    def from_config(cls, parity, sensors) -> 'ParityThresholds':
        return cls(sigma_multiple=parity.sigma_multiple,
                   consecutive=parity.consecutive,
                   motion_coefficient=parity.motion_coefficient,
                   gyro_arw=sensors.gyro_arw, gyro_white=sensors.gyro_white,
                   gyro_bias=sensors.gyro_bias,
                   gyro_install=float(np.hypot(sensors.gyro_scale_factor,
                                               np.sqrt(2.0) * sensors.gyro_misalignment)),
                   accel_vrw=sensors.accel_vrw, accel_white=sensors.accel_white,
                   accel_bias=sensors.accel_bias,
                   accel_install=float(np.hypot(sensors.accel_scale_factor,
                                                np.sqrt(2.0) * sensors.accel_misalignment)))

    def sigma(self, sensor: str, duration: float, motion: float) -> float:
        if sensor == 'gyro':
            rw, white, bias, install = self.gyro_arw, self.gyro_white, self.gyro_bias, self.gyro_install
        else:
            rw, white, bias, install = self.accel_vrw, self.accel_white, self.accel_bias, self.accel_install
        per_imu = (rw ** 2 * duration + 2.0 * white ** 2 + (bias * duration) ** 2
                   + (install * motion) ** 2)
        var = 2.0 * per_imu + (self.motion_coefficient * motion) ** 2
        return float(np.sqrt(max(var, self.floor ** 2)))


@dataclass(frozen=True)
class FaultStatus:
    """
    同位檢查結果

    Attributes:
        gyro_parity / accel_parity: 差值範數除以 1σ（無因次）
        primary: 目前主 IMU
        fault_declared: 已宣告故障（閂鎖）
        gyro_count / accel_count: 連續超標視窗數
        gyro_suspect / accel_suspect: 超標起始視窗判定的可疑 IMU
        faulted: 已宣告故障的 IMU 集合
        axis: 最大殘差軸（機體座標）
        skipped: 本視窗因時間不同步而略過
        means: 上一視窗機體座標平均量 (gyro_A, gyro_B, accel_A, accel_B)
    """
    gyro_parity: float = 0.0
    accel_parity: float = 0.0
    primary: ImuId = ImuId.A
    fault_declared: bool = False
    gyro_count: int = 0
    accel_count: int = 0
    gyro_suspect: Optional[ImuId] = None
    accel_suspect: Optional[ImuId] = None
    faulted: frozenset = frozenset()
    faulty_sensor: Optional[str] = None
    axis: Optional[int] = None
    skipped: bool = False
    means: Optional[Tuple[np.ndarray, ...]] = None


def _as_window(window, period: Optional[float]) -> ImuWindow:
    return window if isinstance(window, ImuWindow) else ImuWindow.from_samples(list(window), period)


def parity_check(window_a, window_b, alignments: Sequence[np.ndarray],
                 previous: Optional[FaultStatus] = None,
                 thresholds: Optional[ParityThresholds] = None,
                 bias_a: Optional[BiasCorrection] = None,
                 bias_b: Optional[BiasCorrection] = None,
                 period: Optional[float] = None) -> FaultStatus:
    """
    比較兩顆 IMU 在同一視窗的機體座標積分角度與 Δv

    Args:
        window_a / window_b: ImuSample 序列或 ImuWindow
        alignments: (R_A^b, R_B^b)
        previous: 上一個視窗的結果（連續計數與閂鎖狀態）
        thresholds: 門檻參數
        bias_a / bias_b: 目前的偏差估計（扣除後再比較）
        period: IMU 取樣週期（視窗只有一個樣本時必須提供）

    Returns:
        FaultStatus: 本視窗的結果
    """
    prev = previous or FaultStatus()
    thr = thresholds or ParityThresholds()
    wa, wb = _as_window(window_a, period), _as_window(window_b, period)

    tol = max(wa.period, wb.period, 1e-9)
    if abs(wa.t_start - wb.t_start) > tol or abs(wa.t_end - wb.t_end) > tol:
        logger.warning(f"同位檢查視窗不同步 (A {wa.t_start:.3f}–{wa.t_end:.3f}, "
                       f"B {wb.t_start:.3f}–{wb.t_end:.3f})，略過")
        return replace(prev, skipped=True)

    duration = 0.5 * (wa.duration + wb.duration)
    bias_a = bias_a or BiasCorrection()
    bias_b = bias_b or BiasCorrection()
    rot_a, rot_b = alignments
    gyro_a = rot_a @ (wa.dtheta - bias_a.gyro * wa.duration)
    gyro_b = rot_b @ (wb.dtheta - bias_b.gyro * wb.duration)
    accel_a = rot_a @ (wa.dv - bias_a.accel * wa.duration)
    accel_b = rot_b @ (wb.dv - bias_b.accel * wb.duration)

    results = {}
    for sensor, va, vb in (('gyro', gyro_a, gyro_b), ('accel', accel_a, accel_b)):
        diff = va - vb
        sigma = thr.sigma(sensor, duration, 0.5 * (np.linalg.norm(va) + np.linalg.norm(vb)))
        results[sensor] = (float(np.linalg.norm(diff) / sigma), int(np.argmax(np.abs(diff))))

    means = (gyro_a / duration, gyro_b / duration, accel_a / duration, accel_b / duration)
    faulted = set(prev.faulted)
    status = {}
    axis, faulty_sensor = prev.axis, prev.faulty_sensor
    for k, sensor in enumerate(('gyro', 'accel')):
        residual, max_axis = results[sensor]
        count = getattr(prev, f'{sensor}_count')
        suspect = getattr(prev, f'{sensor}_suspect')
        if residual > thr.sigma_multiple:
            if count == 0:
                suspect = _onset_suspect(prev.means, means, k)
            count += 1
            if count >= thr.consecutive:
                if suspect is not None and suspect not in faulted:
                    logger.info(f"宣告 {sensor} 故障：IMU {suspect.value}，軸 {max_axis}，"
                                f"殘差 {residual:.1f}σ")
                    faulted.add(suspect)
                axis, faulty_sensor = max_axis, sensor
        else:
            count = 0
            if suspect not in faulted:
                suspect = None
        status[sensor] = (residual, count, suspect)

    declared = prev.fault_declared or any(
        status[s][1] >= thr.consecutive for s in ('gyro', 'accel'))
    return FaultStatus(
        gyro_parity=status['gyro'][0],
        accel_parity=status['accel'][0],
        primary=prev.primary,
        fault_declared=declared,
        gyro_count=status['gyro'][1],
        accel_count=status['accel'][1],
        gyro_suspect=status['gyro'][2],
        accel_suspect=status['accel'][2],
        faulted=frozenset(faulted),
        faulty_sensor=faulty_sensor,
        axis=axis,
        skipped=False,
        means=means,
    )


def _onset_suspect(prev_means, means, sensor_index: int) -> Optional[ImuId]:
    """超標起始視窗：平均量跳動較大者為可疑 IMU"""
    if prev_means is None:
        return None
    i = 2 * sensor_index
    jump_a = np.linalg.norm(means[i] - prev_means[i])
    jump_b = np.linalg.norm(means[i + 1] - prev_means[i + 1])
    return ImuId.A if jump_a > jump_b else ImuId.B


def switch_primary(status: FaultStatus) -> FaultStatus:
    """
    依故障狀態決定主 IMU

    Raises:
        UnrecoverableFaultError: 兩顆 IMU 都已故障
    """
    if len(status.faulted) >= 2:
        raise UnrecoverableFaultError("兩顆 IMU 均已宣告故障，無法繼續導航")
    if status.fault_declared and status.primary in status.faulted:
        new_primary = status.primary.other
        logger.info(f"主 IMU 由 {status.primary.value} 切換為 {new_primary.value}")
        return replace(status, primary=new_primary)
    return status


# ========== IMU 記錄檔 ==========

IMU_LOG_COLUMNS = ['t', 'imu_id', 'dtheta_x', 'dtheta_y', 'dtheta_z', 'dv_x', 'dv_y', 'dv_z']


def save_imu_log(samples: Sequence[ImuSample], path: str):
    """IMU 樣本寫成 CSV（t, imu_id, dtheta_xyz, dv_xyz）"""
    rows = [[s.t, s.imu_id.value, *s.dtheta, *s.dv] for s in samples]
    df = pd.DataFrame(rows, columns=IMU_LOG_COLUMNS)
    df.to_csv(path, index=False, float_format='%.17g')


def load_imu_log(path: str) -> List[ImuSample]:
    """
    讀取 IMU 記錄檔

    Raises:
        NonMonotonicSampleError: 同一顆 IMU 的時間沒有嚴格遞增
    """
    df = pd.read_csv(path, dtype={'imu_id': str})
    missing = [c for c in IMU_LOG_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"IMU 記錄檔缺少欄位: {missing}")
    for imu_id, group in df.groupby('imu_id'):
        steps = np.diff(group['t'].to_numpy())
        if np.any(steps <= 0):
            bad = int(np.argmax(steps <= 0)) + 1
            raise NonMonotonicSampleError(
                f"{path}: IMU {imu_id} 第 {bad} 筆樣本時間沒有遞增")
    return [ImuSample(t=row.t, imu_id=row.imu_id,
                      dtheta=[row.dtheta_x, row.dtheta_y, row.dtheta_z],
                      dv=[row.dv_x, row.dv_y, row.dv_z])
            for row in df.itertuples(index=False)]
