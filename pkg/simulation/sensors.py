# -*- coding: utf-8 -*-
"""
感測器模擬
- IMU：FOGM 偏差、比例因子、安裝誤差、隨機漫步、量化雜訊與故障注入
- 氣壓：靜壓 + C_p 表動壓 + 白雜訊
- 光達：射線與地形交點，超出量程時為 None
- ETS：真值相機位移 + 坡度相關偏差 + 像素雜訊
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from navfilter.config import SensorSpec
from navfilter.frames import TitanConstants, rotvec_to_dcm
from navfilter.measurements import LATERAL, CameraModel, EtsDisplacement, EtsModality
from navfilter.strapdown import ImuId, ImuSample

from .environment import Atmosphere, Terrain
from .trajectory import TruthState, ideal_increments

logger = logging.getLogger(__name__)


# ========== IMU ==========

class FogmProcess:
    """三軸一階高斯馬可夫過程（初值取穩態分佈）"""

    def __init__(self, sigma: float, tau: float, rng: np.random.Generator):
        self.sigma = sigma
        self.tau = tau
        self.rng = rng
        self.value = rng.normal(0.0, sigma, 3) if sigma > 0 else np.zeros(3)

    def step(self, dt: float) -> np.ndarray:
        if self.sigma > 0:
            phi = np.exp(-dt / self.tau)
            self.value = phi * self.value + np.sqrt(1.0 - phi ** 2) * self.sigma * self.rng.normal(size=3)
        return self.value


def _error_matrix(scale_factor: float, misalignment: float, rng: np.random.Generator) -> np.ndarray:
    """(I + S)(I + E)：S 對角、E 非對角"""
    S = np.diag(rng.normal(0.0, scale_factor, 3)) if scale_factor > 0 else np.zeros((3, 3))
    E = np.zeros((3, 3))
    if misalignment > 0:
        E = rng.normal(0.0, misalignment, (3, 3))
        np.fill_diagonal(E, 0.0)
    return (np.eye(3) + S) @ (np.eye(3) + E)


@dataclass(frozen=True)
class ImuFault:
    """在 time_s 之後加到某軸的步階偏差（SI）"""
    imu: ImuId
    sensor: str
    axis: int
    time_s: float
    magnitude: float

    @classmethod
    def from_config(cls, fault: Optional[dict]) -> Optional['ImuFault']:
        if not fault:
            return None
        sensor = fault['sensor']
        default = np.deg2rad(0.1) if sensor == 'gyro' else 0.05
        return cls(imu=ImuId(fault['imu']), sensor=sensor, axis=int(fault.get('axis', 0)),
                   time_s=float(fault.get('time_s', 0.0)),
                   magnitude=float(fault.get('magnitude', default)))


class ImuEmulator:
    """
    單一 IMU 的誤差模型

    輸出 IMU 座標的 Δθ、Δv：
    Δθ = M_g·R_imu^bᵀ·Δθ_b + b_g·dt + ARW·√dt·w + (e_k − e_{k−1})
    Δv 同理（VRW、加速度計量化雜訊）

    Args:
        imu_id: A 或 B
        spec: 感測器規格（誤差歸零時傳 spec.zeroed()）
        alignment: R_imu^b
        rng: 本 IMU 專用的亂數產生器
        fault: 故障注入（只作用在對應的 IMU）
    """

    def __init__(self, imu_id: ImuId, spec: SensorSpec, alignment: np.ndarray,
                 rng: np.random.Generator, fault: Optional[ImuFault] = None):
        self.imu_id = imu_id
        self.spec = spec
        self.alignment = np.asarray(alignment, dtype=float)
        self.rng = rng
        self.fault = fault if fault is not None and fault.imu is imu_id else None
        self.gyro_bias = FogmProcess(spec.gyro_bias, spec.gyro_bias_tau_s, rng)
        self.accel_bias = FogmProcess(spec.accel_bias, spec.accel_bias_tau_s, rng)
        self.gyro_errors = _error_matrix(spec.gyro_scale_factor, spec.gyro_misalignment, rng)
        self.accel_errors = _error_matrix(spec.accel_scale_factor, spec.accel_misalignment, rng)
        # 加速度計偏差的慢速漂移 (m/s²/√s)
        self.accel_bias_walk = spec.accel_arw_ug_rthr * 1e-6 * 9.80665 / 60.0
        self._drift = np.zeros(3)
        self._force = np.zeros(3)
        self._q_gyro = self._white(spec.gyro_white)
        self._q_accel = self._white(spec.accel_white)

    def _white(self, sigma: float) -> np.ndarray:
        return self.rng.normal(0.0, sigma, 3) if sigma > 0 else np.zeros(3)

    def _fault_offset(self, sensor: str, t: float) -> np.ndarray:
        out = np.zeros(3)
        if self.fault is not None and self.fault.sensor == sensor and t >= self.fault.time_s:
            out[self.fault.axis] = self.fault.magnitude
        return out

    @property
    def true_bias(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        目前的 (陀螺, 加速度計) 偏差真值（IMU 座標，不含故障）

        加速度計取等效偏差：另含刻度因子與安裝誤差在最近一次比力下的讀數誤差。
        """
        install = (self.accel_errors - np.eye(3)) @ self._force
        return self.gyro_bias.value.copy(), self.accel_bias.value + self._drift + install

    def sample(self, prev: TruthState, cur: TruthState, constants: TitanConstants) -> ImuSample:
        dt = cur.t - prev.t
        dtheta_b, dv_b = ideal_increments(prev, cur, constants)
        b_g = self.gyro_bias.step(dt) + self._fault_offset('gyro', cur.t)
        b_a = self.accel_bias.step(dt) + self._fault_offset('accel', cur.t)
        if self.accel_bias_walk > 0:
            self._drift = self._drift + self.accel_bias_walk * np.sqrt(dt) * self.rng.normal(size=3)
        b_a = b_a + self._drift

        q_gyro, q_accel = self._white(self.spec.gyro_white), self._white(self.spec.accel_white)
        dtheta = (self.gyro_errors @ self.alignment.T @ dtheta_b + b_g * dt
                  + self.spec.gyro_arw * np.sqrt(dt) * self.rng.normal(size=3)
                  + q_gyro - self._q_gyro)
        if dt > 0:
            self._force = self.alignment.T @ dv_b / dt
        dv = (self.accel_errors @ self.alignment.T @ dv_b + b_a * dt
              + self.spec.accel_vrw * np.sqrt(dt) * self.rng.normal(size=3)
              + q_accel - self._q_accel)
        self._q_gyro, self._q_accel = q_gyro, q_accel
        return ImuSample(cur.t, dtheta, dv, self.imu_id)


# ========== 氣壓 ==========

def emulate_pressure(atmosphere: Atmosphere, height: float, v_rel_body: np.ndarray,
                     noise_pa: float, rng: np.random.Generator) -> float:
    """P = P0·exp(−h/H_true) + q_dyn·C_p·(1 + ε) + 白雜訊"""
    p = atmosphere.static_pressure(height) + atmosphere.dynamic_pressure(v_rel_body)
    if noise_pa > 0:
        p += rng.normal(0.0, noise_pa)
    return float(p)


# ========== 光達 ==========

class LidarEmulator:
    """
    光達：每個案例抽一次視線指向誤差，量測為射線到地形的斜距

    Args:
        terrain: 真值地形
        pointing_sigma: 指向誤差 1σ (rad)
        noise: 斜距白雜訊 1σ (m)
    """

    def __init__(self, terrain: Terrain, pointing_sigma: float, noise: float,
                 rng: np.random.Generator):
        self.terrain = terrain
        self.noise = noise
        self.rng = rng
        tilt = rng.normal(0.0, pointing_sigma, 3) if pointing_sigma > 0 else np.zeros(3)
        self.pointing = rotvec_to_dcm(tilt)

    def measure(self, position_ned: np.ndarray, attitude_ned: np.ndarray, point: np.ndarray,
                max_range: float) -> Optional[float]:
        """
        Returns:
            float: 斜距 (m)；射線在量程內沒有碰到地形時為 None
        """
        direction = attitude_ned @ self.pointing @ np.asarray(point, dtype=float)
        slant = self.terrain.intersect(position_ned, direction, max_range)
        if slant is None:
            return None
        if self.noise > 0:
            slant += self.rng.normal(0.0, self.noise)
        return float(slant)


# ========== ETS ==========

@dataclass(frozen=True)
class TruthImage:
    """影像擷取時的真值（世界 NED）"""
    position: np.ndarray
    attitude: np.ndarray
    agl: float
    t: float


def true_displacement(current: TruthImage, reference: TruthImage, camera: CameraModel) -> np.ndarray:
    """參考影像相機座標中的橫向位移（與座標選擇無關）"""
    c_cur = current.position + current.attitude @ camera.lever_arm
    c_ref = reference.position + reference.attitude @ camera.lever_arm
    return LATERAL @ camera.body_to_camera @ reference.attitude.T @ (c_cur - c_ref)


def slope_bias(current: TruthImage, reference: TruthImage, camera: CameraModel,
               terrain: Terrain, gain: float) -> np.ndarray:
    """非平面地形造成的相關位移誤差：gain·AGL·∇h（投影到參考相機座標）"""
    grad = terrain.gradient(current.position[0], current.position[1])
    vec = np.array([grad[0], grad[1], 0.0])
    return gain * current.agl * (LATERAL @ camera.body_to_camera @ reference.attitude.T @ vec)


def emulate_ets(current: TruthImage, reference: TruthImage, camera: CameraModel,
                terrain: Terrain, modality: EtsModality, ref_slot: str, t_ref: float,
                pixel_noise: float, slope_gain: float, rng: np.random.Generator,
                sensor_errors: bool = True) -> EtsDisplacement:
    """
    產生一筆 ETS 位移量測

    Args:
        t_ref: 濾波器中參考影像（或麵包屑槽載入）的時間
    """
    dc = true_displacement(current, reference, camera)
    if sensor_errors:
        dc = dc + slope_bias(current, reference, camera, terrain, slope_gain)
        sigma = pixel_noise * camera.ifov * max(current.agl, 1.0)
        if sigma > 0:
            dc = dc + rng.normal(0.0, sigma, 2)
    return EtsDisplacement(modality, dc, t_ref, current.t, ref_slot, pixel_noise)
