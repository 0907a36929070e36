# -*- coding: utf-8 -*-
"""
設定檔模組
讀取 config.json，轉成 dataclass，並在載入時一次換算成 SI 單位

設定檔的感測器規格沿用資料表的自然單位（鍵名帶單位，例如 accel_bias_ug），
其餘數值一律是 SI。驗證失敗時丟出 ConfigError，附上出錯鍵在檔案中的行號。
"""
import json
import logging
import os
import re
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np

from .errors import ConfigError
from .frames import TitanConstants, euler_to_dcm

logger = logging.getLogger(__name__)

BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_FILE = os.path.join(BASE_DIR, 'config.json')

STANDARD_GRAVITY = 9.80665      # µg 換算用 (m/s²)
MAX_WAYPOINT_SPEED = 20.0       # 自訂航點允許的最大平均速度 (m/s)
TAKEOFF_RATE = 2.0              # 垂直起飛速率 (m/s)
TAKEOFF_BLEND_S = 2.0           # 起飛 / 著陸的速度過渡時間 (s)
SCOUT_TAKEOFF_ALT_M = 20.0      # scout 垂直起飛後轉入爬升的高度 (m)
TERMINAL_RAMP_TOP_M = 20.0      # 終端下降開始減速的高度 (m)


class Profile(Enum):
    """飛行剖面"""
    GYROCOMPASS_STATIC = "gyrocompass_static"
    SCOUT = "scout"
    LEAPFROG = "leapfrog"
    TERMINAL_DESCENT = "terminal_descent"
    CUSTOM = "custom"


class TerrainMode(Enum):
    """地形模型"""
    PLANAR = "planar"
    HEIGHT_FIELD = "height_field"


class _FieldError(ValueError):
    """__post_init__ 內的驗證錯誤，記住出錯的鍵以便回報行號"""
    def __init__(self, key: str, message: str):
        super().__init__(message)
        self.key = key


def _require(condition: bool, key: str, message: str):
    if not condition:
        raise _FieldError(key, message)


# ========== 濾波器 ==========

@dataclass
class FilterSettings:
    """EKF 主要參數"""
    rate_hz: float = 10.0
    underweight: float = 1.0
    gate_sigma: Optional[float] = 5.0           # None = 不做創新值閘門
    lidar_velocity_gate_m: float = 60.0         # d 與速度耦合的高度上限
    lidar_min_altitude_m: float = 15.0
    lidar_grazing_min: float = 0.2
    gyrocompass_tau_acc_s: float = 1.0
    static_accel_std_max: float = 0.05          # 靜止判定：比力標準差上限 (m/s²)
    nullspace_enabled: bool = True
    nullspace_tau_s: float = 1.0
    zero_velocity_sigma_m_s: float = 1e-3
    zero_position_sigma_m: float = 1e-3
    reorthonormalize_every: int = 100
    install_correlation_s: float = 10.0         # 陀螺安裝誤差的相關時間（約一次轉向）

    def __post_init__(self):
        _require(self.rate_hz > 0, 'rate_hz', f"濾波頻率必須為正: {self.rate_hz}")
        _require(self.underweight >= 1.0, 'underweight', f"underweight 不可小於 1: {self.underweight}")
        _require(self.gate_sigma is None or self.gate_sigma > 0, 'gate_sigma',
                 f"gate_sigma 必須為正: {self.gate_sigma}")
        _require(self.lidar_velocity_gate_m >= 0, 'lidar_velocity_gate_m', "高度閘門不可為負")
        _require(0 < self.lidar_grazing_min < 1, 'lidar_grazing_min',
                 f"掠射角門檻必須在 (0, 1): {self.lidar_grazing_min}")
        _require(self.gyrocompass_tau_acc_s > 0, 'gyrocompass_tau_acc_s', "τ_acc 必須為正")
        _require(self.nullspace_tau_s > 0, 'nullspace_tau_s', "τ_o 必須為正")
        _require(self.zero_velocity_sigma_m_s > 0, 'zero_velocity_sigma_m_s', "雜訊必須為正")
        _require(self.zero_position_sigma_m > 0, 'zero_position_sigma_m', "雜訊必須為正")
        _require(self.reorthonormalize_every >= 1, 'reorthonormalize_every', "週期至少為 1")
        _require(self.install_correlation_s >= 0, 'install_correlation_s', "相關時間不可為負")

    @property
    def dt(self) -> float:
        return 1.0 / self.rate_hz


@dataclass
class FogmParams:
    """一階高斯馬可夫參數（自然單位，由 fogm 區段提供）"""
    tau_s: float = 100.0
    sigma: float = 1.0

    def __post_init__(self):
        _require(self.tau_s > 0, 'tau_s', f"τ 必須為正: {self.tau_s}")
        _require(self.sigma >= 0, 'sigma', f"σ 不可為負: {self.sigma}")


@dataclass
class TerrainDistanceParams:
    """
    地面平面距離 d 的 FOGM

    平面模型的誤差只在水平移動時改變：τ = correlation_m / v_h，
    懸停或垂直下降時取上限 tau_max_s。
    """
    sigma: float = 0.5
    correlation_m: float = 1000.0
    tau_max_s: float = 3000.0

    def __post_init__(self):
        _require(self.sigma >= 0, 'sigma', f"σ 不可為負: {self.sigma}")
        _require(self.correlation_m > 0, 'correlation_m', "相關距離必須為正")
        _require(self.tau_max_s > 0, 'tau_max_s', "τ 上限必須為正")

    def tau(self, horizontal_speed: float) -> float:
        if horizontal_speed <= 0:
            return self.tau_max_s
        return min(self.tau_max_s, self.correlation_m / horizontal_speed)


@dataclass
class EtsBiasParams:
    """b_ETS 偏差：τ 隨參考影像相關時間而變，下限 tau_min_s"""
    tau_min_s: float = 5.0
    sigma: float = 0.2

    def __post_init__(self):
        _require(self.tau_min_s > 0, 'tau_min_s', "τ 下限必須為正")
        _require(self.sigma >= 0, 'sigma', "σ 不可為負")


@dataclass
class ScaleHeightParams:
    tau_s: float = 1.0e7

    def __post_init__(self):
        _require(self.tau_s > 0, 'tau_s', "τ 必須為正")


@dataclass
class SlopeParams:
    """
    地面法向量的 FOGM：以距離為自變數的隨機漫步

    change_deg_per_sqrt_100m 給 PSD，max_slope_deg 給穩態 σ，
    時間常數由水平速度換算。
    """
    max_slope_deg: float = 15.0
    change_deg_per_sqrt_100m: float = 5.0
    min_speed_m_s: float = 0.5

    def __post_init__(self):
        _require(0 < self.max_slope_deg < 90, 'max_slope_deg', "最大坡度必須在 (0, 90)")
        _require(self.change_deg_per_sqrt_100m > 0, 'change_deg_per_sqrt_100m', "坡度變化率必須為正")
        _require(self.min_speed_m_s > 0, 'min_speed_m_s', "最小速度必須為正")

    @property
    def sigma(self) -> float:
        """穩態 σ（法向量水平分量，無因次）"""
        return float(np.sin(np.deg2rad(self.max_slope_deg)))

    @property
    def psd_per_meter(self) -> float:
        """每公尺距離的變異數增量"""
        change = np.sin(np.deg2rad(self.change_deg_per_sqrt_100m))
        return float(change ** 2 / 100.0)

    def tau(self, horizontal_speed: float) -> float:
        """σ² = q·τ/2 ⇒ τ = 2σ²/(q_dist·v)"""
        speed = max(horizontal_speed, self.min_speed_m_s)
        return 2.0 * self.sigma ** 2 / (self.psd_per_meter * speed)


@dataclass
class FogmSettings:
    rho: FogmParams = field(default_factory=lambda: FogmParams(10.0, 5.0))
    d: TerrainDistanceParams = field(default_factory=TerrainDistanceParams)
    b_p: FogmParams = field(default_factory=lambda: FogmParams(300.0, 30.0))
    b_ets: EtsBiasParams = field(default_factory=EtsBiasParams)
    dH: ScaleHeightParams = field(default_factory=ScaleHeightParams)
    slope: SlopeParams = field(default_factory=SlopeParams)


@dataclass
class InitialSigma:
    """起始 1σ（自然單位）"""
    position_m: float = 0.01
    velocity_m_s: float = 0.01
    tilt_deg: float = 0.05
    heading_deg: float = 0.0
    d_m: float = 0.5
    slope_deg: float = 5.0
    rho_m: float = 5.0
    gamma_deg: float = 0.4

    def __post_init__(self):
        for f in fields(self):
            _require(getattr(self, f.name) >= 0, f.name, f"{f.name} 不可為負")


# ========== 感測器 ==========

@dataclass
class ImuSettings:
    rate_hz: float = 200.0
    alignment_a_deg: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    alignment_b_deg: List[float] = field(default_factory=lambda: [0.0, 0.0, 90.0])

    def __post_init__(self):
        _require(self.rate_hz > 0, 'rate_hz', f"IMU 頻率必須為正: {self.rate_hz}")
        _require(len(self.alignment_a_deg) == 3, 'alignment_a_deg', "對準角需要三個值")
        _require(len(self.alignment_b_deg) == 3, 'alignment_b_deg', "對準角需要三個值")

    def alignment(self, imu_id: str) -> np.ndarray:
        """R_imu^b（IMU 座標轉機體座標）"""
        angles = self.alignment_a_deg if str(imu_id).upper().endswith('A') else self.alignment_b_deg
        return euler_to_dcm(*np.deg2rad(angles))


@dataclass
class SensorSpec:
    """
    感測器誤差規格（資料表自然單位）

    白雜訊項為量化型：每個樣本的讀數誤差為 e_k − e_{k−1}，
    積分後不累積。
    """
    accel_bias_ug: float = 40.0
    accel_bias_tau_s: float = 1800.0
    accel_scale_factor_ppm: float = 120.0
    accel_vrw_mm_s_rthr: float = 0.2
    accel_arw_ug_rthr: float = 0.05
    accel_white_mm_s: float = 0.198
    accel_misalignment_deg: float = 0.03
    gyro_bias_dph: float = 0.005
    gyro_scale_factor_ppm: float = 40.0
    gyro_arw_deg_rthr: float = 0.005
    gyro_rrw_dph_rthr: float = 0.017
    gyro_white_urad: float = 0.75
    gyro_misalignment_deg: float = 0.03
    lidar_noise_cm: float = 2.0
    lidar_pointing_deg: float = 0.05
    pressure_noise_mbar: float = 2.7
    pressure_cfd_error_pct: float = 6.67

    def __post_init__(self):
        for f in fields(self):
            _require(getattr(self, f.name) >= 0, f.name, f"{f.name} 不可為負")
        _require(self.accel_bias_tau_s > 0, 'accel_bias_tau_s', "加速度計偏差 τ 必須為正")

    # ----- SI 換算 -----
    @property
    def accel_bias(self) -> float:
        return self.accel_bias_ug * 1e-6 * STANDARD_GRAVITY

    @property
    def accel_scale_factor(self) -> float:
        return self.accel_scale_factor_ppm * 1e-6

    @property
    def accel_vrw(self) -> float:
        """m/s/√s"""
        return self.accel_vrw_mm_s_rthr * 1e-3 / 60.0

    @property
    def accel_white(self) -> float:
        """m/s（每個樣本）"""
        return self.accel_white_mm_s * 1e-3

    @property
    def accel_misalignment(self) -> float:
        return float(np.deg2rad(self.accel_misalignment_deg))

    @property
    def accel_install(self) -> float:
        """刻度因子與安裝誤差合成的每軸相對誤差"""
        return float(np.hypot(self.accel_scale_factor, self.accel_misalignment))

    @property
    def gyro_bias(self) -> float:
        return float(np.deg2rad(self.gyro_bias_dph) / 3600.0)

    @property
    def gyro_bias_tau_s(self) -> float:
        """
        由偏差穩態值與速率隨機漫步合成 FOGM：τ = 2(σ/q)²

        σ 以 °/hr、q 以 °/hr/√hr 計，結果換算成秒。
        """
        if self.gyro_rrw_dph_rthr <= 0 or self.gyro_bias_dph <= 0:
            return 1.0e9
        return 2.0 * (self.gyro_bias_dph / self.gyro_rrw_dph_rthr) ** 2 * 3600.0

    @property
    def gyro_scale_factor(self) -> float:
        return self.gyro_scale_factor_ppm * 1e-6

    @property
    def gyro_arw(self) -> float:
        """rad/√s"""
        return float(np.deg2rad(self.gyro_arw_deg_rthr) / 60.0)

    @property
    def gyro_white(self) -> float:
        """rad（每個樣本）"""
        return self.gyro_white_urad * 1e-6

    @property
    def gyro_misalignment(self) -> float:
        return float(np.deg2rad(self.gyro_misalignment_deg))

    @property
    def gyro_install(self) -> float:
        return float(np.hypot(self.gyro_scale_factor, self.gyro_misalignment))

    def effective_accel_bias(self, specific_force: float) -> float:
        """比力 specific_force 下偏差加上刻度因子與安裝誤差的等效 1σ (m/s²)"""
        return float(np.hypot(self.accel_bias, self.accel_install * specific_force))

    @property
    def lidar_noise(self) -> float:
        return self.lidar_noise_cm * 1e-2

    @property
    def lidar_pointing(self) -> float:
        return float(np.deg2rad(self.lidar_pointing_deg))

    @property
    def pressure_noise(self) -> float:
        """Pa"""
        return self.pressure_noise_mbar * 100.0

    @property
    def pressure_cfd_error(self) -> float:
        return self.pressure_cfd_error_pct / 100.0

    def zeroed(self) -> 'SensorSpec':
        """所有誤差歸零（閉合測試用）"""
        values = {f.name: 0.0 for f in fields(self)}
        values['accel_bias_tau_s'] = self.accel_bias_tau_s
        return SensorSpec(**values)


@dataclass
class PressureSettings:
    p0_pa: float = 146_700.0
    scale_height_m: float = 20_600.0
    scale_height_3sigma_pct: float = 2.5
    density_kg_m3: float = 5.4
    rate_hz: float = 10.0
    cp_alpha_deg: List[float] = field(default_factory=lambda: [-30.0, 0.0, 30.0])
    cp_beta_deg: List[float] = field(default_factory=lambda: [-30.0, 0.0, 30.0])
    cp_table: List[List[float]] = field(default_factory=lambda: [[0.08, 0.05, 0.08],
                                                                  [0.04, 0.02, 0.04],
                                                                  [0.08, 0.05, 0.08]])

    def __post_init__(self):
        _require(self.p0_pa > 0, 'p0_pa', "P0 必須為正")
        _require(self.scale_height_m > 0, 'scale_height_m', "尺度高度必須為正")
        _require(self.density_kg_m3 > 0, 'density_kg_m3', "密度必須為正")
        _require(self.rate_hz > 0, 'rate_hz', "頻率必須為正")
        table = np.asarray(self.cp_table, dtype=float)
        _require(table.shape == (len(self.cp_alpha_deg), len(self.cp_beta_deg)), 'cp_table',
                 f"C_p 表尺寸 {table.shape} 與 α/β 格點不符")
        _require(bool(np.all(np.diff(self.cp_alpha_deg) > 0)), 'cp_alpha_deg', "α 格點必須遞增")
        _require(bool(np.all(np.diff(self.cp_beta_deg) > 0)), 'cp_beta_deg', "β 格點必須遞增")

    @property
    def scale_height_sigma(self) -> float:
        """δH 的 1σ (m)"""
        return self.scale_height_m * self.scale_height_3sigma_pct / 100.0 / 3.0


@dataclass
class LidarSettings:
    pyramid_half_angle_deg: float = 7.5
    pyramid_rate_hz: float = 5.0
    altimetry_rate_hz: float = 10.0
    pyramid_max_range_m: float = 400.0
    altimetry_max_range_m: float = 2000.0

    def __post_init__(self):
        _require(0 < self.pyramid_half_angle_deg < 45, 'pyramid_half_angle_deg', "金字塔半角必須在 (0, 45)")
        _require(self.pyramid_rate_hz > 0, 'pyramid_rate_hz', "頻率必須為正")
        _require(self.altimetry_rate_hz > 0, 'altimetry_rate_hz', "頻率必須為正")
        _require(self.altimetry_max_range_m >= self.pyramid_max_range_m, 'altimetry_max_range_m',
                 "測高模式最大距離不可小於金字塔模式")


@dataclass
class EtsSettings:
    """影像追蹤子系統 (ETS) 與導航相機"""
    rate_hz: float = 1.0
    latency_s: float = 0.9
    pixel_noise: float = 1.0
    fov_deg: float = 60.0
    pixels: int = 1024
    separation_fraction: float = 0.10
    reference_slots: int = 2
    overlap_fraction: float = 0.3
    online_min_age_s: float = 60.0
    slope_bias_gain: float = 0.02
    min_altitude_m: float = 5.0
    camera_alignment_deg: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    lever_arm_m: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])

    def __post_init__(self):
        _require(self.rate_hz > 0, 'rate_hz', "影像頻率必須為正")
        _require(0 <= self.latency_s < 1.0 / self.rate_hz + 1e-9, 'latency_s',
                 "延遲必須小於一個影像週期")
        _require(self.pixel_noise >= 0, 'pixel_noise', "像素雜訊不可為負")
        _require(0 < self.fov_deg < 180, 'fov_deg', "視野必須在 (0, 180)")
        _require(self.pixels > 0, 'pixels', "像素數必須為正")
        _require(0 < self.separation_fraction < 1, 'separation_fraction', "分離比例必須在 (0, 1)")
        _require(self.reference_slots in (1, 2), 'reference_slots', "參考影像槽只能是 1 或 2")
        _require(self.overlap_fraction >= self.separation_fraction, 'overlap_fraction',
                 "重疊距離比例不可小於分離比例")
        _require(len(self.lever_arm_m) == 3, 'lever_arm_m', "力臂需要三個值")
        _require(len(self.camera_alignment_deg) == 3, 'camera_alignment_deg', "對準角需要三個值")

    @property
    def ifov(self) -> float:
        """單一像素的視角 (rad)"""
        return float(np.deg2rad(self.fov_deg) / self.pixels)

    @property
    def body_to_camera(self) -> np.ndarray:
        """R_b^c"""
        return euler_to_dcm(*np.deg2rad(self.camera_alignment_deg)).T

    @property
    def lever_arm(self) -> np.ndarray:
        """相機相對機體原點的位置 c^b (m)"""
        return np.asarray(self.lever_arm_m, dtype=float)


@dataclass
class BreadcrumbSettings:
    lateral_threshold: float = 0.1
    scale_threshold: float = 0.2
    a_f_fraction: float = 0.999                 # 每次換入後載具變異數的比例
    z_scale: float = 1.0e6
    heading_tolerance_deg: float = 45.0
    path_radius_m: float = 60.0
    terminal_radius_m: float = 40.0
    relative_variance_floor_m2: float = 0.01

    def __post_init__(self):
        _require(self.lateral_threshold > 0, 'lateral_threshold', "T_lat 必須為正")
        _require(self.scale_threshold > 0, 'scale_threshold', "T_scale 必須為正")
        _require(0 < self.a_f_fraction < 1, 'a_f_fraction', f"a_f 比例必須在 (0, 1): {self.a_f_fraction}")
        _require(self.z_scale > 1, 'z_scale', "z 倍率必須大於 1")
        _require(0 < self.heading_tolerance_deg <= 180, 'heading_tolerance_deg', "航向容許值必須在 (0, 180]")
        _require(self.path_radius_m > 0, 'path_radius_m', "路徑半徑必須為正")
        _require(self.terminal_radius_m > 0, 'terminal_radius_m', "終端半徑必須為正")


@dataclass
class GuidanceSettings:
    alpha: float = 0.98
    absorption_time_s: Optional[float] = None
    drift_max_m: float = 50.0

    def __post_init__(self):
        _require(0 < self.alpha < 1, 'alpha', f"α 必須在 (0, 1): {self.alpha}")
        _require(self.absorption_time_s is None or self.absorption_time_s > 0,
                 'absorption_time_s', "吸收時間必須為正")
        _require(self.drift_max_m > 0, 'drift_max_m', "漂移上限必須為正")


@dataclass
class ParitySettings:
    window_s: float = 1.0
    sigma_multiple: float = 5.0
    consecutive: int = 3
    motion_coefficient: float = 1e-3

    def __post_init__(self):
        _require(self.window_s > 0, 'window_s', "視窗長度必須為正")
        _require(self.sigma_multiple > 0, 'sigma_multiple', "門檻倍數必須為正")
        _require(self.consecutive >= 1, 'consecutive', "連續次數至少為 1")
        _require(self.motion_coefficient >= 0, 'motion_coefficient', "運動係數不可為負")


# ========== 環境 ==========

@dataclass
class TerrainSettings:
    mode: TerrainMode = TerrainMode.HEIGHT_FIELD
    slope_deg: float = 0.0
    slope_azimuth_deg: float = 0.0
    undulation_amplitude_m: float = 2.0
    undulation_wavelength_m: float = 400.0

    def __post_init__(self):
        if isinstance(self.mode, str):
            try:
                self.mode = TerrainMode(self.mode)
            except ValueError:
                raise _FieldError('mode', f"未知的地形模式: {self.mode}")
        _require(0 <= self.slope_deg < 45, 'slope_deg', "坡度必須在 [0, 45)")
        _require(self.undulation_amplitude_m >= 0, 'undulation_amplitude_m', "起伏振幅不可為負")
        _require(self.undulation_wavelength_m > 0, 'undulation_wavelength_m', "起伏波長必須為正")


@dataclass
class EnvironmentSettings:
    latitude_deg: float = 7.0
    spin_rate_dph: float = 0.94
    radius_m: float = 2_574_700.0
    gravity_m_s2: float = 1.352
    wind_m_s: List[float] = field(default_factory=lambda: [0.5, 0.2, 0.0])
    terrain: TerrainSettings = field(default_factory=TerrainSettings)

    def __post_init__(self):
        _require(-90 <= self.latitude_deg <= 90, 'latitude_deg', "緯度必須在 [-90, 90]")
        _require(self.spin_rate_dph >= 0, 'spin_rate_dph', "自轉速率不可為負")
        _require(self.gravity_m_s2 > 0, 'gravity_m_s2', "重力必須為正")
        _require(len(self.wind_m_s) == 3, 'wind_m_s', "風速需要三個值")

    def constants(self) -> TitanConstants:
        return TitanConstants(
            omega=float(np.deg2rad(self.spin_rate_dph) / 3600.0),
            r0_tof=np.array([0.0, 0.0, -self.radius_m]),
            latitude=float(np.deg2rad(self.latitude_deg)),
            gravity=np.array([0.0, 0.0, self.gravity_m_s2]),
        )


# ========== 情境 ==========

SENSOR_SWITCHES = ('pressure', 'lidar', 'ets', 'nullspace', 'gyrocompass', 'zero_velocity')


@dataclass
class Scenario:
    """
    一組模擬情境

    params 依 profile 而定（例如 scout 的 cruise_alt_m、speed_m_s）；
    waypoints 只用於 custom：[[t, n, e, d], ...]。
    """
    name: str = "scenario"
    profile: Profile = Profile.SCOUT
    cases: int = 10
    seed: int = 0
    imu_rate_hz: Optional[float] = None
    filter_rate_hz: Optional[float] = None
    sensor_errors: bool = True
    initial_heading_sigma_deg: float = 0.0
    initial_tilt_sigma_deg: float = 0.05
    heading_per_flight_sigma_deg: float = 0.0
    params: Dict[str, Any] = field(default_factory=dict)
    waypoints: Optional[List[List[float]]] = None
    fault: Optional[Dict[str, Any]] = None
    sensors_enabled: Dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.profile, str):
            try:
                self.profile = Profile(self.profile)
            except ValueError:
                raise _FieldError('profile', f"未知的飛行剖面: {self.profile}")
        _require(int(self.cases) >= 1, 'cases', f"案例數至少為 1: {self.cases}")
        _require(int(self.seed) >= 0, 'seed', "亂數種子不可為負")
        self.cases, self.seed = int(self.cases), int(self.seed)
        _require(self.imu_rate_hz is None or self.imu_rate_hz > 0, 'imu_rate_hz', "IMU 頻率必須為正")
        _require(self.filter_rate_hz is None or self.filter_rate_hz > 0, 'filter_rate_hz', "濾波頻率必須為正")
        for key in ('initial_heading_sigma_deg', 'initial_tilt_sigma_deg', 'heading_per_flight_sigma_deg'):
            _require(getattr(self, key) >= 0, key, f"{key} 不可為負")
        unknown = set(self.sensors_enabled) - set(SENSOR_SWITCHES)
        _require(not unknown, 'sensors_enabled', f"未知的感測器開關: {sorted(unknown)}")
        if self.profile is Profile.CUSTOM:
            self._validate_waypoints()
        else:
            self._validate_profile()
        if self.fault is not None:
            self._validate_fault()

    def _validate_waypoints(self):
        _require(self.waypoints is not None and len(self.waypoints) >= 2, 'waypoints',
                 "custom 剖面至少需要兩個航點")
        pts = np.asarray(self.waypoints, dtype=float)
        _require(pts.ndim == 2 and pts.shape[1] == 4, 'waypoints', "航點格式為 [t, n, e, d]")
        dt = np.diff(pts[:, 0])
        _require(bool(np.all(dt > 0)), 'waypoints', "航點時間必須嚴格遞增")
        speeds = np.linalg.norm(np.diff(pts[:, 1:], axis=0), axis=1) / dt
        worst = int(np.argmax(speeds))
        _require(speeds[worst] <= MAX_WAYPOINT_SPEED, 'waypoints',
                 f"航點 {worst}→{worst + 1} 需要 {speeds[worst]:.1f} m/s，超過 {MAX_WAYPOINT_SPEED} m/s")

    def _validate_profile(self):
        """
        分段剖面的高度可行性：每段的等速部分長度不可為負

        各段過渡 (smoothstep) 走過的距離是 ½·T·(v_in + v_out)，
        所以每個目標高度至少要容納進場與出場兩段過渡。
        """
        p = self.params
        if self.profile is Profile.SCOUT:
            speed = float(p.get('speed_m_s', 10.0))
            fpa = float(p.get('climb_fpa_deg', 20.0))
            _require(speed > 0 and 0 < fpa < 90, 'params', "speed_m_s 必須為正，climb_fpa_deg 必須在 (0, 90)")
            blend = float(p.get('blend_s', 4.0))
            rate = speed * np.sin(np.deg2rad(fpa))
            takeoff = float(p.get('takeoff_alt_m', SCOUT_TAKEOFF_ALT_M))
            cruise = float(p.get('cruise_alt_m', 400.0))
            scout = float(p.get('scout_alt_m', 100.0))
            needed = [
                ('takeoff_alt_m', takeoff, 0.5 * TAKEOFF_BLEND_S * TAKEOFF_RATE
                 + 0.5 * blend * (TAKEOFF_RATE + rate)),
                ('cruise_alt_m', cruise - takeoff, 0.5 * blend * rate),
                ('cruise_alt_m - scout_alt_m', cruise - scout, 1.5 * blend * rate),
            ]
            if p.get('return_leg', True):
                needed.append(('scout_alt_m', scout, TAKEOFF_BLEND_S * TAKEOFF_RATE))
        elif self.profile is Profile.LEAPFROG:
            needed = [('cruise_alt_m', float(p.get('cruise_alt_m', 100.0)),
                       TAKEOFF_BLEND_S * TAKEOFF_RATE)]
        elif self.profile is Profile.TERMINAL_DESCENT:
            needed = [('start_alt_m', float(p.get('start_alt_m', 80.0)), TERMINAL_RAMP_TOP_M + 1.0)]
        else:
            needed = []
        for name, available, required in needed:
            _require(available >= required, 'params',
                     f"{self.profile.value} 剖面不可行：{name} = {available:.2f} m，至少需要 {required:.2f} m")

    def _validate_fault(self):
        _require(self.fault.get('imu') in ('A', 'B'), 'fault', "fault.imu 必須是 A 或 B")
        _require(self.fault.get('sensor') in ('gyro', 'accel'), 'fault', "fault.sensor 必須是 gyro 或 accel")
        _require(int(self.fault.get('axis', 0)) in (0, 1, 2), 'fault', "fault.axis 必須是 0/1/2")
        _require(float(self.fault.get('time_s', 0.0)) >= 0, 'fault', "fault.time_s 不可為負")

    def enabled(self, sensor: str) -> bool:
        return bool(self.sensors_enabled.get(sensor, True))

    @property
    def initial_heading_sigma(self) -> float:
        return float(np.deg2rad(self.initial_heading_sigma_deg))

    @property
    def initial_tilt_sigma(self) -> float:
        return float(np.deg2rad(self.initial_tilt_sigma_deg))

    @property
    def heading_per_flight_sigma(self) -> float:
        return float(np.deg2rad(self.heading_per_flight_sigma_deg))


# ========== 整體設定 ==========

@dataclass
class NavConfig:
    """整份 config.json"""
    filter: FilterSettings = field(default_factory=FilterSettings)
    fogm: FogmSettings = field(default_factory=FogmSettings)
    initial_sigma: InitialSigma = field(default_factory=InitialSigma)
    imu: ImuSettings = field(default_factory=ImuSettings)
    sensors: SensorSpec = field(default_factory=SensorSpec)
    pressure: PressureSettings = field(default_factory=PressureSettings)
    lidar: LidarSettings = field(default_factory=LidarSettings)
    ets: EtsSettings = field(default_factory=EtsSettings)
    breadcrumbs: BreadcrumbSettings = field(default_factory=BreadcrumbSettings)
    guidance: GuidanceSettings = field(default_factory=GuidanceSettings)
    parity: ParitySettings = field(default_factory=ParitySettings)
    environment: EnvironmentSettings = field(default_factory=EnvironmentSettings)
    scenarios: Dict[str, Scenario] = field(default_factory=dict)
    source: str = "<defaults>"

    def scenario(self, name: str) -> Scenario:
        if name not in self.scenarios:
            raise ConfigError(f"找不到情境 '{name}'，可用: {', '.join(sorted(self.scenarios))}",
                              path=self.source)
        return self.scenarios[name]

    def constants(self) -> TitanConstants:
        return self.environment.constants()

    def with_scenario_rates(self, scenario: Scenario) -> 'NavConfig':
        """套用情境指定的 IMU / 濾波頻率"""
        cfg = self
        if scenario.imu_rate_hz is not None:
            cfg = replace(cfg, imu=replace(cfg.imu, rate_hz=scenario.imu_rate_hz))
        if scenario.filter_rate_hz is not None:
            cfg = replace(cfg, filter=replace(cfg.filter, rate_hz=scenario.filter_rate_hz))
        return cfg


_SECTIONS = {
    'filter': FilterSettings,
    'initial_sigma': InitialSigma,
    'imu': ImuSettings,
    'sensors': SensorSpec,
    'pressure': PressureSettings,
    'lidar': LidarSettings,
    'ets': EtsSettings,
    'breadcrumbs': BreadcrumbSettings,
    'guidance': GuidanceSettings,
    'parity': ParitySettings,
}

_FOGM_FIELDS = {
    'rho': FogmParams,
    'd': TerrainDistanceParams,
    'b_p': FogmParams,
    'b_ets': EtsBiasParams,
    'dH': ScaleHeightParams,
    'slope': SlopeParams,
}


class _Loader:
    """把 JSON 樹轉成 dataclass，並把錯誤對應回原始行號"""

    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source

    def locate(self, path: List[str]) -> Optional[int]:
        """依序搜尋巢狀鍵，回傳最後一個鍵所在的行號（1 起算）"""
        pos = 0
        for key in path:
            match = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(self.text, pos)
            if match is None:
                return self.text.count('\n', 0, pos) + 1 if pos else None
            pos = match.start()
        return self.text.count('\n', 0, pos) + 1

    def error(self, message: str, path: List[str]) -> ConfigError:
        return ConfigError(f"{'.'.join(path)}: {message}", line=self.locate(path), path=self.source)

    def build(self, cls, data, path: List[str]):
        if data is None:
            return cls()
        if not isinstance(data, dict):
            raise self.error("必須是物件", path)
        names = {f.name for f in fields(cls)}
        for key in data:
            if key not in names:
                raise self.error(f"未知的設定鍵 '{key}'", path + [key])
        try:
            return cls(**data)
        except _FieldError as e:
            raise self.error(str(e), path + [e.key]) from None
        except (TypeError, ValueError) as e:
            raise self.error(str(e), path) from None

    def load(self, tree: dict) -> NavConfig:
        if not isinstance(tree, dict):
            raise ConfigError("設定檔頂層必須是物件", line=1, path=self.source)
        known = set(_SECTIONS) | {'fogm', 'environment', 'scenarios'}
        for key in tree:
            if key not in known:
                raise self.error(f"未知的區段 '{key}'", [key])

        kwargs = {name: self.build(cls, tree.get(name), [name]) for name, cls in _SECTIONS.items()}

        fogm_tree = tree.get('fogm') or {}
        for key in fogm_tree:
            if key not in _FOGM_FIELDS:
                raise self.error(f"未知的 FOGM 項目 '{key}'", ['fogm', key])
        kwargs['fogm'] = FogmSettings(**{
            name: self.build(cls, fogm_tree[name], ['fogm', name])
            for name, cls in _FOGM_FIELDS.items() if name in fogm_tree
        })

        env_tree = dict(tree.get('environment') or {})
        terrain = self.build(TerrainSettings, env_tree.pop('terrain', None), ['environment', 'terrain'])
        env_tree['terrain'] = terrain
        kwargs['environment'] = self.build(EnvironmentSettings, env_tree, ['environment'])

        scenarios = {}
        for name, block in (tree.get('scenarios') or {}).items():
            block = dict(block or {})
            block.setdefault('name', name)
            scenarios[name] = self.build(Scenario, block, ['scenarios', name])
        kwargs['scenarios'] = scenarios
        return NavConfig(source=self.source, **kwargs)


# ========== 覆寫與載入 ==========

def parse_override(item: str):
    """
    解析 --override 參數 'a.b.c=value'

    value 先以 JSON 字面值解析，失敗則當成字串。

    Returns:
        (list[str], Any): 鍵路徑與值
    """
    if '=' not in item:
        raise ConfigError(f"覆寫格式應為 key=value: '{item}'", path="--override")
    key, raw = item.split('=', 1)
    path = [k for k in key.strip().split('.') if k]
    if not path:
        raise ConfigError(f"覆寫鍵為空: '{item}'", path="--override")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(tree: dict, overrides: Optional[List[str]]) -> dict:
    """把覆寫套用到 JSON 樹（原地修改並回傳）"""
    for item in overrides or []:
        path, value = parse_override(item)
        node = tree
        for key in path[:-1]:
            child = node.get(key)
            if child is None:
                child = node[key] = {}
            elif not isinstance(child, dict):
                raise ConfigError(f"無法覆寫 '{'.'.join(path)}'：'{key}' 不是物件", path="--override")
            node = child
        node[path[-1]] = value
        logger.debug(f"覆寫設定 {'.'.join(path)} = {value!r}")
    return tree


def config_from_dict(tree: dict, source: str = "<dict>", text: str = "") -> NavConfig:
    """由已解析的 JSON 樹建立設定（測試常用）"""
    return _Loader(text, source).load(tree)


def load_config(path: Optional[str] = None, overrides: Optional[List[str]] = None) -> NavConfig:
    """
    讀取並驗證設定檔

    Args:
        path: 設定檔路徑，預設為專案根目錄的 config.json
        overrides: ['filter.gate_sigma=4', ...]

    Returns:
        NavConfig: 已換算成 SI 的設定
    """
    path = path or CONFIG_FILE
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"無法讀取設定檔: {e}", path=path) from None
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"JSON 語法錯誤: {e.msg}", line=e.lineno, path=path) from None
    apply_overrides(tree, overrides)
    return _Loader(text, path).load(tree)


def output_dir(override: Optional[str] = None) -> str:
    """輸出目錄：參數 > TITAN_NAV_OUTPUT 環境變數 > ./output"""
    path = override or os.environ.get('TITAN_NAV_OUTPUT') or os.path.join(os.getcwd(), 'output')
    os.makedirs(path, exist_ok=True)
    return path
