# -*- coding: utf-8 -*-
"""
真值環境模型
- 大氣：指數靜壓 + 以 C_p(α, β) 表計算的動壓
- 地形：平面（可帶坡度）或沙丘狀起伏高度場
- 光達射線與地形交點
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import brentq

from navfilter.config import TerrainMode
from navfilter.frames import TitanConstants

logger = logging.getLogger(__name__)


# ========== 大氣 ==========

class Atmosphere:
    """
    Titan 低層大氣

    Args:
        p0: 起飛點靜壓 (Pa)
        scale_height: 真值尺度高度 (m)
        density: 大氣密度 (kg/m³)
        cp_alpha_deg / cp_beta_deg / cp_table: 壓力係數表
        cfd_error: C_p 的相對誤差（真值與 CFD 表的差異）
    """

    def __init__(self, p0: float, scale_height: float, density: float,
                 cp_alpha_deg, cp_beta_deg, cp_table, cfd_error: float = 0.0):
        if not scale_height > 0:
            raise ValueError(f"尺度高度必須為正: {scale_height}")
        self.p0 = p0
        self.scale_height = scale_height
        self.density = density
        self.cfd_error = cfd_error
        self._cp = RegularGridInterpolator((np.asarray(cp_alpha_deg, dtype=float),
                                            np.asarray(cp_beta_deg, dtype=float)),
                                           np.asarray(cp_table, dtype=float),
                                           bounds_error=False, fill_value=None)

    @classmethod
    def from_config(cls, pressure, scale_height_offset: float = 0.0,
                    cfd_error: float = 0.0, mirror: bool = False) -> 'Atmosphere':
        """mirror=True 時 β 反向（機體另一側的 B 感測器）"""
        table = np.asarray(pressure.cp_table, dtype=float)
        if mirror:
            table = table[:, ::-1]
        return cls(pressure.p0_pa, pressure.scale_height_m + scale_height_offset,
                   pressure.density_kg_m3, pressure.cp_alpha_deg, pressure.cp_beta_deg,
                   table, cfd_error)

    def static_pressure(self, height: float) -> float:
        """height 為相對起飛點的高度 (m, 向上為正)"""
        return float(self.p0 * np.exp(-height / self.scale_height))

    def pressure_coefficient(self, alpha_deg: float, beta_deg: float) -> float:
        return float(self._cp([[alpha_deg, beta_deg]])[0])

    def dynamic_pressure(self, v_rel_body: np.ndarray) -> float:
        """
        ½ρ|v|²·C_p(α, β)·(1 + ε_cfd)

        v_rel_body 為相對大氣的機體座標速度。
        """
        v = np.asarray(v_rel_body, dtype=float)
        speed = float(np.linalg.norm(v))
        if speed < 1e-9:
            return 0.0
        alpha = np.degrees(np.arctan2(v[2], v[0]))
        beta = np.degrees(np.arcsin(np.clip(v[1] / speed, -1.0, 1.0)))
        cp = self.pressure_coefficient(alpha, beta) * (1.0 + self.cfd_error)
        return 0.5 * self.density * speed ** 2 * cp


# ========== 地形 ==========

@dataclass
class Terrain:
    """
    地形高度 h(n, e)（向上為正，起飛點 h = 0）

    平面模式：h = tan(slope)·(n cos az + e sin az)
    高度場：平面 + A·sin(2πn/λ)·cos(2πe/λ)
    """
    mode: TerrainMode = TerrainMode.PLANAR
    slope: float = 0.0
    azimuth: float = 0.0
    amplitude: float = 0.0
    wavelength: float = 400.0

    @classmethod
    def from_config(cls, terrain) -> 'Terrain':
        return cls(mode=terrain.mode, slope=float(np.deg2rad(terrain.slope_deg)),
                   azimuth=float(np.deg2rad(terrain.slope_azimuth_deg)),
                   amplitude=terrain.undulation_amplitude_m,
                   wavelength=terrain.undulation_wavelength_m)

    def _undulating(self) -> bool:
        return self.mode is TerrainMode.HEIGHT_FIELD and self.amplitude > 0

    def height(self, n: float, e: float) -> float:
        k = 2.0 * np.pi / self.wavelength
        h = np.tan(self.slope) * (n * np.cos(self.azimuth) + e * np.sin(self.azimuth))
        if self._undulating():
            h += self.amplitude * np.sin(k * n) * np.cos(k * e)
        return float(h)

    def gradient(self, n: float, e: float) -> np.ndarray:
        """(∂h/∂n, ∂h/∂e)"""
        k = 2.0 * np.pi / self.wavelength
        g = np.tan(self.slope) * np.array([np.cos(self.azimuth), np.sin(self.azimuth)])
        if self._undulating():
            g = g + self.amplitude * k * np.array([np.cos(k * n) * np.cos(k * e),
                                                   -np.sin(k * n) * np.sin(k * e)])
        return g

    def normal(self, n: float, e: float) -> np.ndarray:
        """朝下的單位法向量 ∝ [∂h/∂n, ∂h/∂e, 1]"""
        g = self.gradient(n, e)
        vec = np.array([g[0], g[1], 1.0])
        return vec / np.linalg.norm(vec)

    def agl(self, r_ned: np.ndarray) -> float:
        """垂直離地高度"""
        return float(-r_ned[2] - self.height(r_ned[0], r_ned[1]))

    def plane_distance(self, r_ned: np.ndarray) -> float:
        """到正下方局部切平面的垂直距離（濾波器 d 狀態的真值）"""
        return self.agl(r_ned) * float(self.normal(r_ned[0], r_ned[1])[2])

    def intersect(self, origin: np.ndarray, direction: np.ndarray,
                  max_range: float) -> Optional[float]:
        """
        射線與地形的交點距離

        Returns:
            float: 斜距；射線在 max_range 內沒有碰到地形時為 None
        """
        origin = np.asarray(origin, dtype=float)
        direction = np.asarray(direction, dtype=float)
        direction = direction / np.linalg.norm(direction)

        def below(s: float) -> float:
            p = origin + s * direction
            return p[2] + self.height(p[0], p[1])

        if below(0.0) >= 0.0:
            return None
        if below(max_range) < 0.0:
            return None
        return float(brentq(below, 0.0, max_range, xtol=1e-9))


# ========== 環境組合 ==========

@dataclass
class Environment:
    """一個模擬案例的真值環境"""
    constants: TitanConstants
    terrain: Terrain
    atmosphere_a: Atmosphere
    atmosphere_b: Atmosphere
    wind: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale_height_offset: float = 0.0

    @classmethod
    def from_config(cls, config, rng: Optional[np.random.Generator] = None,
                    sensor_errors: bool = True,
                    scale_height_offset: Optional[float] = None) -> 'Environment':
        """
        依設定建立環境；rng 給定時抽取真值尺度高度偏差

        Args:
            scale_height_offset: 指定真值 δH (m)，None 時隨機抽取
        """
        if scale_height_offset is None:
            if rng is not None and sensor_errors:
                scale_height_offset = float(rng.normal(0.0, config.pressure.scale_height_sigma))
            else:
                scale_height_offset = 0.0
        cfd = config.sensors.pressure_cfd_error if sensor_errors else 0.0
        return cls(constants=config.constants(),
                   terrain=Terrain.from_config(config.environment.terrain),
                   atmosphere_a=Atmosphere.from_config(config.pressure, scale_height_offset, cfd),
                   atmosphere_b=Atmosphere.from_config(config.pressure, scale_height_offset, cfd,
                                                       mirror=True),
                   wind=np.asarray(config.environment.wind_m_s, dtype=float),
                   scale_height_offset=scale_height_offset)
