# -*- coding: utf-8 -*-
"""
導航 → 控制的狀態調節
- 修正量平滑：z(k) = α(z(k−1) + δ(k))，控制用狀態 = 導航狀態 − z
- 歷史麵包屑漂移補償量（低通濾波後提供給導引律）
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)


def alpha_for_absorption(absorption_time_s: float, rate_hz: float, fraction: float = 0.95) -> float:
    """
    讓一次步階修正在 absorption_time_s 內被吸收 fraction 的 α

    α^N = 1 − fraction，N = absorption_time_s·rate_hz
    """
    if not absorption_time_s > 0 or not rate_hz > 0:
        raise ValueError(f"吸收時間與頻率必須為正: {absorption_time_s}, {rate_hz}")
    if not 0 < fraction < 1:
        raise ValueError(f"吸收比例必須在 (0, 1): {fraction}")
    ticks = absorption_time_s * rate_hz
    return float((1.0 - fraction) ** (1.0 / ticks))


@dataclass
class CorrectionFilter:
    """
    修正量的加權累積和

    Attributes:
        alpha: 衰減係數 (0, 1)
        z_pos: 位置修正累積 (m)
        z_vel: 速度修正累積 (m/s)
    """
    alpha: float = 0.98
    z_pos: np.ndarray = field(default_factory=lambda: np.zeros(3))
    z_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"α 必須在 (0, 1): {self.alpha}")
        self.z_pos = np.asarray(self.z_pos, dtype=float).reshape(3)
        self.z_vel = np.asarray(self.z_vel, dtype=float).reshape(3)

    @classmethod
    def from_config(cls, guidance, filter_rate_hz: float) -> 'CorrectionFilter':
        if guidance.absorption_time_s is not None:
            return cls(alpha_for_absorption(guidance.absorption_time_s, filter_rate_hz))
        return cls(guidance.alpha)


def condition_state(r_nav: np.ndarray, v_nav: np.ndarray, delta_r: Optional[np.ndarray],
                    delta_v: Optional[np.ndarray],
                    f: CorrectionFilter) -> Tuple[np.ndarray, np.ndarray, CorrectionFilter]:
    """
    每個控制週期在 apply_corrections 之後呼叫一次

    Args:
        r_nav / v_nav: 修正後的導航狀態
        delta_r / delta_v: 本週期套用的修正量（沒有則 None）
        f: 目前的濾波狀態

    Returns:
        (r_ctrl, v_ctrl, f')
    """
    dr = np.zeros(3) if delta_r is None else np.asarray(delta_r, dtype=float)
    dv = np.zeros(3) if delta_v is None else np.asarray(delta_v, dtype=float)
    z_pos = f.alpha * (f.z_pos + dr)
    z_vel = f.alpha * (f.z_vel + dv)
    new = replace(f, z_pos=z_pos, z_vel=z_vel)
    return np.asarray(r_nav) - z_pos, np.asarray(v_nav) - z_vel, new


@dataclass
class DriftOffset:
    """歷史麵包屑漂移補償量"""
    alpha: float = 0.98
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    max_norm: float = 50.0
    initialized: bool = False

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"α 必須在 (0, 1): {self.alpha}")
        self.offset = np.asarray(self.offset, dtype=float).reshape(3)


def breadcrumb_drift_offset(hbc_in_filter: Optional[np.ndarray], hbc_in_db: Optional[np.ndarray],
                            state: DriftOffset) -> DriftOffset:
    """
    原始補償量 = 濾波器中的歷史麵包屑估計 − 資料庫中的估計，再低通

    沒有載入歷史麵包屑時維持原值；輸出長度限制在 max_norm 內。
    """
    if hbc_in_filter is None or hbc_in_db is None:
        return state
    raw = np.asarray(hbc_in_filter, dtype=float) - np.asarray(hbc_in_db, dtype=float)
    offset = state.alpha * state.offset + (1.0 - state.alpha) * raw
    norm = float(np.linalg.norm(offset))
    if norm > state.max_norm:
        logger.warning(f"漂移補償量 {norm:.1f} m 超過上限 {state.max_norm} m，已截斷")
        offset = offset * (state.max_norm / norm)
    return replace(state, offset=offset, initialized=True)
