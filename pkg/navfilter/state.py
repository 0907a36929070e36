# -*- coding: utf-8 -*-
"""
誤差狀態定義
47 維誤差狀態的索引表、FOGM 參數與 (dx, P) 容器
"""
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

# (名稱, 維度)，順序即狀態向量排列
STATE_LAYOUT: Tuple[Tuple[str, int], ...] = (
    ('r', 3),
    ('v', 3),
    ('psi', 3),
    ('rho', 1),
    ('d', 1),
    ('b_aA', 3),
    ('b_aB', 3),
    ('b_gA', 3),
    ('b_gB', 3),
    ('b_pA', 1),
    ('b_pB', 1),
    ('b_ETS', 2),
    ('dH', 1),
    ('n', 2),
    ('gamma2', 1),
    ('gamma1', 1),
    ('r_tc', 3),
    ('r_tr1', 3),
    ('r_tr2', 3),
    ('r_obc', 3),
    ('r_hbc', 3),
)

# 影像位置增廣槽
SLOTS = ('tc', 'tr1', 'tr2', 'obc', 'hbc')

# 以 FOGM 建模的狀態群組（其餘非慣性狀態為靜態）
FOGM_GROUPS = ('rho', 'd', 'b_aA', 'b_aB', 'b_gA', 'b_gB', 'b_pA', 'b_pB', 'b_ETS', 'dH', 'n')


class StateIndexMap:
    """
    狀態名稱 → 切片

    Example:
        >>> IDX = StateIndexMap()
        >>> IDX.r
        slice(0, 3, None)
        >>> IDX.dim
        47
    """

    def __init__(self, layout=STATE_LAYOUT):
        self._slices: Dict[str, slice] = {}
        start = 0
        for name, size in layout:
            if name in self._slices:
                raise ValueError(f"重複的狀態名稱: {name}")
            self._slices[name] = slice(start, start + size)
            start += size
        self.dim = start

    def __getattr__(self, name: str) -> slice:
        slices = self.__dict__.get('_slices', {})
        if name in slices:
            return slices[name]
        raise AttributeError(name)

    def __getitem__(self, name: str) -> slice:
        return self._slices[name]

    def __contains__(self, name: str) -> bool:
        return name in self._slices

    def names(self) -> List[str]:
        return list(self._slices)

    def size(self, name: str) -> int:
        s = self._slices[name]
        return s.stop - s.start

    def slot(self, slot: str) -> slice:
        """tc/tr1/tr2/obc/hbc → 對應的位置切片"""
        if slot not in SLOTS:
            raise ValueError(f"未知的影像槽: {slot}")
        return self._slices['r_' + slot]

    def indices(self, name: str) -> np.ndarray:
        return np.arange(self._slices[name].start, self._slices[name].stop)

    def labels(self) -> List[str]:
        """每個純量狀態的標籤，例如 r[0]、b_gA[2]"""
        out = []
        for name, s in self._slices.items():
            size = s.stop - s.start
            out.extend([name] if size == 1 else [f"{name}[{i}]" for i in range(size)])
        return out

    def bias_groups(self, imu_id: str) -> Tuple[slice, slice]:
        """某顆 IMU 的 (加速度計偏差, 陀螺偏差) 切片"""
        suffix = str(getattr(imu_id, 'value', imu_id)).upper()[-1]
        return self._slices['b_a' + suffix], self._slices['b_g' + suffix]


STATE_INDEX = StateIndexMap()
STATE_DIM = STATE_INDEX.dim


@dataclass(frozen=True)
class FogmSpec:
    """
    一階高斯馬可夫過程

    Attributes:
        tau: 時間常數 (s)
        sigma_ss: 穩態 1σ（狀態單位）
    """
    tau: float
    sigma_ss: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"FOGM τ 必須為正: {self.tau}")
        if self.sigma_ss < 0:
            raise ValueError(f"FOGM σ 不可為負: {self.sigma_ss}")

    @property
    def psd(self) -> float:
        """連續時間白雜訊 PSD q，使穩態變異數為 σ²：q = 2σ²/τ"""
        return 2.0 * self.sigma_ss ** 2 / self.tau

    def discrete(self, dt: float) -> Tuple[float, float]:
        """
        離散化

        Returns:
            (φ, q_d): φ = exp(−dt/τ)，q_d = σ²(1 − φ²)
        """
        phi = float(np.exp(-dt / self.tau))
        return phi, self.sigma_ss ** 2 * (1.0 - phi * phi)


@dataclass
class ErrorState:
    """
    (dx, P) 對

    P 每次更新後強制對稱；dx 採「真值 − 估計值」。
    """
    dx: np.ndarray = field(default_factory=lambda: np.zeros(STATE_DIM))
    P: np.ndarray = field(default_factory=lambda: np.zeros((STATE_DIM, STATE_DIM)))

    def __post_init__(self):
        self.dx = np.asarray(self.dx, dtype=float).reshape(STATE_DIM)
        self.P = np.asarray(self.P, dtype=float).reshape(STATE_DIM, STATE_DIM)

    def sigma(self, name: str) -> np.ndarray:
        s = STATE_INDEX[name]
        return np.sqrt(np.clip(np.diag(self.P)[s], 0.0, None))

    def block(self, row: str, col: str = None) -> np.ndarray:
        return self.P[STATE_INDEX[row], STATE_INDEX[col or row]]

    def copy(self) -> 'ErrorState':
        return ErrorState(self.dx.copy(), self.P.copy())

    def symmetrize(self):
        self.P = 0.5 * (self.P + self.P.T)

    def is_symmetric(self, rtol: float = 1e-10) -> bool:
        scale = max(float(np.max(np.abs(self.P))), 1e-300)
        return float(np.max(np.abs(self.P - self.P.T))) <= rtol * scale
