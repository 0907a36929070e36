# -*- coding: utf-8 -*-
"""
座標系與旋轉代數

慣例（全專案固定）：
- 四元數 scalar-first [w, x, y, z]，Hamilton 乘法，右手系
- quat_to_dcm(q) 回傳 q 所代表的旋轉矩陣 R，滿足 R·v = q ⊗ v ⊗ q*
- 導航狀態中的姿態 q 滿足 quat_to_dcm(q) = R_b^tof（機體向量轉到 TOF），
  其轉置 R_tof^b 把 TOF 座標轉成機體座標
- r3(γ) 為繞 +z 的主動旋轉，r3(π/2)·x̂ = ŷ
"""
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import FrameMismatchError

logger = logging.getLogger(__name__)

# 四元數正規化偏差超過此值就記錄警告
QUAT_NORM_WARN_TOL = 1e-6

# 每隔多少次傳播做一次重新正交化
REORTHONORMALIZE_EVERY = 100


# ========== 基本向量運算 ==========

def skew(v) -> np.ndarray:
    """
    反對稱矩陣 [v]×，滿足 skew(v) @ w = v × w

    Args:
        v: 三維向量

    Returns:
        np.ndarray: 3×3 矩陣
    """
    x, y, z = v
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    """skew 的反運算（取反對稱部分）"""
    return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


# ========== 四元數 ==========

def quat_normalize(q) -> np.ndarray:
    """
    正規化四元數並統一符號（純量部 ≥ 0）

    偏差大於 QUAT_NORM_WARN_TOL 時記錄警告。
    """
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError(f"無法正規化四元數: {q}")
    if abs(n - 1.0) > QUAT_NORM_WARN_TOL:
        logger.warning("四元數範數偏差 %.3e，已正規化", n - 1.0)
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(p, q) -> np.ndarray:
    """Hamilton 乘積 p ⊗ q"""
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ])


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q, v) -> np.ndarray:
    """三明治乘積 q ⊗ [0, v] ⊗ q*"""
    qv = np.concatenate(([0.0], np.asarray(v, dtype=float)))
    return quat_multiply(quat_multiply(q, qv), quat_conjugate(q))[1:]


def quat_to_dcm(q) -> np.ndarray:
    """
    四元數轉方向餘弦矩陣

    Args:
        q: 單位四元數 [w, x, y, z]

    Returns:
        np.ndarray: 3×3 旋轉矩陣 R，R·v 等於 q 對 v 的三明治乘積
    """
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def dcm_to_quat(d: np.ndarray) -> np.ndarray:
    """
    方向餘弦矩陣轉四元數（Shepperd 方法，數值穩定）

    Args:
        d: 3×3 正交矩陣

    Returns:
        np.ndarray: 單位四元數，純量部 ≥ 0
    """
    d = np.asarray(d, dtype=float)
    tr = np.trace(d)
    candidates = np.array([tr, d[0, 0], d[1, 1], d[2, 2]])
    k = int(np.argmax(candidates))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = np.array([0.25 * s,
                      (d[2, 1] - d[1, 2]) / s,
                      (d[0, 2] - d[2, 0]) / s,
                      (d[1, 0] - d[0, 1]) / s])
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + d[0, 0] - d[1, 1] - d[2, 2])
        q = np.array([(d[2, 1] - d[1, 2]) / s,
                      0.25 * s,
                      (d[0, 1] + d[1, 0]) / s,
                      (d[0, 2] + d[2, 0]) / s])
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 - d[0, 0] + d[1, 1] - d[2, 2])
        q = np.array([(d[0, 2] - d[2, 0]) / s,
                      (d[0, 1] + d[1, 0]) / s,
                      0.25 * s,
                      (d[1, 2] + d[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 - d[0, 0] - d[1, 1] + d[2, 2])
        q = np.array([(d[1, 0] - d[0, 1]) / s,
                      (d[0, 2] + d[2, 0]) / s,
                      (d[1, 2] + d[2, 1]) / s,
                      0.25 * s])
    return quat_normalize(q)


def rotvec_to_quat(phi) -> np.ndarray:
    """旋轉向量（軸 × 角度）轉四元數"""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    if angle < 1e-12:
        # 二階泰勒展開
        q = np.concatenate(([1.0 - angle * angle / 8.0], 0.5 * phi))
        return q / np.linalg.norm(q)
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * phi / angle))


def quat_to_rotvec(q) -> np.ndarray:
    """四元數轉旋轉向量（角度 ∈ [0, π]）"""
    q = quat_normalize(q)
    s = np.linalg.norm(q[1:])
    if s < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(s, q[0])
    return angle * q[1:] / s


def rotvec_to_dcm(phi) -> np.ndarray:
    """旋轉向量的矩陣指數 exp([φ]×)"""
    return quat_to_dcm(rotvec_to_quat(phi))


def dcm_to_rotvec(d: np.ndarray) -> np.ndarray:
    """矩陣對數 log(R) 的向量形式"""
    return quat_to_rotvec(dcm_to_quat(d))


# ========== DCM 工具 ==========

def r3(angle: float) -> np.ndarray:
    """
    繞 +z 軸的主動旋轉（右手定則）

    r3(γ1) @ r3(-γ2) 即兩次飛行 TOF 間的航向修正 R_tof2^tof1。
    """
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0],
                     [s, c, 0.0],
                     [0.0, 0.0, 1.0]])


def r3_derivative(angle: float) -> np.ndarray:
    """d r3(γ) / dγ = [ẑ]× r3(γ)"""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[-s, -c, 0.0],
                     [c, -s, 0.0],
                     [0.0, 0.0, 0.0]])


def orthonormalize(d: np.ndarray) -> np.ndarray:
    """以 SVD 求最接近的正交矩陣（det = +1）"""
    u, _, vt = np.linalg.svd(d)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1.0
        r = u @ vt
    return r


def is_orthonormal(d: np.ndarray, tol: float = 1e-9) -> bool:
    d = np.asarray(d, dtype=float)
    return (np.allclose(d.T @ d, np.eye(3), atol=tol)
            and abs(np.linalg.det(d) - 1.0) < tol)


def euler_to_dcm(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """3-2-1 尤拉角（弧度）轉 R_b^n"""
    return r3(yaw) @ _r2(pitch) @ _r1(roll)


def _r1(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _r2(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def heading_of(dcm_b_to_n: np.ndarray) -> float:
    """機體 x 軸在水平面上的航向角（弧度，北=0、東=+π/2）"""
    x_axis = dcm_b_to_n[:, 0]
    return float(np.arctan2(x_axis[1], x_axis[0]))


# ========== 座標系標籤 ==========

class FrameId(Enum):
    """座標系代號"""
    TCI = "TCI"            # Titan 中心慣性座標
    TCTF = "TCTF"          # Titan 中心固連座標
    NED = "NED"
    TOF1 = "TOF1"          # 前一次飛行的起飛座標
    TOF2 = "TOF2"          # 本次飛行的起飛座標
    TOF = "TOF2"           # 別名：本次飛行
    BODY = "BODY"          # 機體 FRD
    IMU_A = "IMU_A"
    IMU_B = "IMU_B"
    LIDAR = "LIDAR"
    NAVCAM = "NAVCAM"


@dataclass(frozen=True)
class FramedVector:
    """帶座標系標籤的三維向量"""
    frame: FrameId
    xyz: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'xyz', np.asarray(self.xyz, dtype=float).reshape(3))


@dataclass(frozen=True)
class Transform:
    """
    座標轉換 src → dst

    組合時檢查座標系是否相接：(b→c) @ (a→b) = (a→c)
    """
    src: FrameId
    dst: FrameId
    dcm: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'dcm', np.asarray(self.dcm, dtype=float).reshape(3, 3))

    def __matmul__(self, other):
        if isinstance(other, Transform):
            if other.dst is not self.src:
                raise FrameMismatchError(
                    f"無法組合 {other.src.value}→{other.dst.value} 與 {self.src.value}→{self.dst.value}")
            return Transform(other.src, self.dst, self.dcm @ other.dcm)
        if isinstance(other, FramedVector):
            return self.apply(other)
        return NotImplemented

    def apply(self, vec: FramedVector) -> FramedVector:
        if vec.frame is not self.src:
            raise FrameMismatchError(
                f"向量位於 {vec.frame.value}，轉換需要 {self.src.value}")
        return FramedVector(self.dst, self.dcm @ vec.xyz)

    def inverse(self) -> 'Transform':
        return Transform(self.dst, self.src, self.dcm.T)


# ========== Titan 常數 ==========

TITAN_RADIUS_M = 2_574_700.0
TITAN_SPIN_RATE = np.deg2rad(0.94) / 3600.0   # 約 0.94°/hr，引用值為近似
TITAN_LATITUDE = np.deg2rad(7.0)
TITAN_GRAVITY = 1.352


@dataclass(frozen=True)
class TitanConstants:
    """
    Titan 自轉與重力常數

    Attributes:
        omega: 自轉速率 (rad/s)，理想化測試允許 0
        r0_tof: TOF 原點相對 Titan 中心的位置 (m, TOF 座標)
        latitude: 緯度 (rad)
        gravity: 重力加速度向量 (m/s², NED)
    """
    omega: float = TITAN_SPIN_RATE
    r0_tof: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -TITAN_RADIUS_M]))
    latitude: float = TITAN_LATITUDE
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, TITAN_GRAVITY]))

    def __post_init__(self):
        object.__setattr__(self, 'r0_tof', np.asarray(self.r0_tof, dtype=float).reshape(3))
        object.__setattr__(self, 'gravity', np.asarray(self.gravity, dtype=float).reshape(3))
        if self.omega < 0:
            raise ValueError(f"自轉速率不可為負: {self.omega}")
        radius = np.linalg.norm(self.r0_tof)
        if not (TITAN_RADIUS_M - 1.0e4 <= radius <= TITAN_RADIUS_M + 1.0e6):
            raise ValueError(f"|r0_tof| = {radius:.0f} m 不在 Titan 半徑範圍內")

    @property
    def omega_ned(self) -> np.ndarray:
        """NED 座標中的自轉向量 [Ω cosφ, 0, −Ω sinφ]"""
        return self.omega * np.array([np.cos(self.latitude), 0.0, -np.sin(self.latitude)])

    @property
    def centripetal(self) -> np.ndarray:
        """Ω × (Ω × r0)"""
        w = self.omega_ned
        return np.cross(w, np.cross(w, self.r0_tof))

    def static_specific_force(self) -> np.ndarray:
        """靜止時加速度計在 TOF 中感測到的比力"""
        return -(self.gravity - self.centripetal)

    def with_overrides(self, **kwargs) -> 'TitanConstants':
        values = {'omega': self.omega, 'r0_tof': self.r0_tof,
                  'latitude': self.latitude, 'gravity': self.gravity}
        values.update(kwargs)
        return TitanConstants(**values)
