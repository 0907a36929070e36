# -*- coding: utf-8 -*-
"""
量測模型
為每種感測器建立 Measurement（殘差 z、敏感度 H、共變異數 R）

每個模型都提供非線性預測函式 predict_*，H 是它對誤差狀態的偏導數；
numerical_jacobian 以中央差分驗證 H。
"""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import linalg

from .ekf import Measurement, MeasurementKind, ground_normal
from .errors import MeasurementRejected
from .frames import TitanConstants, dcm_to_quat, r3, r3_derivative, rotvec_to_dcm, skew
from .state import STATE_DIM, STATE_INDEX as IDX
from .strapdown import ImuId, NavState

logger = logging.getLogger(__name__)

EAST = np.array([0.0, 1.0, 0.0])
LATERAL = np.array([[1.0, 0.0, 0.0],
                    [0.0, 1.0, 0.0]])


# ========== 陀螺羅盤 ==========

def predict_east_rate(attitude: np.ndarray, alignment: np.ndarray, rate_imu: np.ndarray,
                      bias: np.ndarray) -> float:
    """估計的東向角速率 e_eᵀ·Ĉ·R_imu^b·(ω_imu − b̂)"""
    return float(EAST @ attitude @ alignment @ (rate_imu - bias))


def gyrocompass_measurement(rates: Dict[ImuId, np.ndarray], attitude: np.ndarray,
                            alignments: Dict[ImuId, np.ndarray],
                            bias_hat: Dict[ImuId, np.ndarray],
                            tau_acc: float, gyro_arw: float, gyro_white: float,
                            accel_std: Optional[float] = None,
                            static_limit: float = 0.05, t: float = 0.0) -> Measurement:
    """
    陀螺羅盤量測：靜止時真實東向角速率為 0

    Args:
        rates: 每顆 IMU 在 τ_acc 內累積的 ΣΔθ / τ_acc（IMU 座標, rad/s）
        attitude: Ĉ = R_b^n
        alignments: R_imu^b
        bias_hat: 陀螺偏差估計（IMU 座標）
        tau_acc: 累積時間 (s)
        gyro_arw / gyro_white: 雜訊規格
        accel_std: 視窗內比力的標準差，用於靜止判定

    Returns:
        Measurement: 每顆 IMU 一列，z = 0 − ω̂_east

    Raises:
        MeasurementRejected: 偵測到載具不是靜止狀態
    """
    if accel_std is not None and accel_std > static_limit:
        raise MeasurementRejected(f"比力標準差 {accel_std:.3g} m/s² 超過靜止門檻 {static_limit}")
    imus = sorted(rates, key=lambda imu: imu.value)
    z = np.zeros(len(imus))
    H = np.zeros((len(imus), STATE_DIM))
    for row, imu in enumerate(imus):
        rate_n = attitude @ alignments[imu] @ (rates[imu] - bias_hat[imu])
        z[row] = -rate_n[1]
        H[row, IDX.psi] = -EAST @ skew(rate_n)
        H[row, IDX.bias_groups(imu)[1]] = -EAST @ attitude @ alignments[imu]
    r = gyro_arw ** 2 / tau_acc + 2.0 * gyro_white ** 2 / tau_acc ** 2
    return Measurement(MeasurementKind.GYROCOMPASS, z, H, r * np.eye(len(imus)), t,
                       label="[" + ",".join(i.value for i in imus) + "]")


# ========== IMU 零空間 ==========

def nullspace_basis(alignments: Sequence[np.ndarray]) -> np.ndarray:
    """
    N = Null(R̃ᵀ)，R̃ = [R_A^bᵀ; R_B^bᵀ]（6×3）

    Raises:
        MeasurementRejected: 對準矩陣退化，零空間維度不是 3
    """
    stacked = np.vstack([np.asarray(a, dtype=float).T for a in alignments])
    if np.linalg.matrix_rank(stacked) < 3:
        raise MeasurementRejected("IMU 對準矩陣秩不足，停用零空間模型")
    basis = linalg.null_space(stacked.T)
    if basis.shape[1] != 3:
        raise MeasurementRejected(f"零空間維度為 {basis.shape[1]}，停用零空間模型")
    return basis


def predict_nullspace(basis: np.ndarray, bias_a: np.ndarray, bias_b: np.ndarray,
                      tau: float) -> np.ndarray:
    return tau * basis.T @ np.concatenate([bias_a, bias_b])


def nullspace_measurement(sum_a: np.ndarray, sum_b: np.ndarray,
                          alignments: Sequence[np.ndarray],
                          bias_a_hat: np.ndarray, bias_b_hat: np.ndarray,
                          tau: float, sensor: str, random_walk: float, white: float,
                          t: float = 0.0, basis: Optional[np.ndarray] = None) -> Measurement:
    """
    備援 IMU 零空間量測：共同剛體運動被 Nᵀ 消去，只剩兩組偏差

    Args:
        sum_a / sum_b: τ 內累積的 ΣΔθ 或 ΣΔv（IMU 座標）
        sensor: 'gyro' 或 'accel'
        random_walk: ARW 或 VRW
        white: 單一樣本量化雜訊
    """
    if sensor not in ('gyro', 'accel'):
        raise ValueError(f"sensor 必須是 gyro 或 accel: {sensor}")
    basis = nullspace_basis(alignments) if basis is None else basis
    y = basis.T @ np.concatenate([sum_a, sum_b])
    z = y - predict_nullspace(basis, bias_a_hat, bias_b_hat, tau)
    H = np.zeros((3, STATE_DIM))
    cols = np.r_[IDX.indices('b_gA' if sensor == 'gyro' else 'b_aA'),
                 IDX.indices('b_gB' if sensor == 'gyro' else 'b_aB')]
    H[:, cols] = tau * basis.T
    r = tau * random_walk ** 2 + 2.0 * white ** 2
    return Measurement(MeasurementKind.IMU_NULLSPACE, z, H, r * np.eye(3), t, label=f"[{sensor}]")


# ========== 氣壓 ==========

@dataclass(frozen=True)
class PressureModel:
    """
    指數大氣：P_S = P0·exp(−(h − h0)/(H + δH))

    h 為距 Titan 中心的距離 |r0 + r|，h0 = |r0|（起飛點），
    因此 P_S 隨高度遞減。
    """
    P0: float
    h0: float
    H_scale: float
    r0_tof: np.ndarray = field(default_factory=lambda: TitanConstants().r0_tof)

    def __post_init__(self):
        if not self.P0 > 0:
            raise ValueError(f"P0 必須為正: {self.P0}")
        if not self.H_scale > 0:
            raise ValueError(f"尺度高度必須為正: {self.H_scale}")
        object.__setattr__(self, 'r0_tof', np.asarray(self.r0_tof, dtype=float).reshape(3))

    @classmethod
    def from_config(cls, settings, constants: TitanConstants) -> 'PressureModel':
        return cls(P0=settings.p0_pa, h0=float(np.linalg.norm(constants.r0_tof)),
                   H_scale=settings.scale_height_m, r0_tof=constants.r0_tof)

    def height(self, r: np.ndarray) -> float:
        return float(np.linalg.norm(self.r0_tof + r))

    def static_pressure(self, r: np.ndarray, dH: float = 0.0) -> float:
        return float(self.P0 * np.exp(-(self.height(r) - self.h0) / (self.H_scale + dH)))


def predict_pressure(model: PressureModel, r: np.ndarray, dH: float, bias: float) -> float:
    return model.static_pressure(r, dH) + bias


def pressure_measurement(raw: float, sensor: str, nav: NavState, model: PressureModel,
                         dH_hat: float, bias_hat: float, noise_pa: float,
                         t: float = 0.0) -> Measurement:
    """
    氣壓量測（A、B 各自一個 b_p 狀態）

    ∂P/∂r = −P_S/(H+δH)·(r0+r)/|r0+r|，∂P/∂δH = P_S(h−h0)/(H+δH)²，∂P/∂b_p = 1
    """
    sensor = sensor.upper()
    if sensor not in ('A', 'B'):
        raise ValueError(f"氣壓感測器必須是 A 或 B: {sensor}")
    scale = model.H_scale + dH_hat
    p_s = model.static_pressure(nav.r, dH_hat)
    radial = (model.r0_tof + nav.r) / model.height(nav.r)
    H = np.zeros((1, STATE_DIM))
    H[0, IDX.r] = -p_s / scale * radial
    H[0, IDX.dH] = p_s * (model.height(nav.r) - model.h0) / scale ** 2
    H[0, IDX['b_p' + sensor]] = 1.0
    z = raw - (p_s + bias_hat)
    kind = MeasurementKind.PRESSURE_A if sensor == 'A' else MeasurementKind.PRESSURE_B
    return Measurement(kind, [z], H, [[noise_pa ** 2]], t)


# ========== 光達 ==========

class LidarMode(Enum):
    PYRAMID = "pyramid"
    ALTIMETRY = "altimetry"
    SCANNING = "scanning"


class LosId(Enum):
    BORESIGHT = "boresight"
    PLUS_X = "+X"
    MINUS_X = "-X"
    PLUS_Y = "+Y"
    MINUS_Y = "-Y"


MODE_LOS = {
    LidarMode.PYRAMID: (LosId.BORESIGHT, LosId.PLUS_X, LosId.MINUS_X, LosId.PLUS_Y, LosId.MINUS_Y),
    LidarMode.ALTIMETRY: (LosId.BORESIGHT,),
    LidarMode.SCANNING: (LosId.BORESIGHT, LosId.PLUS_Y, LosId.MINUS_Y),
}


@dataclass(frozen=True)
class LidarLos:
    """
    光達視線

    point 為光達座標中的方向（視軸為 +z，+X 視線往前傾 half_angle）
    """
    mode: LidarMode
    los_id: LosId
    point: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.point, dtype=float).reshape(3)
        object.__setattr__(self, 'point', p / np.linalg.norm(p))

    @classmethod
    def make(cls, mode: LidarMode, los_id: LosId, half_angle_deg: float = 7.5) -> 'LidarLos':
        s, c = np.sin(np.deg2rad(half_angle_deg)), np.cos(np.deg2rad(half_angle_deg))
        directions = {
            LosId.BORESIGHT: [0.0, 0.0, 1.0],
            LosId.PLUS_X: [s, 0.0, c],
            LosId.MINUS_X: [-s, 0.0, c],
            LosId.PLUS_Y: [0.0, s, c],
            LosId.MINUS_Y: [0.0, -s, c],
        }
        return cls(mode, los_id, np.array(directions[los_id]))


def lidar_los_set(mode: LidarMode, half_angle_deg: float = 7.5) -> List[LidarLos]:
    return [LidarLos.make(mode, los, half_angle_deg) for los in MODE_LOS[mode]]


def lidar_mode_for_altitude(agl: float, settings, min_altitude: float = 15.0) -> Optional[LidarMode]:
    """15–400 m 用金字塔模式，400–2000 m 用測高模式，其餘不量測"""
    if agl < min_altitude:
        return None
    if agl <= settings.pyramid_max_range_m:
        return LidarMode.PYRAMID
    if agl <= settings.altimetry_max_range_m:
        return LidarMode.ALTIMETRY
    return None


def predict_lidar_range(d: float, n: np.ndarray, los_tof: np.ndarray) -> float:
    """平面地形斜距 y = d / (l̄·n̄)"""
    return float(d / (los_tof @ ground_normal(n)))


def lidar_measurement(los: LidarLos, measured_range: float, nav: NavState, d_hat: float,
                      n_hat: np.ndarray, noise: float, alignment: Optional[np.ndarray] = None,
                      grazing_min: float = 0.2, min_altitude: float = 15.0,
                      t: float = 0.0) -> Measurement:
    """
    光達斜距量測，H 只含 d 與 n（刻意忽略姿態敏感度）

    Raises:
        MeasurementRejected: 掠射角過小或高度低於下限
    """
    if d_hat < min_altitude:
        raise MeasurementRejected(f"高度 {d_hat:.1f} m 低於光達下限 {min_altitude} m")
    rot = np.eye(3) if alignment is None else alignment
    los_tof = nav.dcm @ rot @ los.point
    normal = ground_normal(n_hat)
    cos_incidence = float(los_tof @ normal)
    if cos_incidence < grazing_min:
        raise MeasurementRejected(f"視線 {los.los_id.value} 掠射 (l·n = {cos_incidence:.3f})")
    predicted = d_hat / cos_incidence
    H = np.zeros((1, STATE_DIM))
    H[0, IDX.d] = 1.0 / cos_incidence
    dnz = -np.asarray(n_hat) / normal[2]
    H[0, IDX.n] = -d_hat / cos_incidence ** 2 * (los_tof[:2] + los_tof[2] * dnz)
    return Measurement(MeasurementKind.LIDAR_LOS, [measured_range - predicted], H,
                       [[noise ** 2]], t, label=f"[{los.los_id.value}]")


# ========== 影像位移（ETS） ==========

class EtsModality(Enum):
    VELOCIMETRY = "velocimetry"
    ONLINE_BC = "online_bc"
    HISTORIC_BC = "historic_bc"
    TERMINAL_BC = "terminal_bc"

    @property
    def is_historic(self) -> bool:
        return self in (EtsModality.HISTORIC_BC, EtsModality.TERMINAL_BC)


@dataclass(frozen=True)
class EtsDisplacement:
    """
    ETS 輸出：參考影像與目前影像間的相機座標橫向位移

    Attributes:
        modality: 量測型態
        dc_cam: 相機座標橫向位移 (m, 2 維)
        t_ref / t_cur: 參考與目前影像時間
        ref_slot: tr1 / tr2 / obc / hbc
        noise_1sigma: 像素雜訊 1σ
    """
    modality: EtsModality
    dc_cam: np.ndarray
    t_ref: float
    t_cur: float
    ref_slot: str
    noise_1sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'dc_cam', np.asarray(self.dc_cam, dtype=float).reshape(2))
        if not self.t_cur > self.t_ref:
            raise ValueError(f"目前影像時間 {self.t_cur} 必須晚於參考影像 {self.t_ref}")


@dataclass(frozen=True)
class CameraModel:
    """導航相機：R_b^c、力臂 c^b、單像素視角"""
    body_to_camera: np.ndarray = field(default_factory=lambda: np.eye(3))
    lever_arm: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ifov: float = np.deg2rad(60.0) / 1024

    @classmethod
    def from_config(cls, ets) -> 'CameraModel':
        return cls(ets.body_to_camera, ets.lever_arm, ets.ifov)


@dataclass(frozen=True)
class ImageState:
    """影像時刻的載具位置（名目值）、姿態快照與離地高度"""
    position: np.ndarray
    attitude: np.ndarray
    agl: float = 100.0
    t: float = 0.0


def camera_position(image: ImageState, camera: CameraModel) -> np.ndarray:
    return image.position + image.attitude @ camera.lever_arm


def heading_rotation(gamma1: float, gamma2: float) -> np.ndarray:
    """R_tof2^tof1 = r3(γ₁)·r3(−γ₂)"""
    return r3(gamma1) @ r3(-gamma2)


def predict_displacement(current: ImageState, reference: ImageState, camera: CameraModel,
                         b_ets: Optional[np.ndarray] = None,
                         rotation: Optional[np.ndarray] = None) -> np.ndarray:
    """
    ŷ = lateral(R_b^c·R̂_ref^ᵀ·(ĉ_cur − ĉ_ref)) + b_ETS

    rotation 為歷史麵包屑的 R_tof2^tof1，作用在目前相機位置。
    """
    c_cur = camera_position(current, camera)
    if rotation is not None:
        c_cur = rotation @ c_cur
    c_ref = camera_position(reference, camera)
    y = LATERAL @ camera.body_to_camera @ reference.attitude.T @ (c_cur - c_ref)
    if b_ets is not None:
        y = y + b_ets
    return y


def _ets_noise(ets: EtsDisplacement, current: ImageState, camera: CameraModel) -> np.ndarray:
    sigma = ets.noise_1sigma * camera.ifov * max(current.agl, 1.0)
    return sigma ** 2 * np.eye(2)


def velocimetry_measurement(ets: EtsDisplacement, current: ImageState, reference: ImageState,
                            camera: CameraModel, b_ets_hat: np.ndarray,
                            reference_valid: bool = True, t: float = 0.0) -> Measurement:
    """
    速度計量測：目前影像（tc 槽）相對 FIFO 參考影像（tr1/tr2 槽）

    H：tc 槽 +M、參考槽 −M、ψ 為 M[Δr̂]×、b_ETS 為 I，M = lateral·R_b^c·R̂_refᵀ
    參考影像只早一兩個週期，其快照姿態誤差視同目前的 ψ，兩端的力臂項因此相消。

    Raises:
        MeasurementRejected: 參考槽已失效或型態不符
    """
    if ets.modality is not EtsModality.VELOCIMETRY:
        raise MeasurementRejected(f"速度計量測收到 {ets.modality.value} 型態")
    if ets.ref_slot not in ('tr1', 'tr2') or not reference_valid:
        raise MeasurementRejected(f"參考影像槽 {ets.ref_slot} 無效")
    M = LATERAL @ camera.body_to_camera @ reference.attitude.T
    H = np.zeros((2, STATE_DIM))
    H[:, IDX.slot('tc')] = M
    H[:, IDX.slot(ets.ref_slot)] = -M
    H[:, IDX.psi] = M @ skew(current.position - reference.position)
    H[:, IDX.b_ETS] = np.eye(2)
    z = ets.dc_cam - predict_displacement(current, reference, camera, b_ets_hat)
    return Measurement(MeasurementKind.VELOCIMETRY, z, H, _ets_noise(ets, current, camera), t,
                       label=f"[{ets.ref_slot}]")


def breadcrumb_measurement(ets: EtsDisplacement, current: ImageState, crumb: ImageState,
                           camera: CameraModel, gamma1_hat: float = 0.0, gamma2_hat: float = 0.0,
                           crumb_loaded: bool = True, t: float = 0.0,
                           crumb_attitude_cov: Optional[np.ndarray] = None) -> Measurement:
    """
    麵包屑量測：沒有 b_ETS，麵包屑姿態為擷取時的快照

    歷史麵包屑存在 TOF1 軸向，目前位置以 R_tof2^tof1(γ₁, γ₂) 轉過去，
    H 因此多了 γ₁、γ₂ 欄（使絕對航向可觀測）。
    快照姿態的誤差與目前的 ψ 不同，ψ 只經由目前姿態的力臂項進入；
    快照姿態的不確定度 crumb_attitude_cov 以 G·Σ·Gᵀ 併入 R，
    G = M·[Δĉ + R̂_crumb·c^b]×。

    Raises:
        MeasurementRejected: 槽是空的或型態與槽不符
    """
    if not crumb_loaded:
        raise MeasurementRejected(f"麵包屑槽 {ets.ref_slot} 是空的")
    if ets.modality is EtsModality.VELOCIMETRY:
        raise MeasurementRejected("麵包屑量測收到速度計型態")
    expected = 'hbc' if ets.modality.is_historic else 'obc'
    if ets.ref_slot != expected:
        raise MeasurementRejected(f"{ets.modality.value} 應使用 {expected} 槽，收到 {ets.ref_slot}")

    M = LATERAL @ camera.body_to_camera @ crumb.attitude.T
    H = np.zeros((2, STATE_DIM))
    c_cur = camera_position(current, camera)
    lever_cur = current.attitude @ camera.lever_arm
    rot = np.eye(3)
    if ets.modality.is_historic:
        rot = heading_rotation(gamma1_hat, gamma2_hat)
        H[:, IDX.slot('tc')] = M @ rot
        H[:, IDX.slot('hbc')] = -M
        H[:, IDX.psi] = -M @ rot @ skew(lever_cur)
        H[:, IDX.gamma1] = (M @ r3_derivative(gamma1_hat) @ r3(-gamma2_hat) @ c_cur)[:, None]
        H[:, IDX.gamma2] = (-M @ r3(gamma1_hat) @ r3_derivative(-gamma2_hat) @ c_cur)[:, None]
        predicted = predict_displacement(current, crumb, camera, rotation=rot)
        kind = MeasurementKind.BREADCRUMB_HISTORIC
    else:
        H[:, IDX.slot('tc')] = M
        H[:, IDX.slot('obc')] = -M
        H[:, IDX.psi] = -M @ skew(lever_cur)
        predicted = predict_displacement(current, crumb, camera)
        kind = MeasurementKind.BREADCRUMB_ONLINE
    R = _ets_noise(ets, current, camera)
    if crumb_attitude_cov is not None:
        G = M @ skew(rot @ c_cur - crumb.position)
        R = R + G @ np.asarray(crumb_attitude_cov, dtype=float) @ G.T
        R = 0.5 * (R + R.T)
    z = ets.dc_cam - predicted
    return Measurement(kind, z, H, R, t, label=f"[{ets.ref_slot}]")


# ========== 零速度 / 零位置 ==========

def zero_velocity_measurement(nav: NavState, sigma: float, t: float = 0.0) -> Measurement:
    H = np.zeros((3, STATE_DIM))
    H[:, IDX.v] = np.eye(3)
    return Measurement(MeasurementKind.ZERO_VELOCITY, -nav.v, H, sigma ** 2 * np.eye(3), t)


def zero_position_measurement(nav: NavState, sigma: float, anchor: Optional[np.ndarray] = None,
                              t: float = 0.0) -> Measurement:
    anchor = np.zeros(3) if anchor is None else np.asarray(anchor, dtype=float)
    H = np.zeros((3, STATE_DIM))
    H[:, IDX.r] = np.eye(3)
    return Measurement(MeasurementKind.ZERO_POSITION, anchor - nav.r, H, sigma ** 2 * np.eye(3), t)


# ========== 數值 Jacobian ==========

def perturb(nav: NavState, x_aux: np.ndarray, dx: np.ndarray):
    """
    以誤差狀態擾動估計值：真值 = 估計值 ⊕ dx

    Returns:
        (NavState, np.ndarray, np.ndarray): 擾動後的狀態、名目值、姿態擾動 exp([ψ]×)
    """
    dx = np.asarray(dx, dtype=float)
    rot = rotvec_to_dcm(dx[IDX.psi])
    perturbed = replace(nav, r=nav.r + dx[IDX.r], v=nav.v + dx[IDX.v],
                        q=dcm_to_quat(rot @ nav.dcm))
    return perturbed, x_aux + dx, rot


def fd_steps() -> np.ndarray:
    """各狀態的差分步長"""
    steps = np.full(STATE_DIM, 1e-3)
    steps[IDX.psi] = 1e-6
    steps[IDX.n] = 1e-6
    steps[IDX.gamma1] = 1e-7
    steps[IDX.gamma2] = 1e-7
    for name in ('b_aA', 'b_aB', 'b_gA', 'b_gB'):
        steps[IDX[name]] = 1e-7
    return steps


def numerical_jacobian(fun: Callable[[np.ndarray], np.ndarray],
                       steps: Optional[np.ndarray] = None,
                       columns: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    中央差分 ∂fun/∂dx

    Args:
        fun: dx (47) → 預測值向量
        steps: 各狀態步長
        columns: 只計算這些欄（其餘為 0）
    """
    steps = fd_steps() if steps is None else steps
    y0 = np.atleast_1d(fun(np.zeros(STATE_DIM)))
    J = np.zeros((y0.size, STATE_DIM))
    for j in (range(STATE_DIM) if columns is None else columns):
        e = np.zeros(STATE_DIM)
        e[j] = steps[j]
        J[:, j] = (np.atleast_1d(fun(e)) - np.atleast_1d(fun(-e))) / (2.0 * steps[j])
    return J
