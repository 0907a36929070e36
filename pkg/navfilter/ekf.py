# -*- coding: utf-8 -*-
"""
誤差狀態 EKF 核心

- 共變異數傳播（慣性誤差動態 + FOGM + 靜態/增廣狀態）
- 純量序列量測更新（先以 R 的 Cholesky 去相關，含創新值閘門）
- 影像位置增廣與 FIFO 移動
- 起飛時的航向轉移
- 修正量回授給主 Navigator

誤差慣例：dx = 真值 − 估計值；姿態誤差 ψ 定義於參考座標，
C_true = (I + [ψ]×)·Ĉ。
"""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from scipy import linalg

from .errors import CovarianceError
from .frames import TitanConstants, quat_multiply, quat_normalize, rotvec_to_quat, skew
from .state import FOGM_GROUPS, STATE_DIM, STATE_INDEX as IDX, ErrorState, FogmSpec
from .strapdown import ImuId, Navigator, NavState, switch_primary

logger = logging.getLogger(__name__)

# 單次姿態修正的小角度上限
MAX_PSI_STEP = 0.1

# 共變異數對角線容許的負值（相對最大對角線）
NEGATIVE_DIAG_TOL = 1e-9

# 非慣性狀態（在 x_aux 中保存名目值）
AUX_START = IDX.rho.start

# 名目值不隨 FOGM 衰減的群組
NON_DECAYING = ('d', 'rho')


class MeasurementKind(Enum):
    """量測種類"""
    GYROCOMPASS = "gyrocompass"
    IMU_NULLSPACE = "imu_nullspace"
    PRESSURE_A = "pressure_A"
    PRESSURE_B = "pressure_B"
    LIDAR_LOS = "lidar_los"
    VELOCIMETRY = "velocimetry"
    BREADCRUMB_ONLINE = "breadcrumb_online"
    BREADCRUMB_HISTORIC = "breadcrumb_historic"
    ZERO_VELOCITY = "zero_velocity"
    ZERO_POSITION = "zero_position"


@dataclass(frozen=True)
class Measurement:
    """
    一筆已線性化的量測

    Attributes:
        kind: 量測種類
        z: 殘差 y − ŷ
        H: ∂ŷ/∂dx，欄數 47
        R: 量測共變異數（對稱正定）
        t_valid: 量測有效時間 (s)
        label: 細項說明（例如 IMU 代號、LOS 名稱）
        underweight: 個別量測的 underweight 覆寫
    """
    kind: MeasurementKind
    z: np.ndarray
    H: np.ndarray
    R: np.ndarray
    t_valid: float = 0.0
    label: str = ""
    underweight: Optional[float] = None

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if H.shape != (z.size, STATE_DIM):
            raise ValueError(f"H 形狀 {H.shape} 與殘差長度 {z.size} / 狀態維度 {STATE_DIM} 不符")
        if R.shape != (z.size, z.size):
            raise ValueError(f"R 形狀 {R.shape} 與殘差長度 {z.size} 不符")
        if not np.allclose(R, R.T, rtol=1e-10, atol=0.0):
            raise ValueError("R 必須對稱")
        object.__setattr__(self, 'z', z)
        object.__setattr__(self, 'H', H)
        object.__setattr__(self, 'R', R)

    @property
    def rows(self) -> int:
        return self.z.size


@dataclass(frozen=True)
class UpdateResult:
    """量測更新結果"""
    P: np.ndarray
    dx: np.ndarray
    accepted: bool
    reason: str = ""
    normalized_innovation: Optional[np.ndarray] = None


# ========== 過程模型 ==========

@dataclass(frozen=True)
class ProcessModel:
    """
    各狀態群組的 FOGM 參數與慣性雜訊

    Attributes:
        fogm: 群組名稱 → FogmSpec（向量群組各分量共用）
        accel_vrw: 速度隨機漫步 (m/s/√s)
        gyro_arw: 角度隨機漫步 (rad/√s)
        lidar_velocity_gate_m: 低於此高度才啟用 d 與速度的耦合
        gyro_install: 陀螺刻度因子與安裝誤差（無因次）
        install_correlation_s: 安裝誤差造成的姿態漂移視為白雜訊時的相關時間 (s)
    """
    fogm: Dict[str, FogmSpec]
    accel_vrw: float = 0.0
    gyro_arw: float = 0.0
    lidar_velocity_gate_m: float = 60.0
    gyro_install: float = 0.0
    install_correlation_s: float = 0.0


@dataclass(frozen=True)
class PropagationContext:
    """一個濾波週期的線性化點"""
    f_body: np.ndarray
    primary: ImuId = ImuId.A
    omega_body: np.ndarray = field(default_factory=lambda: np.zeros(3))
    alignment: np.ndarray = field(default_factory=lambda: np.eye(3))
    constants: TitanConstants = field(default_factory=TitanConstants)
    altitude_agl: float = np.inf
    ground_normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))


def process_model(config, sensors=None, horizontal_speed: float = 0.0,
                  altitude_agl: float = 100.0) -> ProcessModel:
    """
    由設定建立當下的過程模型

    b_ETS 的 τ 取「相關到同一張參考影像的時間」D_max / v_h（有下限），
    坡度 n 與地面距離 d 的 τ 都隨水平速度換算。
    加速度計偏差的穩態 σ 併入重力下的刻度因子與安裝誤差（靜止時與偏差無法區分）。
    """
    sensors = sensors or config.sensors
    fogm_cfg = config.fogm
    d_max = config.ets.separation_fraction * max(altitude_agl, 1.0)
    speed = max(horizontal_speed, 1e-6)
    accel = FogmSpec(sensors.accel_bias_tau_s,
                     sensors.effective_accel_bias(config.environment.gravity_m_s2))
    gyro = FogmSpec(sensors.gyro_bias_tau_s, sensors.gyro_bias)
    baro = FogmSpec(fogm_cfg.b_p.tau_s, fogm_cfg.b_p.sigma)
    specs = {
        'rho': FogmSpec(fogm_cfg.rho.tau_s, fogm_cfg.rho.sigma),
        'd': FogmSpec(fogm_cfg.d.tau(horizontal_speed), fogm_cfg.d.sigma),
        'b_aA': accel, 'b_aB': accel,
        'b_gA': gyro, 'b_gB': gyro,
        'b_pA': baro, 'b_pB': baro,
        'b_ETS': FogmSpec(max(fogm_cfg.b_ets.tau_min_s, d_max / speed), fogm_cfg.b_ets.sigma),
        'dH': FogmSpec(fogm_cfg.dH.tau_s, config.pressure.scale_height_sigma),
        'n': FogmSpec(fogm_cfg.slope.tau(horizontal_speed), fogm_cfg.slope.sigma),
    }
    return ProcessModel(fogm=specs, accel_vrw=sensors.accel_vrw, gyro_arw=sensors.gyro_arw,
                        lidar_velocity_gate_m=config.filter.lidar_velocity_gate_m,
                        gyro_install=sensors.gyro_install,
                        install_correlation_s=config.filter.install_correlation_s)


def static_process_model() -> ProcessModel:
    """所有非慣性狀態近似靜態、無雜訊（測試與分析用）"""
    return ProcessModel(fogm={name: FogmSpec(1e300, 0.0) for name in FOGM_GROUPS})


# ========== 傳播 ==========

def continuous_dynamics(nav: NavState, ctx: PropagationContext, d_coupling: bool) -> np.ndarray:
    """連續時間誤差動態矩陣 F（不含 FOGM 對角線）"""
    F = np.zeros((STATE_DIM, STATE_DIM))
    dcm = nav.dcm
    omega = ctx.constants.omega_ned
    b_a, b_g = IDX.bias_groups(ctx.primary)
    dcm_imu = dcm @ ctx.alignment

    F[IDX.r, IDX.v] = np.eye(3)
    F[IDX.v, IDX.v] = -2.0 * skew(omega)
    F[IDX.v, IDX.psi] = -skew(dcm @ ctx.f_body)
    F[IDX.v, b_a] = -dcm_imu
    F[IDX.psi, IDX.psi] = -skew(omega)
    F[IDX.psi, b_g] = -dcm_imu
    if d_coupling:
        F[IDX.d, IDX.v] = -ctx.ground_normal
    return F


def build_transition(nav: NavState, dt: float, model: ProcessModel, ctx: PropagationContext):
    """
    離散狀態轉移 Φ 與過程雜訊 Q_d

    Φ = I + F·dt + ½(F·dt)²，FOGM 對角線以 exp(−dt/τ) 取代。
    陀螺安裝誤差在轉動時的姿態漂移以 (δ·|ω|)²·dt·τ_c 併入 ψ 的雜訊。

    Returns:
        (np.ndarray, np.ndarray): Φ, Q_d
    """
    d_coupling = ctx.altitude_agl < model.lidar_velocity_gate_m
    Fdt = continuous_dynamics(nav, ctx, d_coupling) * dt
    Phi = np.eye(STATE_DIM) + Fdt + 0.5 * (Fdt @ Fdt)
    Q = np.zeros((STATE_DIM, STATE_DIM))

    vrw2 = model.accel_vrw ** 2
    Q[IDX.v, IDX.v] = vrw2 * dt * np.eye(3)
    Q[IDX.r, IDX.r] = vrw2 * dt ** 3 / 3.0 * np.eye(3)
    Q[IDX.r, IDX.v] = Q[IDX.v, IDX.r] = vrw2 * dt ** 2 / 2.0 * np.eye(3)
    rate = float(np.linalg.norm(ctx.omega_body))
    q_psi = model.gyro_arw ** 2 + (model.gyro_install * rate) ** 2 * model.install_correlation_s
    Q[IDX.psi, IDX.psi] = q_psi * dt * np.eye(3)

    for name in FOGM_GROUPS:
        spec = model.fogm.get(name)
        if spec is None:
            continue
        phi, qd = spec.discrete(dt)
        idx = IDX.indices(name)
        Phi[idx, idx] = phi
        Q[idx, idx] = qd
    return Phi, Q


def propagate_covariance(P: np.ndarray, nav: NavState, dt: float, model: ProcessModel,
                         ctx: Optional[PropagationContext] = None) -> np.ndarray:
    """
    P' = Φ P Φᵀ + Q

    Raises:
        ValueError: dt ≤ 0
        CovarianceError: 結果含非有限值
    """
    if not dt > 0:
        raise ValueError(f"傳播時間必須為正: {dt}")
    ctx = ctx or PropagationContext(f_body=-nav.dcm.T @ TitanConstants().gravity)
    Phi, Q = build_transition(nav, dt, model, ctx)
    P_new = Phi @ P @ Phi.T + Q
    P_new = 0.5 * (P_new + P_new.T)
    check_covariance(P_new, t=nav.t)
    return P_new


def check_covariance(P: np.ndarray, t: Optional[float] = None):
    """非有限值或明顯為負的對角線 → CovarianceError"""
    diag = np.diag(P)
    labels = IDX.labels()
    if not np.all(np.isfinite(P)):
        bad = sorted({labels[i] for i in np.argwhere(~np.isfinite(P))[:, 0]})
        raise CovarianceError(f"共變異數含非有限值: {', '.join(bad)}",
                              snapshot={'t': t, 'states': bad, 'diag': diag.tolist()})
    tol = NEGATIVE_DIAG_TOL * max(1.0, float(np.max(diag)))
    negative = np.where(diag < -tol)[0]
    if negative.size:
        bad = [labels[i] for i in negative]
        raise CovarianceError(f"共變異數對角線為負: {', '.join(bad)}",
                              snapshot={'t': t, 'states': bad, 'diag': diag.tolist()})


# ========== 量測更新 ==========

def update(P: np.ndarray, dx: np.ndarray, m: Measurement, underweight: float = 1.0,
           gate_sigma: Optional[float] = 5.0) -> UpdateResult:
    """
    純量序列 EKF 更新

    1. R = L Lᵀ，z̃ = L⁻¹z、H̃ = L⁻¹H，使各列互相獨立
    2. 任一列 |ν_i|/√S_i 超過 gate_sigma 就拒絕整筆量測
    3. 逐列以 Joseph 形式 P = (I − K h)P(I − K h)ᵀ + K Kᵀ 更新，最後強制對稱

    Args:
        P: 共變異數
        dx: 目前誤差狀態
        m: 量測
        underweight: R 的放大倍數（m.underweight 優先）
        gate_sigma: 閘門（None 表示不檢查）

    Returns:
        UpdateResult
    """
    factor = m.underweight if m.underweight is not None else underweight
    try:
        L = linalg.cholesky(factor * m.R, lower=True)
    except linalg.LinAlgError:
        return UpdateResult(P, dx, False, "R 非正定")
    z = linalg.solve_triangular(L, m.z, lower=True)
    H = linalg.solve_triangular(L, m.H, lower=True)

    innovation = z - H @ dx
    S = np.einsum('ij,jk,ik->i', H, P, H) + 1.0
    if np.any(~np.isfinite(S)) or np.any(S <= 0):
        return UpdateResult(P, dx, False, "S 病態")
    normalized = innovation / np.sqrt(S)
    if gate_sigma is not None and np.any(np.abs(normalized) > gate_sigma):
        worst = float(np.max(np.abs(normalized)))
        return UpdateResult(P, dx, False, f"閘門拒絕 ({worst:.1f}σ)", normalized)

    eye = np.eye(P.shape[0])
    dx = dx.copy()
    for i in range(m.rows):
        h = H[i]
        if not np.any(h):
            continue
        PHt = P @ h
        s = float(h @ PHt) + 1.0
        K = PHt / s
        dx += K * (z[i] - h @ dx)
        IKH = eye - np.outer(K, h)
        P = IKH @ P @ IKH.T + np.outer(K, K)
    P = 0.5 * (P + P.T)
    return UpdateResult(P, dx, True, "", normalized)


# ========== 增廣 ==========

def augment_image_state(P: np.ndarray, dx: np.ndarray, slot: str,
                        nav: Optional[NavState] = None):
    """
    把目前的載具位置誤差複製到影像槽（相關係數 1）

    只複製位置，不複製姿態。

    Returns:
        (np.ndarray, np.ndarray): P', dx'
    """
    return _copy_block(P, dx, IDX.r, IDX.slot(slot))


def move_slot(P: np.ndarray, dx: np.ndarray, src: str, dst: str):
    """FIFO 移動 src → dst，保留所有交叉共變異數"""
    return _copy_block(P, dx, IDX.slot(src), IDX.slot(dst))


def clear_slot(P: np.ndarray, dx: np.ndarray, slot: str):
    """槽失效：歸零對應列與欄"""
    s = IDX.slot(slot)
    P = P.copy()
    dx = dx.copy()
    P[s, :] = 0.0
    P[:, s] = 0.0
    dx[s] = 0.0
    return P, dx


def _copy_block(P, dx, src: slice, dst: slice):
    P = P.copy()
    dx = dx.copy()
    P[dst, :] = P[src, :]
    P[:, dst] = P[:, src]
    dx[dst] = dx[src]
    return P, dx


def transfer_heading(P: np.ndarray, dx: np.ndarray):
    """
    起飛定義 TOF 時，把 ψ_z 的不確定度轉給 γ₂ 並重設 ψ_z

    v_tof = r3(γ)·v_ned，而 TOF 取估計航向，故 γ₂ = −ψ_z。
    """
    T = np.eye(STATE_DIM)
    psi_z = IDX.psi.start + 2
    gamma2 = IDX.gamma2.start
    T[gamma2, :] = 0.0
    T[gamma2, psi_z] = -1.0
    T[psi_z, :] = 0.0
    P_new = T @ P @ T.T
    return 0.5 * (P_new + P_new.T), T @ dx


# ========== 修正 ==========

def apply_corrections(nav: NavState, dx: np.ndarray):
    """
    把 r、v、ψ 修正到整值狀態，回傳新狀態與歸零的 dx

    |ψ| ≥ 0.1 rad 時分成多個相等的小步套用並記錄警告。
    """
    dx = np.asarray(dx, dtype=float)
    psi = dx[IDX.psi]
    angle = float(np.linalg.norm(psi))
    q = nav.q
    if angle > 0.0:
        pieces = 1
        while angle / pieces >= MAX_PSI_STEP:
            pieces *= 2
        if pieces > 1:
            logger.warning(f"姿態修正 {angle:.3f} rad 過大，分 {pieces} 步套用")
        step = rotvec_to_quat(psi / pieces)
        for _ in range(pieces):
            q = quat_multiply(step, q)
        q = quat_normalize(q)
    corrected = replace(nav, r=nav.r + dx[IDX.r], v=nav.v + dx[IDX.v], q=q)
    return corrected, np.zeros_like(dx)


# ========== 初始共變異數 ==========

def initial_covariance(config, heading_sigma: Optional[float] = None,
                       tilt_sigma: Optional[float] = None,
                       velocity_sigma: Optional[float] = None,
                       position_sigma: Optional[float] = None,
                       sensors=None) -> np.ndarray:
    """
    依設定建立對角初始共變異數

    偏差類取其 FOGM 穩態值；影像槽與 γ₂ 為 0（尚未定義）。
    """
    init = config.initial_sigma
    sensors = sensors or config.sensors
    fogm = config.fogm
    sig = np.zeros(STATE_DIM)
    sig[IDX.r] = init.position_m if position_sigma is None else position_sigma
    sig[IDX.v] = init.velocity_m_s if velocity_sigma is None else velocity_sigma
    tilt = np.deg2rad(init.tilt_deg) if tilt_sigma is None else tilt_sigma
    heading = np.deg2rad(init.heading_deg) if heading_sigma is None else heading_sigma
    sig[IDX.psi] = [tilt, tilt, heading]
    sig[IDX.rho] = init.rho_m
    sig[IDX.d] = init.d_m
    sig[IDX.b_aA] = sig[IDX.b_aB] = sensors.effective_accel_bias(config.environment.gravity_m_s2)
    sig[IDX.b_gA] = sig[IDX.b_gB] = sensors.gyro_bias
    sig[IDX.b_pA] = sig[IDX.b_pB] = fogm.b_p.sigma
    sig[IDX.b_ETS] = fogm.b_ets.sigma
    sig[IDX.dH] = config.pressure.scale_height_sigma
    sig[IDX.n] = np.sin(np.deg2rad(init.slope_deg))
    sig[IDX.gamma1] = np.deg2rad(init.gamma_deg)
    return np.diag(sig ** 2)


def ground_normal(n: np.ndarray) -> np.ndarray:
    """由水平分量 (n_n, n_e) 組成朝下的單位法向量"""
    nz2 = 1.0 - n[0] ** 2 - n[1] ** 2
    return np.array([n[0], n[1], np.sqrt(max(nz2, 1e-12))])


# ========== 濾波器 ==========

@dataclass
class SlotRecord:
    """影像槽的附帶資料（位置名目值在 x_aux）"""
    valid: bool = False
    t: float = float('nan')
    attitude: Optional[np.ndarray] = None    # R_b^tof 快照
    agl: float = float('nan')
    crumb: Optional[object] = None
    attitude_cov: Optional[np.ndarray] = None    # 快照時的 P_ψψ


class NavFilter:
    """
    47 狀態誤差 EKF

    持有兩台 Navigator、誤差狀態 (dx, P) 與非慣性狀態的名目值 x_aux。
    每個濾波週期依序呼叫 propagate → process（多筆）→ apply_corrections。
    """

    def __init__(self, config, initial: NavState, P0: np.ndarray,
                 constants: Optional[TitanConstants] = None,
                 primary: ImuId = ImuId.A, sensors=None):
        self.config = config
        self.constants = constants or config.constants()
        self.sensors = sensors or config.sensors
        self.navigators = {
            imu: Navigator(imu, initial, config.imu.alignment(imu.value), self.constants,
                           config.filter.reorthonormalize_every)
            for imu in ImuId
        }
        self.primary = primary
        self.state = ErrorState(np.zeros(STATE_DIM), np.array(P0, dtype=float))
        self.x_aux = np.zeros(STATE_DIM)
        self.x_aux[IDX.d] = 0.0
        self.slots: Dict[str, SlotRecord] = {}
        self.covariance_only = False
        self.gate_sigma = config.filter.gate_sigma
        self.underweight = config.filter.underweight
        self.last_correction = (np.zeros(3), np.zeros(3))
        self.events: List[dict] = []
        self.t = initial.t
        self._r_prev = initial.r.copy()
        self._dv_sum = np.zeros(3)
        self._dtheta_sum = np.zeros(3)
        self._dv_time = 0.0

    # ----- 存取 -----
    @property
    def nav(self) -> NavState:
        return self.navigators[self.primary].state

    @property
    def P(self) -> np.ndarray:
        return self.state.P

    @property
    def backup(self) -> ImuId:
        return self.primary.other

    def sigma(self, name: str) -> np.ndarray:
        return self.state.sigma(name)

    def normal(self) -> np.ndarray:
        return ground_normal(self.x_aux[IDX.n])

    def altitude_agl(self) -> float:
        return float(self.x_aux[IDX.d])

    def log_event(self, kind: str, detail: str = ""):
        self.events.append({'t': round(float(self.t), 6), 'kind': kind, 'detail': detail})

    # ----- IMU -----
    def imu_step(self, sample):
        nav = self.navigators[sample.imu_id]
        dt = sample.t - nav.state.t
        nav.step(sample)
        if sample.imu_id is self.primary:
            self._dv_sum += nav.alignment @ (sample.dv - nav.bias.accel * dt)
            self._dtheta_sum += nav.alignment @ (sample.dtheta - nav.bias.gyro * dt)
            self._dv_time += dt

    def set_nominal(self, name: str, value):
        self.x_aux[IDX[name]] = value

    # ----- 傳播 -----
    def reset_pose(self, state: NavState):
        """兩台 Navigator 都設為給定狀態（共變異數分析沿參考軌跡時使用）"""
        for nav in self.navigators.values():
            nav.sync_pose(state)
        self._r_prev = state.r.copy()

    def propagate(self, t: float, f_body: Optional[np.ndarray] = None,
                  omega_body: Optional[np.ndarray] = None):
        """
        把誤差狀態推進到 t（Navigator 已由 imu_step 推進）

        Args:
            t: 目標時間
            f_body: 線性化用的機體比力；None 時取本週期主 IMU 的平均值
            omega_body: 機體角速度；None 時取本週期主 IMU 的平均值
        """
        dt = t - self.t
        if dt <= 0:
            return
        nav = self.nav
        if f_body is not None:
            f_body = np.asarray(f_body, dtype=float)
        elif self._dv_time > 0:
            f_body = self._dv_sum / self._dv_time
        else:
            f_body = nav.dcm.T @ self.constants.static_specific_force()
        if omega_body is not None:
            omega_body = np.asarray(omega_body, dtype=float)
        elif self._dv_time > 0:
            omega_body = self._dtheta_sum / self._dv_time
        else:
            omega_body = np.zeros(3)
        normal = self.normal()
        agl = self.altitude_agl()
        model = process_model(self.config, self.sensors, float(np.linalg.norm(nav.v[:2])), agl)
        ctx = PropagationContext(f_body=f_body, primary=self.primary, omega_body=omega_body,
                                 alignment=self.navigators[self.primary].alignment,
                                 constants=self.constants, altitude_agl=agl,
                                 ground_normal=normal)
        Phi, Q = build_transition(nav, dt, model, ctx)
        P = Phi @ self.state.P @ Phi.T + Q
        P = 0.5 * (P + P.T)
        check_covariance(P, t)
        self.state.P = P
        self.state.dx = Phi @ self.state.dx

        for name in FOGM_GROUPS:
            if name in NON_DECAYING:
                continue
            phi, _ = model.fogm[name].discrete(dt)
            self.x_aux[IDX[name]] *= phi
        self.x_aux[IDX.d] -= float(normal @ (nav.r - self._r_prev))
        self._r_prev = nav.r.copy()
        self._dv_sum = np.zeros(3)
        self._dtheta_sum = np.zeros(3)
        self._dv_time = 0.0
        self.t = t

    # ----- 更新 -----
    def process(self, m: Measurement):
        """處理一筆量測；被拒絕時記錄事件"""
        gate = self.gate_sigma
        if self.covariance_only:
            m = replace(m, z=np.zeros(m.rows))
            gate = None
        result = update(self.state.P, self.state.dx, m, self.underweight, gate)
        if result.accepted:
            check_covariance(result.P, self.t)
            self.state.P = result.P
            self.state.dx = result.dx
        else:
            logger.debug(f"t={self.t:.2f} 量測 {m.kind.value}{m.label} 被拒絕: {result.reason}")
            self.log_event('rejected', f"{m.kind.value}{m.label}: {result.reason}")
        return result

    def apply_corrections(self):
        """
        修正主 Navigator、名目值與兩台 Navigator 的偏差，並同步備援姿態

        Returns:
            (np.ndarray, np.ndarray): 本次位置與速度修正量
        """
        dx = self.state.dx
        dr, dv = dx[IDX.r].copy(), dx[IDX.v].copy()
        if np.any(dx):
            primary = self.navigators[self.primary]
            primary.state, _ = apply_corrections(primary.state, dx)
            self.x_aux[AUX_START:] += dx[AUX_START:]
            self.state.dx = np.zeros(STATE_DIM)
            self._r_prev = self._r_prev + dr
        for imu, nav in self.navigators.items():
            b_a, b_g = IDX.bias_groups(imu)
            nav.set_bias(self.x_aux[b_g], self.x_aux[b_a])
        self.navigators[self.backup].sync_pose(self.nav)
        self.last_correction = (dr, dv)
        return dr, dv

    # ----- 影像槽 -----
    def augment(self, slot: str):
        self.state.P, self.state.dx = augment_image_state(self.state.P, self.state.dx, slot, self.nav)
        self.x_aux[IDX.slot(slot)] = self.nav.r
        self.slots[slot] = SlotRecord(True, self.t, self.nav.dcm, self.altitude_agl(),
                                      attitude_cov=self.state.block('psi').copy())

    def move_slot(self, src: str, dst: str):
        self.state.P, self.state.dx = move_slot(self.state.P, self.state.dx, src, dst)
        self.x_aux[IDX.slot(dst)] = self.x_aux[IDX.slot(src)]
        self.slots[dst] = replace(self.slots.get(src, SlotRecord()))

    def clear_slot(self, slot: str):
        self.state.P, self.state.dx = clear_slot(self.state.P, self.state.dx, slot)
        self.x_aux[IDX.slot(slot)] = 0.0
        self.slots[slot] = SlotRecord()

    def slot(self, slot: str) -> SlotRecord:
        return self.slots.get(slot, SlotRecord())

    def slot_position(self, slot: str) -> np.ndarray:
        return self.x_aux[IDX.slot(slot)].copy()

    # ----- 航向 / 故障 -----
    def transfer_heading(self):
        self.state.P, self.state.dx = transfer_heading(self.state.P, self.state.dx)
        self.log_event('heading_transfer', f"σ_γ2 = {np.degrees(self.sigma('gamma2')[0]):.3f}°")
        logger.info(f"TOF 定義完成，航向不確定度轉移至 γ₂ ({np.degrees(self.sigma('gamma2')[0]):.3f}°)")

    def handle_fault(self, status):
        """依同位檢查結果切換主 IMU；雙故障時往上丟出"""
        new_status = switch_primary(replace(status, primary=self.primary))
        if new_status.primary is not self.primary:
            self.primary = new_status.primary
            self.log_event('primary_switch', f"primary → {self.primary.value}")
        return new_status

    def snapshot(self) -> dict:
        return {'t': self.t, 'primary': self.primary.value,
                'diag': np.diag(self.state.P).tolist(), 'events': list(self.events)}
