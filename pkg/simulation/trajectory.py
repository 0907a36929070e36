# -*- coding: utf-8 -*-
"""
真值軌跡產生
- 分段剖面：等速段與 smoothstep 速度/航向過渡段（速度 C¹ 連續）
- 自訂航點：夾持端點的三次樣條
- 姿態由所需比力方向加航向決定
- ideal_increments：與捷聯積分器互逆的理想 Δθ、Δv
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from navfilter.config import (SCOUT_TAKEOFF_ALT_M, TAKEOFF_BLEND_S, TAKEOFF_RATE, TERMINAL_RAMP_TOP_M,
                              Profile)
from navfilter.frames import (TitanConstants, dcm_to_quat, quat_conjugate, quat_multiply,
                              quat_to_dcm, quat_to_rotvec, rotvec_to_quat)
from navfilter.strapdown import mid_attitude

logger = logging.getLogger(__name__)

UP = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True)
class TruthState:
    """
    真值運動狀態（相對起飛原點的 NED 座標，隨 Titan 轉動）

    Attributes:
        t: 時間 (s)
        r / v / a: 位置、速度、加速度
        q: R_b^ned 四元數
        heading: 航向 (rad)
        heading_rate: 航向變化率 (rad/s)
    """
    t: float
    r: np.ndarray
    v: np.ndarray
    a: np.ndarray
    q: np.ndarray
    heading: float = 0.0
    heading_rate: float = 0.0

    @property
    def dcm(self) -> np.ndarray:
        return quat_to_dcm(self.q)


def attitude_from_force(specific_force: np.ndarray, heading: float) -> np.ndarray:
    """
    推力沿機體 −z：機體 z 軸取 −f/|f|，x 軸為航向方向在垂直 z 平面上的投影

    Returns:
        np.ndarray: R_b^ned
    """
    f = np.asarray(specific_force, dtype=float)
    z_b = -f / np.linalg.norm(f)
    h = np.array([np.cos(heading), np.sin(heading), 0.0])
    x_b = h - (h @ z_b) * z_b
    x_b /= np.linalg.norm(x_b)
    y_b = np.cross(z_b, x_b)
    return np.column_stack([x_b, y_b, z_b])


def ideal_increments(prev: TruthState, cur: TruthState,
                     constants: TitanConstants) -> Tuple[np.ndarray, np.ndarray]:
    """
    與 integrate_increments 互逆的理想機體增量

    Δθ = log(q_old* ⊗ q(Ω·dt) ⊗ q_new)
    Δv = C_midᵀ(v_new − v_old − (g − 2Ω×v_old − Ω×(Ω×r₀))·dt)
    """
    dt = cur.t - prev.t
    omega = constants.omega_ned
    dq = quat_multiply(quat_multiply(quat_conjugate(prev.q), rotvec_to_quat(omega * dt)), cur.q)
    dtheta = quat_to_rotvec(dq)
    accel = constants.gravity - 2.0 * np.cross(omega, prev.v) - constants.centripetal
    c_mid = mid_attitude(prev.q, dtheta)
    dv = c_mid.T @ (cur.v - prev.v - accel * dt)
    return dtheta, dv


# ========== 軌跡基底 ==========

class Trajectory:
    """
    軌跡基底：子類別提供 kinematics(t) → (r, v, a, heading, heading_rate)

    phases 為 (開始時間, 名稱)；takeoff_time / landing_time 為 None 表示沒有。
    """

    def __init__(self, constants: TitanConstants, duration: float):
        self.constants = constants
        self.duration = float(duration)
        self.phases: List[Tuple[float, str]] = []
        self.takeoff_time: Optional[float] = None
        self.landing_time: Optional[float] = None

    def kinematics(self, t: float):
        raise NotImplementedError

    def specific_force(self, r, v, a) -> np.ndarray:
        """NED 中需要的比力 a − g + 2Ω×v + Ω×(Ω×r₀)"""
        c = self.constants
        return a - c.gravity + 2.0 * np.cross(c.omega_ned, v) + c.centripetal

    def state(self, t: float) -> TruthState:
        r, v, a, heading, heading_rate = self.kinematics(t)
        dcm = attitude_from_force(self.specific_force(r, v, a), heading)
        return TruthState(float(t), r, v, a, dcm_to_quat(dcm), heading, heading_rate)

    def phase(self, t: float) -> str:
        name = self.phases[0][1] if self.phases else "flight"
        for start, label in self.phases:
            if t >= start - 1e-9:
                name = label
        return name

    def is_static(self, t: float) -> bool:
        """起飛前或降落後"""
        before = self.takeoff_time is not None and t < self.takeoff_time - 1e-9
        after = self.landing_time is not None and t > self.landing_time + 1e-9
        return before or after or (self.takeoff_time is None and self.landing_time is None
                                   and self.phase(t) == 'static')

    def sample(self, times: Sequence[float]) -> List[TruthState]:
        return [self.state(t) for t in times]


# ========== 分段剖面 ==========

@dataclass(frozen=True)
class Leg:
    """一段剖面：速度由 v0 以 smoothstep 變到 v0 + dv，航向同樣過渡"""
    t0: float
    T: float
    r0: np.ndarray
    v0: np.ndarray
    dv: np.ndarray
    heading0: float
    dheading: float
    name: str


class PiecewiseTrajectory(Trajectory):

    def __init__(self, legs: List[Leg], constants: TitanConstants):
        if not legs:
            raise ValueError("剖面至少需要一段")
        super().__init__(constants, legs[-1].t0 + legs[-1].T)
        self.legs = legs
        self._starts = np.array([leg.t0 for leg in legs])

    def kinematics(self, t: float):
        t = min(max(t, 0.0), self.duration)
        i = int(np.searchsorted(self._starts, t, side='right') - 1)
        leg = self.legs[max(i, 0)]
        tau = (t - leg.t0) / leg.T
        s = 3.0 * tau ** 2 - 2.0 * tau ** 3
        ds = 6.0 * tau * (1.0 - tau) / leg.T
        r = leg.r0 + leg.T * (leg.v0 * tau + leg.dv * (tau ** 3 - 0.5 * tau ** 4))
        v = leg.v0 + leg.dv * s
        a = leg.dv * ds
        heading = leg.heading0 + leg.dheading * s
        return r, v, a, float(heading), float(leg.dheading * ds)


class ProfileBuilder:
    """
    依序加入剖面段落

    Example:
        >>> b = ProfileBuilder(heading=np.pi / 2)
        >>> b.hold(10, 'ground')
        >>> b.blend(np.array([0, 0, -2.0]), 2, 'takeoff')
        >>> traj = b.build(TitanConstants())
    """

    def __init__(self, start: Optional[np.ndarray] = None, heading: float = 0.0):
        self.r = np.zeros(3) if start is None else np.asarray(start, dtype=float)
        self.v = np.zeros(3)
        self.heading = float(heading)
        self.t = 0.0
        self.legs: List[Leg] = []
        self.phases: List[Tuple[float, str]] = []
        self.takeoff_time: Optional[float] = None
        self.landing_time: Optional[float] = None

    @property
    def altitude(self) -> float:
        return float(-self.r[2])

    def _add(self, T: float, v1: np.ndarray, dheading: float, name: str):
        if not T > 0:
            raise ValueError(f"段落 '{name}' 的時間必須為正: {T}")
        v1 = np.asarray(v1, dtype=float)
        leg = Leg(self.t, float(T), self.r.copy(), self.v.copy(), v1 - self.v, self.heading,
                  float(dheading), name)
        if not self.phases or self.phases[-1][1] != name:
            self.phases.append((self.t, name))
        moving = bool(np.any(self.v != 0.0) or np.any(v1 != 0.0))
        if moving and self.takeoff_time is None:
            self.takeoff_time = self.t
        self.legs.append(leg)
        self.r = self.r + T * (self.v + 0.5 * leg.dv)
        if moving:
            # 只有停在地面才算降落，空中懸停不算
            touched_down = not np.any(v1 != 0.0) and abs(self.r[2]) < 1e-6
            self.landing_time = self.t + T if touched_down else None
        self.v = v1
        self.heading += dheading
        self.t += T

    def hold(self, duration: float, name: str = 'hold'):
        self._add(duration, self.v, 0.0, name)

    def blend(self, velocity: np.ndarray, duration: float, name: str = 'blend'):
        self._add(duration, velocity, 0.0, name)

    def turn(self, dheading: float, duration: float, name: str = 'turn'):
        self._add(duration, self.v, dheading, name)

    def cruise_distance(self, distance: float, name: str = 'cruise'):
        speed = float(np.linalg.norm(self.v))
        if speed <= 0:
            raise ValueError("靜止狀態無法以距離定義等速段")
        if distance > 0:
            self._add(distance / speed, self.v, 0.0, name)

    def leg_to(self, velocity: np.ndarray, blend_s: float, name: str, *,
               altitude: Optional[float] = None, distance: Optional[float] = None,
               exit_velocity: Optional[np.ndarray] = None, exit_blend_s: float = 0.0):
        """
        過渡到 velocity 後等速飛行，使下一段過渡（到 exit_velocity）結束時
        剛好到達 altitude 或走完水平距離 distance
        """
        velocity = np.asarray(velocity, dtype=float)
        exit_v = velocity if exit_velocity is None else np.asarray(exit_velocity, dtype=float)
        blend_in = 0.5 * blend_s * (self.v + velocity)
        blend_out = 0.5 * exit_blend_s * (velocity + exit_v)
        self.blend(velocity, blend_s, name)
        if altitude is not None:
            remaining = (altitude - self.altitude) + blend_out[2]
            rate = -velocity[2]
            if rate == 0 or remaining / rate < -1e-9:
                raise ValueError(f"段落 '{name}' 無法到達高度 {altitude} m："
                                 f"過渡段超出 {abs(remaining):.2f} m")
            steady = remaining / rate
        elif distance is not None:
            remaining = distance - np.linalg.norm(blend_in[:2]) - np.linalg.norm(blend_out[:2])
            steady = max(remaining, 0.0) / max(np.linalg.norm(velocity[:2]), 1e-9)
        else:
            steady = 0.0
        if steady > 1e-9:
            self.hold(steady, name)

    def build(self, constants: TitanConstants) -> PiecewiseTrajectory:
        traj = PiecewiseTrajectory(self.legs, constants)
        traj.phases = list(self.phases)
        traj.takeoff_time = self.takeoff_time
        traj.landing_time = self.landing_time
        return traj


# ========== 自訂航點 ==========

class SplineTrajectory(Trajectory):
    """航點 [t, n, e, d] 的三次樣條（端點速度為 0）"""

    def __init__(self, waypoints: Sequence[Sequence[float]], constants: TitanConstants,
                 heading: float = 0.0):
        pts = np.asarray(waypoints, dtype=float)
        super().__init__(constants, pts[-1, 0] - pts[0, 0])
        self.t0 = float(pts[0, 0])
        self.spline = CubicSpline(pts[:, 0] - self.t0, pts[:, 1:] - pts[0, 1:], axis=0,
                                  bc_type='clamped')
        self.heading = heading
        self.phases = [(0.0, 'custom')]
        self.takeoff_time = 0.0
        self.landing_time = self.duration

    def kinematics(self, t: float):
        t = min(max(t, 0.0), self.duration)
        r = self.spline(t)
        v = self.spline(t, 1)
        a = self.spline(t, 2)
        speed = np.linalg.norm(v[:2])
        heading = float(np.arctan2(v[1], v[0])) if speed > 0.5 else self.heading
        return r, v, a, heading, 0.0


# ========== 剖面 ==========

def _direction(heading: float) -> np.ndarray:
    return np.array([np.cos(heading), np.sin(heading), 0.0])


def _fpa_velocity(heading: float, speed: float, fpa: float) -> np.ndarray:
    """飛行路徑角 fpa（向上為正）"""
    return speed * (np.cos(fpa) * _direction(heading) + np.sin(fpa) * UP)


def gyrocompass_profile(params: dict, constants: TitanConstants) -> PiecewiseTrajectory:
    b = ProfileBuilder(heading=np.deg2rad(params.get('heading_deg', 30.0)))
    b.hold(float(params.get('duration_s', 3600.0)), 'static')
    return b.build(constants)


def scout_profile(params: dict, constants: TitanConstants) -> PiecewiseTrajectory:
    """地面 → 垂直起飛 → 以 FPA 爬升到巡航高度 → 巡航 → 下降到偵察高度 → 懸停 → 返航降落"""
    heading = np.deg2rad(params.get('heading_deg', 90.0))
    speed = float(params.get('speed_m_s', 10.0))
    fpa = np.deg2rad(params.get('climb_fpa_deg', 20.0))
    cruise_alt = float(params.get('cruise_alt_m', 400.0))
    scout_alt = float(params.get('scout_alt_m', 100.0))
    takeoff_alt = float(params.get('takeoff_alt_m', SCOUT_TAKEOFF_ALT_M))
    ground_s = float(params.get('ground_s', 10.0))
    blend = float(params.get('blend_s', 4.0))

    b = ProfileBuilder(heading=heading)
    b.hold(ground_s, 'ground')
    climb = _fpa_velocity(heading, speed, fpa)
    cruise = _fpa_velocity(heading, speed, 0.0)
    descend = _fpa_velocity(heading, speed, -fpa)
    b.leg_to(TAKEOFF_RATE * UP, TAKEOFF_BLEND_S, 'takeoff', altitude=takeoff_alt, exit_velocity=climb,
             exit_blend_s=blend)
    b.leg_to(climb, blend, 'climb', altitude=cruise_alt, exit_velocity=cruise, exit_blend_s=blend)
    b.leg_to(cruise, blend, 'cruise', distance=float(params.get('cruise_distance_m', 1000.0)),
             exit_velocity=descend, exit_blend_s=blend)
    b.leg_to(descend, blend, 'descend', altitude=scout_alt, exit_velocity=np.zeros(3),
             exit_blend_s=2.0 * blend)
    b.blend(np.zeros(3), 2.0 * blend, 'descend')
    b.hold(float(params.get('hover_s', 20.0)), 'scout')
    if params.get('return_leg', True):
        b.turn(np.pi, 10.0, 'turnaround')
        back = _fpa_velocity(heading + np.pi, speed, 0.0)
        home = float(np.linalg.norm(b.r[:2]))
        b.leg_to(back, blend, 'return', distance=home, exit_velocity=np.zeros(3), exit_blend_s=blend)
        b.blend(np.zeros(3), blend, 'return')
        _vertical_landing(b, TAKEOFF_RATE, 'landing')
    return b.build(constants)


def _vertical_landing(b: ProfileBuilder, rate: float, name: str):
    """以 rate 垂直下降到地面（高度 0）並停留"""
    down = np.array([0.0, 0.0, rate])
    b.leg_to(down, TAKEOFF_BLEND_S, name, altitude=0.0, exit_velocity=np.zeros(3),
             exit_blend_s=TAKEOFF_BLEND_S)
    b.blend(np.zeros(3), TAKEOFF_BLEND_S, name)
    b.hold(5.0, 'landed')


def terminal_descent_profile(params: dict, constants: TitanConstants) -> PiecewiseTrajectory:
    """
    80 m 懸停 → 1 m/s 下降到 20 m → 20 m 到 10 m 間漸降到 0.4 m/s → 0.4 m/s 著陸
    """
    start_alt = float(params.get('start_alt_m', 80.0))
    b = ProfileBuilder(start=np.array([0.0, 0.0, -start_alt]),
                       heading=np.deg2rad(params.get('heading_deg', 0.0)))
    b.hold(float(params.get('hover_s', 10.0)), 'hover')
    b.leg_to(np.array([0.0, 0.0, 1.0]), TAKEOFF_BLEND_S, 'descent', altitude=TERMINAL_RAMP_TOP_M)
    ramp_s = 2.0 * (TERMINAL_RAMP_TOP_M - 10.0) / (1.0 + 0.4)
    b.blend(np.array([0.0, 0.0, 0.4]), ramp_s, 'ramp')
    b.leg_to(np.array([0.0, 0.0, 0.4]), 1e-6, 'final', altitude=0.0,
             exit_velocity=np.zeros(3), exit_blend_s=2.0)
    b.blend(np.zeros(3), 2.0, 'final')
    b.hold(5.0, 'landed')
    traj = b.build(constants)
    traj.takeoff_time = 0.0
    return traj


def leapfrog_profiles(params: dict, constants: TitanConstants) -> Tuple[PiecewiseTrajectory,
                                                                      PiecewiseTrajectory]:
    """
    第一趟：O → S 偵察、懸停迴轉、返回 O 降落
    第二趟：O → S 再往前 overshoot，迴轉回到 S，垂直降落
    """
    heading = np.deg2rad(params.get('heading_deg', 90.0))
    speed = float(params.get('speed_m_s', 10.0))
    alt = float(params.get('cruise_alt_m', 100.0))
    distance = float(params.get('distance_m', 800.0))
    overshoot = float(params.get('overshoot_m', 300.0))
    ground_s = float(params.get('ground_s', 10.0))
    blend = 4.0

    def out_and_back(out_m: float, back_m: float) -> PiecewiseTrajectory:
        b = ProfileBuilder(heading=heading)
        b.hold(ground_s, 'ground')
        b.leg_to(TAKEOFF_RATE * UP, TAKEOFF_BLEND_S, 'takeoff', altitude=alt, exit_velocity=np.zeros(3),
                 exit_blend_s=TAKEOFF_BLEND_S)
        b.blend(np.zeros(3), TAKEOFF_BLEND_S, 'takeoff')
        b.leg_to(speed * _direction(heading), blend, 'outbound', distance=out_m,
                 exit_velocity=np.zeros(3), exit_blend_s=blend)
        b.blend(np.zeros(3), blend, 'outbound')
        b.hold(5.0, 'hover')
        b.turn(np.pi, 10.0, 'turnaround')
        b.leg_to(speed * _direction(heading + np.pi), blend, 'inbound', distance=back_m,
                 exit_velocity=np.zeros(3), exit_blend_s=blend)
        b.blend(np.zeros(3), blend, 'inbound')
        b.hold(5.0, 'hover')
        _vertical_landing(b, 1.0, 'terminal')
        return b.build(constants)

    return out_and_back(distance, distance), out_and_back(distance + overshoot, overshoot)


def build_trajectory(scenario, constants: TitanConstants) -> Trajectory:
    """
    依情境建立軌跡（leapfrog 回傳第一趟；第二趟用 leapfrog_profiles）
    """
    params = scenario.params
    if scenario.profile is Profile.GYROCOMPASS_STATIC:
        return gyrocompass_profile(params, constants)
    if scenario.profile is Profile.SCOUT:
        return scout_profile(params, constants)
    if scenario.profile is Profile.TERMINAL_DESCENT:
        return terminal_descent_profile(params, constants)
    if scenario.profile is Profile.LEAPFROG:
        return leapfrog_profiles(params, constants)[0]
    if scenario.profile is Profile.CUSTOM:
        return SplineTrajectory(scenario.waypoints, constants,
                                np.deg2rad(params.get('heading_deg', 0.0)))
    raise ValueError(f"未支援的剖面: {scenario.profile}")


def planned_path(trajectory: Trajectory, spacing_s: float = 1.0) -> List[Tuple[np.ndarray, float]]:
    """規劃路徑取樣 (位置, 航向)，供歷史麵包屑篩選"""
    times = np.arange(0.0, trajectory.duration + 1e-9, spacing_s)
    out = []
    for t in times:
        r, _, _, heading, _ = trajectory.kinematics(t)
        out.append((r, heading))
    return out
