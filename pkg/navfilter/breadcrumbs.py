# -*- coding: utf-8 -*-
"""
麵包屑管理
- 儲存門檻判定
- 資料庫（JSON lines，filelock 保護單一寫入者）
- 以虛擬量測把資料庫麵包屑換入濾波器槽（保留載具–地標交叉共變異數結構）
- 飛行間重新錨定到新的起飛原點
- 參考影像 / 麵包屑選擇
"""
import json
import logging
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
from filelock import FileLock

from .errors import BreadcrumbError
from .frames import dcm_to_quat, heading_of, quat_normalize, quat_to_dcm, rotvec_to_dcm
from .state import STATE_DIM, STATE_INDEX as IDX

logger = logging.getLogger(__name__)

DB_FORMAT = "titan-nav-breadcrumbs"
DB_VERSION = 1
DB_UNITS = {'r_tof': 'm', 'attitude': 'quaternion [w,x,y,z] body->tof',
            'height_agl': 'm', 'P_pos': 'm^2', 'heading_at_capture': 'rad', 't': 's',
            'P_att': 'rad^2'}

# 目標矩陣邊界的相對餘裕
PSD_MARGIN = 1e-9


class CrumbModality(Enum):
    ONLINE = "online"
    HISTORIC = "historic"
    TERMINAL = "terminal"


@dataclass
class Breadcrumb:
    """
    已存的導航影像紀錄

    Attributes:
        id: 唯一編號（依擷取順序遞增）
        flight_id: 擷取時的飛行編號
        r_tof: 位置估計 (m)
        attitude: R_b^tof 四元數
        height_agl: 擷取時的離地高度 (m)
        P_pos: 3×3 位置共變異數 (m²)
        modality: online / historic / terminal
        heading_at_capture: 擷取時航向 (rad)
        t: 擷取時間 (s)
        P_att: 3×3 姿態共變異數 (rad²)；舊資料庫沒有此欄
    """
    id: int
    flight_id: int
    r_tof: np.ndarray
    attitude: np.ndarray
    height_agl: float
    P_pos: np.ndarray
    modality: CrumbModality = CrumbModality.ONLINE
    heading_at_capture: float = 0.0
    t: float = 0.0
    P_att: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.P_att is not None:
            self.P_att = np.asarray(self.P_att, dtype=float).reshape(3, 3)
        if isinstance(self.modality, str):
            self.modality = CrumbModality(self.modality)
        self.r_tof = np.asarray(self.r_tof, dtype=float).reshape(3)
        self.attitude = quat_normalize(self.attitude)
        self.P_pos = np.asarray(self.P_pos, dtype=float).reshape(3, 3)
        if not np.allclose(self.P_pos, self.P_pos.T, rtol=1e-9, atol=1e-12):
            raise ValueError(f"麵包屑 {self.id} 的 P_pos 不對稱")
        if np.min(np.linalg.eigvalsh(self.P_pos)) < -1e-9 * max(1.0, np.max(np.abs(self.P_pos))):
            raise ValueError(f"麵包屑 {self.id} 的 P_pos 不是半正定")

    @property
    def dcm(self) -> np.ndarray:
        return quat_to_dcm(self.attitude)

    def to_record(self) -> dict:
        return {
            'type': 'crumb', 'id': self.id, 'flight_id': self.flight_id,
            'r_tof': self.r_tof.tolist(), 'attitude': self.attitude.tolist(),
            'height_agl': self.height_agl, 'P_pos': self.P_pos.tolist(),
            'modality': self.modality.value, 'heading_at_capture': self.heading_at_capture,
            't': self.t,
            **({'P_att': self.P_att.tolist()} if self.P_att is not None else {}),
        }

    @classmethod
    def from_record(cls, rec: dict) -> 'Breadcrumb':
        return cls(id=int(rec['id']), flight_id=int(rec['flight_id']), r_tof=rec['r_tof'],
                   attitude=rec['attitude'], height_agl=float(rec['height_agl']),
                   P_pos=rec['P_pos'], modality=rec['modality'],
                   heading_at_capture=float(rec['heading_at_capture']), t=float(rec['t']),
                   P_att=rec.get('P_att'))


@dataclass
class LandingRecord:
    """
    降落時的估計位置與完整共變異數快照

    crumb_id 是降落時載入濾波器 slot 槽的麵包屑（bc_f）。
    """
    r_tof: np.ndarray
    P: np.ndarray
    t: float
    crumb_id: Optional[int] = None
    slot: str = 'obc'
    heading: float = 0.0
    flight_id: int = 1

    def __post_init__(self):
        self.r_tof = np.asarray(self.r_tof, dtype=float).reshape(3)
        self.P = np.asarray(self.P, dtype=float).reshape(STATE_DIM, STATE_DIM)

    def to_record(self) -> dict:
        return {'type': 'landing', 'r_tof': self.r_tof.tolist(), 'P': self.P.tolist(),
                't': self.t, 'crumb_id': self.crumb_id, 'slot': self.slot,
                'heading': self.heading, 'flight_id': self.flight_id}

    @classmethod
    def from_record(cls, rec: dict) -> 'LandingRecord':
        return cls(r_tof=rec['r_tof'], P=rec['P'], t=float(rec['t']), crumb_id=rec.get('crumb_id'),
                   slot=rec.get('slot', 'obc'), heading=float(rec.get('heading', 0.0)),
                   flight_id=int(rec.get('flight_id', 1)))


@dataclass
class BreadcrumbDb:
    """依擷取順序排列的麵包屑與（可選的）降落紀錄"""
    crumbs: List[Breadcrumb] = field(default_factory=list)
    landing: Optional[LandingRecord] = None

    def __post_init__(self):
        ids = [c.id for c in self.crumbs]
        if len(ids) != len(set(ids)):
            raise ValueError("麵包屑編號重複")

    def __len__(self) -> int:
        return len(self.crumbs)

    def __iter__(self) -> Iterator[Breadcrumb]:
        return iter(self.crumbs)

    @property
    def next_id(self) -> int:
        return max((c.id for c in self.crumbs), default=-1) + 1

    def add(self, crumb: Breadcrumb):
        if any(c.id == crumb.id for c in self.crumbs):
            raise ValueError(f"麵包屑編號重複: {crumb.id}")
        self.crumbs.append(crumb)

    def by_id(self, crumb_id: int) -> Optional[Breadcrumb]:
        return next((c for c in self.crumbs if c.id == crumb_id), None)

    def last(self, flight_id: Optional[int] = None) -> Optional[Breadcrumb]:
        pool = [c for c in self.crumbs if flight_id is None or c.flight_id == flight_id]
        return pool[-1] if pool else None

    def of_modality(self, *modalities: CrumbModality) -> List[Breadcrumb]:
        return [c for c in self.crumbs if c.modality in modalities]


# ========== 持久化 ==========

def save_db(db: BreadcrumbDb, path: str):
    """寫入 JSON lines：表頭、每個麵包屑一行、最後是降落紀錄"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with FileLock(path + ".lock"):
        with open(path, 'w', encoding='utf-8') as f:
            f.write(json.dumps({'format': DB_FORMAT, 'version': DB_VERSION, 'units': DB_UNITS}) + "\n")
            for crumb in db.crumbs:
                f.write(json.dumps(crumb.to_record()) + "\n")
            if db.landing is not None:
                f.write(json.dumps(db.landing.to_record()) + "\n")
    logger.info(f"麵包屑資料庫已寫入 {path} ({len(db)} 筆)")


def load_db(path: str) -> BreadcrumbDb:
    """
    讀取資料庫

    Raises:
        BreadcrumbError: 表頭格式或版本不符
    """
    with FileLock(path + ".lock"):
        with open(path, 'r', encoding='utf-8') as f:
            lines = [line for line in f.read().splitlines() if line.strip()]
    if not lines:
        raise BreadcrumbError(f"{path}: 空檔案")
    header = json.loads(lines[0])
    if header.get('format') != DB_FORMAT:
        raise BreadcrumbError(f"{path}:1: 不是麵包屑資料庫 (format={header.get('format')})")
    if header.get('version') != DB_VERSION:
        raise BreadcrumbError(f"{path}:1: 不支援的版本 {header.get('version')}")
    crumbs, landing = [], None
    for lineno, line in enumerate(lines[1:], start=2):
        rec = json.loads(line)
        kind = rec.get('type')
        if kind == 'crumb':
            crumbs.append(Breadcrumb.from_record(rec))
        elif kind == 'landing':
            landing = LandingRecord.from_record(rec)
        else:
            raise BreadcrumbError(f"{path}:{lineno}: 未知的紀錄類型 {kind}")
    return BreadcrumbDb(crumbs, landing)


# ========== 儲存門檻 ==========

def exceeds_separation(delta: np.ndarray, agl: float, lateral_threshold: float,
                       scale_threshold: float) -> bool:
    """水平距離 / AGL > T_lat 或 |垂直距離| / AGL > T_scale"""
    lateral = float(np.linalg.norm(delta[:2])) / agl
    vertical = abs(float(delta[2])) / agl
    return lateral > lateral_threshold or vertical > scale_threshold


def should_save_breadcrumb(position: np.ndarray, agl: float, last: Optional[Breadcrumb],
                           thresholds) -> bool:
    """
    判斷目前影像是否存成新麵包屑

    Args:
        position: 目前位置估計
        agl: 離地高度估計
        last: 最近一個麵包屑（None 表示還沒有）
        thresholds: 含 lateral_threshold / scale_threshold
    """
    if not agl > 0:
        logger.warning(f"AGL = {agl:.2f} m 無效，不儲存麵包屑")
        return False
    if last is None:
        return True
    return exceeds_separation(np.asarray(position) - last.r_tof, agl,
                              thresholds.lateral_threshold, thresholds.scale_threshold)


# ========== 換入濾波器 ==========

@dataclass(frozen=True)
class SwapParameters:
    """單軸虛擬量測參數"""
    a: float
    a_f: float
    b_f: float
    c: float
    b: float
    z: float
    h1: float
    h2: float
    R_eff: float


def swap_parameters(a: float, b_f: float, c: float, a_f_fraction: float = 0.99,
                    z_scale: float = 1.0e6, a_f: Optional[float] = None) -> SwapParameters:
    """
    計算單軸換入參數

    目標結構：載具變異數 a_f、麵包屑變異數 b_f、交叉 (a_f + b_f − c)/2，
    c 為相對位置的目標變異數。先把槽變異數設為 b，再以
    y = h1·x_v + h2·x_bc（雜訊 R_eff）做一次純量更新即達到目標。

    Args:
        a: 目前載具位置變異數
        b_f: 資料庫中的麵包屑變異數
        c: 目標相對變異數
        a_f_fraction: a_f = fraction·a（未指定 a_f 時）
        z_scale: z = z_scale·max(a, b)

    Raises:
        BreadcrumbError: R_eff < 0
    """
    if not a > 0:
        raise BreadcrumbError(f"載具變異數必須為正: a = {a}")
    if b_f < 0:
        raise BreadcrumbError(f"麵包屑變異數不可為負: b_f = {b_f}")
    if a_f is None or a_f >= a:
        if a_f is not None:
            logger.warning(f"a_f = {a_f:.6g} ≥ a = {a:.6g}，改用 {a_f_fraction}·a")
        a_f = a_f_fraction * a
    cross = 0.5 * (a_f + b_f - c)
    b = b_f + cross ** 2 / (a - a_f)
    z = z_scale * max(a, b)
    h1 = np.sqrt((a - a_f) * z) / a
    h2 = -np.sign(cross) * np.sqrt((b - b_f) * z) / b
    r_eff = z - a * h1 ** 2 - b * h2 ** 2
    if r_eff < 0:
        if r_eff > -1e-9 * z:
            r_eff = 0.0
        else:
            raise BreadcrumbError(f"R_eff = {r_eff:.6g} < 0（a={a:.6g}, b_f={b_f:.6g}, c={c:.6g}）")
    return SwapParameters(a, a_f, b_f, c, b, z, h1, h2, r_eff)


def target_relative_variance(a_f: float, b_f: float, c: float, floor: float = 0.0) -> float:
    """把 c 夾在使目標矩陣半正定的範圍內"""
    low = (np.sqrt(a_f) - np.sqrt(b_f)) ** 2 + floor
    high = (np.sqrt(a_f) + np.sqrt(b_f)) ** 2 * (1.0 - PSD_MARGIN)
    return float(np.clip(c, min(low, high), high))


def load_breadcrumb(P: np.ndarray, crumb: Breadcrumb, slot: str = 'obc',
                    a_f_fraction: float = 0.99, z_scale: float = 1.0e6,
                    relative_variance: Optional[Sequence[float]] = None,
                    variance_floor: float = 0.01) -> np.ndarray:
    """
    把麵包屑換入影像槽（N、E、D 三軸各一列虛擬量測）

    三軸的參數都由載入前的 P 各自計算，再以一次三列更新同時套用，
    前一軸的更新不會改變後一軸看到的 a。

    預設的目標相對變異數：線上麵包屑 c = |a − b_f|（依序擷取、強相關），
    歷史麵包屑 c = a + b_f（與本次飛行無關）。

    Args:
        P: 47×47 共變異數
        crumb: 資料庫麵包屑
        slot: obc 或 hbc
        relative_variance: 各軸 c 的覆寫值

    Returns:
        np.ndarray: P'（位置名目值由呼叫端設為 crumb.r_tof）
    """
    if slot not in ('obc', 'hbc'):
        raise ValueError(f"麵包屑只能載入 obc / hbc 槽: {slot}")
    P = np.array(P, dtype=float)
    vehicle = IDX.indices('r')
    slot_idx = IDX.indices('r_' + slot)
    P[slot_idx, :] = 0.0
    P[:, slot_idx] = 0.0
    historic = crumb.modality is not CrumbModality.ONLINE

    H = np.zeros((3, STATE_DIM))
    R = np.zeros((3, 3))
    for axis in range(3):
        iv, ib = vehicle[axis], slot_idx[axis]
        a = float(P[iv, iv])
        b_f = float(crumb.P_pos[axis, axis])
        a_f = a_f_fraction * a
        if relative_variance is not None:
            c = float(relative_variance[axis])
        else:
            c = a + b_f if historic else abs(a - b_f)
        c = target_relative_variance(a_f, b_f, c, variance_floor)
        params = swap_parameters(a, b_f, c, a_f_fraction, z_scale)
        P[ib, ib] = params.b
        H[axis, iv], H[axis, ib] = params.h1, params.h2
        R[axis, axis] = params.R_eff

    PHt = P @ H.T
    S = H @ PHt + R
    P = P - PHt @ np.linalg.solve(S, PHt.T)
    return 0.5 * (P + P.T)


def naive_swap(P: np.ndarray, crumb: Breadcrumb, slot: str = 'obc') -> np.ndarray:
    """對照組：直接放入 P_pos 並歸零交叉項"""
    P = np.array(P, dtype=float)
    s = IDX['r_' + slot]
    P[s, :] = 0.0
    P[:, s] = 0.0
    P[s, s] = crumb.P_pos
    return P


# ========== 飛行間重新錨定 ==========

@dataclass(frozen=True)
class PathSample:
    """下一趟飛行的規劃路徑點（TOF2 座標）"""
    position: np.ndarray
    heading: float


def delta_p(P_i: np.ndarray, P_f: np.ndarray) -> np.ndarray:
    """ΔP = diag(|P_i[k,k] − P_f[k,k]|)"""
    return np.diag(np.abs(np.diag(P_i) - np.diag(P_f)))


def curvature_rotation(displacement_ned: np.ndarray, radius: float, latitude: float) -> np.ndarray:
    """
    球形 Titan 上移動 displacement 後，R_tof1^tof2（約 5 km 對應 0.1°）

    新座標軸相對舊座標軸轉了 θ = [Δe/R, −Δn/R, −Δe·tanφ/R]。
    """
    dn, de = float(displacement_ned[0]), float(displacement_ned[1])
    theta = np.array([de / radius, -dn / radius, -de * np.tan(latitude) / radius])
    return rotvec_to_dcm(-theta)


def _wrap(angle: float) -> float:
    return float((angle + np.pi) % (2.0 * np.pi) - np.pi)


def remap_database(db: BreadcrumbDb, frame_rot: Optional[np.ndarray] = None,
                   next_path: Optional[Sequence[PathSample]] = None,
                   landing_site: Optional[np.ndarray] = None,
                   settings=None) -> BreadcrumbDb:
    """
    把上一趟的麵包屑搬到下一趟的 TOF

    r' = R(r − r_land)，P' = R(H_rel·P_land·H_relᵀ + ΔP)Rᵀ，
    H_rel 在 bc_f 槽為 +I、載具位置為 −I。

    有 next_path 時只保留路徑半徑內、航向相符的麵包屑；
    落在 landing_site 的 terminal 半徑內者標為 terminal（不做航向篩選）。

    Raises:
        BreadcrumbError: 缺少降落紀錄
    """
    landing = db.landing
    if landing is None:
        raise BreadcrumbError("資料庫沒有降落紀錄，無法重新錨定")
    rot = np.eye(3) if frame_rot is None else np.asarray(frame_rot, dtype=float)
    path_radius = getattr(settings, 'path_radius_m', 60.0)
    terminal_radius = getattr(settings, 'terminal_radius_m', 40.0)
    heading_tol = np.deg2rad(getattr(settings, 'heading_tolerance_deg', 45.0))

    H_rel = np.zeros((3, STATE_DIM))
    H_rel[:, IDX['r_' + landing.slot]] = np.eye(3)
    H_rel[:, IDX.r] = -np.eye(3)
    P_rel = H_rel @ landing.P @ H_rel.T
    final = db.by_id(landing.crumb_id) if landing.crumb_id is not None else None
    P_f = final.P_pos if final is not None else landing.P[IDX['r_' + landing.slot], IDX['r_' + landing.slot]]
    heading_shift = heading_of(rot)

    remapped: List[Breadcrumb] = []
    dropped = 0
    for crumb in db.crumbs:
        r_new = rot @ (crumb.r_tof - landing.r_tof)
        P_new = rot @ (P_rel + delta_p(crumb.P_pos, P_f)) @ rot.T
        heading = _wrap(crumb.heading_at_capture + heading_shift)
        modality = CrumbModality.HISTORIC
        if landing_site is not None and \
                np.linalg.norm(r_new[:2] - np.asarray(landing_site)[:2]) <= terminal_radius:
            modality = CrumbModality.TERMINAL
        elif next_path is not None:
            near = [s for s in next_path if np.linalg.norm(r_new[:2] - s.position[:2]) <= path_radius]
            if not near or not any(abs(_wrap(heading - s.heading)) <= heading_tol for s in near):
                dropped += 1
                continue
        remapped.append(replace(crumb, r_tof=r_new, P_pos=0.5 * (P_new + P_new.T),
                                attitude=dcm_to_quat(rot @ crumb.dcm), modality=modality,
                                heading_at_capture=heading,
                                P_att=None if crumb.P_att is None else rot @ crumb.P_att @ rot.T))
    logger.info(f"麵包屑重新錨定: 保留 {len(remapped)} 筆，篩除 {dropped} 筆")
    return BreadcrumbDb(remapped, None)


# ========== 參考影像選擇 ==========

@dataclass
class ReferenceChoice:
    """
    ETS 這一張影像的配對結果

    Attributes:
        velocimetry_slot: tr1 / tr2 / None
        crumb: 要量測的麵包屑
        crumb_slot: obc / hbc / None
        push_reference: 處理完後目前影像是否推入 FIFO
    """
    velocimetry_slot: Optional[str] = None
    crumb: Optional[Breadcrumb] = None
    crumb_slot: Optional[str] = None
    push_reference: bool = False

    @property
    def outage(self) -> bool:
        return self.velocimetry_slot is None and self.crumb is None


def _horizontal(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a)[:2] - np.asarray(b)[:2]))


def choose_breadcrumb(position: np.ndarray, heading: float, agl: float, t: float,
                      db: BreadcrumbDb, ets, bc_settings,
                      flight_id: int = 1) -> Optional[Breadcrumb]:
    """
    挑選重疊的麵包屑：優先歷史/終端麵包屑（航向相符），
    其次是本趟較舊（超過 online_min_age_s）的線上麵包屑，各取最近者
    """
    if not agl > 0:
        return None
    reach = ets.overlap_fraction * agl
    heading_tol = np.deg2rad(bc_settings.heading_tolerance_deg)
    historic = [c for c in db.of_modality(CrumbModality.HISTORIC, CrumbModality.TERMINAL)
                if _horizontal(c.r_tof, position) <= reach
                and (c.modality is CrumbModality.TERMINAL
                     or abs(_wrap(c.heading_at_capture - heading)) <= heading_tol)]
    if historic:
        return min(historic, key=lambda c: _horizontal(c.r_tof, position))
    online = [c for c in db.of_modality(CrumbModality.ONLINE)
              if c.flight_id == flight_id and t - c.t >= ets.online_min_age_s
              and _horizontal(c.r_tof, position) <= reach]
    if online:
        return min(online, key=lambda c: _horizontal(c.r_tof, position))
    return None


def select_reference(position: np.ndarray, agl: float, slots: Dict[str, object],
                     slot_positions: Dict[str, np.ndarray], ets, bc_settings=None,
                     db: Optional[BreadcrumbDb] = None, heading: float = 0.0,
                     t: float = 0.0, flight_id: int = 1) -> ReferenceChoice:
    """
    模擬 ETS 的影像選擇

    - 速度計：在重疊距離 overlap_fraction·AGL 內最舊的 FIFO 參考（tr2 優先）
    - 目前影像距最新參考 ≥ D_max / 槽數時推入 FIFO（D_max = separation_fraction·AGL），
      兩個槽時基線只會掉到 ½·D_max
    - 麵包屑：choose_breadcrumb

    Args:
        slots: 槽名稱 → 具 valid 屬性的紀錄
        slot_positions: 槽名稱 → 位置名目值
    """
    choice = ReferenceChoice()
    if not agl > 0:
        return choice
    n_slots = ets.reference_slots
    order = ('tr2', 'tr1') if n_slots == 2 else ('tr1',)
    reach = ets.overlap_fraction * agl
    for name in order:
        rec = slots.get(name)
        if rec is not None and rec.valid and _horizontal(slot_positions[name], position) <= reach:
            choice.velocimetry_slot = name
            break

    newest = slots.get('tr1')
    if newest is None or not newest.valid:
        choice.push_reference = True
    else:
        spacing = ets.separation_fraction / n_slots
        choice.push_reference = exceeds_separation(np.asarray(position) - slot_positions['tr1'], agl,
                                                   spacing, spacing * 2.0)

    if db is not None and bc_settings is not None:
        crumb = choose_breadcrumb(position, heading, agl, t, db, ets, bc_settings, flight_id)
        if crumb is not None:
            choice.crumb = crumb
            choice.crumb_slot = 'obc' if crumb.modality is CrumbModality.ONLINE else 'hbc'
    return choice
