# -*- coding: utf-8 -*-
"""
線性共變異數分析與權衡研究
沿參考軌跡只傳播共變異數（無真值誤差、不更新估計均值），
以參數網格比較不同感測器設定的不確定度
"""
import logging
import os
from dataclasses import replace
from itertools import product
from multiprocessing import Pool
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from navfilter.config import SENSOR_SWITCHES, NavConfig, Scenario

from .engine import SimulationEngine
from .report import AcceptanceCheck

logger = logging.getLogger(__name__)

# 權衡研究預設網格
VELOCIMETRY_GRID = {
    'reference_slots': [1, 2],
    'pixel_noise': [0.5, 1.0, 2.0],
    'separation_fraction': [0.05, 0.10, 0.20],
}
LIDAR_GRID = {
    'lidar_noise_cm': [10.0, 30.0, 50.0],
    'lidar_velocity_gate_m': [30.0, 45.0, 60.0],
}
DESCENT_PHASES = ('descent', 'ramp', 'final')


def run_lincov(config: NavConfig, scenario: Scenario) -> pd.DataFrame:
    """
    單次線性共變異數傳播

    Returns:
        pd.DataFrame: 遙測（est = true = 參考軌跡，sig 為濾波器 1σ）

    Raises:
        RuntimeError: 傳播過程共變異數失效
    """
    result = SimulationEngine(config).run(scenario, covariance_only=True)
    if result['status'] != 'ok':
        raise RuntimeError(f"{scenario.name} 線性共變異數傳播失敗: {result['message']}")
    return result['telemetry']


def inertial_only(scenario: Scenario) -> Scenario:
    """關閉所有輔助量測，只剩慣性傳播"""
    params = dict(scenario.params, breadcrumbs=False)
    return replace(scenario, sensors_enabled={name: False for name in SENSOR_SWITCHES}, params=params)


def accumulated_lateral_error(df: pd.DataFrame) -> float:
    """終點水平位置 1σ (m)"""
    last = df.iloc[-1]
    return float(np.hypot(last['sig_r_n'], last['sig_r_e']))


def descent_velocity_sigma(df: pd.DataFrame, cutoff_m: float) -> dict:
    """
    終端下降的垂直速度 1σ（只看著陸前的下降段，不含落地後的零速度更新）

    Returns:
        dict: {
            'sig_v_d_cutoff': 最後一個高於 cutoff 的時刻,
            'sig_v_d_min': 下降段最小值,
            'sig_v_d_final': 著陸瞬間
        }
    """
    descending = df['phase'].isin(DESCENT_PHASES).to_numpy()
    if not descending.any():
        raise ValueError("軌跡沒有下降段")
    last = int(np.flatnonzero(descending)[-1])
    altitude = -df['est_r_d'].to_numpy(dtype=float)
    sig = df['sig_v_d'].to_numpy(dtype=float)
    above = descending & (altitude >= cutoff_m)
    if not above.any():
        raise ValueError(f"軌跡沒有高於 {cutoff_m} m 的下降段")
    cutoff_idx = int(np.flatnonzero(above)[-1])
    return {
        'sig_v_d_cutoff': float(sig[cutoff_idx]),
        'sig_v_d_min': float(np.min(sig[descending])),
        'sig_v_d_final': float(sig[last]),
    }


def _apply(config: NavConfig, scenario: Scenario, params: Dict[str, Any]):
    """把一組網格參數套用到設定"""
    ets = {k: v for k, v in params.items() if k in ('reference_slots', 'pixel_noise', 'separation_fraction')}
    if ets:
        overlap = max(config.ets.overlap_fraction, ets.get('separation_fraction', 0.0))
        config = replace(config, ets=replace(config.ets, overlap_fraction=overlap, **ets))
    if 'lidar_noise_cm' in params:
        config = replace(config, sensors=replace(config.sensors, lidar_noise_cm=params['lidar_noise_cm']))
    if 'lidar_velocity_gate_m' in params:
        config = replace(config, filter=replace(config.filter,
                                                lidar_velocity_gate_m=params['lidar_velocity_gate_m']))
    if 'nullspace_enabled' in params:
        config = replace(config, filter=replace(config.filter, nullspace_enabled=params['nullspace_enabled']))
    if params.get('lidar') is False:
        scenario = replace(scenario, sensors_enabled=dict(scenario.sensors_enabled, lidar=False))
    return config, scenario


def _run_combo(args) -> pd.DataFrame:
    config, scenario, params = args
    config, scenario = _apply(config, scenario, params)
    return run_lincov(config, scenario)


class TradeStudy:
    """
    權衡研究

    對參數網格逐一執行線性共變異數傳播，彙整成結果表
    """

    def __init__(self, config: NavConfig, scenario: Scenario, workers: int = 1,
                 show_progress: bool = True):
        self.config = config
        self.scenario = scenario
        self.workers = workers
        self.show_progress = show_progress

    def _runs(self, combos: List[Dict[str, Any]], desc: str) -> List[pd.DataFrame]:
        tasks = [(self.config, self.scenario, params) for params in combos]
        if self.workers > 1 and len(tasks) > 1:
            with Pool(processes=self.workers) as pool:
                return list(tqdm(pool.imap(_run_combo, tasks), total=len(tasks), desc=desc,
                                 unit="組", disable=not self.show_progress))
        return [_run_combo(t) for t in tqdm(tasks, desc=desc, unit="組", disable=not self.show_progress)]

    def grid_search(self, param_grid: Dict[str, List[Any]], summarize,
                    baseline: Optional[Dict[str, Any]] = None, desc: str = "lincov") -> pd.DataFrame:
        """
        參數網格搜尋

        Args:
            param_grid: 參數網格 e.g. {'reference_slots': [1, 2], 'pixel_noise': [1.0, 2.0]}
            summarize: 遙測 DataFrame → 指標 dict
            baseline: 額外加跑的基準組合（例如關閉光達）
            desc: 進度條標題

        Returns:
            pd.DataFrame: 每組參數一列（基準組合在最前面）
        """
        names = list(param_grid.keys())
        combos = [dict(zip(names, combo)) for combo in product(*param_grid.values())]
        if baseline is not None:
            combos.insert(0, dict(baseline))

        print(f"🔍 {desc}: {len(combos)} 種組合，情境 {self.scenario.name}")
        print("-" * 50)

        records = []
        for params, df in zip(combos, self._runs(combos, desc)):
            records.append({**params, **summarize(df)})
        results = pd.DataFrame(records)
        print(f"✅ {desc} 完成")
        return results


# ========== 三種權衡研究 ==========

def velocimetry_trade(config: NavConfig, scenario: Scenario,
                      grid: Optional[Dict[str, List[Any]]] = None, workers: int = 1,
                      show_progress: bool = True) -> pd.DataFrame:
    """
    視覺測速權衡：參考影像槽數 × 像素雜訊 × 分離距離比例（不使用麵包屑）

    Returns:
        pd.DataFrame: reference_slots, pixel_noise, separation_fraction, lateral_sigma_m
    """
    scenario = replace(scenario, params=dict(scenario.params, breadcrumbs=False))
    study = TradeStudy(config, scenario, workers, show_progress)
    return study.grid_search(grid or VELOCIMETRY_GRID,
                             lambda df: {'lateral_sigma_m': accumulated_lateral_error(df)},
                             desc="視覺測速權衡")


def lidar_trade(config: NavConfig, scenario: Scenario,
                grid: Optional[Dict[str, List[Any]]] = None, workers: int = 1,
                show_progress: bool = True) -> pd.DataFrame:
    """
    光達權衡：測距雜訊 × 速度融合高度，另加關閉光達的基準

    Returns:
        pd.DataFrame: lidar, lidar_noise_cm, lidar_velocity_gate_m,
                      sig_v_d_cutoff, sig_v_d_min, sig_v_d_final, reduction
    """
    cutoff = config.filter.lidar_min_altitude_m
    study = TradeStudy(config, scenario, workers, show_progress)
    results = study.grid_search(grid or LIDAR_GRID,
                                lambda df: descent_velocity_sigma(df, cutoff),
                                baseline={'lidar': False}, desc="光達權衡")
    results['lidar'] = results['lidar'].ne(False)
    base = float(results.loc[~results['lidar'], 'sig_v_d_cutoff'].iloc[0])
    results['reduction'] = 1.0 - results['sig_v_d_cutoff'] / base
    return results


def nullspace_trade(config: NavConfig, scenario: Scenario) -> pd.DataFrame:
    """
    零空間模型開/關：備援 IMU 與主 IMU 加速度計偏差 1σ 的時間歷程

    Returns:
        pd.DataFrame: t, phase, nullspace_enabled, sig_ba_A, sig_ba_B（三軸 RMS）
    """
    frames = []
    for enabled in (True, False):
        cfg, sc = _apply(config, scenario, {'nullspace_enabled': enabled})
        df = run_lincov(cfg, sc)
        out = pd.DataFrame({'t': df['t'], 'phase': df['phase'], 'nullspace_enabled': enabled})
        for imu in ('A', 'B'):
            cols = [f'sig_ba_{imu}_{axis}' for axis in 'xyz']
            out[f'sig_ba_{imu}'] = np.sqrt(np.mean(df[cols].to_numpy(dtype=float) ** 2, axis=1))
        frames.append(out)
    return pd.concat(frames, ignore_index=True)


def write_trade(df: pd.DataFrame, directory: str, name: str) -> str:
    """寫入權衡研究 CSV"""
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, f"{name}.csv")
    df.to_csv(path, index=False, float_format='%.12e')
    logger.info(f"權衡研究結果已儲存: {path}")
    return path


# ========== 驗收 ==========

def velocimetry_checks(results: pd.DataFrame, reference: tuple = (1.0, 0.10),
                       tolerance: float = 0.2) -> List[AcceptanceCheck]:
    """
    (1) 同雜訊、同分離距離下兩個參考槽嚴格優於一個
    (2) 2 倍分離距離配 2 倍雜訊與 1 倍配 1 倍的累積誤差相近
    """
    checks = []
    keys = ['pixel_noise', 'separation_fraction']
    pivot = results.pivot_table(index=keys, columns='reference_slots', values='lateral_sigma_m')
    if {1, 2} <= set(pivot.columns):
        worse = pivot[pivot[2] >= pivot[1]]
        checks.append(AcceptanceCheck('two_slots_dominate', worse.empty,
                                      f"兩槽不優於單槽的組合 {len(worse)}/{len(pivot)}"))

    def lookup(slots, noise, fraction):
        rows = results[(results['reference_slots'] == slots)
                       & np.isclose(results['pixel_noise'], noise)
                       & np.isclose(results['separation_fraction'], fraction)]
        return None if rows.empty else float(rows['lateral_sigma_m'].iloc[0])

    noise, fraction = reference
    for slots in sorted(results['reference_slots'].unique()):
        base = lookup(slots, noise, fraction)
        doubled = lookup(slots, 2.0 * noise, 2.0 * fraction)
        if base is None or doubled is None:
            continue
        diff = abs(doubled - base) / base
        checks.append(AcceptanceCheck(f'baseline_noise_tradeoff_{int(slots)}slot', diff <= tolerance,
                                      f"相對差 {diff:.1%} (容許 {tolerance:.0%})"))
    return checks


def lidar_checks(results: pd.DataFrame, min_reduction: float = 0.5) -> List[AcceptanceCheck]:
    """
    (1) 最佳組合的截止高度 σ 至少降低 50%
    (2) σ 隨雜訊單調不減
    (3) 低於截止高度後 σ 再度成長
    """
    lidar = results[results['lidar']]
    best = float(lidar['reduction'].max())
    checks = [AcceptanceCheck('lidar_velocity_reduction', best >= min_reduction,
                              f"最佳降低比例 {best:.1%} (≥ {min_reduction:.0%})")]
    violations = 0
    for _, group in lidar.groupby('lidar_velocity_gate_m'):
        sig = group.sort_values('lidar_noise_cm')['sig_v_d_cutoff'].to_numpy()
        violations += int(np.count_nonzero(np.diff(sig) < -1e-12))
    checks.append(AcceptanceCheck('lidar_monotone_in_noise', violations == 0,
                                  f"違反單調的相鄰組合 {violations}"))
    regrow = lidar['sig_v_d_final'] > lidar['sig_v_d_min']
    checks.append(AcceptanceCheck('lidar_cutoff_regrowth', bool(regrow.all()),
                                  f"截止後 σ 再成長的組合 {int(regrow.sum())}/{len(lidar)}"))
    return checks


def nullspace_checks(history: pd.DataFrame, ratio: float = 2.0) -> List[AcceptanceCheck]:
    """開啟時備援加速度計偏差 σ 降到主 IMU 的 2 倍以下；關閉時維持先驗"""
    on = history[history['nullspace_enabled']]
    off = history[~history['nullspace_enabled']]
    final_on = on.iloc[-1]
    checks = [AcceptanceCheck('nullspace_observes_backup',
                              final_on['sig_ba_B'] < ratio * final_on['sig_ba_A'],
                              f"備援 {final_on['sig_ba_B']:.3e} / 主 {final_on['sig_ba_A']:.3e} m/s²")]
    prior, final_off = float(off['sig_ba_B'].iloc[0]), float(off['sig_ba_B'].iloc[-1])
    checks.append(AcceptanceCheck('nullspace_off_keeps_prior', final_off >= 0.9 * prior,
                                  f"關閉時 {final_off:.3e} / 先驗 {prior:.3e} m/s²"))
    return checks
