# -*- coding: utf-8 -*-
"""
一致性指標計算
以多個案例的遙測計算 3σ 涵蓋率、正規化誤差與 NEES 區間
"""
import logging
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
from scipy.stats import chi2

from .telemetry import METRIC_GROUPS

logger = logging.getLogger(__name__)

# 涵蓋率低於此值視為不一致
CONTAINMENT_THRESHOLD = 0.97

TelemetrySet = Union[Dict[int, pd.DataFrame], List[pd.DataFrame]]


def _frames(telemetry: TelemetrySet) -> List[pd.DataFrame]:
    frames = list(telemetry.values()) if isinstance(telemetry, dict) else list(telemetry)
    frames = [df for df in frames if df is not None and not df.empty]
    if not frames:
        raise ValueError("沒有任何遙測資料可以計算指標")
    return frames


def state_errors(df: pd.DataFrame, col: str) -> Optional[pd.Series]:
    """真值 − 估計值；缺少欄位時為 None"""
    if f'true_{col}' not in df.columns or f'est_{col}' not in df.columns:
        return None
    return df[f'true_{col}'] - df[f'est_{col}']


def contained(error: np.ndarray, sigma: np.ndarray, k: float = 3.0) -> np.ndarray:
    """|誤差| ≤ kσ（σ = 0 且誤差 = 0 也算涵蓋）"""
    error = np.abs(np.asarray(error, dtype=float))
    bound = k * np.asarray(sigma, dtype=float)
    return (error <= bound) | np.isclose(error, 0.0, atol=1e-15)


def nees_bounds(dim: int, runs: int, alpha: float = 0.05) -> tuple:
    """平均 NEES 的雙尾 χ² 區間"""
    dof = dim * runs
    return chi2.ppf(alpha / 2.0, dof) / runs, chi2.ppf(1.0 - alpha / 2.0, dof) / runs


def calculate_metrics(telemetry: TelemetrySet, groups: Optional[Dict[str, List[str]]] = None,
                      threshold: float = CONTAINMENT_THRESHOLD, alpha: float = 0.05) -> dict:
    """
    計算每個狀態群組的一致性指標

    Args:
        telemetry: 案例編號 → 遙測 DataFrame（或 DataFrame 列表）
        groups: 群組名稱 → 欄位名稱（預設 METRIC_GROUPS）
        threshold: 涵蓋率門檻
        alpha: NEES 區間顯著水準

    Returns:
        dict: {
            'cases': 案例數,
            'groups': {群組: {'containment', 'samples', 'mean_abs_normalized',
                              'rms_normalized', 'nees_mean', 'nees_bounds', 'consistent'}},
            'skipped': 缺少真值而略過的群組
        }

    Raises:
        ValueError: 沒有任何遙測資料
    """
    frames = _frames(telemetry)
    groups = groups or METRIC_GROUPS
    if len(frames) < 2:
        logger.warning("只有 1 個案例，一致性統計僅供參考")

    metrics = {'cases': len(frames), 'groups': {}, 'skipped': []}
    for name, cols in groups.items():
        inside, total, normalized, nees_rows = 0, 0, [], []
        missing = False
        for df in frames:
            nees = np.zeros(len(df))
            dims = 0
            for col in cols:
                err = state_errors(df, col)
                if err is None or f'sig_{col}' not in df.columns:
                    missing = True
                    break
                err = err.to_numpy(dtype=float)
                sig = df[f'sig_{col}'].to_numpy(dtype=float)
                ok = np.isfinite(err) & np.isfinite(sig)
                inside += int(np.count_nonzero(contained(err[ok], sig[ok])))
                total += int(np.count_nonzero(ok))
                pos = ok & (sig > 0)
                ratio = np.zeros(len(df))
                ratio[pos] = err[pos] / sig[pos]
                normalized.append(ratio[pos])
                nees += ratio ** 2
                dims += 1
            if missing:
                break
            nees_rows.append(nees)
        if missing:
            logger.warning(f"群組 {name} 缺少真值或 σ 欄位，略過")
            metrics['skipped'].append(name)
            continue
        if total == 0:
            continue
        ratios = np.concatenate(normalized) if normalized else np.zeros(0)
        containment = inside / total
        length = min(len(n) for n in nees_rows)
        nees_mean = float(np.mean([n[:length] for n in nees_rows])) if length else 0.0
        low, high = nees_bounds(len(cols), len(frames), alpha)
        metrics['groups'][name] = {
            'containment': round(containment, 6),
            'samples': total,
            'mean_abs_normalized': round(float(np.mean(np.abs(ratios))), 6) if ratios.size else 0.0,
            'rms_normalized': round(float(np.sqrt(np.mean(ratios ** 2))), 6) if ratios.size else 0.0,
            'nees_mean': round(nees_mean, 6),
            'nees_bounds': [round(float(low), 6), round(float(high), 6)],
            'consistent': bool(containment >= threshold),
        }
    return metrics


# ========== 特定情境統計 ==========

def final_heading_stats(telemetry: TelemetrySet) -> dict:
    """
    最終航向誤差：濾波器 3σ（各案例平均）與 Monte Carlo 經驗 3σ（度）
    """
    frames = _frames(telemetry)
    finals = [df.iloc[-1] for df in frames]
    errors = np.array([row['true_psi_z'] - row['est_psi_z'] for row in finals])
    sigmas = np.array([row['sig_psi_z'] for row in finals])
    return {
        'filter_3sigma_deg': float(np.degrees(3.0 * np.mean(sigmas))),
        'empirical_3sigma_deg': float(np.degrees(3.0 * np.sqrt(np.mean(errors ** 2)))),
        'max_abs_error_deg': float(np.degrees(np.max(np.abs(errors)))),
    }


def lateral_error_stats(telemetry: TelemetrySet) -> dict:
    """NED / TOF / 麵包屑相對的橫向誤差（最後一列與整段最大值）"""
    frames = _frames(telemetry)
    out = {}
    for col in ('err_ned_lat', 'err_tof_lat', 'err_bc_lat'):
        if col not in frames[0].columns:
            continue
        finals = np.array([df[col].iloc[-1] for df in frames], dtype=float)
        finite = finals[np.isfinite(finals)]
        out[col] = {
            'final_mean': float(np.mean(finite)) if finite.size else float('nan'),
            'final_max': float(np.max(finite)) if finite.size else float('nan'),
        }
    return out


def first_valid_after(df: pd.DataFrame, col: str) -> Optional[float]:
    """欄位第一個有限值（例如第一次歷史麵包屑量測後的誤差）"""
    if col not in df.columns:
        return None
    values = df[col].to_numpy(dtype=float)
    idx = np.flatnonzero(np.isfinite(values))
    return float(values[idx[0]]) if idx.size else None


def case_summary(result: dict) -> dict:
    """單一案例的摘要列（寫入 summary.json）"""
    df = result['telemetry']
    row = {'case': result['case'], 'status': result['status'], 'message': result['message'],
           'rows': int(len(df)),
           'events': len(result.get('events', []))}
    if not df.empty:
        last = df.iloc[-1]
        row['t_end'] = float(last['t'])
        row['final_err_lat_m'] = float(last['err_ned_lat'])
        row['final_sig_lat_m'] = float(np.hypot(last['sig_r_n'], last['sig_r_e']))
        row['final_sig_heading_deg'] = float(np.degrees(last['sig_psi_z']))
        if np.isfinite(last['err_bc_lat']):
            row['final_err_bc_lat_m'] = float(last['err_bc_lat'])
    return row


def print_metrics(metrics: dict):
    """
    格式化印出一致性指標
    """
    print("=" * 50)
    print(f"📊 一致性指標（{metrics['cases']} 個案例）")
    print("=" * 50)
    for name, g in metrics['groups'].items():
        mark = "✅" if g['consistent'] else "❌"
        low, high = g['nees_bounds']
        print(f"   {mark} {name:<6} 3σ 涵蓋率 {g['containment']:.2%}  "
              f"|e|/σ {g['mean_abs_normalized']:.2f}  NEES {g['nees_mean']:.2f} [{low:.2f}, {high:.2f}]")
    for name in metrics['skipped']:
        print(f"   ⚠️ {name}: 缺少真值，略過")
    print("=" * 50)
