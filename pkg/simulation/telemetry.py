# -*- coding: utf-8 -*-
"""
遙測檔讀寫
每個案例一個 CSV（case_0000.csv），每個濾波週期一列
"""
import glob
import logging
import os
from typing import Dict, List, Tuple

import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.12e'

# 狀態群組 → 欄位名稱（順序對應狀態向量分量）
STATE_COLUMNS: Dict[str, List[str]] = {
    'r': ['r_n', 'r_e', 'r_d'],
    'v': ['v_n', 'v_e', 'v_d'],
    'psi': ['psi_x', 'psi_y', 'psi_z'],
    'b_aA': ['ba_A_x', 'ba_A_y', 'ba_A_z'],
    'b_aB': ['ba_B_x', 'ba_B_y', 'ba_B_z'],
    'b_gA': ['bg_A_x', 'bg_A_y', 'bg_A_z'],
    'b_gB': ['bg_B_x', 'bg_B_y', 'bg_B_z'],
    'b_pA': ['bp_A'],
    'b_pB': ['bp_B'],
    'dH': ['dH'],
    'd': ['d'],
    'n': ['n_n', 'n_e'],
    'gamma1': ['gamma1'],
    'gamma2': ['gamma2'],
}

# 一致性統計用的群組
METRIC_GROUPS: Dict[str, List[str]] = {
    'r': STATE_COLUMNS['r'],
    'v': STATE_COLUMNS['v'],
    'psi': STATE_COLUMNS['psi'],
    'b_a': STATE_COLUMNS['b_aA'] + STATE_COLUMNS['b_aB'],
    'b_g': STATE_COLUMNS['b_gA'] + STATE_COLUMNS['b_gB'],
    'dH': STATE_COLUMNS['dH'],
    'd': STATE_COLUMNS['d'],
    'gamma': STATE_COLUMNS['gamma1'] + STATE_COLUMNS['gamma2'],
}

META_COLUMNS = ['t', 'case', 'flight', 'phase', 'primary']
EXTRA_COLUMNS = ['ctrl_r_n', 'ctrl_r_e', 'ctrl_r_d', 'ctrl_v_n', 'ctrl_v_e', 'ctrl_v_d',
                 'drift_n', 'drift_e', 'drift_d', 'err_ned_lat', 'err_tof_lat', 'err_bc_lat']


def state_columns() -> List[Tuple[str, int, str]]:
    """(狀態群組, 分量, 欄位名稱)"""
    return [(name, i, col) for name, cols in STATE_COLUMNS.items() for i, col in enumerate(cols)]


def telemetry_columns() -> List[str]:
    cols = list(META_COLUMNS)
    for _, _, col in state_columns():
        cols += [f'est_{col}', f'true_{col}', f'sig_{col}']
    return cols + EXTRA_COLUMNS


def case_filename(case: int) -> str:
    return f"case_{case:04d}.csv"


def write_telemetry(df: pd.DataFrame, directory: str, case: int) -> str:
    """寫入單一案例遙測，回傳檔案路徑"""
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, case_filename(case))
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def load_telemetry(directory: str) -> Dict[int, pd.DataFrame]:
    """
    讀取目錄下所有 case_*.csv

    Returns:
        dict: 案例編號 → DataFrame（依編號排序）

    Raises:
        ValueError: 目錄不存在或沒有任何遙測檔
    """
    if not os.path.isdir(directory):
        raise ValueError(f"遙測目錄不存在: {directory}")
    files = sorted(glob.glob(os.path.join(directory, 'case_*.csv')))
    if not files:
        raise ValueError(f"{directory} 沒有任何遙測檔 (case_*.csv)")
    frames = {}
    for path in files:
        stem = os.path.splitext(os.path.basename(path))[0]
        try:
            case = int(stem.split('_', 1)[1])
        except (IndexError, ValueError):
            logger.warning(f"略過無法辨識的檔名: {path}")
            continue
        frames[case] = pd.read_csv(path)
    if not frames:
        raise ValueError(f"{directory} 沒有可用的遙測檔")
    return dict(sorted(frames.items()))
