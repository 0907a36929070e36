# -*- coding: utf-8 -*-
"""
Monte Carlo 批次模擬
每個案例有獨立的亂數子序列，可多進程並行；輸出目錄以檔案鎖保護
"""
import json
import logging
import os
from dataclasses import replace
from multiprocessing import Pool, cpu_count
from typing import Dict, List, Optional

import filelock
import numpy as np
import pandas as pd
from tqdm import tqdm

from navfilter.breadcrumbs import save_db
from navfilter.config import NavConfig, Scenario

from .engine import SimulationEngine
from .metrics import calculate_metrics, case_summary
from .telemetry import write_telemetry

logger = logging.getLogger(__name__)

LOCK_NAME = ".run.lock"


def case_seeds(seed: int, cases: int) -> List[np.random.SeedSequence]:
    """同一個 seed 永遠得到同一組子序列"""
    return np.random.SeedSequence(seed).spawn(cases)


def _run_case(args) -> dict:
    """
    執行單一案例（供多進程呼叫）

    Returns:
        dict: SimulationEngine.run() 的結果
    """
    config, scenario, case_index, seed_seq, covariance_only = args
    engine = SimulationEngine(config)
    return engine.run(scenario, case_index=case_index, seed_seq=seed_seq,
                      covariance_only=covariance_only)


def _write_case(result: dict, out_dir: str):
    write_telemetry(result['telemetry'], out_dir, result['case'])
    db = result.get('db')
    if db is not None and (len(db) or db.landing is not None):
        save_db(db, os.path.join(out_dir, f"breadcrumbs_case_{result['case']:04d}.jsonl"))


def run_monte_carlo(config: NavConfig, scenario: Scenario, cases: Optional[int] = None,
                    seed: Optional[int] = None, out_dir: Optional[str] = None,
                    workers: int = 1, covariance_only: bool = False,
                    show_progress: bool = True) -> dict:
    """
    執行 Monte Carlo 批次

    Args:
        config: 導航設定
        scenario: 情境
        cases: 案例數（預設 scenario.cases）
        seed: 亂數種子（預設 scenario.seed）
        out_dir: 輸出目錄（None 則不寫檔）
        workers: 並行進程數（≤ 1 時循序執行；0 表示自動）
        covariance_only: 線性共變異數模式
        show_progress: 是否顯示進度條

    Returns:
        dict: {
            'telemetry': 案例 → DataFrame,
            'summary': 每案例摘要,
            'metrics': 一致性指標,
            'failed': 失敗案例編號,
            'out_dir': 輸出目錄
        }

    Raises:
        filelock.Timeout: 輸出目錄正被另一個執行使用
    """
    cases = scenario.cases if cases is None else int(cases)
    seed = scenario.seed if seed is None else int(seed)
    if cases < 1:
        raise ValueError(f"案例數至少為 1: {cases}")
    scenario = replace(scenario, cases=cases, seed=seed)
    if workers == 0:
        workers = min(cpu_count(), 6)

    tasks = [(config, scenario, i, seq, covariance_only)
             for i, seq in enumerate(case_seeds(seed, cases))]

    lock = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        lock = filelock.FileLock(os.path.join(out_dir, LOCK_NAME), timeout=1)
        lock.acquire()

    try:
        telemetry: Dict[int, pd.DataFrame] = {}
        summary, events, failed = [], [], []

        def collect(result: dict):
            telemetry[result['case']] = result['telemetry']
            summary.append(case_summary(result))
            events.extend(dict(e, case=result['case']) for e in result['events'])
            if result['status'] != 'ok':
                failed.append(result['case'])
                tqdm.write(f"   ❌ 案例 {result['case']} 失敗: {result['message']}")
            if out_dir is not None:
                _write_case(result, out_dir)

        if workers > 1 and cases > 1:
            with Pool(processes=workers) as pool:
                for result in tqdm(pool.imap_unordered(_run_case, tasks), total=len(tasks),
                                   desc=scenario.name, unit="案例", disable=not show_progress):
                    collect(result)
        else:
            for task in tqdm(tasks, desc=scenario.name, unit="案例", disable=not show_progress):
                collect(_run_case(task))

        telemetry = dict(sorted(telemetry.items()))
        summary.sort(key=lambda row: row['case'])
        failed.sort()
        metrics = calculate_metrics(telemetry) if any(not df.empty for df in telemetry.values()) else {}

        if out_dir is not None:
            _write_artifacts(out_dir, config, scenario, covariance_only, summary, events, failed, metrics)
    finally:
        if lock is not None:
            lock.release()

    logger.info(f"{scenario.name}: {cases} 個案例完成，失敗 {len(failed)} 個")
    return {'telemetry': telemetry, 'summary': summary, 'metrics': metrics,
            'failed': failed, 'out_dir': out_dir}


def _write_artifacts(out_dir: str, config: NavConfig, scenario: Scenario, covariance_only: bool,
                     summary: list, events: list, failed: list, metrics: dict):
    """summary.json、run.json 與 events.csv"""
    run_info = {
        'scenario': scenario.name,
        'profile': scenario.profile.value,
        'cases': scenario.cases,
        'seed': scenario.seed,
        'covariance_only': covariance_only,
        'config': config.source,
        'failed': failed,
    }
    with open(os.path.join(out_dir, 'run.json'), 'w', encoding='utf-8') as f:
        json.dump(run_info, f, ensure_ascii=False, indent=2)
    with open(os.path.join(out_dir, 'summary.json'), 'w', encoding='utf-8') as f:
        json.dump({'run': run_info, 'cases': summary, 'metrics': metrics}, f,
                  ensure_ascii=False, indent=2)
    columns = ['case', 'flight', 't', 'kind', 'detail']
    events_df = pd.DataFrame(events, columns=columns).sort_values(['case', 't'], kind='stable')
    events_df.to_csv(os.path.join(out_dir, 'events.csv'), index=False)
