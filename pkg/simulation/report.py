# -*- coding: utf-8 -*-
"""
報表模組
由遙測目錄重建 RunReport，輸出 report.json / report.html

報表只依賴遙測檔（與 run.json 的情境名稱），重跑結果相同。
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from .metrics import (CONTAINMENT_THRESHOLD, calculate_metrics, final_heading_stats,
                      first_valid_after, lateral_error_stats)
from .telemetry import load_telemetry

logger = logging.getLogger(__name__)

# 驗收門檻
GYROCOMPASS_HEADING_3SIGMA_DEG = 1.0
BREADCRUMB_LATERAL_MAX_M = 5.0


@dataclass
class AcceptanceCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class RunReport:
    """
    一次執行的報表

    Attributes:
        scenario: 情境名稱
        profile: 飛行剖面
        cases: 案例數
        containment: 群組 → 3σ 涵蓋率
        terminal: 終端誤差統計
        checks: 驗收項目
    """
    scenario: str
    profile: str
    cases: int
    containment: Dict[str, float] = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    terminal: dict = field(default_factory=dict)
    checks: List[AcceptanceCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def inconsistent_groups(self) -> List[str]:
        return [name for name, value in self.containment.items() if value < CONTAINMENT_THRESHOLD]

    def to_dict(self) -> dict:
        out = asdict(self)
        out['passed'] = self.passed
        return out


def _read_run_info(directory: str) -> dict:
    path = os.path.join(directory, 'run.json')
    if not os.path.exists(path):
        return {}
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def _leapfrog_checks(telemetry: Dict[int, pd.DataFrame]) -> List[AcceptanceCheck]:
    checks = []
    firsts = [first_valid_after(df, 'err_bc_lat') for df in telemetry.values()]
    firsts = [v for v in firsts if v is not None]
    if not firsts:
        return [AcceptanceCheck('breadcrumb_relative_error', False, "沒有任何歷史麵包屑量測")]

    # 第一次歷史麵包屑量測之後的終端誤差
    terminal = []
    for df in telemetry.values():
        values = df['err_bc_lat'].to_numpy(dtype=float)
        finite = values[np.isfinite(values)]
        if finite.size:
            terminal.append(float(finite[-1]))
    worst = max(terminal)
    checks.append(AcceptanceCheck('breadcrumb_relative_error', worst < BREADCRUMB_LATERAL_MAX_M,
                                  f"最大終端麵包屑相對誤差 {worst:.2f} m (< {BREADCRUMB_LATERAL_MAX_M} m)"))

    # 各時刻跨案例 RMS：TOF 誤差不應大於 NED 誤差
    seconds = [df[df['flight'] == df['flight'].max()] for df in telemetry.values()]
    length = min(len(s) for s in seconds)
    ned = np.sqrt(np.mean([s['err_ned_lat'].to_numpy(dtype=float)[:length] ** 2 for s in seconds], axis=0))
    tof = np.sqrt(np.mean([s['err_tof_lat'].to_numpy(dtype=float)[:length] ** 2 for s in seconds], axis=0))
    violations = int(np.count_nonzero(tof > ned * 1.05 + 0.05))
    checks.append(AcceptanceCheck('tof_below_ned', violations == 0,
                                  f"TOF RMS 誤差大於 NED RMS 誤差的時刻數 {violations}/{length}"))
    return checks


def build_report(directory: str, threshold: float = CONTAINMENT_THRESHOLD) -> RunReport:
    """
    由遙測目錄建立報表

    Raises:
        ValueError: 目錄不存在或沒有遙測檔
    """
    telemetry = load_telemetry(directory)
    info = _read_run_info(directory)
    scenario = info.get('scenario', os.path.basename(os.path.normpath(directory)))
    profile = info.get('profile', 'unknown')
    covariance_only = bool(info.get('covariance_only', False))

    metrics = calculate_metrics(telemetry, threshold=threshold)
    report = RunReport(scenario=scenario, profile=profile, cases=len(telemetry), metrics=metrics)
    report.containment = {name: g['containment'] for name, g in metrics['groups'].items()}
    report.terminal = lateral_error_stats(telemetry)

    failed = info.get('failed', [])
    report.checks.append(AcceptanceCheck('cases_completed', not failed,
                                         f"失敗案例: {failed}" if failed else "全部案例完成"))
    if not covariance_only:
        for name, g in metrics['groups'].items():
            report.checks.append(AcceptanceCheck(
                f'consistency_{name}', g['consistent'],
                f"3σ 涵蓋率 {g['containment']:.2%} (門檻 {threshold:.0%})"))

    if profile == 'gyrocompass_static':
        heading = final_heading_stats(telemetry)
        report.terminal['heading'] = heading
        report.checks.append(AcceptanceCheck(
            'final_heading_3sigma', heading['filter_3sigma_deg'] < GYROCOMPASS_HEADING_3SIGMA_DEG,
            f"最終航向 3σ {heading['filter_3sigma_deg']:.3f}° (< {GYROCOMPASS_HEADING_3SIGMA_DEG}°)"))
    elif profile == 'leapfrog' and not covariance_only:
        report.checks.extend(_leapfrog_checks(telemetry))
    return report


def print_summary(report: RunReport):
    """印出報表摘要"""
    print("\n" + "=" * 50)
    print(f"📊 {report.scenario} ({report.profile}) 報表：{report.cases} 個案例")
    print("=" * 50)

    print("\n🎯 3σ 涵蓋率")
    for name, value in report.containment.items():
        mark = "🟢" if value >= CONTAINMENT_THRESHOLD else "🔴"
        print(f"   {mark} {name:<6} {value:.2%}")

    if report.terminal:
        print("\n📍 終端誤差")
        for col, stats in report.terminal.items():
            if col == 'heading':
                print(f"   航向 3σ：濾波器 {stats['filter_3sigma_deg']:.3f}°，"
                      f"經驗 {stats['empirical_3sigma_deg']:.3f}°")
            else:
                print(f"   {col}: 平均 {stats['final_mean']:.2f} m，最大 {stats['final_max']:.2f} m")

    print("\n✅ 驗收項目")
    for check in report.checks:
        print(f"   {'✅' if check.passed else '❌'} {check.name}: {check.detail}")
    if report.inconsistent_groups:
        print(f"\n⚠️ 不一致的狀態群組: {', '.join(report.inconsistent_groups)}")
    print("=" * 50)


def generate_html_report(report: RunReport, save_path: Optional[str] = None) -> str:
    """
    產生 HTML 格式的報表

    Args:
        report: RunReport
        save_path: 儲存路徑

    Returns:
        str: HTML 內容
    """
    rows_html = ""
    for name, g in report.metrics.get('groups', {}).items():
        cls = 'pass' if g['consistent'] else 'fail'
        rows_html += f"""
            <tr class="{cls}">
                <td>{name}</td>
                <td>{g['containment']:.2%}</td>
                <td>{g['mean_abs_normalized']:.3f}</td>
                <td>{g['rms_normalized']:.3f}</td>
                <td>{g['nees_mean']:.3f} [{g['nees_bounds'][0]:.2f}, {g['nees_bounds'][1]:.2f}]</td>
            </tr>"""

    checks_html = ""
    for check in report.checks:
        cls = 'pass' if check.passed else 'fail'
        checks_html += f"""
            <tr class="{cls}">
                <td>{'✅' if check.passed else '❌'} {check.name}</td>
                <td>{check.detail}</td>
            </tr>"""

    status = 'positive' if report.passed else 'negative'
    html = f"""
<!DOCTYPE html>
<html lang="zh-TW">
<head>
    <meta charset="UTF-8">
    <title>導航模擬報表 - {report.scenario}</title>
    <style>
        * {{ margin: 0; padding: 0; box-sizing: border-box; }}
        body {{ font-family: -apple-system, BlinkMacSystemFont, "Segoe UI", Roboto, sans-serif; background: #f5f5f5; padding: 20px; }}
        .container {{ max-width: 1000px; margin: 0 auto; }}
        .header {{ background: linear-gradient(135deg, #2E86AB, #1a5276); color: white; padding: 30px; border-radius: 10px; margin-bottom: 20px; }}
        .header h1 {{ font-size: 28px; margin-bottom: 10px; }}
        .header .subtitle {{ opacity: 0.8; }}
        .card {{ background: white; border-radius: 10px; padding: 20px; margin-bottom: 20px; box-shadow: 0 2px 10px rgba(0,0,0,0.1); }}
        .card h2 {{ color: #2E86AB; margin-bottom: 15px; font-size: 18px; }}
        .value {{ font-size: 24px; font-weight: bold; }}
        .positive {{ color: #28A745 !important; }}
        .negative {{ color: #DC3545 !important; }}
        table {{ width: 100%; border-collapse: collapse; }}
        th, td {{ padding: 12px; text-align: left; border-bottom: 1px solid #eee; }}
        th {{ background: #f8f9fa; font-weight: 600; }}
        .pass {{ background: #e8f5e9; }}
        .fail {{ background: #ffebee; }}
        .footer {{ text-align: center; color: #999; margin-top: 30px; font-size: 12px; }}
    </style>
</head>
<body>
    <div class="container">
        <div class="header">
            <h1>📊 導航模擬報表</h1>
            <div class="subtitle">情境: {report.scenario} | 剖面: {report.profile} | 案例數: {report.cases}</div>
        </div>

        <div class="card">
            <h2>結果</h2>
            <div class="value {status}">{'通過' if report.passed else '未通過'}</div>
        </div>

        <div class="card">
            <h2>一致性（3σ 涵蓋率與正規化誤差）</h2>
            <table>
                <thead>
                    <tr><th>群組</th><th>涵蓋率</th><th>平均 |e|/σ</th><th>RMS e/σ</th><th>平均 NEES</th></tr>
                </thead>
                <tbody>
                    {rows_html}
                </tbody>
            </table>
        </div>

        <div class="card">
            <h2>驗收項目</h2>
            <table>
                <tbody>
                    {checks_html}
                </tbody>
            </table>
        </div>

        <div class="footer">
            由 titan-nav 模擬引擎產生
        </div>
    </div>
</body>
</html>
"""

    if save_path:
        with open(save_path, 'w', encoding='utf-8') as f:
            f.write(html)
        logger.info(f"報表已儲存: {save_path}")

    return html


def write_report(report: RunReport, directory: str) -> Dict[str, str]:
    """寫入 report.json 與 report.html，回傳路徑"""
    os.makedirs(directory, exist_ok=True)
    json_path = os.path.join(directory, 'report.json')
    with open(json_path, 'w', encoding='utf-8') as f:
        json.dump(report.to_dict(), f, ensure_ascii=False, indent=2, sort_keys=True)
    html_path = os.path.join(directory, 'report.html')
    generate_html_report(report, html_path)
    return {'json': json_path, 'html': html_path}
