#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
========================================
🚁 Titan 旋翼機導航模擬工具
========================================

子命令：
    simulate     Monte Carlo 模擬並產生報表
    lincov       線性共變異數分析與權衡研究
    gyrocompass  地面陀螺羅盤對準 Monte Carlo
    remap-db     把麵包屑資料庫重新錨定到下一趟飛行
    report       由遙測目錄重建報表

用法：
    python main.py simulate --scenario scout --cases 20 --seed 11
    python main.py lincov --scenario scout --study velocimetry
    python main.py gyrocompass --cases 100
    python main.py remap-db --db output/leapfrog/breadcrumbs_case_0000.jsonl --scenario leapfrog
    python main.py report output/scout

結束代碼：0 通過、2 驗收未通過或案例失敗、1 參數或設定錯誤
"""
import argparse
import logging
import os
import sys
import time

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import filelock

from navfilter.breadcrumbs import load_db, save_db
from navfilter.config import load_config, output_dir
from navfilter.errors import BreadcrumbError, ConfigError
from simulation.batch import run_monte_carlo
from simulation.engine import next_flight_trajectory, remap_for_next_flight
from simulation.lincov import (inertial_only, lidar_checks, lidar_trade, nullspace_checks,
                               nullspace_trade, velocimetry_checks, velocimetry_trade, write_trade)
from simulation.report import build_report, print_summary, write_report

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAILED = 2


def setup_logging(verbose: bool = False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s [%(levelname)s] %(name)s: %(message)s',
        datefmt='%H:%M:%S',
    )


def print_header(title: str):
    print("\n" + "=" * 50)
    print(f"🚀 {title}")
    print("=" * 50)


def _run_dir(args, name: str) -> str:
    return args.out or os.path.join(output_dir(), name)


def _print_checks(checks) -> bool:
    for check in checks:
        print(f"   {'✅' if check.passed else '❌'} {check.name}: {check.detail}")
    return all(c.passed for c in checks)


# ========== 子命令 ==========

def cmd_simulate(args, config) -> int:
    """Monte Carlo 模擬 → 遙測 → 報表"""
    scenario = config.scenario(args.scenario)
    out = _run_dir(args, scenario.name)
    print_header(f"Monte Carlo 模擬：{scenario.name} ({scenario.profile.value})")
    print(f"   案例數: {args.cases or scenario.cases} | 種子: {args.seed if args.seed is not None else scenario.seed}")
    print(f"   輸出目錄: {out}")

    start = time.time()
    batch = run_monte_carlo(config, scenario, cases=args.cases, seed=args.seed, out_dir=out,
                            workers=args.workers)
    print(f"\n⏱️ 總耗時: {(time.time() - start) / 60:.1f} 分鐘")

    report = build_report(out)
    paths = write_report(report, out)
    print_summary(report)
    print(f"   報表位置: {paths['html']}")
    if batch['failed']:
        print(f"❌ {len(batch['failed'])} 個案例失敗: {batch['failed']}")
    return EXIT_OK if report.passed and not batch['failed'] else EXIT_FAILED


def cmd_gyrocompass(args, config) -> int:
    """地面陀螺羅盤對準實驗（預設情境 gyrocompass）"""
    args.scenario = args.scenario or 'gyrocompass'
    return cmd_simulate(args, config)


def cmd_lincov(args, config) -> int:
    """線性共變異數傳播與權衡研究"""
    scenario = config.scenario(args.scenario)
    out = _run_dir(args, f"lincov_{scenario.name}")
    print_header(f"線性共變異數分析：{scenario.name} ({args.study})")

    checks = []
    if args.study == 'propagate':
        if args.inertial_only:
            scenario = inertial_only(scenario)
        batch = run_monte_carlo(config, scenario, cases=1, seed=args.seed, out_dir=out,
                                workers=1, covariance_only=True, show_progress=False)
        report = build_report(out)
        write_report(report, out)
        print_summary(report)
        return EXIT_OK if report.passed and not batch['failed'] else EXIT_FAILED

    if args.study == 'velocimetry':
        results = velocimetry_trade(config, scenario, workers=args.workers)
        checks = velocimetry_checks(results)
    elif args.study == 'lidar':
        results = lidar_trade(config, scenario, workers=args.workers)
        checks = lidar_checks(results)
    else:
        results = nullspace_trade(config, scenario)
        checks = nullspace_checks(results)

    path = write_trade(results, out, f"{args.study}_trade")
    print(f"\n📊 結果表: {path}")
    print("-" * 50)
    passed = _print_checks(checks)
    return EXIT_OK if passed else EXIT_FAILED


def cmd_remap_db(args, config) -> int:
    """依降落紀錄與下一趟規劃路徑重新錨定麵包屑資料庫"""
    scenario = config.scenario(args.scenario)
    db = load_db(args.db)
    constants = config.constants()
    trajectory = next_flight_trajectory(scenario, constants)
    remapped = remap_for_next_flight(db, trajectory, constants, config.breadcrumbs)
    out = args.out or os.path.splitext(args.db)[0] + "_remapped.jsonl"
    save_db(remapped, out)
    terminal = sum(1 for c in remapped if c.modality.value == 'terminal')
    print(f"✅ 重新錨定完成: {len(db)} → {len(remapped)} 筆（terminal {terminal} 筆）")
    print(f"   輸出: {out}")
    return EXIT_OK


def cmd_report(args, config) -> int:
    """由遙測重建報表（同樣的遙測永遠得到同樣的報表）"""
    report = build_report(args.directory)
    paths = write_report(report, args.out or args.directory)
    print_summary(report)
    print(f"   報表位置: {paths['json']}")
    return EXIT_OK if report.passed else EXIT_FAILED


# ========== CLI ==========

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default=None, help='設定檔路徑（預設為專案根目錄 config.json）')
    common.add_argument('--override', action='append', default=[], metavar='KEY=VALUE',
                        help='覆寫設定，例如 filter.gate_sigma=4（可重複）')
    common.add_argument('--out', default=None, help='輸出目錄（預設 $TITAN_NAV_OUTPUT/<情境>）')
    common.add_argument('--verbose', action='store_true', help='顯示除錯訊息')

    parser = argparse.ArgumentParser(description='Titan 旋翼機導航模擬工具')
    sub = parser.add_subparsers(dest='command', required=True)

    for name, help_text, default in (('simulate', 'Monte Carlo 模擬', 'scout'),
                                     ('gyrocompass', '陀螺羅盤對準實驗', None)):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument('--scenario', default=default, help='情境名稱')
        p.add_argument('--cases', type=int, default=None, help='案例數（預設依情境）')
        p.add_argument('--seed', type=int, default=None, help='亂數種子（預設依情境）')
        p.add_argument('--workers', type=int, default=1, help='並行進程數（0 = 自動）')

    p = sub.add_parser('lincov', parents=[common], help='線性共變異數分析')
    p.add_argument('--scenario', default='scout', help='情境名稱')
    p.add_argument('--study', default='propagate',
                   choices=['propagate', 'velocimetry', 'lidar', 'nullspace'], help='分析項目')
    p.add_argument('--inertial-only', action='store_true', help='關閉所有輔助量測（propagate）')
    p.add_argument('--seed', type=int, default=None, help='亂數種子')
    p.add_argument('--workers', type=int, default=1, help='並行進程數')

    p = sub.add_parser('remap-db', parents=[common], help='麵包屑資料庫重新錨定')
    p.add_argument('--db', required=True, help='上一趟的麵包屑資料庫 (.jsonl，需含降落紀錄)')
    p.add_argument('--scenario', default='leapfrog', help='提供下一趟路徑的情境')

    p = sub.add_parser('report', parents=[common], help='由遙測重建報表')
    p.add_argument('directory', help='遙測目錄（含 case_*.csv）')
    return parser


COMMANDS = {
    'simulate': cmd_simulate,
    'gyrocompass': cmd_gyrocompass,
    'lincov': cmd_lincov,
    'remap-db': cmd_remap_db,
    'report': cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    try:
        config = load_config(args.config, args.override)
        return COMMANDS[args.command](args, config)
    except ConfigError as e:
        print(f"{e}", file=sys.stderr)
        return EXIT_ERROR
    except filelock.Timeout:
        print("❌ 錯誤：輸出目錄正被另一個執行使用！", file=sys.stderr)
        return EXIT_ERROR
    except (BreadcrumbError, ValueError, OSError) as e:
        print(f"❌ 錯誤：{e}", file=sys.stderr)
        return EXIT_ERROR
    except KeyboardInterrupt:
        print("\n\n⚠️ 使用者中斷")
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
