# -*- coding: utf-8 -*-
"""
模擬模組
"""

from .environment import Environment, Terrain
from .trajectory import Trajectory, TruthState, build_trajectory, leapfrog_profiles, planned_path
from .sensors import ImuEmulator, ImuFault, LidarEmulator
from .engine import (
    SimulationEngine,
    FlightSimulator,
    next_flight_trajectory,
    remap_for_next_flight
)
from .batch import run_monte_carlo
from .lincov import (
    TradeStudy,
    run_lincov,
    velocimetry_trade,
    lidar_trade,
    nullspace_trade,
    write_trade
)
from .metrics import calculate_metrics, print_metrics
from .telemetry import load_telemetry, write_telemetry
from .report import RunReport, build_report, generate_html_report, print_summary, write_report

__all__ = [
    # 世界
    'Environment',
    'Terrain',
    'Trajectory',
    'TruthState',
    'build_trajectory',
    'leapfrog_profiles',
    'planned_path',
    # 感測器
    'ImuEmulator',
    'ImuFault',
    'LidarEmulator',
    # 引擎
    'SimulationEngine',
    'FlightSimulator',
    'next_flight_trajectory',
    'remap_for_next_flight',
    # 批次與線性共變異數
    'run_monte_carlo',
    'TradeStudy',
    'run_lincov',
    'velocimetry_trade',
    'lidar_trade',
    'nullspace_trade',
    'write_trade',
    # 指標與報表
    'calculate_metrics',
    'print_metrics',
    'load_telemetry',
    'write_telemetry',
    'RunReport',
    'build_report',
    'generate_html_report',
    'print_summary',
    'write_report'
]
