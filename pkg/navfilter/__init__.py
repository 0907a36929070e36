# -*- coding: utf-8 -*-
"""
Titan 旋翼機導航濾波器
"""

from .errors import (
    NavError,
    ConfigError,
    FrameMismatchError,
    NonMonotonicSampleError,
    MeasurementRejected,
    BreadcrumbError,
    CovarianceError,
    UnrecoverableFaultError
)
from .config import NavConfig, Scenario, Profile, load_config, output_dir
from .frames import TitanConstants, FrameId, FramedVector, Transform
from .state import STATE_DIM, STATE_INDEX, ErrorState, FogmSpec
from .strapdown import (
    ImuId,
    ImuSample,
    NavState,
    Navigator,
    FaultStatus,
    parity_check,
    switch_primary
)
from .ekf import Measurement, MeasurementKind, NavFilter, update, propagate_covariance
from .measurements import (
    PressureModel,
    LidarLos,
    LidarMode,
    EtsDisplacement,
    EtsModality,
    CameraModel,
    ImageState,
    gyrocompass_measurement,
    nullspace_measurement,
    pressure_measurement,
    lidar_measurement,
    velocimetry_measurement,
    breadcrumb_measurement,
    zero_velocity_measurement,
    zero_position_measurement
)
from .breadcrumbs import (
    Breadcrumb,
    BreadcrumbDb,
    LandingRecord,
    CrumbModality,
    should_save_breadcrumb,
    load_breadcrumb,
    remap_database,
    select_reference,
    save_db,
    load_db
)
from .guidance import CorrectionFilter, DriftOffset, condition_state, breadcrumb_drift_offset

__all__ = [
    # 例外
    'NavError',
    'ConfigError',
    'FrameMismatchError',
    'NonMonotonicSampleError',
    'MeasurementRejected',
    'BreadcrumbError',
    'CovarianceError',
    'UnrecoverableFaultError',
    # 設定
    'NavConfig',
    'Scenario',
    'Profile',
    'load_config',
    'output_dir',
    # 座標
    'TitanConstants',
    'FrameId',
    'FramedVector',
    'Transform',
    # 狀態
    'STATE_DIM',
    'STATE_INDEX',
    'ErrorState',
    'FogmSpec',
    # 捷聯
    'ImuId',
    'ImuSample',
    'NavState',
    'Navigator',
    'FaultStatus',
    'parity_check',
    'switch_primary',
    # 濾波器
    'Measurement',
    'MeasurementKind',
    'NavFilter',
    'update',
    'propagate_covariance',
    # 量測
    'PressureModel',
    'LidarLos',
    'LidarMode',
    'EtsDisplacement',
    'EtsModality',
    'CameraModel',
    'ImageState',
    'gyrocompass_measurement',
    'nullspace_measurement',
    'pressure_measurement',
    'lidar_measurement',
    'velocimetry_measurement',
    'breadcrumb_measurement',
    'zero_velocity_measurement',
    'zero_position_measurement',
    # 麵包屑
    'Breadcrumb',
    'BreadcrumbDb',
    'LandingRecord',
    'CrumbModality',
    'should_save_breadcrumb',
    'load_breadcrumb',
    'remap_database',
    'select_reference',
    'save_db',
    'load_db',
    # 導引介面
    'CorrectionFilter',
    'DriftOffset',
    'condition_state',
    'breadcrumb_drift_offset'
]
