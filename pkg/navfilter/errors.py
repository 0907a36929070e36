# -*- coding: utf-8 -*-
"""
導航濾波器例外類別
"""
from typing import Optional


class NavError(Exception):
    """所有導航相關錯誤的基底類別"""


class ConfigError(NavError, ValueError):
    """
    設定檔錯誤

    Args:
        message: 錯誤說明
        line: 設定檔中的行號（找不到時為 None）
        path: 設定檔路徑
    """
    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.message = message
        self.line = line
        self.path = path
        super().__init__(self.__str__())

    def __str__(self) -> str:
        where = self.path or "config"
        if self.line is not None:
            return f"{where}:{self.line}: {self.message}"
        return f"{where}: {self.message}"


class FrameMismatchError(NavError, ValueError):
    """座標系標籤不一致"""


class NonMonotonicSampleError(NavError, ValueError):
    """IMU 樣本時間沒有遞增"""


class MeasurementRejected(NavError, ValueError):
    """量測被拒絕（掠射角、非靜止、過期參考影像等）"""


class BreadcrumbError(NavError, ValueError):
    """麵包屑載入或資料庫重新錨定失敗"""


class CovarianceError(NavError, RuntimeError):
    """
    共變異數矩陣出現非有限值或負對角線

    Args:
        message: 錯誤說明
        snapshot: 診斷快照（時間、狀態名稱、對角線等）
    """
    def __init__(self, message: str, snapshot: Optional[dict] = None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class UnrecoverableFaultError(NavError, RuntimeError):
    """兩顆 IMU 同時故障，基線設計無法處理"""
