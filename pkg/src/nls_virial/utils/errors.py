"""
errors.py
整個專案共用的例外階層。

- ValidationError: 輸入或前置條件不成立 (CLI 結束碼 1)
- NumericalError:  數值計算失敗 (CLI 結束碼 2)
"""


class NLSVirialError(Exception):
    """所有專案例外的根類別"""


class ValidationError(NLSVirialError, ValueError):
    """輸入不合法或前置條件不成立"""

    exit_code = 1


class NumericalError(NLSVirialError, ArithmeticError):
    """數值過程失敗 (不收斂、出現 NaN/Inf ...)"""

    exit_code = 2


# --- 參數 / 不變量 ---
class OutOfRangeError(ValidationError):
    """(N, p) 不在質量超臨界、能量次臨界的範圍內"""


class RatioOutOfRangeError(ValidationError):
    """λ 方程式的 ratio 不在 [0, 1) 之內"""


class ZeroMassError(ValidationError):
    pass


class AliasRiskError(ValidationError):
    """重新取樣後的解析度低於設定的下限"""


class WrongDimensionError(ValidationError):
    pass


class MassMismatchError(ValidationError):
    pass


# --- 基態 ---
class GridTooCoarseError(ValidationError):
    pass


# --- virial ---
class BoundaryMassError(ValidationError):
    """場在半盒子外仍有不可忽略的質量，|x| 權重不可信"""


class NotCase2Error(ValidationError):
    """資料不屬於二分法的第二種情形"""


class RadiusTooLargeError(ValidationError):
    pass


class RadiusTooSmallError(ValidationError):
    pass


class LambdaNotSupercriticalError(ValidationError):
    pass


class GammaOutOfWindowError(ValidationError):
    pass


class NotRadialError(ValidationError):
    pass


# --- modulation ---
class ScaleUnresolvableError(ValidationError):
    pass


# --- CLI ---
class ScenarioError(ValidationError):
    """情境檔驗證失敗，附帶檔名與行號"""

    def __init__(self, message: str, path: str = "<scenario>", line: int = 1):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


# --- 數值失敗 ---
class NonFiniteError(NumericalError):
    pass


class NoConvergenceError(NumericalError):
    pass


class NegativeDenominatorError(NumericalError):
    """λ₊ > 1 時分母理應為正；出現此錯誤代表上游有 bug"""
