"""
异常层级 — 所有业务异常继承 ManifoldSdeError, 同时继承对应的内置异常
"""


class ManifoldSdeError(Exception):
    """工具箱异常基类 (CLI 统一捕获, 退出码 2)"""


class DimensionMismatchError(ManifoldSdeError, ValueError):
    pass


class CalculusMismatchError(ManifoldSdeError, ValueError):
    """Ito / Stratonovich 标记不匹配 (必须显式转换)"""


class NonPolynomialError(ManifoldSdeError, TypeError):
    pass


class GridError(ManifoldSdeError, ValueError):
    """步长/时间网格非法"""


class DomainError(ManifoldSdeError, ValueError):
    """点不在定义域内, 或梯度无定义"""


class ManifoldSamplingError(ManifoldSdeError, RuntimeError):
    pass


class RestrictionError(ManifoldSdeError, RuntimeError):
    pass


class NonCharacteristicError(ManifoldSdeError, ValueError):
    pass


class CharacteristicBlowUpError(ManifoldSdeError, RuntimeError):
    pass


class SurfaceInversionError(ManifoldSdeError, RuntimeError):
    pass


class ZeroLevelError(ManifoldSdeError, ValueError):
    pass


class SpectralSplitError(ManifoldSdeError, ValueError):
    pass


class EnsembleError(ManifoldSdeError, RuntimeError):
    pass


class ConfigError(ManifoldSdeError, ValueError):
    pass
