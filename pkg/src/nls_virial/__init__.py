"""
nls_virial
質量超臨界、能量次臨界 NLS 的基態、二分法與 virial 爆破上界數值工具。
"""

__version__ = "0.1.0"
