"""
spectral.py
週期性均勻格點 (Grid) 與擬譜運算工具: FFT、譜微分、2/3 去混疊、平移與縮放重新取樣。

格點座標取 x_j = (j - n/2) h，h = 2L/n，因此 x = 0 恰好落在索引 n/2，
且 x_{n/2+m} 與 x_{n/2-m} 互為精確的相反數。
"""

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import List, Sequence, Tuple

import numpy as np
from scipy import fft as sp_fft

from nls_virial.utils.errors import ValidationError

SUPPORTED_DIMS = (1, 2, 3)


@dataclass(frozen=True)
class Grid:
    """
    週期盒子 [-L, L)^N 上的張量格點。

    :param dim: 空間維度 N (1, 2, 3)
    :param extent: 盒子半邊長 L
    :param points: 每軸取樣點數 (2 的冪次)
    """

    dim: int
    extent: float
    points: int

    def __post_init__(self):
        if self.dim not in SUPPORTED_DIMS:
            raise ValidationError(f"不支援的維度 N={self.dim} (僅支援 1, 2, 3)")
        if not self.extent > 0:
            raise ValidationError(f"盒子半邊長必須為正: L={self.extent}")
        n = self.points
        if n < 8 or n & (n - 1):
            raise ValidationError(f"每軸點數必須是 >= 8 的 2 的冪次: points={n}")

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.points,) * self.dim

    @property
    def size(self) -> int:
        return self.points ** self.dim

    @cached_property
    def spacing(self) -> float:
        return 2.0 * self.extent / self.points

    @property
    def weight(self) -> float:
        """梯形 (週期) 積分權重 h^N"""
        return self.spacing ** self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        return (np.arange(self.points) - self.points // 2) * self.spacing

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * sp_fft.fftfreq(self.points, d=self.spacing)

    @cached_property
    def derivative_wavenumbers(self) -> np.ndarray:
        # 奇數階導數捨棄 Nyquist 模，實函數的導數才會是實數
        k = self.wavenumbers.copy()
        k[self.points // 2] = 0.0
        return k

    @cached_property
    def coords(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis] * self.dim), indexing="ij", sparse=True))

    @cached_property
    def kvecs(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.derivative_wavenumbers] * self.dim), indexing="ij", sparse=True))

    @cached_property
    def k_squared(self) -> np.ndarray:
        full = np.meshgrid(*([self.wavenumbers] * self.dim), indexing="ij", sparse=True)
        return sum(k ** 2 for k in full) * np.ones(self.shape)

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(x ** 2 for x in self.coords)) * np.ones(self.shape)

    def dealias_mask(self, ratio: float = 2.0 / 3.0) -> np.ndarray:
        return _dealias_mask(self, float(ratio))

    def integrate(self, density) -> float:
        return float(np.sum(density) * self.weight)

    def describe(self) -> dict:
        return {"N": self.dim, "L": self.extent, "points": self.points, "spacing": self.spacing}


@lru_cache(maxsize=16)
def _dealias_mask(grid: Grid, ratio: float) -> np.ndarray:
    k_max = ratio * np.max(np.abs(grid.wavenumbers))
    full = np.meshgrid(*([grid.wavenumbers] * grid.dim), indexing="ij", sparse=True)
    mask = np.ones(grid.shape, dtype=bool)
    for k in full:
        mask &= np.abs(k) <= k_max
    return mask


def fftn(values: np.ndarray) -> np.ndarray:
    return sp_fft.fftn(values, workers=-1)


def ifftn(values_hat: np.ndarray) -> np.ndarray:
    return sp_fft.ifftn(values_hat, workers=-1)


def gradient(values: np.ndarray, grid: Grid) -> List[np.ndarray]:
    """譜微分，回傳每個方向的偏導數"""
    values_hat = fftn(values)
    return [ifftn(1j * k * values_hat) for k in grid.kvecs]


def laplacian(values: np.ndarray, grid: Grid) -> np.ndarray:
    return ifftn(-grid.k_squared * fftn(values))


def dealias(values: np.ndarray, grid: Grid, ratio: float = 2.0 / 3.0) -> np.ndarray:
    """2/3 規則: 把 |k_j| 超過 ratio * k_max 的模全部歸零"""
    return ifftn(fftn(values) * grid.dealias_mask(ratio))


def translate(values: np.ndarray, grid: Grid, shift: Sequence[float]) -> np.ndarray:
    """回傳 f(x - shift) (週期平移，以譜相位實現)"""
    shift = np.asarray(shift, dtype=float).reshape(grid.dim)
    if not np.any(shift):
        return np.array(values, dtype=complex)
    phase = sum(k * a for k, a in zip(grid.kvecs, shift))
    return ifftn(fftn(values) * np.exp(-1j * phase))


# 4096 點時每個矩陣約 256 MB，只留最近用到的兩個
@lru_cache(maxsize=2)
def _interpolation_matrix(grid: Grid, scale: float) -> np.ndarray:
    n = grid.points
    targets = scale * grid.axis
    # 以 x_0 = -L 為相位原點的三角插值
    phase = np.outer(targets - grid.axis[0], grid.wavenumbers)
    matrix = np.exp(1j * phase) / n
    matrix[:, n // 2] = 0.0
    outside = np.abs(targets) > grid.extent * (1.0 + 1e-12)
    matrix[outside, :] = 0.0
    return matrix


def dilate_values(values: np.ndarray, grid: Grid, scale: float) -> np.ndarray:
    """
    以譜插值計算 f(scale * x)。

    每個軸各自套用一次 n x n 插值矩陣 (張量格點上的縮放可分離)；
    落在盒子外的目標點 (|scale * x| > L) 取 0，亦即假設場在盒子邊緣已衰減。
    """
    result = np.array(values, dtype=complex)
    if scale == 1.0:
        return result
    matrix = _interpolation_matrix(grid, float(scale))
    for axis in range(grid.dim):
        values_hat = sp_fft.fft(result, axis=axis, workers=-1)
        result = np.moveaxis(np.tensordot(matrix, values_hat, axes=([1], [axis])), 0, axis)
    return result


def reflect(values: np.ndarray, axis: int) -> np.ndarray:
    """x_axis -> -x_axis；索引 j 對應到 n - j (mod n)"""
    return np.roll(np.flip(values, axis=axis), 1, axis=axis)


def sech(x):
    """
    不會溢位的雙曲正割。
    """
    e = np.exp(-np.abs(x))
    return 2 * e / (1 + e ** 2)
