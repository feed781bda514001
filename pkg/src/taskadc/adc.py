"""Trainable soft sampler / soft quantizer and their hard counterparts.

During training the sampler is a Gaussian kernel sum over the dense grid
and the quantizer is a sum of tanh steps; after training both are
projected onto the discrete rules (grid-point selection, staircase
quantization with borders b_i / c_i).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass
class SoftSampler:
    """Gaussian-kernel relaxation of grid-point sampling.

    sample_times holds the L-tilde trainable times t_j in [0, T);
    kernel_width is the shared sigma^2 (seconds^2), shrunk by annealing.
    """

    sample_times: np.ndarray
    kernel_width: float
    L: int
    T: float

    def __post_init__(self):
        self.sample_times = np.asarray(self.sample_times, dtype=float)
        if self.kernel_width <= 0:
            raise ValueError("kernel_width (sigma^2) must be positive")
        if self.sample_times.ndim != 1 or len(self.sample_times) > self.L:
            raise ValueError("need a 1-D vector of at most L sample times")
        if np.any(self.sample_times < 0) or np.any(self.sample_times >= self.T):
            raise ValueError("sample times must lie in [0, T)")

    @property
    def n_samples(self) -> int:
        return len(self.sample_times)

    @property
    def grid_step(self) -> float:
        return self.T / self.L

    def kernel_matrix(self) -> np.ndarray:
        """K[i, j] = exp(-(i*T_L - t_j)^2 / sigma^2), shape (L, L~)."""
        grid = np.arange(self.L) * self.grid_step
        d = grid[:, None] - self.sample_times[None, :]
        return np.exp(-(d ** 2) / self.kernel_width)

    def kernel_time_grad(self) -> np.ndarray:
        """dK[i, j] / dt_j, same shape as the kernel matrix."""
        grid = np.arange(self.L) * self.grid_step
        d = grid[:, None] - self.sample_times[None, :]
        return np.exp(-(d ** 2) / self.kernel_width) * (2.0 * d / self.kernel_width)


@dataclass
class SoftQuantizer:
    """Sum-of-tanh relaxation a0 + sum_i a_i tanh(c_i z - b_i)."""

    a0: float
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if not (self.a.shape == self.b.shape == self.c.shape) or self.a.ndim != 1:
            raise ValueError("a, b, c must be 1-D vectors of equal length")
        if len(self.a) < 1:
            raise ValueError("need at least one step (M~ >= 2)")
        if np.any(self.c <= 0):
            raise ValueError("all slopes c_i must be positive")

    @property
    def n_levels(self) -> int:
        return len(self.a) + 1


@dataclass
class HardAdc:
    """Projected discrete ADC: grid indices, borders, and level set."""

    sample_indices: np.ndarray
    borders: np.ndarray
    levels: np.ndarray
    degenerate_borders: bool = False

    def __post_init__(self):
        self.sample_indices = np.asarray(self.sample_indices, dtype=int)
        self.borders = np.asarray(self.borders, dtype=float)
        self.levels = np.asarray(self.levels, dtype=float)
        if np.any(np.diff(self.sample_indices) <= 0):
            raise ValueError("sample indices must be strictly increasing")
        if np.any(np.diff(self.borders) <= 0):
            raise ValueError("borders must be strictly increasing")
        if len(self.levels) != len(self.borders) + 1:
            raise ValueError("need exactly one level per cell")


@dataclass
class AnnealSchedule:
    """Per-epoch multiplicative factors: sigma^2 shrinks, slopes grow."""

    sigma_factor: float = 0.94
    slope_factor: float = 1.06

    def __post_init__(self):
        if self.sigma_factor > 1.0:
            raise ValueError("sigma_factor must be <= 1")
        if self.slope_factor < 1.0:
            raise ValueError("slope_factor must be >= 1")

    def factors(self, epoch: int):
        """(gamma_sigma, gamma_c) applied after the given epoch."""
        return self.sigma_factor, self.slope_factor


def soft_sample(y_dense: np.ndarray, sampler: SoftSampler) -> np.ndarray:
    """Kernel-sum sampling of a (p, L) matrix into (p, L~)."""
    y_dense = np.asarray(y_dense, dtype=float)
    if y_dense.shape[-1] != sampler.L:
        raise ValueError(f"expected {sampler.L} dense columns, got {y_dense.shape[-1]}")
    return y_dense @ sampler.kernel_matrix()


def soft_quantize(z, q: SoftQuantizer):
    """Elementwise a0 + sum_i a_i tanh(c_i z - b_i)."""
    z = np.asarray(z, dtype=float)
    u = np.tanh(np.multiply.outer(q.c, z) - q.b.reshape((-1,) + (1,) * z.ndim))
    return q.a0 + np.tensordot(q.a, u, axes=(0, 0))


def harden_sampler(sampler: SoftSampler) -> np.ndarray:
    """Project sample times onto distinct grid indices.

    Each t_j claims its nearest grid point; on collisions the time closer
    to its nearest point wins and later claimants take the nearest
    unclaimed point.  Returns sorted distinct indices.
    """
    return np.sort(assign_sample_indices(sampler))


def assign_sample_indices(sampler: SoftSampler) -> np.ndarray:
    """Like harden_sampler but keeps the t_j ordering of the assignment."""
    t = sampler.sample_times
    step = sampler.grid_step
    nearest = np.clip(np.rint(t / step).astype(int), 0, sampler.L - 1)
    order = np.argsort(np.abs(t - nearest * step), kind="stable")
    taken = np.zeros(sampler.L, dtype=bool)
    assigned = np.empty(len(t), dtype=int)
    for j in order:
        idx = nearest[j]
        if taken[idx]:
            free = np.flatnonzero(~taken)
            idx = free[np.argmin(np.abs(free * step - t[j]))]
        taken[idx] = True
        assigned[j] = idx
    return assigned


def harden_quantizer(q: SoftQuantizer):
    """Borders {b_i / c_i} sorted, with the staircase level on each cell.

    The level of a cell is a0 + sum_i a_i sign(mid - b_i/c_i) with the
    outer cells using the signs at +-infinity.  Duplicate borders collapse
    to one cell and the result is flagged degenerate.
    """
    borders = np.sort(q.b / q.c)
    uniq = np.unique(borders)
    degenerate = len(uniq) < len(borders)
    if degenerate:
        warnings.warn("duplicate quantizer borders collapsed", RuntimeWarning)
    levels = np.empty(len(uniq) + 1)
    sorted_all = borders
    for cell in range(len(uniq) + 1):
        lo = -np.inf if cell == 0 else uniq[cell - 1]
        hi = np.inf if cell == len(uniq) else uniq[cell]
        if np.isinf(lo) and np.isinf(hi):
            mid = 0.0
        elif np.isinf(lo):
            mid = hi - 1.0
        elif np.isinf(hi):
            mid = lo + 1.0
        else:
            mid = 0.5 * (lo + hi)
        # right-closed cells: a border point belongs to the cell above it
        signs = np.where(mid > sorted_all, 1.0, -1.0)
        levels[cell] = q.a0 + np.sum(q.a * signs)
    return uniq, levels, degenerate


def quantize_hard(values: np.ndarray, borders: np.ndarray,
                  levels: np.ndarray) -> np.ndarray:
    """Map each entry to the level of its cell; ties at a border go up."""
    cells = np.searchsorted(borders, values, side="right")
    return levels[cells]


def hard_forward(y_dense: np.ndarray, adc: HardAdc) -> np.ndarray:
    """Discrete ADC: select grid columns, then quantize each entry."""
    y_dense = np.asarray(y_dense, dtype=float)
    z = y_dense[..., adc.sample_indices]
    return quantize_hard(z, adc.borders, adc.levels)


def anneal_step(sampler: SoftSampler, q: SoftQuantizer, epoch: int,
                schedule: AnnealSchedule) -> None:
    """One epoch of annealing: sharpen the kernel and the tanh steps.

    Only the non-trainable sharpness parameters move; t_j, a_i, b_i are
    untouched.
    """
    gamma_sigma, gamma_c = schedule.factors(epoch)
    sampler.kernel_width *= gamma_sigma
    q.c = q.c * gamma_c


def init_uniform_quantizer(n_levels: int, half_range: float,
                           slope_scale: float = 5.0) -> SoftQuantizer:
    """Uniform midrise initialization over [-half_range, half_range].

    Slopes start at slope_scale / cell-width so the tanh steps already
    resemble the staircase before annealing.
    """
    if n_levels < 2:
        raise ValueError("need at least two levels")
    if half_range <= 0:
        raise ValueError("half_range must be positive")
    width = 2.0 * half_range / n_levels
    borders = -half_range + width * np.arange(1, n_levels)
    c = np.full(n_levels - 1, slope_scale / width)
    a = np.full(n_levels - 1, width / 2.0)
    return SoftQuantizer(a0=0.0, a=a, b=c * borders, c=c)
