"""Model-based MAP reference detectors.

Uniform prior and white Gaussian noise make the unquantized MAP rules
nearest-signal decisions; the quantized MAP maximizes the product of
Gaussian cell probabilities of the observed quantizer outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .pipeline import class_to_symbols
from .signal import (SignalModel, measurement_stack, perturbation_variance,
                     spatial_factor, temporal_factor)

MAX_CANDIDATES = 2 ** 20


@dataclass(frozen=True)
class UniformQuantizer:
    """M~ equal cells on [-r, r]; borders at -r + i * 2r / M~."""

    n_levels: int
    half_range: float

    def __post_init__(self):
        if self.n_levels < 2 or self.half_range <= 0:
            raise ValueError("need M~ >= 2 and r > 0")

    @property
    def cell_width(self) -> float:
        return 2.0 * self.half_range / self.n_levels

    def cells(self, values: np.ndarray) -> np.ndarray:
        """Cell index of each entry; a border value goes to the cell above."""
        borders = -self.half_range + self.cell_width * np.arange(1, self.n_levels)
        return np.searchsorted(borders, values, side="right")

    def cell_edges(self, cells: np.ndarray):
        """(lower, upper) edges per cell; outer cells extend to +-infinity."""
        lo = -self.half_range + self.cell_width * cells
        hi = lo + self.cell_width
        lo = np.where(cells == 0, -np.inf, lo)
        hi = np.where(cells == self.n_levels - 1, np.inf, hi)
        return lo, hi


def candidate_symbols(k: int) -> np.ndarray:
    """All 2^k binary task vectors ordered by class index."""
    count = 2 ** k
    if count > MAX_CANDIDATES:
        raise ValueError(f"exhaustive search over {count} candidates refused")
    return class_to_symbols(np.arange(count), k)


def uniform_sample_indices(L: int, n_samples: int) -> np.ndarray:
    """Grid indices nearest the uniform cell-midpoint times m*T/L~ + T/(2 L~).

    Exact midpoint ties resolve toward the lower index, which also makes
    n_samples = L reproduce the identity selection.
    """
    if n_samples > L:
        raise ValueError("cannot take more uniform samples than grid points")
    v = (np.arange(n_samples) + 0.5) * L / n_samples
    idx = np.ceil(v - 0.5).astype(int)  # round half down
    return np.clip(idx, 0, L - 1)


def _candidate_means(model: SignalModel, indices: np.ndarray) -> np.ndarray:
    """Noiseless signals per class, shape (2^k, n, |indices|)."""
    G = measurement_stack(model)[indices]          # (Ls, n, k)
    S = candidate_symbols(model.k)                 # (C, k)
    return np.einsum("lnk,ck->cnl", G, S)


def map_full_batch(x: np.ndarray, model: SignalModel) -> np.ndarray:
    """Nearest-signal MAP over the full dense grid, batched (B, n, L) -> (B, k)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    means = _candidate_means(model, np.arange(model.L))
    d = x[:, None] - means[None]
    dist = np.einsum("bcnl,bcnl->bc", d, d)
    return candidate_symbols(model.k)[np.argmin(dist, axis=1)]


def map_full(x: np.ndarray, model: SignalModel) -> np.ndarray:
    return map_full_batch(np.asarray(x)[None], model)[0]


def map_full_perturbed_batch(x: np.ndarray, model: SignalModel,
                             fraction: float, rng: np.random.Generator,
                             mode: str = "absolute") -> np.ndarray:
    """Full-grid MAP whose model knowledge is wrong by a fresh mismatch.

    For every trial the detector evaluates the nearest-signal rule under an
    independently redrawn Gaussian perturbation of the spatial factor
    (variance per :func:`taskadc.signal.perturbation_variance`), emulating a
    receiver that only has access to a noisy estimate of G(t).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    var = perturbation_variance(model, fraction, mode)
    delta = rng.normal(size=(len(x), model.n, model.k)) * np.sqrt(var)
    mod = temporal_factor(model.grid_times, model)
    S = candidate_symbols(model.k)
    means = _candidate_means(model, np.arange(model.L))        # (C, n, L)
    means = means[None] + np.einsum("bnk,ck,l->bcnl", delta, S, mod)
    d = x[:, None] - means
    dist = np.einsum("bcnl,bcnl->bc", d, d)
    return S[np.argmin(dist, axis=1)]


def map_full_perturbed(x: np.ndarray, model: SignalModel, fraction: float,
                       rng: np.random.Generator,
                       mode: str = "absolute") -> np.ndarray:
    return map_full_perturbed_batch(np.asarray(x)[None], model, fraction,
                                    rng, mode)[0]


def map_sampled_batch(x: np.ndarray, model: SignalModel,
                      n_samples: int) -> np.ndarray:
    """Nearest-signal MAP restricted to L~ uniformly placed grid samples."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    idx = uniform_sample_indices(model.L, n_samples)
    means = _candidate_means(model, idx)
    d = x[:, :, idx][:, None] - means[None]
    dist = np.einsum("bcnl,bcnl->bc", d, d)
    return candidate_symbols(model.k)[np.argmin(dist, axis=1)]


def map_sampled(x: np.ndarray, model: SignalModel, n_samples: int) -> np.ndarray:
    return map_sampled_batch(np.asarray(x)[None], model, n_samples)[0]


def default_quantizer_range(model: SignalModel, indices: np.ndarray) -> float:
    """Loader range 3 * (noiseless signal std) + 3 * sigma_w.

    The noiseless std is the RMS over sampled entries of the per-entry
    standard deviation under uniform +-1 symbols, sqrt(sum_j G_ij^2).
    """
    G = measurement_stack(model)[indices]          # (Ls, n, k)
    per_entry_var = np.sum(G ** 2, axis=2)
    signal_std = float(np.sqrt(np.mean(per_entry_var)))
    return 3.0 * signal_std + 3.0 * float(np.sqrt(model.noise_variance))


def map_sampled_quantized_batch(x: np.ndarray, model: SignalModel,
                                n_samples: int, bit_budget: int) -> np.ndarray:
    """MAP from uniformly sampled, uniformly quantized channels.

    All n channels are sampled at L~ uniform times with no analog
    combining, so each sample gets floor(budget / (n * L~)) bits.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    bits = bit_budget // (model.n * n_samples)
    if bits < 1:
        raise ValueError(
            f"budget {bit_budget} leaves no bits for {model.n}x{n_samples} samples")
    idx = uniform_sample_indices(model.L, n_samples)
    quant = UniformQuantizer(n_levels=2 ** bits,
                             half_range=default_quantizer_range(model, idx))
    cells = quant.cells(x[:, :, idx])              # (B, n, Ls)
    lo, hi = quant.cell_edges(cells)
    means = _candidate_means(model, idx)           # (C, n, Ls)
    sigma = float(np.sqrt(model.noise_variance))
    upper = ndtr((hi[:, None] - means[None]) / sigma)
    lower = ndtr((lo[:, None] - means[None]) / sigma)
    loglik = np.log(np.maximum(upper - lower, 1e-300)).sum(axis=(2, 3))
    return candidate_symbols(model.k)[np.argmax(loglik, axis=1)]


def map_sampled_quantized(x: np.ndarray, model: SignalModel, n_samples: int,
                          bit_budget: int) -> np.ndarray:
    return map_sampled_quantized_batch(np.asarray(x)[None], model,
                                       n_samples, bit_budget)[0]
