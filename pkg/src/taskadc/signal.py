"""Synthetic linear signal model on a dense time grid.

The analog scene is a set of n channel signals observed over a window
[0, T), discretized into L grid points.  Each grid column is a linear
measurement of the task vector s plus white Gaussian noise:

    x(t) = G(t) s + w(t),   G(t)_{ij} = sqrt(rho) (1 + 0.5 cos(2 pi f0 t)) e^{-|i-j|}.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class SignalModel:
    """Generative description of the dense-grid scene."""

    n: int = 6
    k: int = 4
    T: float = 1e-3
    L: int = 20
    rho: float = 1.0
    f0: float = 1e3
    noise_variance: float = 1.0
    # frozen additive mismatch on the spatial factor sqrt(rho)*e^{-|i-j|};
    # None means the exact model
    spatial_perturbation: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.L < 1 or self.T <= 0:
            raise ValueError("need L >= 1 and T > 0")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.noise_variance <= 0:
            raise ValueError("noise_variance must be positive")
        if self.spatial_perturbation is not None:
            pert = np.asarray(self.spatial_perturbation, dtype=float)
            if pert.shape != (self.n, self.k):
                raise ValueError("spatial_perturbation must be n x k")
            object.__setattr__(self, "spatial_perturbation", pert)

    @property
    def grid_step(self) -> float:
        return self.T / self.L

    @property
    def grid_times(self) -> np.ndarray:
        return np.arange(self.L) * self.grid_step

    def with_rho(self, rho: float) -> "SignalModel":
        """Same exact scene at a different SNR scale.

        Only valid on unperturbed models; a frozen mismatch is tied to the
        rho it was drawn at (perturb each sweep point with its own call to
        :func:`perturb_model` instead).
        """
        if self.spatial_perturbation is not None:
            raise ValueError("cannot rescale a perturbed model; re-perturb instead")
        return replace(self, rho=rho)


@dataclass(frozen=True)
class Dataset:
    """N labeled pairs (s, x): s is (N, k), x is (N, n, L)."""

    s: np.ndarray
    x: np.ndarray
    snr: float
    seed: int

    def __post_init__(self):
        if self.s.ndim != 2 or self.x.ndim != 3 or len(self.s) != len(self.x):
            raise ValueError("s must be (N, k) and x (N, n, L) with matching N")
        if len(self.s) < 1:
            raise ValueError("dataset must contain at least one pair")

    def __len__(self) -> int:
        return len(self.s)


def spatial_factor(model: SignalModel) -> np.ndarray:
    """Static n x k factor sqrt(rho) * e^{-|i-j|}, plus any frozen mismatch."""
    i = np.arange(model.n)[:, None]
    j = np.arange(model.k)[None, :]
    base = np.sqrt(model.rho) * np.exp(-np.abs(i - j).astype(float))
    if model.spatial_perturbation is not None:
        base = base + model.spatial_perturbation
    return base


def temporal_factor(t, model: SignalModel):
    return 1.0 + 0.5 * np.cos(2.0 * np.pi * model.f0 * np.asarray(t, dtype=float))


def measurement_matrix(t: float, model: SignalModel) -> np.ndarray:
    """G(t) for a single time instant t in [0, T)."""
    if not (0.0 <= t < model.T):
        raise ValueError(f"t={t} outside the observation window [0, {model.T})")
    return temporal_factor(t, model) * spatial_factor(model)


def measurement_stack(model: SignalModel) -> np.ndarray:
    """G at every grid time, shape (L, n, k)."""
    mod = temporal_factor(model.grid_times, model)
    return mod[:, None, None] * spatial_factor(model)[None, :, :]


def sample_dense_signal(model: SignalModel, s: np.ndarray,
                        rng: np.random.Generator) -> np.ndarray:
    """One dense observation: column j is G(j*T/L) s + noise, shape (n, L)."""
    s = np.asarray(s, dtype=float)
    if s.shape != (model.k,):
        raise ValueError(f"task vector must have length {model.k}, got {s.shape}")
    clean = measurement_stack(model) @ s  # (L, n)
    noise = rng.normal(0.0, np.sqrt(model.noise_variance), size=(model.L, model.n))
    return (clean + noise).T


def sample_batch(model: SignalModel, s: np.ndarray,
                 rng: np.random.Generator,
                 model_noise_fraction: float = 0.0,
                 model_noise_mode: str = "absolute") -> np.ndarray:
    """Vectorized sample_dense_signal for s of shape (N, k) -> (N, n, L).

    A positive model_noise_fraction redraws a Gaussian mismatch of the
    spatial factor independently for every item (variance per
    :func:`perturbation_variance`), emulating acquisition through a channel
    that is only known up to that uncertainty.
    """
    s = np.asarray(s, dtype=float)
    clean = np.einsum("lnk,bk->bnl", measurement_stack(model), s)
    if model_noise_fraction > 0.0:
        var = perturbation_variance(model, model_noise_fraction, model_noise_mode)
        delta = rng.normal(size=(len(s), model.n, model.k)) * np.sqrt(var)
        mod = temporal_factor(model.grid_times, model)
        clean = clean + np.einsum("bnk,bk,l->bnl", delta, s, mod)
    noise = rng.normal(0.0, np.sqrt(model.noise_variance), size=clean.shape)
    return clean + noise


def draw_tasks(model: SignalModel, N: int, rng: np.random.Generator,
               task: str = "classification") -> np.ndarray:
    if task == "classification":
        return rng.choice([-1.0, 1.0], size=(N, model.k))
    if task == "regression":
        return rng.normal(size=(N, model.k))
    raise ValueError(f"unknown task {task!r}")


def generate_dataset(model: SignalModel, N: int, seed: int,
                     task: str = "classification",
                     model_noise_fraction: float = 0.0,
                     model_noise_mode: str = "absolute") -> Dataset:
    """N i.i.d. labeled pairs; a pure function of (model, N, seed).

    model_noise_fraction > 0 corrupts each item with an independently
    redrawn spatial-factor mismatch (see :func:`sample_batch`).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if model_noise_fraction < 0:
        raise ValueError("model_noise_fraction must be nonnegative")
    rng = np.random.default_rng(seed)
    s = draw_tasks(model, N, rng, task)
    x = sample_batch(model, s, rng, model_noise_fraction, model_noise_mode)
    return Dataset(s=s, x=x, snr=model.rho, seed=seed)


def perturbation_variance(model: SignalModel, fraction: float,
                          mode: str = "absolute") -> np.ndarray:
    """Per-entry mismatch variance of the unperturbed spatial factor.

    "absolute" reads the uncertainty level as variance = fraction * |entry|;
    "relative" as variance = fraction * entry^2.
    """
    if fraction < 0:
        raise ValueError("fraction must be nonnegative")
    base = spatial_factor(replace(model, spatial_perturbation=None))
    if mode == "absolute":
        return fraction * np.abs(base)
    if mode == "relative":
        return fraction * base ** 2
    raise ValueError(f"unknown perturbation mode {mode!r}")


def perturb_model(model: SignalModel, fraction: float, rng: np.random.Generator,
                  mode: str = "absolute") -> SignalModel:
    """Return a model with a frozen Gaussian mismatch on the spatial factor.

    Per-entry perturbation variance is fraction * |entry| ("absolute") or
    fraction * entry^2 ("relative").  The temporal modulation is untouched,
    so the mismatch is a persistent model error rather than per-sample noise.
    """
    var = perturbation_variance(model, fraction, mode)
    delta = rng.normal(size=var.shape) * np.sqrt(var)
    if fraction == 0:
        delta = None
    return replace(model, spatial_perturbation=delta)


def db_to_linear(snr_db: float) -> float:
    return float(10.0 ** (snr_db / 10.0))
