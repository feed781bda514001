"""End-to-end trainable acquisition pipeline.

Composes the analog combiner, the soft (training) or hard (inference)
ADC, and the digital decoder, and trains everything jointly with ADAM
plus an annealing schedule that sharpens the soft ADC toward its
discrete projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace as dataclasses_replace

import numpy as np

from . import adc as adc_mod
from . import net
from .adc import AnnealSchedule, HardAdc, SoftQuantizer, SoftSampler
from .signal import Dataset


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class AdcHyperparams:
    """The acquisition triplet theta = (p, L~, M~)."""

    p: int
    n_samples: int
    n_levels: int

    def __post_init__(self):
        if self.p < 1 or self.n_samples < 1 or self.n_levels < 2:
            raise ValueError("need p >= 1, L~ >= 1, M~ >= 2")

    @property
    def bits_per_sample(self) -> int:
        return math.ceil(math.log2(self.n_levels))

    def bit_cost(self) -> int:
        return self.p * self.n_samples * self.bits_per_sample

    def astuple(self):
        return (self.p, self.n_samples, self.n_levels)


def bit_cost(theta: AdcHyperparams) -> int:
    """Total acquisition bits p * L~ * ceil(log2 M~)."""
    return theta.bit_cost()


@dataclass
class TrainConfig:
    lr: float = 0.01
    epochs: int = 100
    batch_size: int = 256
    seed: int = 0
    schedule: AnnealSchedule = field(default_factory=AnnealSchedule)
    sigma2_init_cells: float = 1.0   # initial sigma^2 in units of T_L^2
    slope_scale: float = 5.0
    hidden: tuple = (32, 16)
    head: str = "joint"              # "joint" or "factorized" classification head
    task: str = "classification"
    restarts: int = 1                # independent runs; best final loss wins


@dataclass
class TaskSystem:
    """Trained acquisition chain: combiner, ADC pair, digital decoder."""

    n: int
    k: int
    T: float
    L: int
    hyper: AdcHyperparams
    analog: np.ndarray               # (p*L, n*L)
    layers: list
    sampler: SoftSampler
    quantizer: SoftQuantizer
    hard_adc: HardAdc | None = None
    task: str = "classification"
    head: str = "joint"

    def __post_init__(self):
        self.analog = np.asarray(self.analog, dtype=float)
        expected = (self.hyper.p * self.L, self.n * self.L)
        if self.analog.shape != expected:
            raise ValueError(
                f"analog combiner must be {expected}, got {self.analog.shape}")


# ---------------------------------------------------------------------------
# class index <-> symbol vector codec (binary alphabet {-1, +1})

def symbols_to_class(s: np.ndarray) -> np.ndarray:
    """Base-2 digits, first symbol most significant; -1 -> 0, +1 -> 1."""
    s = np.atleast_2d(np.asarray(s))
    bits = (s > 0).astype(int)
    weights = 2 ** np.arange(s.shape[1] - 1, -1, -1)
    return bits @ weights


def class_to_symbols(idx: np.ndarray, k: int) -> np.ndarray:
    idx = np.atleast_1d(np.asarray(idx, dtype=int))
    shifts = np.arange(k - 1, -1, -1)
    bits = (idx[:, None] >> shifts) & 1
    return np.where(bits > 0, 1.0, -1.0)


# ---------------------------------------------------------------------------
# forward / backward

def _flatten_dense(x: np.ndarray) -> np.ndarray:
    """(B, n, L) -> (B, n*L) stacked time-major: [x(t_0); x(t_1); ...]."""
    return x.transpose(0, 2, 1).reshape(len(x), -1)


def forward_soft_batch(x: np.ndarray, sys: TaskSystem, record: bool = False):
    """Differentiable pipeline on a (B, n, L) batch.

    Returns the digital-network output (class probabilities, per-symbol
    probabilities, or regression estimates) and, when record=True, the
    tape consumed by :func:`backprop`.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (sys.n, sys.L):
        raise ValueError(
            f"expected inputs of shape (n={sys.n}, L={sys.L}), got {x.shape[1:]}")
    p = sys.hyper.p
    x_vec = _flatten_dense(x)
    y_vec = x_vec @ sys.analog.T
    y = y_vec.reshape(len(x), sys.L, p).transpose(0, 2, 1)   # (B, p, L)
    kernel = sys.sampler.kernel_matrix()
    z = y @ kernel                                            # (B, p, L~)
    q = sys.quantizer
    steps = np.tanh(q.c[:, None, None, None] * z[None] - q.b[:, None, None, None])
    quantized = q.a0 + np.tensordot(q.a, steps, axes=(0, 0))
    q_flat = quantized.reshape(len(x), -1)
    out, records = net.forward(sys.layers, q_flat)
    if sys.task == "classification" and sys.head == "factorized":
        out = net.softmax(out.reshape(len(x), sys.k, -1))
    if not record:
        return out, None
    tape = {"mode": "soft", "x_vec": x_vec, "y": y, "kernel": kernel,
            "z": z, "steps": steps, "records": records, "out": out}
    return out, tape


def forward_soft(x: np.ndarray, sys: TaskSystem):
    """Single-input convenience wrapper around forward_soft_batch."""
    out, _ = forward_soft_batch(np.asarray(x)[None], sys)
    return out[0]


def backprop(sys: TaskSystem, tape: dict, d_out: np.ndarray) -> dict:
    """Gradients of a scalar loss for every trainable parameter.

    d_out is d loss / d final-layer pre-activation for softmax heads
    (fused with cross-entropy) and d loss / d output otherwise.  Returns
    a dict with keys analog, layers, t, a0, a, b.
    """
    if tape is None or tape.get("mode") != "soft":
        raise NotImplementedError(
            "gradients through the hard ADC are undefined; record a soft tape")
    q = sys.quantizer
    layer_grads, d_qflat = net.backward(sys.layers, tape["records"], d_out)
    B = len(tape["x_vec"])
    d_quant = d_qflat.reshape(B, sys.hyper.p, sys.hyper.n_samples)

    steps = tape["steps"]                      # (M-1, B, p, L~)
    sech2 = 1.0 - steps ** 2
    d_a0 = float(d_quant.sum())
    d_a = np.einsum("ibpj,bpj->i", steps, d_quant)
    d_b = -(q.a * np.einsum("ibpj,bpj->i", sech2, d_quant))
    d_z = np.einsum("i,i,ibpj->bpj", q.a, q.c, sech2 * d_quant[None])

    kernel = tape["kernel"]
    d_y = d_z @ kernel.T                       # (B, p, L)
    cross = np.einsum("bpi,bpj->ij", tape["y"], d_z)
    d_t = np.sum(cross * sys.sampler.kernel_time_grad(), axis=0)

    d_yvec = d_y.transpose(0, 2, 1).reshape(B, -1)
    d_analog = d_yvec.T @ tape["x_vec"]
    return {"analog": d_analog, "layers": layer_grads,
            "t": d_t, "a0": d_a0, "a": d_a, "b": d_b}


def loss_and_grad(sys: TaskSystem, out: np.ndarray, s: np.ndarray):
    """Task loss and d loss / d final pre-activation for a batch output."""
    if sys.task == "regression":
        return net.mse_loss(out, s)
    if sys.head == "joint":
        labels = symbols_to_class(s)
        return net.cross_entropy_loss(out, labels)
    # factorized head: independent softmax per symbol, summed cross-entropy
    B, k, width = out.shape
    digits = (np.asarray(s) > 0).astype(int)
    picked = out[np.arange(B)[:, None], np.arange(k)[None, :], digits]
    loss = float(np.mean(np.sum(-np.log(np.maximum(picked, 1e-12)), axis=1)))
    d_logits = out.copy()
    d_logits[np.arange(B)[:, None], np.arange(k)[None, :], digits] -= 1.0
    return loss, d_logits.reshape(B, k * width) / B


def decide(sys: TaskSystem, out: np.ndarray) -> np.ndarray:
    """Map network outputs to task-vector decisions, shape (B, k)."""
    if sys.task == "regression":
        return out
    if sys.head == "joint":
        return class_to_symbols(np.argmax(out, axis=-1), sys.k)
    return np.where(np.argmax(out, axis=-1) > 0, 1.0, -1.0)


def forward_hard_batch(x: np.ndarray, sys: TaskSystem) -> np.ndarray:
    """Inference pipeline with the projected discrete ADC; returns decisions."""
    if sys.hard_adc is None:
        raise ValueError("system has not been projected; call harden() first")
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    x_vec = _flatten_dense(x)
    y = (x_vec @ sys.analog.T).reshape(len(x), sys.L, sys.hyper.p).transpose(0, 2, 1)
    quantized = adc_mod.hard_forward(y, sys.hard_adc)
    out, _ = net.forward(sys.layers, quantized.reshape(len(x), -1))
    if sys.task == "classification" and sys.head == "factorized":
        out = net.softmax(out.reshape(len(x), sys.k, -1))
    return decide(sys, out)


def forward_hard(x: np.ndarray, sys: TaskSystem) -> np.ndarray:
    return forward_hard_batch(np.asarray(x)[None], sys)[0]


# ---------------------------------------------------------------------------
# projection and training

def harden(sys: TaskSystem) -> TaskSystem:
    """Project the soft ADC onto its discrete counterpart (idempotent).

    Sample slots are reordered so the selected grid indices are sorted;
    the first digital layer's input columns are permuted identically, so
    the realized decision function is unchanged.  The soft times are
    snapped onto their assigned grid points, keeping the soft and hard
    pipelines consistent after annealing.
    """
    assigned = adc_mod.assign_sample_indices(sys.sampler)
    perm = np.argsort(assigned, kind="stable")
    sorted_idx = assigned[perm]

    p, lt = sys.hyper.p, sys.hyper.n_samples
    col_perm = (np.arange(p)[:, None] * lt + perm[None, :]).reshape(-1)
    first = sys.layers[0]
    sys.layers[0] = net.DenseLayer(weights=first.weights[:, col_perm],
                                   bias=first.bias, activation=first.activation)
    sys.sampler.sample_times = sorted_idx * sys.sampler.grid_step
    borders, levels, degenerate = adc_mod.harden_quantizer(sys.quantizer)
    sys.hard_adc = HardAdc(sample_indices=sorted_idx, borders=borders,
                           levels=levels, degenerate_borders=degenerate)
    return sys


def _init_system(n: int, k: int, T: float, L: int, theta: AdcHyperparams,
                 cfg: TrainConfig, rng: np.random.Generator,
                 sample_x: np.ndarray) -> TaskSystem:
    p, lt, levels = theta.astuple()
    if lt > L:
        raise ValueError("L~ cannot exceed the dense grid size L")
    bound = 1.0 / np.sqrt(n * L)
    analog = rng.uniform(-bound, bound, size=(p * L, n * L))

    # evenly spread initial times at cell midpoints
    times = (np.arange(lt) + 0.5) * T / lt
    sampler = SoftSampler(sample_times=times,
                          kernel_width=cfg.sigma2_init_cells * (T / L) ** 2,
                          L=L, T=T)

    # quantizer range from the empirical spread of pre-quantization values
    x_vec = _flatten_dense(sample_x)
    y = (x_vec @ analog.T).reshape(len(sample_x), L, p).transpose(0, 2, 1)
    z = y @ sampler.kernel_matrix()
    half_range = max(3.0 * float(np.std(z)), 1e-3)
    quantizer = adc_mod.init_uniform_quantizer(levels, half_range, cfg.slope_scale)

    if cfg.task == "regression":
        out_width, out_act = k, "linear"
    elif cfg.head == "factorized":
        out_width, out_act = 2 * k, "linear"
    else:
        out_width, out_act = 2 ** k, "softmax"
    widths = [p * lt, *cfg.hidden]
    layers = [net.init_dense(w_out, w_in, rng, "relu")
              for w_in, w_out in zip(widths[:-1], widths[1:])]
    layers.append(net.init_dense(out_width, widths[-1], rng, out_act))
    return TaskSystem(n=n, k=k, T=T, L=L, hyper=theta, analog=analog,
                      layers=layers, sampler=sampler, quantizer=quantizer,
                      task=cfg.task, head=cfg.head)


def train(dataset: Dataset, theta: AdcHyperparams, cfg: TrainConfig,
          T: float):
    """Train the soft pipeline on a dataset and project it; returns
    (TaskSystem, per-epoch mean loss history).

    With cfg.restarts > 1, runs that many independent trainings from
    deterministically derived seeds and keeps the one with the lowest
    final-epoch training loss (annealing occasionally destabilizes a
    run; the collapse is visible in the loss).
    """
    if cfg.restarts < 1:
        raise ValueError("restarts must be >= 1")
    best = None
    failure = None
    for r in range(cfg.restarts):
        run_cfg = (cfg if cfg.restarts == 1 else
                   dataclasses_replace(cfg, seed=cfg.seed + 1_000_003 * r))
        try:
            sys, history = _train_once(dataset, theta, run_cfg, T)
        except TrainingDiverged as exc:
            failure = exc
            continue
        if best is None or history[-1] < best[1][-1]:
            best = (sys, history)
    if best is None:
        raise failure or TrainingDiverged("all restarts diverged")
    return best


def _train_once(dataset: Dataset, theta: AdcHyperparams, cfg: TrainConfig,
                T: float):
    N, n, L = dataset.x.shape
    k = dataset.s.shape[1]
    rng = np.random.default_rng(cfg.seed)
    sys = _init_system(n, k, T, L, theta, cfg, rng,
                       dataset.x[: min(512, N)])

    params = {"analog": sys.analog, "t": sys.sampler.sample_times,
              "a0": np.array(sys.quantizer.a0), "a": sys.quantizer.a,
              "b": sys.quantizer.b}
    states = {name: net.AdamState.like(np.asarray(v)) for name, v in params.items()}
    layer_states = [(net.AdamState.like(l.weights), net.AdamState.like(l.bias))
                    for l in sys.layers]

    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        losses = []
        for start in range(0, N, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            out, tape = forward_soft_batch(dataset.x[batch], sys, record=True)
            loss, d_out = loss_and_grad(sys, out, dataset.s[batch])
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became {loss} at epoch {epoch}, step {start // cfg.batch_size}")
            grads = backprop(sys, tape, d_out)

            sys.analog = net.adam_update(sys.analog, grads["analog"],
                                         states["analog"], cfg.lr)
            # t_j live in seconds; scale the ADAM step to grid units so a
            # unit learning rate moves times by a fraction of a cell
            new_t = net.adam_update(sys.sampler.sample_times, grads["t"],
                                    states["t"], cfg.lr * T / L)
            sys.sampler.sample_times = np.clip(new_t, 0.0, T * (1.0 - 1e-9))
            sys.quantizer.a0 = float(net.adam_update(
                np.array(sys.quantizer.a0), np.array(grads["a0"]),
                states["a0"], cfg.lr))
            sys.quantizer.a = net.adam_update(sys.quantizer.a, grads["a"],
                                              states["a"], cfg.lr)
            sys.quantizer.b = net.adam_update(sys.quantizer.b, grads["b"],
                                              states["b"], cfg.lr)
            for layer, (sw, sb), (gw, gb) in zip(sys.layers, layer_states,
                                                 grads["layers"]):
                layer.weights = net.adam_update(layer.weights, gw, sw, cfg.lr)
                layer.bias = net.adam_update(layer.bias, gb, sb, cfg.lr)
            losses.append(loss)
        adc_mod.anneal_step(sys.sampler, sys.quantizer, epoch, cfg.schedule)
        history.append(float(np.mean(losses)))
    harden(sys)
    return sys, history
