"""Bayesian optimization of the acquisition triplet under a bit budget.

A Gaussian-process surrogate over log2-encoded configurations drives an
expected-improvement search; the expensive objective trains the full
acquisition system per SNR and measures its Monte Carlo error rate,
penalized by the bits it spends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm

from .pipeline import AdcHyperparams, TrainConfig, TaskSystem, train
from .signal import SignalModel, generate_dataset


@dataclass(frozen=True)
class SearchSpace:
    """Feasible triplets (p, L~, M~) with M~ a power of two, under a budget."""

    bit_budget: int
    p_max: int
    l_max: int
    bits_min: int = 1
    bits_max: int = 8

    def feasible(self) -> list[AdcHyperparams]:
        out = []
        for p in range(1, self.p_max + 1):
            for lt in range(1, self.l_max + 1):
                for bits in range(self.bits_min, self.bits_max + 1):
                    theta = AdcHyperparams(p, lt, 2 ** bits)
                    if theta.bit_cost() <= self.bit_budget:
                        out.append(theta)
        if not out:
            raise ValueError(f"no feasible configuration under {self.bit_budget} bits")
        return out


def encode(theta: AdcHyperparams) -> np.ndarray:
    """Additive coordinates (log2 p, log2 L~, log2 ceil(log2 M~))."""
    return np.array([math.log2(theta.p), math.log2(theta.n_samples),
                     math.log2(theta.bits_per_sample)])


@dataclass
class GpState:
    """Noise-free GP over encoded triplets with a squared-exponential kernel."""

    points: np.ndarray            # (i, 3) encoded observations
    values: np.ndarray            # (i,)
    length_scale: float = 1.0
    jitter: float = 1e-12

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if len(self.points) != len(self.values) or len(self.values) < 1:
            raise ValueError("need matching, nonempty observations")

    @property
    def prior_mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def signal_variance(self) -> float:
        return max(float(np.var(self.values)), 1e-12)

    def kernel(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
        return self.signal_variance * np.exp(-0.5 * d2 / self.length_scale ** 2)


def gp_posterior(state: GpState, theta_enc: np.ndarray):
    """Posterior (mean, stdev) at encoded points, shape (m, 3) or (3,)."""
    q = np.atleast_2d(np.asarray(theta_enc, dtype=float))
    K = state.kernel(state.points, state.points)
    K[np.diag_indices_from(K)] += state.jitter
    try:
        chol = cho_factor(K, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("kernel matrix singular despite jitter") from exc
    kx = state.kernel(q, state.points)            # (m, i)
    alpha = cho_solve(chol, state.values - state.prior_mean)
    mean = kx @ alpha + state.prior_mean
    v = cho_solve(chol, kx.T)
    var = state.signal_variance - np.einsum("mi,im->m", kx, v)
    # residual variance at the numerical-jitter scale is genuinely zero
    # (noise-free GP interpolates); report it as such
    var = np.where(var < 100.0 * state.jitter, 0.0, var)
    std = np.sqrt(np.maximum(var, 0.0))
    if np.asarray(theta_enc).ndim == 1:
        return float(mean[0]), float(std[0])
    return mean, std


def expected_improvement(state: GpState, theta_enc: np.ndarray,
                         zeta: float = 0.0):
    """Closed-form EI against the incumbent max observed value."""
    mean, std = gp_posterior(state, np.atleast_2d(np.asarray(theta_enc, dtype=float)))
    best = float(np.max(state.values))
    gap = mean - (best + zeta)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(std > 0, gap / np.where(std > 0, std, 1.0), -np.inf)
    ei = np.where(std > 0, gap * norm.cdf(z) + std * norm.pdf(z), 0.0)
    ei = np.maximum(ei, 0.0)
    if np.asarray(theta_enc).ndim == 1:
        return float(ei[0])
    return ei


@dataclass
class BayesOptTrace:
    thetas: list
    values: list
    incumbents: list
    payloads: list

    def best_index(self) -> int:
        return int(np.argmax(self.values))


def _eval_objective(f, theta):
    result = f(theta)
    if isinstance(result, tuple):
        return float(result[0]), result[1]
    return float(result), None


def bayes_opt(space: SearchSpace, f, i_max: int, zeta="auto",
              rng: np.random.Generator | None = None,
              length_scale: float = 1.0):
    """Sequential EI search over the feasible grid.

    f maps a triplet to either a value (to maximize) or (value, payload).
    zeta is the exploration margin added to the incumbent; "auto" uses
    0.01 * |incumbent|.  Returns (best theta, trace).  Stops early if
    every feasible point has been observed.
    """
    if i_max < 1:
        raise ValueError("i_max must be >= 1")
    rng = rng or np.random.default_rng()
    feasible = space.feasible()
    start = feasible[rng.integers(len(feasible))]

    trace = BayesOptTrace([], [], [], [])
    observed: set = set()

    def record(theta):
        value, payload = _eval_objective(f, theta)
        trace.thetas.append(theta)
        trace.values.append(value)
        trace.payloads.append(payload)
        observed.add(theta.astuple())
        trace.incumbents.append(trace.thetas[trace.best_index()])

    record(start)
    for _ in range(i_max - 1):
        remaining = [t for t in feasible if t.astuple() not in observed]
        if not remaining:
            break
        finite = [v for v in trace.values if np.isfinite(v)]
        if not finite:
            record(remaining[rng.integers(len(remaining))])
            continue
        state = GpState(points=np.array([encode(t) for t, v in
                                         zip(trace.thetas, trace.values)
                                         if np.isfinite(v)]),
                        values=np.array(finite),
                        length_scale=length_scale)
        margin = 0.01 * abs(float(np.max(finite))) if zeta == "auto" else zeta
        ei = expected_improvement(
            state, np.array([encode(t) for t in remaining]), zeta=margin)
        # ties: smaller bit cost first, then lexicographic triplet
        keys = [(-ei[i], t.bit_cost(), t.astuple()) for i, t in enumerate(remaining)]
        record(remaining[min(range(len(remaining)), key=lambda i: keys[i])])
    best = trace.thetas[trace.best_index()]
    return best, trace


@dataclass
class MetaObjectiveConfig:
    """How a candidate triplet is scored."""

    alpha: float = 0.002                       # penalty per acquisition bit
    snrs_db: tuple = (0.0, 5.0, 10.0)
    train_config: TrainConfig = field(default_factory=TrainConfig)
    n_train: int = 10_000
    eval_trials: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if not self.snrs_db:
            raise ValueError("need at least one SNR")


def meta_objective(theta: AdcHyperparams, model_for_rho, cfg: MetaObjectiveConfig):
    """Train one system per SNR and score -(alpha * bits + sum of error rates).

    model_for_rho maps a linear rho to the SignalModel used for both
    training data and evaluation.  Returns (value, payload) where payload
    holds the trained systems and per-SNR error rates.  A diverged
    training scores -inf for the whole triplet.
    """
    from .harness import learned_detector, monte_carlo_error_rate
    from .signal import db_to_linear
    from .pipeline import TrainingDiverged
    import dataclasses

    systems, rates = {}, {}
    for snr_db in cfg.snrs_db:
        rho = db_to_linear(snr_db)
        model = model_for_rho(rho)
        data_seed = int(np.random.SeedSequence(
            [cfg.seed, theta.p, theta.n_samples, theta.n_levels,
             int(round(snr_db * 1000)) & 0x7FFFFFFF]).generate_state(1)[0])
        dataset = generate_dataset(model, cfg.n_train, seed=data_seed,
                                   task=cfg.train_config.task)
        tc = dataclasses.replace(cfg.train_config, seed=data_seed ^ 0x5DEECE66)
        try:
            sys_, _ = train(dataset, theta, tc, T=model.T)
        except TrainingDiverged:
            return -np.inf, {"systems": {}, "error_rates": {},
                             "diverged_at": snr_db}
        report = monte_carlo_error_rate(learned_detector(sys_), model,
                                        cfg.eval_trials, seed=data_seed + 1)
        systems[snr_db] = sys_
        rates[snr_db] = report.symbol_error_rate
    value = -(cfg.alpha * theta.bit_cost() + sum(rates.values()))
    return value, {"systems": systems, "error_rates": rates}


@dataclass
class MetaResult:
    theta: AdcHyperparams
    systems: dict
    error_rates: dict
    trace: BayesOptTrace


def learn_system(bit_budget: int, model_for_rho, cfg: MetaObjectiveConfig,
                 space: SearchSpace | None = None, i_max: int = 30,
                 zeta="auto", seed: int = 0,
                 retrain: bool = False,
                 retrain_config: MetaObjectiveConfig | None = None) -> MetaResult:
    """Budgeted meta-optimization followed by weight selection.

    By default the systems trained inside the best objective evaluation
    are reused; with retrain=True the winning triplet is retrained with a
    dedicated configuration.
    """
    if space is None:
        # p bounded by the budget itself; L~ by the grid of the 0 dB model
        probe = model_for_rho(1.0)
        space = SearchSpace(bit_budget=bit_budget,
                            p_max=min(bit_budget, probe.n),
                            l_max=min(bit_budget, probe.L))
    rng = np.random.default_rng(seed)

    def f(theta):
        return meta_objective(theta, model_for_rho, cfg)

    best, trace = bayes_opt(space, f, i_max=i_max, zeta=zeta, rng=rng)
    payload = trace.payloads[trace.best_index()]
    systems, rates = payload["systems"], payload["error_rates"]
    if retrain:
        rcfg = retrain_config or cfg
        _, payload = meta_objective(best, model_for_rho, rcfg)
        systems, rates = payload["systems"], payload["error_rates"]
    return MetaResult(theta=best, systems=systems, error_rates=rates, trace=trace)
