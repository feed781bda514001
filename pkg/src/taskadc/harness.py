"""Experiment driver: Monte Carlo error rates, sweeps, scans, and I/O.

Per-trial randomness is derived from (seed, chunk-index) counters, so a
run is bit-reproducible regardless of how many workers evaluate the
chunks.  CSV tables and checkpoints are byte-deterministic under a fixed
seed; wall times go to the run manifest, never into the CSV.
"""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np

from . import baselines, net
from .adc import HardAdc, SoftQuantizer, SoftSampler
from .meta import MetaObjectiveConfig, meta_objective
from .pipeline import (AdcHyperparams, TaskSystem, TrainConfig,
                       forward_hard_batch, train)
from .signal import (Dataset, SignalModel, db_to_linear, draw_tasks,
                     generate_dataset, perturb_model, sample_batch)

CSV_SCHEMA_VERSION = 1
CHECKPOINT_VERSION = 1
DEFAULT_CHUNK = 2000


class CheckpointError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# detectors

def learned_detector(sys: TaskSystem):
    return partial(forward_hard_batch, sys=sys)


def map_full_detector(model: SignalModel):
    return partial(baselines.map_full_batch, model=model)


def map_sampled_detector(model: SignalModel, n_samples: int):
    return partial(baselines.map_sampled_batch, model=model, n_samples=n_samples)


def map_sampled_quantized_detector(model: SignalModel, n_samples: int,
                                   bit_budget: int):
    return partial(baselines.map_sampled_quantized_batch, model=model,
                   n_samples=n_samples, bit_budget=bit_budget)


class MapFullPerturbedDetector:
    """Full MAP whose model estimate is redrawn per chunk of trials.

    Declares needs_rng so the Monte Carlo driver feeds it the dedicated
    detector stream derived from (seed, chunk-index), keeping results
    independent of the worker count.
    """

    needs_rng = True

    def __init__(self, model: SignalModel, fraction: float,
                 mode: str = "absolute"):
        self.model = model
        self.fraction = fraction
        self.mode = mode

    def __call__(self, x, rng):
        return baselines.map_full_perturbed_batch(x, self.model,
                                                  self.fraction, rng, self.mode)


def map_full_perturbed_detector(model: SignalModel, fraction: float,
                                mode: str = "absolute"):
    return MapFullPerturbedDetector(model, fraction, mode)


class RandomGuessDetector:
    """Uniform coin-flip baseline; uses the driver-provided stream."""

    needs_rng = True

    def __init__(self, model: SignalModel):
        self.k = model.k

    def __call__(self, x, rng):
        x = np.atleast_3d(np.asarray(x))
        return rng.choice([-1.0, 1.0], size=(len(x), self.k))


def random_guess_detector(model: SignalModel):
    return RandomGuessDetector(model)


# ---------------------------------------------------------------------------
# Monte Carlo estimation

def wilson_ci(errors: int, trials: int, z: float = 1.96):
    """Wilson score interval for a binomial rate."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    phat = errors / trials
    denom = 1.0 + z ** 2 / trials
    center = (phat + z ** 2 / (2 * trials)) / denom
    half = z * np.sqrt(phat * (1 - phat) / trials + z ** 2 / (4 * trials ** 2)) / denom
    return max(center - half, 0.0), min(center + half, 1.0)


@dataclass
class EvalEntry:
    """One Monte Carlo measurement of one detector at one SNR."""

    detector: str
    snr_db: float
    trials: int
    symbol_error_rate: float
    symbol_ci: tuple
    vector_error_rate: float
    vector_ci: tuple
    bit_cost: int | None
    seed: int
    wall_time: float

    def csv_row(self) -> str:
        bits = "" if self.bit_cost is None else str(self.bit_cost)
        vals = [self.detector, repr(float(self.snr_db)), str(self.trials),
                repr(self.symbol_error_rate),
                repr(self.symbol_ci[0]), repr(self.symbol_ci[1]),
                repr(self.vector_error_rate),
                repr(self.vector_ci[0]), repr(self.vector_ci[1]),
                bits, str(self.seed)]
        return ",".join(vals)


EVAL_CSV_HEADER = ("detector,snr_db,trials,symbol_error_rate,symbol_ci_low,"
                   "symbol_ci_high,vector_error_rate,vector_ci_low,"
                   "vector_ci_high,bit_cost,seed")


def _mc_chunk(args):
    detector, model, seed, chunk_index, count = args
    rng = np.random.default_rng(np.random.SeedSequence([seed, chunk_index]))
    s = draw_tasks(model, count, rng, "classification")
    x = sample_batch(model, s, rng)
    if getattr(detector, "needs_rng", False):
        det_rng = np.random.default_rng(
            np.random.SeedSequence([seed, chunk_index, 0xDE7EC7]))
        decisions = detector(x, det_rng)
    else:
        decisions = detector(x)
    wrong = decisions != s
    return int(wrong.sum()), int(wrong.any(axis=1).sum())


def monte_carlo_error_rate(detector, model: SignalModel, trials: int,
                           seed: int, workers: int = 1,
                           chunk_size: int = DEFAULT_CHUNK,
                           name: str = "detector",
                           bit_cost: int | None = None,
                           snr_db: float | None = None) -> EvalEntry:
    """Fresh-draw Monte Carlo symbol / vector error rates with Wilson CIs.

    The chunk decomposition is fixed by chunk_size, so the result does
    not depend on the worker count.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    start = time.perf_counter()
    counts = [chunk_size] * (trials // chunk_size)
    if trials % chunk_size:
        counts.append(trials % chunk_size)
    jobs = [(detector, model, seed, ci, cnt) for ci, cnt in enumerate(counts)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_mc_chunk, jobs))
    else:
        results = [_mc_chunk(j) for j in jobs]
    sym_err = sum(r[0] for r in results)
    vec_err = sum(r[1] for r in results)
    sym_trials = trials * model.k
    if snr_db is None:
        snr_db = 10.0 * np.log10(model.rho) if model.rho > 0 else -np.inf
    return EvalEntry(
        detector=name, snr_db=float(snr_db), trials=trials,
        symbol_error_rate=sym_err / sym_trials,
        symbol_ci=wilson_ci(sym_err, sym_trials),
        vector_error_rate=vec_err / trials,
        vector_ci=wilson_ci(vec_err, trials),
        bit_cost=bit_cost, seed=seed,
        wall_time=time.perf_counter() - start)


# ---------------------------------------------------------------------------
# sweeps and scans

def build_detectors(names, model: SignalModel, theta: AdcHyperparams,
                    learned: TaskSystem | None = None,
                    model_noise_fraction: float = 0.0,
                    model_noise_mode: str = "absolute"):
    """Name -> (callable, bit cost) for the requested detector set."""
    budget = theta.bit_cost()
    table = {}
    for name in names:
        if name == "learned":
            if learned is None:
                raise ValueError("no trained system supplied for 'learned'")
            table[name] = (learned_detector(learned), budget)
        elif name == "map-full":
            table[name] = (map_full_detector(model), None)
        elif name == "map-full-perturbed":
            if model_noise_fraction <= 0:
                raise ValueError(
                    "'map-full-perturbed' needs model_noise_fraction > 0")
            table[name] = (map_full_perturbed_detector(
                model, model_noise_fraction, model_noise_mode), None)
        elif name == "map-sampled":
            table[name] = (map_sampled_detector(model, theta.n_samples), None)
        elif name == "map-sampled-quantized":
            table[name] = (map_sampled_quantized_detector(
                model, theta.n_samples, budget), budget)
        else:
            raise ValueError(f"unknown detector {name!r}")
    return table


def sweep_snr(detector_names, snrs_db, trials: int, model_for_rho,
              theta: AdcHyperparams, train_cfg: TrainConfig,
              n_train: int = 10_000, seed: int = 0, workers: int = 1,
              train_model_for_rho=None,
              model_noise_fraction: float = 0.0,
              model_noise_mode: str = "absolute") -> list[EvalEntry]:
    """Error rate vs SNR; the learned system is retrained at every point.

    train_model_for_rho, when given, supplies the (possibly mismatched)
    model used for training data and for the MAP oracles, while the test
    stream always comes from model_for_rho.  model_noise_fraction > 0 runs
    the model-uncertainty study: training data is generated with a
    per-item redrawn spatial mismatch, and 'map-full-perturbed' evaluates
    the full MAP under per-trial redrawn model estimates.
    """
    if not len(snrs_db):
        raise ValueError("SNR grid must be nonempty")
    entries = []
    for snr_db in snrs_db:
        rho = db_to_linear(snr_db)
        test_model = model_for_rho(rho)
        fit_model = (train_model_for_rho or model_for_rho)(rho)
        learned = None
        if "learned" in detector_names:
            data_seed = int(np.random.SeedSequence(
                [seed, int(round(snr_db * 1000)) & 0x7FFFFFFF]).generate_state(1)[0])
            dataset = generate_dataset(fit_model, n_train, seed=data_seed,
                                       task=train_cfg.task,
                                       model_noise_fraction=model_noise_fraction,
                                       model_noise_mode=model_noise_mode)
            cfg = dataclasses.replace(train_cfg, seed=data_seed ^ 0x5DEECE66)
            learned, _ = train(dataset, theta, cfg, T=fit_model.T)
        detectors = build_detectors(detector_names, fit_model, theta, learned,
                                    model_noise_fraction, model_noise_mode)
        for name in detector_names:
            fn, bits = detectors[name]
            entries.append(monte_carlo_error_rate(
                fn, test_model, trials, seed=seed, workers=workers,
                name=name, bit_cost=bits, snr_db=snr_db))
    return entries


def eval_csv(entries) -> str:
    lines = [f"# schema_version={CSV_SCHEMA_VERSION}", EVAL_CSV_HEADER]
    lines += [e.csv_row() for e in entries]
    return "\n".join(lines) + "\n"


def grid_scan(p_values, lt_values, n_levels: int, repeats: int,
              bit_budget: int, model_for_rho, cfg: MetaObjectiveConfig):
    """Mean / stdev of the meta objective over a (p, L~) grid at fixed M~.

    Over-budget cells are reported as NA.  Returns CSV text.
    """
    if not len(p_values) or not len(lt_values):
        raise ValueError("grid ranges must be nonempty")
    lines = [f"# schema_version={CSV_SCHEMA_VERSION}",
             "p,n_samples,n_levels,bit_cost,mean_objective,std_objective"]
    for p in p_values:
        for lt in lt_values:
            theta = AdcHyperparams(int(p), int(lt), n_levels)
            bits = theta.bit_cost()
            if bits > bit_budget:
                lines.append(f"{p},{lt},{n_levels},{bits},NA,NA")
                continue
            vals = []
            for r in range(repeats):
                c = dataclasses.replace(cfg, seed=cfg.seed + 7919 * r)
                value, _ = meta_objective(theta, model_for_rho, c)
                vals.append(value)
            mean = float(np.mean(vals))
            std = float(np.std(vals))
            lines.append(f"{p},{lt},{n_levels},{bits},{mean!r},{std!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# serialization

def _layer_to_json(layer: net.DenseLayer) -> dict:
    return {"weights": layer.weights.tolist(), "bias": layer.bias.tolist(),
            "activation": layer.activation}


def save_checkpoint(sys: TaskSystem, path, metadata: dict | None = None) -> None:
    """Self-describing JSON checkpoint; floats round-trip exactly."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "task": sys.task,
        "head": sys.head,
        "dims": {"n": sys.n, "k": sys.k, "T": sys.T, "L": sys.L},
        "hyperparams": {"p": sys.hyper.p, "n_samples": sys.hyper.n_samples,
                        "n_levels": sys.hyper.n_levels},
        "analog": sys.analog.tolist(),
        "layers": [_layer_to_json(l) for l in sys.layers],
        "sampler": {"sample_times": sys.sampler.sample_times.tolist(),
                    "kernel_width": sys.sampler.kernel_width},
        "quantizer": {"a0": sys.quantizer.a0, "a": sys.quantizer.a.tolist(),
                      "b": sys.quantizer.b.tolist(), "c": sys.quantizer.c.tolist()},
        "hard_adc": None if sys.hard_adc is None else {
            "sample_indices": sys.hard_adc.sample_indices.tolist(),
            "borders": sys.hard_adc.borders.tolist(),
            "levels": sys.hard_adc.levels.tolist(),
            "degenerate_borders": bool(sys.hard_adc.degenerate_borders)},
        "metadata": metadata or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path) -> TaskSystem:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if doc["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {doc['version']} unsupported "
            f"(expected {CHECKPOINT_VERSION})")
    try:
        dims, hp = doc["dims"], doc["hyperparams"]
        hyper = AdcHyperparams(hp["p"], hp["n_samples"], hp["n_levels"])
        sampler = SoftSampler(
            sample_times=np.array(doc["sampler"]["sample_times"]),
            kernel_width=doc["sampler"]["kernel_width"],
            L=dims["L"], T=dims["T"])
        qd = doc["quantizer"]
        quantizer = SoftQuantizer(a0=qd["a0"], a=np.array(qd["a"]),
                                  b=np.array(qd["b"]), c=np.array(qd["c"]))
        hard = None
        if doc["hard_adc"] is not None:
            hd = doc["hard_adc"]
            hard = HardAdc(sample_indices=np.array(hd["sample_indices"]),
                           borders=np.array(hd["borders"]),
                           levels=np.array(hd["levels"]),
                           degenerate_borders=hd["degenerate_borders"])
        layers = [net.DenseLayer(weights=np.array(l["weights"]),
                                 bias=np.array(l["bias"]),
                                 activation=l["activation"])
                  for l in doc["layers"]]
        return TaskSystem(n=dims["n"], k=dims["k"], T=dims["T"], L=dims["L"],
                          hyper=hyper, analog=np.array(doc["analog"]),
                          layers=layers, sampler=sampler, quantizer=quantizer,
                          hard_adc=hard, task=doc["task"], head=doc["head"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc


def save_dataset(dataset: Dataset, model: SignalModel, path,
                 task: str = "classification") -> None:
    """npz container: shape metadata, seed, rho, and row-major matrices."""
    np.savez(path, s=dataset.s, x=dataset.x,
             snr=dataset.snr, seed=dataset.seed, task=task,
             n=model.n, k=model.k, T=model.T, L=model.L, rho=model.rho,
             f0=model.f0, noise_variance=model.noise_variance,
             spatial_perturbation=(np.zeros(0) if model.spatial_perturbation
                                   is None else model.spatial_perturbation))


def load_dataset(path):
    """Returns (Dataset, SignalModel, task)."""
    with np.load(path, allow_pickle=False) as d:
        pert = d["spatial_perturbation"]
        model = SignalModel(
            n=int(d["n"]), k=int(d["k"]), T=float(d["T"]), L=int(d["L"]),
            rho=float(d["rho"]), f0=float(d["f0"]),
            noise_variance=float(d["noise_variance"]),
            spatial_perturbation=None if pert.size == 0 else pert)
        dataset = Dataset(s=d["s"], x=d["x"], snr=float(d["snr"]),
                          seed=int(d["seed"]))
        task = str(d["task"])
    return dataset, model, task


def write_manifest(path, params: dict) -> None:
    """Record every resolved parameter and seed of a run."""
    with open(path, "w") as fh:
        json.dump(params, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
