"""Command-line front end.

Subcommands: gen-data, train, eval, sweep, grid-scan, meta.  Every run
writes a manifest recording the resolved parameters and seeds next to
its primary output.  Flags can be preloaded from a YAML config file;
explicit flags win.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys as _sys
import time

import numpy as np
import yaml

from . import harness, meta as meta_mod
from .adc import AnnealSchedule
from .pipeline import AdcHyperparams, TrainConfig, train
from .signal import SignalModel, db_to_linear, generate_dataset, perturb_model


def _add_model_flags(p):
    p.add_argument("--n", type=int, default=6, help="analog channels")
    p.add_argument("--k", type=int, default=4, help="task dimension")
    p.add_argument("--L", type=int, default=20, help="dense grid size")
    p.add_argument("--T", type=float, default=1e-3, help="window duration (s)")
    p.add_argument("--f0", type=float, default=1e3, help="modulation frequency (Hz)")
    p.add_argument("--noise-var", type=float, default=1.0)
    p.add_argument("--snr-db", type=float, default=10.0, help="SNR rho in dB")
    p.add_argument("--perturb", type=float, default=0.0,
                   help="model-mismatch fraction (0 disables)")
    p.add_argument("--perturb-seed", type=int, default=1234)
    p.add_argument("--perturb-mode", choices=["absolute", "relative"],
                   default="absolute")
    p.add_argument("--model-noise", type=float, default=0.0,
                   help="per-item model-uncertainty fraction (0 disables)")
    p.add_argument("--model-noise-mode", choices=["absolute", "relative"],
                   default="absolute")


def _add_theta_flags(p):
    p.add_argument("--adcs", type=int, default=4, help="number of ADCs p")
    p.add_argument("--samples", type=int, default=4, help="samples per window L~")
    p.add_argument("--levels", type=int, default=8, help="quantization levels M~")


def _add_train_flags(p):
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--sigma-factor", type=float, default=0.94)
    p.add_argument("--slope-factor", type=float, default=1.06)
    p.add_argument("--head", choices=["joint", "factorized"], default="joint")
    p.add_argument("--loss", choices=["cross-entropy", "mse"],
                   default="cross-entropy")
    p.add_argument("--restarts", type=int, default=1,
                   help="independent trainings; best final loss wins")


def _model_from_args(args, rho=None) -> SignalModel:
    model = SignalModel(n=args.n, k=args.k, T=args.T, L=args.L,
                        rho=db_to_linear(args.snr_db) if rho is None else rho,
                        f0=args.f0, noise_variance=args.noise_var)
    if args.perturb > 0:
        model = perturb_model(model, args.perturb,
                              np.random.default_rng(args.perturb_seed),
                              mode=args.perturb_mode)
    return model


def _model_factory(args, perturbed: bool):
    def factory(rho):
        base = SignalModel(n=args.n, k=args.k, T=args.T, L=args.L, rho=rho,
                           f0=args.f0, noise_variance=args.noise_var)
        if perturbed and args.perturb > 0:
            base = perturb_model(base, args.perturb,
                                 np.random.default_rng(args.perturb_seed),
                                 mode=args.perturb_mode)
        return base
    return factory


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        lr=args.lr, epochs=args.epochs, batch_size=args.batch, seed=args.seed,
        schedule=AnnealSchedule(args.sigma_factor, args.slope_factor),
        head=args.head,
        task="regression" if args.loss == "mse" else "classification",
        restarts=args.restarts)


def _manifest(args, extra=None):
    doc = {k: v for k, v in vars(args).items() if k != "func"}
    doc.update(extra or {})
    return doc


def cmd_gen_data(args):
    model = _model_from_args(args)
    task = "regression" if args.task == "regression" else "classification"
    dataset = generate_dataset(model, args.num, seed=args.seed, task=task,
                               model_noise_fraction=args.model_noise,
                               model_noise_mode=args.model_noise_mode)
    harness.save_dataset(dataset, model, args.out, task=task)
    harness.write_manifest(args.out + ".manifest.json", _manifest(args))
    print(f"wrote {args.num} pairs to {args.out}")


def cmd_train(args):
    dataset, model, task = harness.load_dataset(args.data)
    theta = AdcHyperparams(args.adcs, args.samples, args.levels)
    cfg = _train_config(args)
    if task == "regression":
        cfg = dataclasses.replace(cfg, task="regression")
    start = time.perf_counter()
    system, history = train(dataset, theta, cfg, T=model.T)
    harness.save_checkpoint(system, args.out,
                            metadata={"theta": theta.astuple(),
                                      "epochs": cfg.epochs, "lr": cfg.lr,
                                      "seed": cfg.seed,
                                      "final_loss": history[-1]})
    if args.loss_csv:
        rows = "\n".join(f"{i},{loss!r}" for i, loss in enumerate(history))
        with open(args.loss_csv, "w") as fh:
            fh.write(f"# schema_version={harness.CSV_SCHEMA_VERSION}\n"
                     f"epoch,loss\n{rows}\n")
    harness.write_manifest(args.out + ".manifest.json", _manifest(
        args, {"wall_time": time.perf_counter() - start,
               "final_loss": history[-1], "bit_cost": theta.bit_cost()}))
    print(f"trained {cfg.epochs} epochs, final loss {history[-1]:.4f} -> {args.out}")


def cmd_eval(args):
    model = _model_from_args(args)
    theta = AdcHyperparams(args.adcs, args.samples, args.levels)
    learned = harness.load_checkpoint(args.ckpt) if args.ckpt else None
    if learned is not None:
        if (learned.n, learned.k, learned.L) != (model.n, model.k, model.L):
            raise SystemExit(
                f"checkpoint dimensions (n={learned.n}, k={learned.k}, "
                f"L={learned.L}) do not match the requested model")
        theta = learned.hyper
    detectors = harness.build_detectors(args.detector, model, theta, learned,
                                        args.model_noise,
                                        args.model_noise_mode)
    entries = []
    for name in args.detector:
        fn, bits = detectors[name]
        entries.append(harness.monte_carlo_error_rate(
            fn, model, args.trials, seed=args.seed, workers=args.workers,
            name=name, bit_cost=bits, snr_db=args.snr_db))
    csv = harness.eval_csv(entries)
    with open(args.out, "w") as fh:
        fh.write(csv)
    harness.write_manifest(args.out + ".manifest.json", _manifest(
        args, {"wall_times": {e.detector: e.wall_time for e in entries}}))
    print(csv, end="")


def cmd_sweep(args):
    theta = AdcHyperparams(args.adcs, args.samples, args.levels)
    cfg = _train_config(args)
    entries = harness.sweep_snr(
        args.detector, args.snrs_db, args.trials,
        model_for_rho=_model_factory(args, perturbed=False),
        theta=theta, train_cfg=cfg, n_train=args.num, seed=args.seed,
        workers=args.workers,
        train_model_for_rho=(_model_factory(args, perturbed=True)
                             if args.perturb > 0 else None),
        model_noise_fraction=args.model_noise,
        model_noise_mode=args.model_noise_mode)
    with open(args.out, "w") as fh:
        fh.write(harness.eval_csv(entries))
    harness.write_manifest(args.out + ".manifest.json", _manifest(
        args, {"wall_times": [e.wall_time for e in entries]}))
    print(f"wrote {len(entries)} rows to {args.out}")


def _meta_config(args) -> meta_mod.MetaObjectiveConfig:
    return meta_mod.MetaObjectiveConfig(
        alpha=args.alpha, snrs_db=tuple(args.snrs_db),
        train_config=_train_config(args), n_train=args.num,
        eval_trials=args.trials, seed=args.seed)


def cmd_grid_scan(args):
    csv = harness.grid_scan(
        p_values=range(args.p_min, args.p_max + 1),
        lt_values=range(args.samples_min, args.samples_max + 1),
        n_levels=args.levels, repeats=args.repeats, bit_budget=args.budget,
        model_for_rho=_model_factory(args, perturbed=False),
        cfg=_meta_config(args))
    with open(args.out, "w") as fh:
        fh.write(csv)
    print(f"wrote grid scan to {args.out}")


def cmd_meta(args):
    result = meta_mod.learn_system(
        args.budget, _model_factory(args, perturbed=False), _meta_config(args),
        i_max=args.i_max, seed=args.seed, retrain=args.retrain)
    lines = [f"# schema_version={harness.CSV_SCHEMA_VERSION}",
             "iteration,p,n_samples,n_levels,bit_cost,objective,"
             "incumbent_p,incumbent_n_samples,incumbent_n_levels"]
    for i, (t, v, inc) in enumerate(zip(result.trace.thetas,
                                        result.trace.values,
                                        result.trace.incumbents)):
        lines.append(f"{i},{t.p},{t.n_samples},{t.n_levels},{t.bit_cost()},"
                     f"{v!r},{inc.p},{inc.n_samples},{inc.n_levels}")
    with open(args.trace_out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    best_snr = max(result.systems) if result.systems else None
    if best_snr is not None and args.ckpt_out:
        harness.save_checkpoint(result.systems[best_snr], args.ckpt_out,
                                metadata={"theta": result.theta.astuple(),
                                          "snr_db": best_snr})
    harness.write_manifest(args.trace_out + ".manifest.json", _manifest(
        args, {"theta_star": result.theta.astuple(),
               "bit_cost": result.theta.bit_cost(),
               "error_rates": result.error_rates}))
    print(f"theta* = {result.theta.astuple()} "
          f"({result.theta.bit_cost()} bits) -> {args.trace_out}")


def _float_list(text):
    return [float(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taskadc",
        description="Learned task-based analog-to-digital acquisition simulator")
    parser.add_argument("--config", help="YAML file of flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a labeled dataset")
    _add_model_flags(p)
    p.add_argument("--num", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--task", choices=["classification", "regression"],
                   default="classification")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the acquisition system")
    p.add_argument("--data", required=True, help="dataset .npz from gen-data")
    _add_theta_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-csv", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Monte Carlo evaluation of detectors")
    _add_model_flags(p)
    _add_theta_flags(p)
    p.add_argument("--ckpt", default=None, help="trained checkpoint for 'learned'")
    p.add_argument("--detector", nargs="+", default=["learned"],
                   choices=["learned", "map-full", "map-full-perturbed",
                            "map-sampled", "map-sampled-quantized"])
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="error rate versus SNR table")
    _add_model_flags(p)
    _add_theta_flags(p)
    _add_train_flags(p)
    p.add_argument("--detector", nargs="+",
                   default=["learned", "map-sampled", "map-sampled-quantized"])
    p.add_argument("--snrs-db", type=_float_list, default=[2, 4, 6, 8, 10])
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--num", type=int, default=10_000, help="training set size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("grid-scan", help="objective over a (p, L~) grid")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--p-min", type=int, default=1)
    p.add_argument("--p-max", type=int, default=6)
    p.add_argument("--samples-min", type=int, default=1)
    p.add_argument("--samples-max", type=int, default=10)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--budget", type=int, default=20)
    p.add_argument("--alpha", type=float, default=0.002)
    p.add_argument("--snrs-db", type=_float_list, default=[0, 5, 10])
    p.add_argument("--num", type=int, default=10_000)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grid_scan)

    p = sub.add_parser("meta", help="budgeted Bayesian meta-optimization")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--budget", type=int, default=20)
    p.add_argument("--i-max", type=int, default=30)
    p.add_argument("--alpha", type=float, default=0.002)
    p.add_argument("--snrs-db", type=_float_list, default=[0, 5, 10])
    p.add_argument("--num", type=int, default=10_000)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--retrain", action="store_true")
    p.add_argument("--trace-out", required=True)
    p.add_argument("--ckpt-out", default=None)
    p.set_defaults(func=cmd_meta)
    return parser


def main(argv=None):
    parser = build_parser()
    # config file supplies defaults; explicit flags still win
    preview, _ = parser.parse_known_args(argv)
    if preview.config:
        with open(preview.config) as fh:
            defaults = yaml.safe_load(fh) or {}
        mapped = {k.replace("-", "_"): v for k, v in defaults.items()}
        parser.set_defaults(**mapped)
        # subcommands parse into their own namespace, so their flags need
        # the defaults applied on each subparser as well
        for action in parser._actions:
            if isinstance(action, argparse._SubParsersAction):
                for sp in action.choices.values():
                    dests = {a.dest for a in sp._actions}
                    sp.set_defaults(**{k: v for k, v in mapped.items()
                                       if k in dests})
    args = parser.parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
