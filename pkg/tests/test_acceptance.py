"""End-to-end acceptance criteria.

Each test prints exactly one ``[criterion N] PASS/FAIL`` line with the
measured quantities.  Criteria 3-5 train real systems at full Monte Carlo
resolution and dominate the runtime (tens of minutes to ~1 hour total);
run with ``pytest tests/test_acceptance.py -v -s`` to watch the lines.
"""

import itertools

import numpy as np
from scipy.special import ndtr

import taskadc.harness as harness
from taskadc.baselines import (UniformQuantizer, default_quantizer_range,
                               map_full, map_sampled, map_sampled_quantized,
                               uniform_sample_indices)
from taskadc.cli import main as cli_main
from taskadc.meta import (GpState, MetaObjectiveConfig, expected_improvement,
                          gp_posterior, learn_system, meta_objective)
from taskadc.pipeline import (AdcHyperparams, TrainConfig, backprop, decide,
                              forward_hard_batch, forward_soft_batch,
                              loss_and_grad, train)
from taskadc.signal import (SignalModel, db_to_linear, generate_dataset,
                            measurement_stack, sample_batch)

REFERENCE_THETA = AdcHyperparams(p=4, n_samples=4, n_levels=8)


def report(criterion, ok, detail):
    line = f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    assert ok, line


def model_for_rho(rho):
    return SignalModel(rho=rho)


# --------------------------------------------------------------------------
# 1. gradient fidelity
# --------------------------------------------------------------------------

def test_criterion_1_gradient_fidelity():
    worst = 0.0
    checked = 0
    for seed in (0, 1, 2):
        model = SignalModel(rho=10.0)
        ds = generate_dataset(model, 400, seed=seed)
        sys, _ = train(ds, REFERENCE_THETA, TrainConfig(epochs=1, seed=seed),
                       T=model.T)
        rng = np.random.default_rng(100 + seed)
        x = rng.normal(size=(6, model.n, model.L))
        s = rng.choice([-1.0, 1.0], size=(6, model.k))

        def loss_value():
            out, _ = forward_soft_batch(x, sys)
            return loss_and_grad(sys, out, s)[0]

        out, tape = forward_soft_batch(x, sys, record=True)
        _, d_out = loss_and_grad(sys, out, s)
        grads = backprop(sys, tape, d_out)

        # every analog/quantizer/time/layer parameter family is probed
        targets = [(sys.analog, grads["analog"], 1e-5),
                   (sys.quantizer.a, grads["a"], 1e-5),
                   (sys.quantizer.b, grads["b"], 1e-5),
                   (sys.sampler.sample_times, grads["t"], 1e-5 * model.T)]
        for li, layer in enumerate(sys.layers):
            targets.append((layer.weights, grads["layers"][li][0], 1e-5))
            targets.append((layer.bias, grads["layers"][li][1], 1e-5))

        for param, grad, eps in targets:
            grad = np.asarray(grad)
            picks = rng.choice(param.size, size=min(4, param.size),
                               replace=False)
            for i in picks:
                # index the array directly: flattened views silently copy
                # for non-contiguous parameters
                idx = np.unravel_index(i, param.shape)
                orig = param[idx]
                param[idx] = orig + eps
                up = loss_value()
                param[idx] = orig - eps
                dn = loss_value()
                param[idx] = orig
                fd = (up - dn) / (2 * eps)
                # 1e-6 floor keeps FD roundoff on ~1e-11 gradients from
                # masquerading as gradient error
                rel = abs(fd - grad[idx]) / max(abs(fd), abs(grad[idx]), 1e-6)
                worst = max(worst, rel)
                checked += 1
    ok = worst < 1e-4
    report(1, ok, f"{checked} finite-difference checks over 3 seeds, "
                  f"worst relative error {worst:.2e} (< 1e-4 required)")


# --------------------------------------------------------------------------
# 2. soft-to-hard consistency
# --------------------------------------------------------------------------

def test_criterion_2_soft_hard_consistency():
    model = SignalModel(rho=db_to_linear(10.0))
    ds = generate_dataset(model, 4000, seed=0)
    sys, _ = train(ds, REFERENCE_THETA, TrainConfig(epochs=100, seed=0, restarts=2),
                   T=model.T)
    held_out = generate_dataset(model, 10_000, seed=999)
    soft_out, _ = forward_soft_batch(held_out.x, sys)
    soft_dec = decide(sys, soft_out)
    hard_dec = forward_hard_batch(held_out.x, sys)
    agree = float(np.mean(np.all(soft_dec == hard_dec, axis=1)))
    ok = agree >= 0.99
    report(2, ok, f"soft argmax vs hard forward agree on {agree:.4f} "
                  f"of 1e4 held-out inputs (>= 0.99 required)")


# --------------------------------------------------------------------------
# 3. error-rate curves: learned vs MAP baselines
# --------------------------------------------------------------------------

def test_criterion_3_learned_vs_map_curves():
    snrs = [2.0, 4.0, 6.0, 8.0, 10.0]
    entries = harness.sweep_snr(
        ["learned", "map-sampled", "map-sampled-quantized"], snrs,
        trials=100_000, model_for_rho=model_for_rho, theta=REFERENCE_THETA,
        train_cfg=TrainConfig(epochs=100, restarts=2), n_train=10_000,
        seed=0, workers=4)
    by = {(e.detector, e.snr_db): e for e in entries}

    # (a) learned <= sampled-quantized MAP everywhere, outside CI overlap
    dominated = all(by[("learned", s)].symbol_ci[0]
                    <= by[("map-sampled-quantized", s)].symbol_ci[1]
                    for s in snrs)
    # (b) within 3x of sampled MAP where sampled MAP is nearest 1e-2
    anchor = min(snrs, key=lambda s: abs(np.log10(
        max(by[("map-sampled", s)].symbol_error_rate, 1e-12)) - (-2.0)))
    r_learned = by[("learned", anchor)].symbol_error_rate
    r_sampled = by[("map-sampled", anchor)].symbol_error_rate
    within = r_learned <= 3.0 * r_sampled
    rates = {s: (by[("learned", s)].symbol_error_rate,
                 by[("map-sampled", s)].symbol_error_rate,
                 by[("map-sampled-quantized", s)].symbol_error_rate)
             for s in snrs}
    ok = dominated and within
    report(3, ok,
           f"learned<=quantized-MAP at all SNRs: {dominated}; at {anchor} dB "
           f"learned {r_learned:.2e} vs 3x sampled-MAP {3 * r_sampled:.2e}: "
           f"{within}; (learned, sampled, quantized) by SNR: "
           + ", ".join(f"{s:g}dB=({a:.1e},{b:.1e},{c:.1e})"
                       for s, (a, b, c) in rates.items()))


# --------------------------------------------------------------------------
# 4. model-uncertainty study
# --------------------------------------------------------------------------

def test_criterion_4_model_uncertainty():
    snrs = [0.0, 4.0, 8.0, 12.0]
    entries = harness.sweep_snr(
        ["learned", "map-full-perturbed"], snrs, trials=100_000,
        model_for_rho=model_for_rho, theta=REFERENCE_THETA,
        train_cfg=TrainConfig(epochs=100, restarts=3), n_train=10_000,
        seed=11, workers=4, model_noise_fraction=0.3)
    by = {(e.detector, e.snr_db): e.symbol_error_rate for e in entries}

    learned = [by[("learned", s)] for s in snrs]
    perturbed = [by[("map-full-perturbed", s)] for s in snrs]
    reaches_floor = learned[-1] < 1e-3              # recovers at the top
    shifted = learned[0] > 1e-2                     # visibly degraded low-SNR
    map_floor = min(perturbed) >= 1e-3              # mismatched MAP floors
    ok = reaches_floor and shifted and map_floor
    report(4, ok,
           f"learned {learned[0]:.2e}@0dB (SNR shift: {shifted}), "
           f"{learned[-1]:.2e}@12dB (< 1e-3: {reaches_floor}); "
           f"perturbed full MAP min {min(perturbed):.2e} "
           f"(floor >= 1e-3: {map_floor})")


# --------------------------------------------------------------------------
# 5. meta-learning under a 20-bit budget
# --------------------------------------------------------------------------

def test_criterion_5_meta_budget():
    cfg = MetaObjectiveConfig(
        alpha=1e-4, train_config=TrainConfig(epochs=100, restarts=2), seed=3)
    res = learn_system(20, model_for_rho, cfg, i_max=15, seed=3)

    def rates_at_1e5(systems):
        out = {}
        for snr, sysm in systems.items():
            m = model_for_rho(db_to_linear(snr))
            out[snr] = harness.monte_carlo_error_rate(
                harness.learned_detector(sysm), m, 100_000, seed=91,
                workers=4).symbol_error_rate
        return out

    star = rates_at_1e5(res.systems)
    _, payload = meta_objective(AdcHyperparams(4, 4, 8), model_for_rho, cfg)
    ref = rates_at_1e5(payload["systems"])
    sum_star, sum_ref = sum(star.values()), sum(ref.values())
    # Monte Carlo slack: Wilson half-widths at 1e5 trials, in quadrature
    slack = 3.0 * np.sqrt(sum(
        ((harness.wilson_ci(int(round(r * 100_000 * 4)), 100_000 * 4)[1]
          - harness.wilson_ci(int(round(r * 100_000 * 4)), 100_000 * 4)[0])
         / 2) ** 2 for r in list(star.values()) + list(ref.values())))
    under_budget = res.theta.bit_cost() <= 20
    within = sum_star <= 2.0 * sum_ref + slack
    ok = under_budget and within
    report(5, ok,
           f"theta*={res.theta.astuple()} at {res.theta.bit_cost()} bits "
           f"(<= 20: {under_budget}); summed error over SNR grid "
           f"{sum_star:.2e} vs 2x 48-bit reference {2 * sum_ref:.2e} "
           f"+ slack {slack:.1e}: {within}")


# --------------------------------------------------------------------------
# 6. GP / EI numerics
# --------------------------------------------------------------------------

def test_criterion_6_gp_ei_suite():
    rng = np.random.default_rng(0)
    state = GpState(points=rng.uniform(0, 3, size=(6, 3)),
                    values=rng.normal(size=6))

    interp = max(abs(gp_posterior(state, state.points[j])[0] - state.values[j])
                 for j in range(6))
    sd_obs = max(gp_posterior(state, state.points[j])[1] for j in range(6))
    ei_obs = max(expected_improvement(state, state.points[j])
                 for j in range(6))
    grid = rng.uniform(-1, 4, size=(500, 3))
    nonneg = bool(np.all(expected_improvement(state, grid) >= 0.0))

    q = state.points[int(np.argmax(state.values))] + 0.5
    mu, sd = gp_posterior(state, q)
    draws = mu + sd * np.random.default_rng(1).standard_normal(1_000_000)
    mc = float(np.mean(np.maximum(draws - float(np.max(state.values)), 0.0)))
    ei = expected_improvement(state, q)
    mc_rel = abs(ei - mc) / mc

    ok = interp < 1e-8 and sd_obs < 1e-6 and ei_obs == 0.0 and nonneg \
        and mc_rel < 0.01
    report(6, ok,
           f"interpolation |mu-f| {interp:.1e} (<1e-8), sigma at obs "
           f"{sd_obs:.1e} (<1e-6), EI(sigma=0)={ei_obs} (==0), EI>=0 on "
           f"500-point grid: {nonneg}, EI Monte Carlo rel err {mc_rel:.2%} "
           f"(<1%)")


# --------------------------------------------------------------------------
# 7. MAP oracle equivalence against brute-force enumeration
# --------------------------------------------------------------------------

def _sign_vectors(k):
    return [np.array(v, dtype=float)
            for v in itertools.product([-1.0, 1.0], repeat=k)]


def test_criterion_7_map_equals_brute_force():
    model = SignalModel(n=3, k=4, L=8, rho=1.5)   # |S|^k = 16 candidates
    idx = uniform_sample_indices(model.L, 4)
    quant = UniformQuantizer(
        n_levels=4, half_range=default_quantizer_range(model, idx))
    G = measurement_stack(model)
    sigma = np.sqrt(model.noise_variance)
    rng = np.random.default_rng(7)
    s_true = rng.choice([-1.0, 1.0], size=(1000, model.k))
    x = sample_batch(model, s_true, rng)

    mismatches = 0
    for t in range(1000):
        best_n, bd = None, np.inf
        best_sn, bsd = None, np.inf
        best_q, bq = None, -np.inf
        z = x[t][:, idx]
        cells = quant.cells(z)
        lo, hi = quant.cell_edges(cells)
        for s in _sign_vectors(model.k):
            d_full = sum(float((x[t][:, j] - G[j] @ s) ** 2 @ np.ones(model.n))
                         for j in range(model.L))
            d_samp = sum(float((x[t][:, j] - G[j] @ s) ** 2 @ np.ones(model.n))
                         for j in idx)
            mu = np.stack([G[j] @ s for j in idx], axis=1)
            mass = ndtr((hi - mu) / sigma) - ndtr((lo - mu) / sigma)
            ll = float(np.sum(np.log(np.maximum(mass, 1e-300))))
            if d_full < bd - 1e-15:
                best_n, bd = s, d_full
            if d_samp < bsd - 1e-15:
                best_sn, bsd = s, d_samp
            if ll > bq + 1e-12:
                best_q, bq = s, ll
        got_full = map_full(x[t], model)
        got_samp = map_sampled(x[t], model, 4)
        got_quant = map_sampled_quantized(x[t], model, 4,
                                          bit_budget=2 * model.n * 4)
        if not (np.array_equal(got_full, best_n)
                and np.array_equal(got_samp, best_sn)
                and np.array_equal(got_quant, best_q)):
            mismatches += 1
    ok = mismatches == 0
    report(7, ok, f"{mismatches}/1000 trials disagree with brute-force "
                  f"likelihood enumeration across full/sampled/quantized MAP "
                  f"(exact match required)")


# --------------------------------------------------------------------------
# 8. byte-identical CLI artifacts
# --------------------------------------------------------------------------

def test_criterion_8_determinism(tmp_path):
    def cli(args):
        cli_main([str(a) for a in args])

    # dataset + checkpoint: two executions, byte compare
    blobs = []
    for tag in ("a", "b"):
        data = tmp_path / f"data_{tag}.npz"
        ckpt = tmp_path / f"ckpt_{tag}.json"
        cli(["gen-data", "--num", 2000, "--seed", 5, "--out", data])
        cli(["train", "--data", data, "--epochs", 5, "--seed", 5,
             "--out", ckpt])
        blobs.append((data.read_bytes(), ckpt.read_bytes()))
    files_match = blobs[0] == blobs[1]

    # evaluation CSV: two executions and two worker-pool sizes
    csvs = []
    for tag, workers in (("a", 1), ("b", 1), ("c", 3)):
        out = tmp_path / f"eval_{tag}.csv"
        cli(["eval", "--ckpt", tmp_path / "ckpt_a.json",
             "--detector", "learned", "map-full", "map-sampled-quantized",
             "--trials", 20000, "--seed", 6, "--workers", workers,
             "--out", out])
        csvs.append(out.read_bytes())
    csv_match = csvs[0] == csvs[1] == csvs[2]

    ok = files_match and csv_match
    report(8, ok, f"dataset+checkpoint byte-identical across runs: "
                  f"{files_match}; eval CSV byte-identical across runs and "
                  f"worker pools (1,1,3): {csv_match}")
