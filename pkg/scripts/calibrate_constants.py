"""Measure the margins behind the frozen constants in tests/test_acceptance.py.

Runs every deterministic experiment the acceptance gate relies on and prints
the observed margin next to the threshold the suite pins.  Rerun after any
change to the decomposition pipeline to confirm the frozen numbers still have
headroom.
"""

import argparse
import time

import numpy as np

from srr import (
    QuantizerConfig,
    estimate_error_scale,
    identity_scaling,
    oracle_best_split,
    probe_stability_study,
    quantize,
    run_default_comparison,
    run_sweep,
    srr_decompose,
    srr_global_recon,
    stability_template,
    svd_randomized,
    synth_weight,
    synthetic_scaling,
    SynthSpec,
)


def identity_grid():
    """The 100 split decompositions used by the factorization identities."""
    shapes = [(32, 24), (24, 32), (40, 40), (48, 16)]
    kinds = ["identity", "diagonal", "dense"]
    families = ["mxint", "uniform"]
    cases = []
    for i in range(100):
        rows, cols = shapes[i % len(shapes)]
        cases.append({
            "spec": SynthSpec(rows, cols, "geometric", ratio=0.8,
                              noise_floor=1e-3, seed=200 + i),
            "kind": kinds[i % len(kinds)],
            "config": QuantizerConfig(families[i % 2], 2 + (i // 2) % 3),
            "rank_budget": 8,
            "k": i % 9,
        })
    return cases


def measure_identities():
    worst_factored = 0.0
    worst_tail = 0.0
    for case in identity_grid():
        w = synth_weight(case["spec"])
        op = synthetic_scaling(case["kind"], w.shape[0],
                               seed=case["spec"].seed)
        dec = srr_decompose(w, op, case["config"], case["rank_budget"],
                            k=case["k"])
        k, r = dec.k, dec.rank_budget
        residual = w - dec.left[:, :k] @ dec.right[:k] - dec.quantized.values
        scaled = op.forward(residual)
        sv = np.linalg.svd(scaled, compute_uv=False)
        energy = float(np.sum(sv ** 2))
        rho = 1.0 - float(np.sum(sv[: r - k] ** 2)) / energy
        tail = float(np.sum(sv[r - k:] ** 2))
        lhs = dec.scaled_error ** 2
        worst_factored = max(worst_factored,
                             abs(lhs - energy * rho) / lhs)
        worst_tail = max(worst_tail, abs(lhs - tail) / lhs)
    print(f"identity (energy * rho) worst rel: {worst_factored:.3e}  "
          "(frozen tol 1e-8)")
    print(f"identity (tail sum)     worst rel: {worst_tail:.3e}  "
          "(frozen tol 1e-8)")


def measure_ensemble():
    start = time.perf_counter()
    report = run_default_comparison()
    elapsed = time.perf_counter() - start
    by_instance = {}
    for row in report.rows:
        by_instance.setdefault(row["instance"], {})[row["method"]] = row
    oracle_viol = 0
    within = []
    global_margin = 0.0
    for label, methods in by_instance.items():
        if methods["oracle"]["scaled_error"] > methods["qer"]["scaled_error"]:
            oracle_viol += 1
        global_margin = max(
            global_margin,
            methods["srr_global"]["scaled_error"]
            / methods["srr_split"]["scaled_error"])
        if not label.startswith("power_law"):
            within.append(methods["srr_split"]["scaled_error"]
                          <= 1.2 * methods["oracle"]["scaled_error"])
    print(f"ensemble: {elapsed:.1f}s, oracle>qer violations {oracle_viol} "
          "(frozen: zero)")
    print(f"split within 1.2x oracle on geometric/spiked: "
          f"{np.mean(within):.3f}  (frozen rate 0.90)")
    print(f"global/split worst ratio: {global_margin:.15f}  (frozen: <= 1)")
    print(f"aggregates: {report.aggregates}")


def measure_equal_k_dominance():
    worst = 0.0
    config = QuantizerConfig("mxint", 3)
    for seed in range(12):
        spec = SynthSpec(48, 36, "geometric", ratio=0.8, noise_floor=1e-3,
                         seed=400 + seed)
        w = synth_weight(spec)
        op = synthetic_scaling(["identity", "diagonal", "dense"][seed % 3],
                               48, seed=seed)
        for k in (0, 2, 4, 6, 8):
            split = srr_decompose(w, op, config, 8, k=k)
            joint = srr_global_recon(w, op, config, 8, k=k)
            if split.scaled_error > 0:
                worst = max(worst, joint.scaled_error / split.scaled_error)
    print(f"equal-k global/split worst ratio: {worst:.15f}  (frozen: <= 1)")


def measure_stability():
    for kind in ("identity", "diagonal"):
        op = (identity_scaling(512) if kind == "identity"
              else synthetic_scaling("diagonal", 512, seed=3))
        report = probe_stability_study((512, 512), op, 64, n_seeds=10,
                                       weight_spec=stability_template(512, 512))
        print(f"stability {kind}: max spread "
              f"{report.aggregates['max_spread']}  (frozen <= 3)")


def measure_eta():
    est = estimate_error_scale(QuantizerConfig("uniform", 3),
                               identity_scaling(64), (64, 64), trials=100)
    print(f"eta ratio {est.ratio:.4f} cv {est.cv:.5f}  (frozen cv < 0.2)")


def measure_randomized_svd():
    worst = 0.0
    for ratio in (0.9, 0.8, 0.6):
        for shape in ((300, 200), (256, 256)):
            spec = SynthSpec(*shape, "geometric", ratio=ratio,
                             noise_floor=0.0, seed=int(ratio * 10))
            w = synth_weight(spec)
            exact = np.linalg.svd(w, compute_uv=False)
            approx = svd_randomized(w, 32).singular_values
            worst = max(worst,
                        float(np.max(np.abs(approx - exact[:32]) / exact[:32])))
    print(f"randomized svd worst rel: {worst:.3e}  (frozen tol 1e-2)")


def sweep_suite():
    suite = [SynthSpec(64, 48, "geometric", ratio=0.5, noise_floor=1e-4,
                       seed=s) for s in (7, 8, 9, 10)]
    suite += [SynthSpec(96, 96, "spiked", n_spikes=5, spike_scale=100.0,
                        noise_floor=1e-3, seed=s) for s in (11, 12)]
    suite.append(SynthSpec(128, 128, "geometric", ratio=0.75,
                           noise_floor=2e-2, seed=21))
    return suite


def measure_sweep_correlation():
    config = QuantizerConfig("mxint", 3)
    rhos = []
    for spec in sweep_suite():
        w = synth_weight(spec)
        report = run_sweep(w, identity_scaling(spec.rows), config, 16)
        rhos.append(report.aggregates["rank_correlation"])
    print(f"sweep suite rank correlations: "
          f"{[round(r, 3) for r in rhos]}  min {min(rhos):.3f}  "
          "(frozen threshold 0.7)")


def measure_eckart_young():
    rng = np.random.default_rng(0)
    worst = 0.0
    start = time.perf_counter()
    for _ in range(200):
        m = int(rng.integers(10, 48))
        n = int(rng.integers(10, 48))
        p = int(rng.integers(1, min(m, n) // 2 + 1))
        w = rng.standard_normal((m, n))
        sv = np.linalg.svd(w, compute_uv=False)
        best = float(np.sqrt(np.sum(sv[p:] ** 2)))
        for _ in range(50):
            basis, _ = np.linalg.qr(rng.standard_normal((m, p)))
            candidate = basis @ (basis.T @ w)
            res = float(np.linalg.norm(w - candidate))
            worst = max(worst, best / res)
    print(f"eckart-young worst svd/candidate ratio: {worst:.6f} "
          f"in {time.perf_counter() - start:.1f}s  (frozen: <= 1, < 30s)")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--skip-ensemble", action="store_true",
                        help="skip the ~1 minute default-ensemble run")
    args = parser.parse_args()
    measure_eckart_young()
    measure_identities()
    measure_equal_k_dominance()
    measure_stability()
    measure_eta()
    measure_randomized_svd()
    measure_sweep_correlation()
    if not args.skip_ensemble:
        measure_ensemble()


if __name__ == "__main__":
    main()
