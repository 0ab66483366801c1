"""Command-line interface.

Subcommands wrap the library one to one: gen-synth and calibrate produce
input files, decompose runs one pipeline, sweep / compare / stability drive
the experiment harness, finetune-toy trains an adapter on a probe task.
Every command is deterministic given its flags; all randomness is seeded.

Exit codes: 0 success, 2 malformed input (bad flags or unparsable files),
3 numeric domain error (ranks, dims, singular operators), 4 I/O failure.

A JSON file of flag defaults can be supplied with --config; explicit flags
win over the file, the file wins over built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io as srr_io
from .adapter import GradientRule, adapter_init, toy_finetune
from .errors import DomainError, InputError
from .harness import (
    SPECTRA,
    SynthSpec,
    probe_stability_study,
    run_default_comparison,
    run_sweep,
    synth_weight,
    synthetic_scaling,
)
from .quant import BLOCK_SIZES, FAMILIES, QuantizerConfig, effective_bitwidth
from .reconstruct import srr_decompose, srr_global_recon
from .scaling import KINDS as SCALING_KINDS
from .scaling import accumulate_calibration, build_scaling, identity_scaling


def _add_quantizer_flags(parser):
    parser.add_argument("--family", default="mxint", choices=FAMILIES,
                        help="quantizer family")
    parser.add_argument("--bits", type=int, default=3,
                        help="mantissa bits including sign, 2..8")
    parser.add_argument("--block-size", type=int, default=32,
                        choices=BLOCK_SIZES, help="entries sharing one scale")


def _add_scaling_flags(parser, allow_synthetic=False):
    parser.add_argument("--scaling", default="identity", choices=SCALING_KINDS,
                        help="scaling operator kind")
    parser.add_argument("--calib", default=None,
                        help="calibration stats file (SRRC)")
    parser.add_argument("--eps", type=float, default=None,
                        help="scaling regularizer (ridge or diagonal floor)")
    if allow_synthetic:
        parser.add_argument("--scaling-seed", type=int, default=0,
                            help="seed for synthetic calibration when no "
                                 "--calib is given")


def _quantizer_issues(args):
    issues = []
    if not 2 <= args.bits <= 8:
        issues.append(f"--bits must be in [2, 8], got {args.bits}")
    return issues


def _fail_input(issues):
    if issues:
        raise InputError("; ".join(issues))


def _scaling_from_args(args, dim, allow_synthetic=False):
    if args.scaling == "identity":
        return identity_scaling(dim)
    if args.calib is not None:
        stats = srr_io.read_calibration(args.calib)
        if stats.dim != dim:
            raise DomainError(
                f"calibration dim {stats.dim} does not match weight rows {dim}"
            )
        return build_scaling(stats, args.scaling, eps=args.eps)
    if allow_synthetic:
        return synthetic_scaling(args.scaling, dim,
                                 seed=getattr(args, "scaling_seed", 0),
                                 eps=args.eps)
    raise InputError(f"--scaling {args.scaling} requires --calib")


def cmd_gen_synth(args):
    issues = []
    if args.rows < 1 or args.cols < 1:
        issues.append(f"--rows/--cols must be >= 1, got {args.rows}x{args.cols}")
    if args.spectrum == "geometric" and not 0.0 < args.ratio < 1.0:
        issues.append(f"--ratio must be in (0, 1), got {args.ratio}")
    if args.spectrum == "power_law" and not args.exponent > 0:
        issues.append(f"--exponent must be > 0, got {args.exponent}")
    if args.spectrum == "spiked" and args.spikes < 1:
        issues.append(f"--spikes must be >= 1, got {args.spikes}")
    if args.noise_floor < 0:
        issues.append(f"--noise-floor must be >= 0, got {args.noise_floor}")
    _fail_input(issues)
    spec = SynthSpec(
        rows=args.rows, cols=args.cols, spectrum=args.spectrum,
        ratio=args.ratio, exponent=args.exponent, n_spikes=args.spikes,
        spike_scale=args.spike_scale, noise_floor=args.noise_floor,
        seed=args.seed,
    )
    srr_io.write_matrix(args.out, synth_weight(spec))
    print(f"wrote {args.rows}x{args.cols} {args.spectrum} matrix to {args.out}")
    return 0


def cmd_calibrate(args):
    rows = srr_io.read_matrix(args.activations)
    stats = accumulate_calibration(rows)
    srr_io.write_calibration(args.out, stats)
    print(f"wrote calibration stats ({stats.sample_count} samples, "
          f"dim {stats.dim}) to {args.out}")
    return 0


def cmd_decompose(args):
    issues = _quantizer_issues(args)
    if args.rank < 0:
        issues.append(f"--rank must be >= 0, got {args.rank}")
    if args.k is not None and args.k < 0:
        issues.append(f"--k must be >= 0, got {args.k}")
    if args.scaling != "identity" and args.calib is None:
        issues.append(f"--scaling {args.scaling} requires --calib")
    _fail_input(issues)
    w = srr_io.read_matrix(args.weight)
    operator = _scaling_from_args(args, w.shape[0])
    config = QuantizerConfig(args.family, args.bits, args.block_size)
    k = "auto" if args.k is None else args.k
    runner = srr_global_recon if args.method == "global" else srr_decompose
    dec = runner(w, operator, config, args.rank, k=k,
                 probe_seed=args.probe_seed)
    summary = {
        "rows": w.shape[0],
        "cols": w.shape[1],
        "rank_budget": dec.rank_budget,
        "k": dec.k,
        "mode": dec.mode,
        "scaling": operator.kind,
        "family": config.family,
        "bits": config.bits,
        "block_size": config.block_size,
        "effective_bitwidth": effective_bitwidth(config),
        "scaled_error": dec.scaled_error,
    }
    if dec.selection is not None:
        summary["k_star"] = dec.selection.k_star
        summary["probe_seed"] = dec.probe_seed
        summary["objective_curve"] = dec.selection.objective_curve
    srr_io.atomic_write_text(args.out, srr_io.dump_json(summary))
    if args.save_factors is not None:
        os.makedirs(args.save_factors, exist_ok=True)
        srr_io.write_matrix(
            os.path.join(args.save_factors, "quantized.srrm"),
            dec.quantized.values,
        )
        srr_io.write_matrix(os.path.join(args.save_factors, "left.srrm"),
                            dec.left)
        srr_io.write_matrix(os.path.join(args.save_factors, "right.srrm"),
                            dec.right)
    print(f"k={dec.k} scaled_error={dec.scaled_error!r} -> {args.out}")
    return 0


def cmd_sweep(args):
    issues = _quantizer_issues(args)
    if args.rank < 0:
        issues.append(f"--rank must be >= 0, got {args.rank}")
    if args.scaling != "identity" and args.calib is None:
        issues.append(f"--scaling {args.scaling} requires --calib")
    _fail_input(issues)
    w = srr_io.read_matrix(args.weight)
    operator = _scaling_from_args(args, w.shape[0])
    config = QuantizerConfig(args.family, args.bits, args.block_size)
    report = run_sweep(w, operator, config, args.rank,
                       probe_seed=args.probe_seed)
    srr_io.atomic_write_text(args.out, srr_io.report_to_csv(report))
    if args.summary is not None:
        srr_io.atomic_write_text(
            args.summary, srr_io.dump_json(report.aggregates)
        )
    agg = report.aggregates
    print(f"k_opt={agg['k_opt']} k_star={agg['k_star']} "
          f"rank_correlation={agg['rank_correlation']:.3f} -> {args.out}")
    return 0


def cmd_compare(args):
    issues = _quantizer_issues(args)
    if args.instances < 1:
        issues.append(f"--instances must be >= 1, got {args.instances}")
    _fail_input(issues)
    config = QuantizerConfig(args.family, args.bits, args.block_size)
    report = run_default_comparison(
        config, n_instances=args.instances, base_seed=args.base_seed,
        scaling=args.scaling, probe_seed=args.probe_seed,
    )
    srr_io.atomic_write_text(
        args.out, srr_io.report_to_csv(report, include_timings=args.timings)
    )
    if args.summary is not None:
        srr_io.atomic_write_text(
            args.summary, srr_io.dump_json(report.aggregates)
        )
    agg = report.aggregates
    print(f"instances={agg['instances']} "
          f"split_win_rate={agg['split_win_rate_vs_qer']:.2f} "
          f"mean_reduction={agg['mean_reduction_split_vs_qer']:.3f} -> {args.out}")
    return 0


def cmd_stability(args):
    issues = []
    if args.rows < 1 or args.cols < 1:
        issues.append(f"--rows/--cols must be >= 1, got {args.rows}x{args.cols}")
    if args.rank < 0:
        issues.append(f"--rank must be >= 0, got {args.rank}")
    if args.n_seeds < 1:
        issues.append(f"--n-seeds must be >= 1, got {args.n_seeds}")
    _fail_input(issues)
    operator = _scaling_from_args(args, args.rows, allow_synthetic=True)
    report = probe_stability_study(
        (args.rows, args.cols), operator, args.rank, args.n_seeds,
        first_seed=args.first_seed,
    )
    srr_io.atomic_write_text(args.out, srr_io.report_to_csv(report))
    if args.summary is not None:
        srr_io.atomic_write_text(
            args.summary, srr_io.dump_json(report.aggregates)
        )
    agg = report.aggregates
    print(f"max_spread={agg['max_spread']} over {args.n_seeds} seeds -> {args.out}")
    return 0


def cmd_finetune_toy(args):
    issues = _quantizer_issues(args)
    if args.rank < 0:
        issues.append(f"--rank must be >= 0, got {args.rank}")
    if args.k is not None and args.k < 0:
        issues.append(f"--k must be >= 0, got {args.k}")
    if args.samples < 1:
        issues.append(f"--samples must be >= 1, got {args.samples}")
    if args.steps < 1:
        issues.append(f"--steps must be >= 1, got {args.steps}")
    if not args.lr > 0:
        issues.append(f"--lr must be > 0, got {args.lr}")
    if not 0.0 <= args.gamma <= 1.0:
        issues.append(f"--gamma must be in [0, 1], got {args.gamma}")
    if args.alpha < 0:
        issues.append(f"--alpha must be >= 0, got {args.alpha}")
    if args.scaling != "identity" and args.calib is None:
        issues.append(f"--scaling {args.scaling} requires --calib")
    _fail_input(issues)
    w = srr_io.read_matrix(args.weight)
    operator = _scaling_from_args(args, w.shape[0])
    config = QuantizerConfig(args.family, args.bits, args.block_size)
    k = "auto" if args.k is None else args.k
    dec = srr_decompose(w, operator, config, args.rank, k=k,
                        probe_seed=args.probe_seed)
    rule = GradientRule(args.rule, gamma=args.gamma, alpha=args.alpha)
    adapter = adapter_init(dec, rule)
    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal((args.samples, w.shape[0]))
    # Targets come from the original weight, so training closes the gap the
    # decomposition left open.
    y = x @ w
    losses = toy_finetune(adapter, dec.quantized, x, y, args.steps, args.lr,
                          sgp_refresh_every=args.sgp_refresh)
    lines = ["step,loss"]
    lines.extend(f"{i},{float(loss)!r}" for i, loss in enumerate(losses))
    srr_io.atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"loss {float(losses[0])!r} -> {float(losses[-1])!r} over {args.steps} steps "
          f"-> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srr",
        description="Preserve-then-quantize low-rank weight decomposition "
                    "toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic weight matrix")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--spectrum", default="geometric", choices=SPECTRA)
    p.add_argument("--ratio", type=float, default=0.5,
                   help="geometric decay ratio")
    p.add_argument("--exponent", type=float, default=1.0,
                   help="power-law decay exponent")
    p.add_argument("--spikes", type=int, default=1,
                   help="leading spike count for the spiked family")
    p.add_argument("--spike-scale", type=float, default=1e3)
    p.add_argument("--noise-floor", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("calibrate",
                       help="turn activation rows into calibration stats")
    p.add_argument("--activations", required=True,
                   help="matrix file, one sample per row")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("decompose",
                       help="decompose one weight into quantized + low rank")
    p.add_argument("--weight", required=True)
    p.add_argument("--rank", type=int, required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--k", type=int, default=None,
                       help="explicit preserved rank")
    group.add_argument("--auto", action="store_true",
                       help="select the preserved rank automatically (default)")
    p.add_argument("--method", default="split", choices=("split", "global"),
                   help="split keeps the staged factors, global refits them "
                        "jointly")
    _add_quantizer_flags(p)
    _add_scaling_flags(p)
    p.add_argument("--probe-seed", type=int, default=0)
    p.add_argument("--out", required=True, help="summary JSON path")
    p.add_argument("--save-factors", default=None,
                   help="directory for quantized/left/right matrix files")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("sweep",
                       help="true loss vs surrogate objective over all splits")
    p.add_argument("--weight", required=True)
    p.add_argument("--rank", type=int, required=True)
    _add_quantizer_flags(p)
    _add_scaling_flags(p)
    p.add_argument("--probe-seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--summary", default=None, help="aggregates JSON path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare",
                       help="baseline vs split vs global vs oracle on the "
                            "synthetic ensemble")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--base-seed", type=int, default=1000)
    _add_quantizer_flags(p)
    p.add_argument("--scaling", default="identity", choices=SCALING_KINDS,
                   help="scaling kind, built from synthetic calibration")
    p.add_argument("--probe-seed", type=int, default=0)
    p.add_argument("--timings", action="store_true",
                   help="include runtime_ms in the CSV (not reproducible)")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--summary", default=None, help="aggregates JSON path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("stability",
                       help="selected split across probe seeds")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--n-seeds", type=int, default=10)
    p.add_argument("--first-seed", type=int, default=0)
    _add_scaling_flags(p, allow_synthetic=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--summary", default=None, help="aggregates JSON path")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("finetune-toy",
                       help="train an adapter on a least-squares probe task")
    p.add_argument("--weight", required=True)
    p.add_argument("--rank", type=int, required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--k", type=int, default=None)
    group.add_argument("--auto", action="store_true")
    _add_quantizer_flags(p)
    _add_scaling_flags(p)
    p.add_argument("--probe-seed", type=int, default=0)
    p.add_argument("--rule", default="fixed", choices=("none", "fixed", "sgp"))
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=5.0)
    p.add_argument("--sgp-refresh", type=int, default=1,
                   help="steps between projection-basis recomputes")
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0, help="dataset seed")
    p.add_argument("--out", required=True, help="loss trajectory CSV path")
    p.set_defaults(func=cmd_finetune_toy)

    return parser


def _expand_config(argv: list) -> list:
    """Splice flag defaults from a --config JSON file into argv.

    The expansion lands right after the subcommand token, so flags typed on
    the command line appear later and win.
    """
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    if at + 1 >= len(argv):
        raise InputError("--config needs a file path")
    if at == 0:
        raise InputError("--config goes after the subcommand")
    path = argv[at + 1]
    rest = argv[:at] + argv[at + 2 :]
    try:
        with open(path, "r", encoding="utf-8") as handle:
            loaded = json.load(handle)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(loaded, dict):
        raise InputError(f"{path}: config must be a JSON object")
    expansion = []
    for key, value in loaded.items():
        flag = "--" + str(key).replace("_", "-")
        if isinstance(value, bool):
            if value:
                expansion.append(flag)
        else:
            expansion.extend([flag, str(value)])
    return rest[:1] + expansion + rest[1:]


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    try:
        args = build_parser().parse_args(_expand_config(list(argv)))
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
