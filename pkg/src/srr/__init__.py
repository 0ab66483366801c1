"""Preserve-then-quantize low-rank decomposition of weight matrices.

A weight W is approximated as Q + L R: Q block-quantized, L R a low-rank
correction fitted in a calibration-scaled space.  The split pipeline spends
part of the rank budget preserving the leading scaled directions before
quantization and picks the split size from cheap spectral surrogates; the
rest of the package provides the quantizers, scaling operators, adapters
for toy fine-tuning, and a reproducible experiment harness.
"""

from .adapter import (
    GradientBundle,
    GradientRule,
    SplitAdapter,
    adapter_init,
    fixed_rule,
    no_scaling,
    scale_gradients,
    sgp_attenuation,
    sgp_basis,
    sgp_rule,
    toy_finetune,
)
from .errors import DomainError, InputError, SrrError
from .harness import (
    EnsembleInstance,
    ExperimentReport,
    SynthSpec,
    compare_methods,
    default_ensemble,
    probe_stability_study,
    run_default_comparison,
    run_sweep,
    spearman_rho,
    stability_template,
    summarize_comparison,
    synth_weight,
    synthetic_scaling,
)
from .linalg import (
    SpectralProfile,
    SvdFactors,
    check_matrix,
    frobenius,
    spectral_profile,
    spectral_profile_top,
    svd_randomized,
    svd_truncated,
    tail_energy_ratio,
)
from .quant import (
    QuantizedMatrix,
    QuantizerConfig,
    effective_bitwidth,
    quantization_error,
    quantize,
)
from .reconstruct import (
    ErrorScaleEstimate,
    SplitSelection,
    SrrDecomposition,
    clear_probe_cache,
    estimate_error_scale,
    oracle_best_split,
    probe_profile,
    qer_reconstruct,
    scaled_recon_error,
    select_split,
    srr_decompose,
    srr_global_recon,
)
from .scaling import (
    CalibrationStats,
    ScalingOperator,
    accumulate_calibration,
    apply_scaling,
    build_scaling,
    identity_scaling,
)

__version__ = "0.1.0"

__all__ = [
    "CalibrationStats",
    "DomainError",
    "EnsembleInstance",
    "ErrorScaleEstimate",
    "ExperimentReport",
    "GradientBundle",
    "GradientRule",
    "InputError",
    "QuantizedMatrix",
    "QuantizerConfig",
    "ScalingOperator",
    "SpectralProfile",
    "SplitAdapter",
    "SplitSelection",
    "SrrDecomposition",
    "SrrError",
    "SvdFactors",
    "SynthSpec",
    "accumulate_calibration",
    "adapter_init",
    "apply_scaling",
    "check_matrix",
    "clear_probe_cache",
    "compare_methods",
    "default_ensemble",
    "effective_bitwidth",
    "estimate_error_scale",
    "fixed_rule",
    "frobenius",
    "identity_scaling",
    "no_scaling",
    "oracle_best_split",
    "probe_profile",
    "probe_stability_study",
    "qer_reconstruct",
    "quantization_error",
    "quantize",
    "run_default_comparison",
    "run_sweep",
    "scale_gradients",
    "scaled_recon_error",
    "select_split",
    "sgp_attenuation",
    "sgp_basis",
    "sgp_rule",
    "spearman_rho",
    "spectral_profile",
    "spectral_profile_top",
    "srr_decompose",
    "stability_template",
    "summarize_comparison",
    "srr_global_recon",
    "svd_randomized",
    "svd_truncated",
    "synth_weight",
    "synthetic_scaling",
    "tail_energy_ratio",
    "toy_finetune",
]
