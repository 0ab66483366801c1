"""Calibration statistics and row-space scaling operators.

A scaling operator S acts on the left of an (m, n) weight matrix and comes
in three kinds:

``identity``
    No-op, available so every pipeline can run without calibration data.

``diagonal``
    diag(max(rms_i, floor)) where rms_i is the root-mean-square of input
    feature i over the calibration set.

``dense``
    Symmetric positive-definite square root of the regularized second-moment
    matrix (sum x x^T / count + eps * I), computed by eigendecomposition.

Calibration accumulates the raw sum of outer products in input order, so the
result is reproducible for a fixed row order.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InputError

KINDS = ("identity", "diagonal", "dense")


@dataclass(frozen=True)
class CalibrationStats:
    """Accumulated second-moment statistics of calibration rows.

    second_moment is the raw sum of outer products x x^T (not divided by
    sample_count).  diag_rms[i] = sqrt(second_moment[i, i] / sample_count).
    """

    dim: int
    sample_count: int
    second_moment: np.ndarray
    diag_rms: np.ndarray


def accumulate_calibration(rows) -> CalibrationStats:
    """Fold an iterable of length-m vectors into CalibrationStats.

    Accepts any iterable of 1-D arrays (a 2-D array iterates as rows).
    Summation runs in input order.  Raises DomainError when the iterable is
    empty and InputError on length mismatches or non-finite entries.
    """
    acc = None
    dim = 0
    count = 0
    for row in rows:
        x = np.asarray(row, dtype=np.float64)
        if x.ndim != 1:
            raise InputError(f"calibration rows must be 1-D, got ndim={x.ndim}")
        if acc is None:
            dim = x.size
            if dim < 1:
                raise InputError("calibration rows must be non-empty")
            acc = np.zeros((dim, dim))
        elif x.size != dim:
            raise InputError(
                f"calibration row {count} has length {x.size}, expected {dim}"
            )
        if not np.isfinite(x).all():
            raise InputError(f"calibration row {count} contains NaN or Inf")
        acc += np.outer(x, x)
        count += 1
    if count == 0:
        raise DomainError("calibration requires at least one row")
    diag_rms = np.sqrt(np.diag(acc) / count)
    return CalibrationStats(dim, count, acc, diag_rms)


@dataclass(frozen=True)
class ScalingOperator:
    """Invertible left-scaling of weight rows.

    Exactly one of the payload fields is populated per kind.  forward maps
    A to S A and inverse maps A to S^-1 A; they are exact mutual inverses up
    to float64 roundoff.
    """

    kind: str
    dim: int
    diag: np.ndarray | None = None
    dense: np.ndarray | None = None
    dense_inverse: np.ndarray | None = None
    _fingerprint: list = field(default_factory=list, repr=False, compare=False)

    def _check_dim(self, a: np.ndarray):
        if a.shape[0] != self.dim:
            raise DomainError(
                f"operator of dim {self.dim} cannot scale {a.shape[0]} rows"
            )

    def forward(self, a: np.ndarray) -> np.ndarray:
        self._check_dim(a)
        if self.kind == "identity":
            return a
        if self.kind == "diagonal":
            return self.diag[:, None] * a
        return self.dense @ a

    def inverse(self, a: np.ndarray) -> np.ndarray:
        self._check_dim(a)
        if self.kind == "identity":
            return a
        if self.kind == "diagonal":
            return a / self.diag[:, None]
        return self.dense_inverse @ a

    def fingerprint(self) -> str:
        """Stable hash of kind, dim, and payload; equal operators collide."""
        if not self._fingerprint:
            h = hashlib.sha256()
            h.update(self.kind.encode())
            h.update(struct.pack("<Q", self.dim))
            if self.diag is not None:
                h.update(self.diag.tobytes())
            if self.dense is not None:
                h.update(self.dense.tobytes())
            self._fingerprint.append(h.hexdigest())
        return self._fingerprint[0]


def identity_scaling(dim: int) -> ScalingOperator:
    if dim < 1:
        raise DomainError(f"dim must be >= 1, got {dim}")
    return ScalingOperator("identity", dim)


def build_scaling(stats: CalibrationStats, kind: str,
                  eps: float | None = None) -> ScalingOperator:
    """Construct a scaling operator from calibration statistics.

    eps regularizes: for ``dense`` it is a ridge added to the mean second
    moment before the matrix square root, for ``diagonal`` it is a floor on
    the per-feature rms.  When omitted it defaults to 1e-6 times the mean
    diagonal of the second-moment matrix (its square root for the diagonal
    floor, keeping units consistent).  Must be >= 0.  Raises DomainError if
    the resulting operator is singular.
    """
    if kind not in KINDS:
        raise DomainError(f"unknown scaling kind {kind!r}; choose from {KINDS}")
    if kind == "identity":
        return identity_scaling(stats.dim)
    if stats.sample_count < 1:
        raise DomainError("calibration stats hold no samples")
    if eps is not None and eps < 0:
        raise DomainError(f"eps must be >= 0, got {eps}")
    mean_sm = stats.second_moment / stats.sample_count
    ridge_default = 1e-6 * float(np.trace(mean_sm)) / stats.dim
    if kind == "diagonal":
        floor = np.sqrt(ridge_default) if eps is None else eps
        d = np.maximum(stats.diag_rms, floor)
        if np.any(d <= 0.0):
            raise DomainError(
                "diagonal scaling is singular: some rms values are zero; "
                "pass eps > 0"
            )
        return ScalingOperator("diagonal", stats.dim, diag=np.ascontiguousarray(d))
    ridge = ridge_default if eps is None else eps
    sym = 0.5 * (mean_sm + mean_sm.T)
    regularized = sym + ridge * np.eye(stats.dim)
    w, v = np.linalg.eigh(regularized)
    if w[0] <= 0.0 or w[0] <= w[-1] * 1e-14:
        raise DomainError(
            "dense scaling is singular or nearly so: regularized second "
            "moment is not safely positive definite; pass a larger eps"
        )
    root = np.sqrt(w)
    s = (v * root) @ v.T
    s_inv = (v / root) @ v.T
    s = 0.5 * (s + s.T)
    s_inv = 0.5 * (s_inv + s_inv.T)
    return ScalingOperator(
        "dense", stats.dim,
        dense=np.ascontiguousarray(s),
        dense_inverse=np.ascontiguousarray(s_inv),
    )


def apply_scaling(operator: ScalingOperator, a, direction: str = "forward"):
    """Apply ``operator`` (or its inverse) to a validated matrix."""
    from .linalg import check_matrix

    arr = check_matrix(a)
    if direction == "forward":
        return operator.forward(arr)
    if direction == "inverse":
        return operator.inverse(arr)
    raise DomainError(f"direction must be 'forward' or 'inverse', got {direction!r}")
