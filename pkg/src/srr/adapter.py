"""Trainable adapters over a frozen quantized core.

adapter_init splits a decomposition's factors at k into a preserved pair
(left1, right1) and a reconstruction pair (left2, right2).  During training
the preserved pair carries the dominant directions of the original weight,
so its raw gradients are attenuated to keep early steps from tearing up
what preservation bought:

``fixed``
    Multiply both preserved-pair gradients by a constant gamma in [0, 1]
    (default 0.1).

``sgp``
    Importance-aware variant: attenuate the left1 gradient direction by
    direction.  The component along the i-th left singular vector of
    left1 @ right1 is rescaled by 1 - lam_i with

        lam_i = (alpha + 1) * s_i / (alpha * s_i + s_1),

    so the top direction (lam_1 = 1) is frozen and directions with small
    singular values pass through almost untouched.  alpha >= 0 (default 5)
    sharpens the falloff.  right1's gradient is left alone, as are the
    reconstruction factors.

``none``
    Pass-through, for ablations.

toy_finetune runs full-batch gradient descent on a least-squares probe task
so the rules can be compared end to end at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .linalg import check_matrix
from .quant import QuantizedMatrix
from .reconstruct import SrrDecomposition

RULE_KINDS = ("none", "fixed", "sgp")


@dataclass(frozen=True)
class GradientRule:
    """Attenuation rule for preserved-factor gradients."""

    kind: str
    gamma: float = 0.1
    alpha: float = 5.0

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise DomainError(
                f"unknown rule kind {self.kind!r}; choose from {RULE_KINDS}"
            )
        if not 0.0 <= self.gamma <= 1.0:
            raise DomainError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.alpha < 0.0:
            raise DomainError(f"alpha must be >= 0, got {self.alpha}")


def fixed_rule(gamma: float = 0.1) -> GradientRule:
    return GradientRule("fixed", gamma=gamma)


def sgp_rule(alpha: float = 5.0) -> GradientRule:
    return GradientRule("sgp", alpha=alpha)


def no_scaling() -> GradientRule:
    return GradientRule("none")


@dataclass
class SplitAdapter:
    """Mutable training view of split factors plus the gradient rule.

    left1 (m, k) and right1 (k, n) hold the preserved pair, left2 and
    right2 the remaining rank budget.  Factors are updated in place by
    training loops.
    """

    left1: np.ndarray
    right1: np.ndarray
    left2: np.ndarray
    right2: np.ndarray
    rule: GradientRule

    @property
    def k(self) -> int:
        return int(self.left1.shape[1])

    def low_rank(self) -> np.ndarray:
        return self.left1 @ self.right1 + self.left2 @ self.right2

    def combined(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.hstack([self.left1, self.left2]),
            np.vstack([self.right1, self.right2]),
        )


@dataclass(frozen=True)
class GradientBundle:
    """Raw or scaled gradients for the four factor blocks."""

    left1: np.ndarray
    right1: np.ndarray
    left2: np.ndarray
    right2: np.ndarray


def adapter_init(decomposition: SrrDecomposition,
                 rule: GradientRule) -> SplitAdapter:
    """Split a decomposition's factors at its k into a trainable adapter.

    Factors are copied, so training never mutates the decomposition, and
    hstack/vstack of the four blocks reproduces them bit for bit.
    """
    k = decomposition.k
    left = decomposition.left
    right = decomposition.right
    return SplitAdapter(
        left1=left[:, :k].copy(),
        right1=right[:k, :].copy(),
        left2=left[:, k:].copy(),
        right2=right[k:, :].copy(),
        rule=rule,
    )


def sgp_attenuation(singular_values, alpha: float) -> np.ndarray:
    """Per-direction attenuation lam_i = (alpha + 1) s_i / (alpha s_i + s_1).

    singular_values must be non-negative and descending.  Values lie in
    [0, 1], are non-increasing, and lam_1 = 1 exactly.  At alpha = 0 this is
    s_i / s_1.  An all-zero spectrum (rank collapse) returns zeros, meaning
    no attenuation.
    """
    s = np.asarray(singular_values, dtype=np.float64)
    if s.size == 0:
        return np.zeros(0)
    if np.any(s < 0) or np.any(np.diff(s) > 0):
        raise DomainError("singular values must be non-negative and descending")
    if alpha < 0:
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    top = s[0]
    if top == 0.0:
        return np.zeros_like(s)
    lam = (alpha + 1.0) * s / (alpha * s + top)
    # The ratio is 1 wherever s_i equals s_1, but the two roundings in the
    # quotient can land an ulp off; pin those entries and clamp the rest.
    lam[s == top] = 1.0
    return np.clip(lam, 0.0, 1.0)


def sgp_basis(adapter: SplitAdapter) -> tuple[np.ndarray, np.ndarray]:
    """Left singular directions of the preserved product and their lam_i.

    Recomputing this every step tracks the preserved pair as it drifts;
    callers may hold it fixed for a few steps as a cheaper approximation
    (see toy_finetune's refresh knob).
    """
    preserved = adapter.left1 @ adapter.right1
    u, s, _ = np.linalg.svd(preserved, full_matrices=False)
    k = adapter.k
    return u[:, :k], sgp_attenuation(s[:k], adapter.rule.alpha)


def scale_gradients(adapter: SplitAdapter, grads: GradientBundle,
                    basis: tuple[np.ndarray, np.ndarray] | None = None
                    ) -> GradientBundle:
    """Apply the adapter's rule to a raw gradient bundle.

    Reconstruction-pair gradients always pass through unchanged.  The fixed
    rule multiplies both preserved gradients by gamma.  The sgp rule removes
    the fraction lam_i of the left1 gradient along each preserved direction
    u_i, computing the basis from the current factors unless one is passed
    in.
    """
    rule = adapter.rule
    if rule.kind == "none" or adapter.k == 0:
        return grads
    if rule.kind == "fixed":
        return GradientBundle(
            rule.gamma * grads.left1,
            rule.gamma * grads.right1,
            grads.left2,
            grads.right2,
        )
    u, lam = basis if basis is not None else sgp_basis(adapter)
    scaled_left1 = grads.left1 - u @ (lam[:, None] * (u.T @ grads.left1))
    return GradientBundle(scaled_left1, grads.right1, grads.left2, grads.right2)


def toy_finetune(adapter: SplitAdapter, quantized: QuantizedMatrix,
                 x, y, steps: int, lr: float,
                 sgp_refresh_every: int = 1) -> np.ndarray:
    """Full-batch gradient descent on a least-squares probe task.

    Minimizes ||x @ (quantized.values + low_rank) - y||_F^2 / n_samples over
    the adapter factors, applying the adapter's gradient rule each step.
    For the sgp rule the projection basis is recomputed every
    ``sgp_refresh_every`` steps (1 = every step).  Updates the adapter in
    place and returns the loss trajectory, one entry per step plus the
    initial loss (length steps + 1).  Fully deterministic.
    """
    if steps < 1:
        raise DomainError(f"steps must be >= 1, got {steps}")
    if not lr > 0.0:
        raise DomainError(f"lr must be > 0, got {lr}")
    if sgp_refresh_every < 1:
        raise DomainError(
            f"sgp_refresh_every must be >= 1, got {sgp_refresh_every}"
        )
    x = check_matrix(x, "inputs")
    y = check_matrix(y, "targets")
    m, n = quantized.values.shape
    if x.shape[1] != m:
        raise DomainError(
            f"inputs have {x.shape[1]} features, weight expects {m}"
        )
    if y.shape != (x.shape[0], n):
        raise DomainError(f"targets must be {(x.shape[0], n)}, got {y.shape}")
    n_samples = x.shape[0]
    use_sgp = adapter.rule.kind == "sgp" and adapter.k > 0

    def current_loss():
        delta = x @ (quantized.values + adapter.low_rank()) - y
        return float(np.sum(delta * delta)) / n_samples

    basis = None
    losses = [current_loss()]
    for step in range(steps):
        if use_sgp and step % sgp_refresh_every == 0:
            basis = sgp_basis(adapter)
        delta = x @ (quantized.values + adapter.low_rank()) - y
        g = (2.0 / n_samples) * (x.T @ delta)
        raw = GradientBundle(
            g @ adapter.right1.T,
            adapter.left1.T @ g,
            g @ adapter.right2.T,
            adapter.left2.T @ g,
        )
        scaled = scale_gradients(adapter, raw, basis=basis)
        adapter.left1 = adapter.left1 - lr * scaled.left1
        adapter.right1 = adapter.right1 - lr * scaled.right1
        adapter.left2 = adapter.left2 - lr * scaled.left2
        adapter.right2 = adapter.right2 - lr * scaled.right2
        losses.append(current_loss())
    return np.array(losses)
