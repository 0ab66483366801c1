"""Block quantizers over float64 matrices.

Two families, both operating on blocks of consecutive entries within a row:

``mxint``
    Shared power-of-two exponent per block.  Each entry becomes a signed
    integer mantissa in [-(2**(bits-1) - 1), 2**(bits-1) - 1] times the block
    step 2**(e - bits + 1), where e starts at ceil(log2(max |block|)) and is
    bumped by one when rounding would push the largest mantissa out of range.
    Steps are powers of two, so mantissa * step is exact in float64.

``uniform``
    Symmetric per-block linear grid with step max |block| / (2**(bits-1) - 1).
    Entries whose mantissa saturates are pinned to exactly +-(block max) so
    that re-quantizing a quantized matrix regenerates the identical grid.

Both families are idempotent bit for bit: quantize(quantize(w).values) equals
quantize(w).values exactly.  Rounding is ties-to-even throughout.  Rows
shorter than a multiple of block_size get a final ragged block; blocks never
span rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .linalg import check_matrix

FAMILIES = ("mxint", "uniform")
BLOCK_SIZES = (16, 32, 64, 128)


@dataclass(frozen=True)
class QuantizerConfig:
    """Quantizer family plus bit width and block size.

    bits counts mantissa bits including sign, 2..8.  block_size is the
    number of consecutive entries in a row sharing one scale.
    """

    family: str
    bits: int
    block_size: int = 32

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(
                f"unknown quantizer family {self.family!r}; choose from {FAMILIES}"
            )
        if not isinstance(self.bits, (int, np.integer)) or isinstance(self.bits, bool):
            raise DomainError(f"bits must be an integer, got {self.bits!r}")
        if not 2 <= self.bits <= 8:
            raise DomainError(f"bits must be in [2, 8], got {self.bits}")
        if self.block_size not in BLOCK_SIZES:
            raise DomainError(
                f"block_size must be one of {BLOCK_SIZES}, got {self.block_size}"
            )

    @property
    def mantissa_max(self) -> int:
        return 2 ** (self.bits - 1) - 1


@dataclass(frozen=True)
class QuantizedMatrix:
    """Dequantized values together with the config that produced them.

    values is float64 and exactly representable under config: quantizing it
    again is the identity.
    """

    values: np.ndarray
    config: QuantizerConfig


def effective_bitwidth(config: QuantizerConfig) -> float:
    """Stored bits per entry, counting the shared 8-bit block scale.

    bits + 8 / block_size: 3-bit mxint at block 32 costs 3.25 bits per entry.
    """
    return config.bits + 8.0 / config.block_size


def _quantize_blocks_mxint(blocks: np.ndarray, bits: int) -> np.ndarray:
    m_max = 2 ** (bits - 1) - 1
    absmax = np.max(np.abs(blocks), axis=2)
    # Exact ceil(log2(absmax)) without log-domain roundoff: frexp writes
    # absmax = frac * 2**e with frac in [0.5, 1), so the ceiling is e except
    # at exact powers of two where frac == 0.5.
    frac, e = np.frexp(absmax)
    e = np.where(frac == 0.5, e - 1, e)
    step = np.ldexp(1.0, e - (bits - 1))
    # If the largest magnitude rounds up past the mantissa range, widen the
    # step by one exponent notch instead of clamping.
    step = np.where(np.rint(absmax / step) > m_max, 2.0 * step, step)
    zero = absmax == 0.0
    step = np.where(zero, 1.0, step)  # placeholder, blocks there are all zero
    mant = np.rint(blocks / step[:, :, None])
    return mant * step[:, :, None]


def _quantize_blocks_uniform(blocks: np.ndarray, bits: int) -> np.ndarray:
    m_max = 2 ** (bits - 1) - 1
    absmax = np.max(np.abs(blocks), axis=2)
    zero = absmax == 0.0
    scale = np.where(zero, 1.0, absmax / m_max)
    mant = np.clip(np.rint(blocks / scale[:, :, None]), -m_max, m_max)
    out = mant * scale[:, :, None]
    # Pin saturated mantissas to exactly +-absmax.  mant * scale can differ
    # from absmax by an ulp, which would shift the grid on re-quantization.
    pin = np.abs(mant) == m_max
    out = np.where(pin, np.sign(mant) * absmax[:, :, None], out)
    return out


def quantize(w, config: QuantizerConfig) -> QuantizedMatrix:
    """Quantize then dequantize ``w`` blockwise under ``config``.

    Blocks run along rows; a row whose length is not a multiple of
    block_size ends with one shorter block.  The result carries the exact
    float64 dequantized values.  Per-entry error is bounded by half the
    block step (up to float64 rounding of the products).
    """
    arr = check_matrix(w, "weight")
    m, n = arr.shape
    bs = config.block_size
    n_blocks = -(-n // bs)
    padded = np.zeros((m, n_blocks * bs))
    padded[:, :n] = arr
    blocks = padded.reshape(m, n_blocks, bs)
    if config.family == "mxint":
        qb = _quantize_blocks_mxint(blocks, config.bits)
    else:
        qb = _quantize_blocks_uniform(blocks, config.bits)
    values = np.ascontiguousarray(qb.reshape(m, n_blocks * bs)[:, :n])
    return QuantizedMatrix(values, config)


def quantization_error(w, q: QuantizedMatrix) -> np.ndarray:
    """Residual w - q.values; shapes must agree."""
    arr = check_matrix(w, "weight")
    if arr.shape != q.values.shape:
        raise DomainError(
            f"shape mismatch: weight {arr.shape} vs quantized {q.values.shape}"
        )
    return arr - q.values
