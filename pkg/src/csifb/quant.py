"""Element-wise mid-rise scalar quantization of complex matrices.

A b-bit quantizer spans [-r, +r] per real dimension with 2**b reconstruction
levels at +/-(m + 1/2) * step, so there is no zero level.  Values at an exact
cell boundary round toward +inf; values beyond the range clip to the
outermost level.  bits = math.inf selects a pass-through quantizer that
returns its input unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

# clip range multiplier: r = 2.5 sigma per real dimension
FULL_SCALE_SIGMAS = 2.5


@dataclass(frozen=True)
class QuantizerConfig:
    bits: float
    clip_range: float | None = None

    def __post_init__(self):
        if self.bits != math.inf:
            if int(self.bits) != self.bits or self.bits < 1:
                raise ValueError("bits must be a positive integer or math.inf")
            object.__setattr__(self, "bits", int(self.bits))
        if self.clip_range is not None and self.clip_range <= 0:
            raise ValueError("clip_range must be positive")

    @property
    def is_identity(self) -> bool:
        return self.bits == math.inf

    @property
    def n_levels(self) -> int:
        self._require_finite()
        return 2 ** int(self.bits)

    @property
    def step(self) -> float:
        self._require_finite()
        if self.clip_range is None:
            raise ValueError("clip_range is unset; calibrate or pass it explicitly")
        return 2.0 * self.clip_range / self.n_levels

    def with_clip(self, clip_range: float) -> "QuantizerConfig":
        return replace(self, clip_range=clip_range)

    def _require_finite(self):
        if self.is_identity:
            raise ValueError("pass-through quantizer has no levels or step")


def default_full_range(entry_variance: float = 1.0) -> float:
    """Clip range for full CSI with the given complex per-entry variance."""
    return FULL_SCALE_SIGMAS * math.sqrt(entry_variance / 2.0)


def quantize_scalar(x, cfg: QuantizerConfig):
    """Quantize real values to the nearest mid-rise level.

    Operates element-wise on arrays.  Reconstruction error is at most step/2
    inside [-r, r]; the map is idempotent and monotone.
    """
    if cfg.is_identity:
        return x
    r = cfg.clip_range
    step = cfg.step
    idx = np.floor((np.asarray(x, dtype=float) + r) / step)
    idx = np.clip(idx, 0, cfg.n_levels - 1)
    out = -r + (idx + 0.5) * step
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(out)
    return out


def quantize_matrix(H: np.ndarray, cfg: QuantizerConfig) -> np.ndarray:
    """Quantize the real and imaginary part of every entry independently."""
    if cfg.is_identity:
        return np.asarray(H)
    H = np.asarray(H)
    return quantize_scalar(H.real, cfg) + 1j * quantize_scalar(H.imag, cfg)


def distortion_power(cfg: QuantizerConfig) -> float:
    """Per-real-dimension MSE, step**2 / 12, for input uniform on [-r, r]."""
    if cfg.is_identity:
        return 0.0
    return cfg.step ** 2 / 12.0
