"""Recovery error, matched-filter precoding SNR and overhead aggregation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .protocol import LinkTrace

logger = logging.getLogger(__name__)

# aggregate dB floor when every slot has zero matched-filter gain
SNR_FLOOR_DB = -100.0


@dataclass(frozen=True)
class RunResult:
    """Per-run aggregates for one (scheme, bits) arm."""

    scheme: str
    bits: float
    mse: float
    snr_db: float
    avg_bits_per_slot: float
    slots: int
    seed: int


def recovery_mse(trace: LinkTrace) -> float:
    """Mean squared Frobenius error of the BS estimate against the true CSI."""
    if trace.channel.shape[0] == 0:
        raise ValueError("empty trace")
    diff = trace.channel - trace.reconstructed
    return float(np.mean(np.sum(np.abs(diff) ** 2, axis=(1, 2))))


def mf_precoder(H_est: np.ndarray) -> np.ndarray:
    """Unit-norm matched-filter precoder for a single-receive-antenna channel."""
    H_est = np.asarray(H_est)
    if H_est.ndim != 2 or H_est.shape[0] != 1:
        raise ValueError("matched filter precoding expects a 1 x n_tx channel")
    row = H_est[0]
    norm = np.linalg.norm(row)
    if norm == 0:
        raise ValueError("zero-norm channel estimate has no matched filter")
    return row.conj() / norm


def precoding_snr(trace: LinkTrace, noise_power: float | None = None) -> float:
    """Received-SNR penalty of precoding on the reconstruction, in dB.

    For each slot the beamforming gain of the matched filter built from the
    reconstructed CSI is compared with the gain under perfect CSI; the mean
    power ratio is reported in dB, so perfect recovery gives 0 dB and any
    mismatch is negative.  `noise_power` is accepted for absolute-SNR
    reporting but does not affect this relative measure.  Slots with a zero
    true channel are skipped.
    """
    del noise_power
    if trace.channel.shape[0] == 0:
        raise ValueError("empty trace")
    ratios = []
    skipped = 0
    for H, H_est in zip(trace.channel, trace.reconstructed):
        h_norm = np.linalg.norm(H[0])
        if h_norm == 0:
            skipped += 1
            continue
        w = mf_precoder(H_est)
        gain = np.abs(H[0] @ w) ** 2
        ratios.append(float(gain) / float(h_norm ** 2))
    if skipped:
        logger.warning("precoding_snr skipped %d zero-channel slots", skipped)
    if not ratios:
        raise ValueError("no usable slots")
    mean_ratio = float(np.mean(ratios))
    if mean_ratio <= 0.0:
        return SNR_FLOOR_DB
    return max(10.0 * np.log10(mean_ratio), SNR_FLOOR_DB)


def overhead(trace: LinkTrace) -> float:
    """Average uplink bits per operational slot."""
    if trace.bit_cost.size == 0:
        raise ValueError("empty trace")
    return float(np.mean(trace.bit_cost))


def summarize(trace: LinkTrace, seed: int) -> RunResult:
    return RunResult(
        scheme=trace.scheme,
        bits=trace.bits,
        mse=recovery_mse(trace),
        snr_db=precoding_snr(trace),
        avg_bits_per_slot=overhead(trace),
        slots=int(trace.channel.shape[0]),
        seed=seed,
    )
