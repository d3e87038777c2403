"""Feedback schemes linking a mobile terminal (MT) to its base station (BS).

Two state machines are simulated over a channel realization:

* conventional: every slot the MT quantizes its full CSI estimate and the BS
  uses that directly.
* proposed: both ends run identical predictors trained on a shared quantized
  history collected during a warm-up phase of conventional reporting.  The MT
  then feeds back only the quantized gap between the shared prediction and
  its fresh estimate, and the BS recovers CSI by subtracting the received
  update from its own (identical) prediction.

Synchronization contract: after warm-up the delay lines at both ends are fed
the BS-side reconstruction, which the MT can compute locally, so the twins
stay bit-identical without extra signaling.  The residual quantizer range and
the prediction bias estimated during calibration are shared once at the phase
transition along with the trained weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import predictor as pred_mod
from .predictor import PredictorState, RnnConfig, TrainedPredictor
from .quant import QuantizerConfig, default_full_range, quantize_matrix

# residual sup-norm below which the MT sends nothing
ZERO_RESIDUAL_TOL = 1e-9
# bit depth of warm-up reporting that builds the training history
TRAINING_BITS = 6
# tail fraction of the warm-up used to calibrate residual statistics
CAL_FRACTION = 0.2
CAL_DISCARD = 10
MIN_RESIDUAL_RANGE = 1e-9

SCHEMES = ("conventional", "proposed")


class DesyncError(RuntimeError):
    """Twin predictors disagreed; the link state is corrupt."""


@dataclass
class FeedbackMessage:
    """One uplink report.

    For a finite-bit quantizer the payload is the quantized residual matrix.
    The pass-through quantizer models an unconstrained report: its payload is
    carried as the two-term sum payload + payload_tail, which represents the
    raw residual exactly and lets the receiver telescope the subtraction
    without rounding.  An empty message carries nothing and costs no bits.
    """

    slot: int
    empty: bool
    bit_cost: float
    payload: np.ndarray | None = None
    payload_tail: np.ndarray | None = None


def message_bit_cost(dims: tuple[int, int], cfg: QuantizerConfig) -> float:
    """Uplink cost of one non-empty report: both real dimensions per entry."""
    if cfg.is_identity:
        return math.inf
    return 2 * dims[0] * dims[1] * cfg.bits


def conventional_feedback(H_mt: np.ndarray, cfg: QuantizerConfig):
    """Quantized full-CSI report; BS uses the payload as its estimate."""
    H_mt = np.asarray(H_mt)
    return quantize_matrix(H_mt, cfg), message_bit_cost(H_mt.shape, cfg)


def mt_report(
    H_mt_est: np.ndarray,
    H_mt_pred: np.ndarray,
    cfg: QuantizerConfig,
    zero_tol: float = ZERO_RESIDUAL_TOL,
    slot: int = -1,
) -> FeedbackMessage:
    """Build the MT's residual report for one slot.

    The residual is prediction minus estimate.  If every component is within
    `zero_tol` of zero there is nothing worth correcting and the message is
    flagged empty at zero bit cost.
    """
    residual = np.asarray(H_mt_pred) - np.asarray(H_mt_est)
    sup = max(np.max(np.abs(residual.real)), np.max(np.abs(residual.imag)))
    if sup <= zero_tol:
        return FeedbackMessage(slot=slot, empty=True, bit_cost=0.0)
    if cfg.is_identity:
        # unconstrained report: ship the residual as an exact two-term sum
        return FeedbackMessage(
            slot=slot,
            empty=False,
            bit_cost=math.inf,
            payload=np.asarray(H_mt_pred, dtype=complex).copy(),
            payload_tail=-np.asarray(H_mt_est, dtype=complex),
        )
    return FeedbackMessage(
        slot=slot,
        empty=False,
        bit_cost=message_bit_cost(residual.shape, cfg),
        payload=quantize_matrix(residual, cfg),
    )


def bs_reconstruct(H_bs_pred: np.ndarray, msg: FeedbackMessage) -> np.ndarray:
    """BS channel estimate: its own prediction minus the received update."""
    H_bs_pred = np.asarray(H_bs_pred)
    if msg.empty:
        return H_bs_pred.copy()
    out = H_bs_pred - msg.payload
    if msg.payload_tail is not None:
        out = out - msg.payload_tail
    return out


@dataclass
class TwinSetup:
    """Everything shared by both ends at the warm-up/operational transition."""

    trained: TrainedPredictor
    prediction_bias: np.ndarray   # mean shadow residual, complex (n_rx, n_tx)
    residual_spread: float        # std of centered shadow residual components
    tail_history: np.ndarray      # last delay_taps+1 quantized CSI matrices
    recurrent_seed: np.ndarray    # shared value seeding the feedback input
    warmup_slots: int


@dataclass
class LinkTrace:
    """Per-slot record of the operational phase."""

    scheme: str
    bits: float
    slots: np.ndarray          # absolute slot indices
    channel: np.ndarray        # true CSI, (T, n_rx, n_tx)
    reconstructed: np.ndarray  # BS-side estimate, same shape
    bit_cost: np.ndarray       # uplink bits per slot
    mt_predictions: np.ndarray | None = None
    bs_predictions: np.ndarray | None = None


def _new_state(setup: TwinSetup) -> PredictorState:
    state = PredictorState(setup.trained)
    for H in setup.tail_history:
        state.push(H)
    state.seed_recurrent(setup.recurrent_seed)
    return state


def prepare_twin(
    channel_seq: np.ndarray,
    rnn_cfg: RnnConfig,
    warmup_slots: int,
    training_quantizer: QuantizerConfig | None = None,
) -> TwinSetup:
    """Warm-up phase: build the shared history, train, and calibrate.

    Training data is the conventionally reported (quantized) CSI of the first
    `warmup_slots` slots.  Calibration then replays the predictor over the
    warm-up tail against the true channel with unquantized corrections, which
    mimics the operational loop and yields the residual bias and spread that
    size the residual quantizer.  The resulting scalars are part of the
    one-time configuration handed to the BS.
    """
    seq = np.asarray(channel_seq, dtype=complex)
    if training_quantizer is None:
        training_quantizer = QuantizerConfig(TRAINING_BITS, default_full_range())
    k = rnn_cfg.delay_taps
    if warmup_slots > seq.shape[0]:
        raise ValueError("channel sequence shorter than the warm-up phase")
    history = quantize_matrix(seq[:warmup_slots], training_quantizer)
    trained = pred_mod.train(history, rnn_cfg)

    cal_len = max(64, int(round(CAL_FRACTION * warmup_slots)))
    start = warmup_slots - cal_len
    if start < k + 1:
        raise ValueError("warm-up too short for residual calibration")
    state = PredictorState(trained)
    for t in range(start - k - 1, start):
        state.push(seq[t])
    state.seed_recurrent(seq[start - 1])
    residuals = []
    for t in range(start, warmup_slots):
        p = state.predict()
        residuals.append(p - seq[t])
        state.push(seq[t])
    residuals = np.asarray(residuals[CAL_DISCARD:])
    bias = residuals.mean(axis=0)
    centered = residuals - bias
    spread = float(np.std(np.concatenate([centered.real.ravel(), centered.imag.ravel()])))

    tail = history[warmup_slots - k - 1 : warmup_slots]
    return TwinSetup(
        trained=trained,
        prediction_bias=bias,
        residual_spread=spread,
        tail_history=tail,
        recurrent_seed=history[warmup_slots - 1],
        warmup_slots=warmup_slots,
    )


def run_operational(
    setup: TwinSetup,
    channel_seq: np.ndarray,
    bits: float,
    zero_tol: float = ZERO_RESIDUAL_TOL,
    collect_predictions: bool = False,
) -> LinkTrace:
    """Run the residual-feedback scheme over the post-warm-up slots.

    Per slot both ends predict, the MT reports the quantized residual, the BS
    reconstructs, and both delay lines ingest the reconstruction.  Twin
    equality is asserted every slot and any mismatch aborts the run.
    """
    seq = np.asarray(channel_seq, dtype=complex)
    w = setup.warmup_slots
    n_op = seq.shape[0] - w
    if n_op < 1:
        raise ValueError("channel sequence has no operational slots")
    identity = bits == math.inf
    if identity:
        qcfg = QuantizerConfig(math.inf)
        bias = np.zeros_like(setup.prediction_bias)
        tol = 0.0
    else:
        clip = max(3.0 * setup.residual_spread, MIN_RESIDUAL_RANGE)
        qcfg = QuantizerConfig(bits, clip)
        bias = setup.prediction_bias
        tol = zero_tol

    mt = _new_state(setup)
    bs = _new_state(setup)
    dims = setup.trained.dims
    recon = np.empty((n_op, *dims), dtype=complex)
    costs = np.empty(n_op)
    preds_mt = np.empty((n_op, *dims), dtype=complex) if collect_predictions else None
    preds_bs = np.empty((n_op, *dims), dtype=complex) if collect_predictions else None

    for i in range(n_op):
        t = w + i
        p_mt = mt.predict()
        p_bs = bs.predict()
        if not np.array_equal(p_mt, p_bs):
            raise DesyncError(f"twin predictions diverged at slot {t}")
        if collect_predictions:
            preds_mt[i] = p_mt
            preds_bs[i] = p_bs
        corrected_mt = p_mt - bias
        corrected_bs = p_bs - bias
        msg = mt_report(seq[t], corrected_mt, qcfg, zero_tol=tol, slot=t)
        est = bs_reconstruct(corrected_bs, msg)
        recon[i] = est
        costs[i] = msg.bit_cost
        # BS-computable sequence keeps both delay lines identical
        mt.push(est)
        bs.push(est.copy())

    return LinkTrace(
        scheme="proposed",
        bits=bits,
        slots=np.arange(w, w + n_op),
        channel=seq[w:],
        reconstructed=recon,
        bit_cost=costs,
        mt_predictions=preds_mt,
        bs_predictions=preds_bs,
    )


def run_conventional(
    channel_seq: np.ndarray,
    bits: float,
    warmup_slots: int,
    clip_range: float | None = None,
) -> LinkTrace:
    """Quantized full-CSI reporting over the same operational window."""
    seq = np.asarray(channel_seq, dtype=complex)
    n_op = seq.shape[0] - warmup_slots
    if n_op < 1:
        raise ValueError("channel sequence has no operational slots")
    if bits == math.inf:
        qcfg = QuantizerConfig(math.inf)
    else:
        qcfg = QuantizerConfig(bits, clip_range if clip_range is not None else default_full_range())
    window = seq[warmup_slots:]
    recon = quantize_matrix(window, qcfg)
    cost = message_bit_cost((seq.shape[1], seq.shape[2]), qcfg)
    return LinkTrace(
        scheme="conventional",
        bits=bits,
        slots=np.arange(warmup_slots, seq.shape[0]),
        channel=window,
        reconstructed=np.array(recon, copy=True),
        bit_cost=np.full(n_op, cost, dtype=float),
    )


def run_link(
    channel_seq: np.ndarray,
    scheme: str,
    bits: float,
    rnn_cfg: RnnConfig | None = None,
    warmup_slots: int = 10_000,
    training_quantizer: QuantizerConfig | None = None,
    zero_tol: float = ZERO_RESIDUAL_TOL,
    collect_predictions: bool = False,
) -> LinkTrace:
    """Simulate one feedback scheme end to end and return its trace."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if scheme == "conventional":
        return run_conventional(channel_seq, bits, warmup_slots)
    setup = prepare_twin(
        channel_seq,
        rnn_cfg if rnn_cfg is not None else RnnConfig(),
        warmup_slots,
        training_quantizer,
    )
    return run_operational(
        setup,
        channel_seq,
        bits,
        zero_tol=zero_tol,
        collect_predictions=collect_predictions,
    )


def trace_to_csv(trace: LinkTrace, path) -> None:
    """Write a per-slot trace as CSV with per-entry true/reconstructed parts."""
    n_rx, n_tx = trace.channel.shape[1:]
    cols = ["slot", "scheme"]
    for i in range(1, n_rx + 1):
        for j in range(1, n_tx + 1):
            cols += [f"true_re_{i}{j}", f"true_im_{i}{j}", f"rec_re_{i}{j}", f"rec_im_{i}{j}"]
    cols.append("bit_cost")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for idx, slot in enumerate(trace.slots):
            row = [str(int(slot)), trace.scheme]
            for i in range(n_rx):
                for j in range(n_tx):
                    h = trace.channel[idx, i, j]
                    r = trace.reconstructed[idx, i, j]
                    row += [f"{h.real:.17g}", f"{h.imag:.17g}", f"{r.real:.17g}", f"{r.imag:.17g}"]
            row.append(f"{trace.bit_cost[idx]:.17g}")
            fh.write(",".join(row) + "\n")
