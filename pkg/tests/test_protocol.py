import math

import numpy as np
import pytest

from csifb.channel import ArModel, generate_sequence
from csifb.predictor import RnnConfig
from csifb.protocol import (
    DesyncError,
    FeedbackMessage,
    bs_reconstruct,
    conventional_feedback,
    message_bit_cost,
    mt_report,
    prepare_twin,
    run_conventional,
    run_link,
    run_operational,
    trace_to_csv,
)
from csifb.quant import QuantizerConfig, default_full_range, quantize_matrix

B2R1 = QuantizerConfig(bits=2, clip_range=1.0)
IDENTITY = QuantizerConfig(bits=math.inf)

# small but trainable link setup shared by the slow protocol tests
FAST_RNN = RnnConfig(epochs=120, seed=0)
WARMUP = 2000


@pytest.fixture(scope="module")
def link_setup():
    model = ArModel.from_doppler(0.01, 1, (1, 2))
    seq = generate_sequence(model, (1, 2), WARMUP + 600, seed=42)
    setup = prepare_twin(seq, FAST_RNN, WARMUP)
    return seq, setup


def test_conventional_feedback_identity():
    H = np.array([[0.3 - 0.8j, 0.1 + 0.2j]])
    est, cost = conventional_feedback(H, IDENTITY)
    assert np.array_equal(est, H)
    assert cost == math.inf


def test_conventional_feedback_quantizes():
    H = np.array([[0.3 - 0.8j]])
    est, cost = conventional_feedback(H, B2R1)
    assert est[0, 0] == 0.25 - 0.75j
    assert cost == 2 * 1 * 1 * 2
    H2 = np.array([[0.3 - 0.8j, 0.0 + 0.0j]])
    _, cost2 = conventional_feedback(H2, B2R1)
    assert cost2 == 8


def test_conventional_feedback_zero_matrix_one_bit():
    cfg = QuantizerConfig(bits=1, clip_range=1.0)
    est, _ = conventional_feedback(np.zeros((1, 2), dtype=complex), cfg)
    assert np.all(est == 0.5 + 0.5j)  # half-step levels on both axes


def test_mt_report_perfect_prediction_is_free():
    H = np.array([[0.4 + 0.1j, -0.2 + 0.9j]])
    msg = mt_report(H, H.copy(), B2R1, slot=7)
    assert msg.empty
    assert msg.bit_cost == 0.0
    assert bs_reconstruct(H, msg) is not H
    assert np.array_equal(bs_reconstruct(H, msg), H)


def test_mt_report_quantizes_residual():
    est = np.array([[0.0 + 0.0j]])
    pred = np.array([[0.3 + 0.0j]])
    msg = mt_report(est, pred, B2R1)
    assert msg.payload[0, 0].real == 0.25
    assert msg.bit_cost == 4


def test_mt_report_identity_payload_is_exact_residual():
    rng = np.random.default_rng(0)
    est = rng.standard_normal((1, 2)) + 1j * rng.standard_normal((1, 2))
    pred = est + 1e-3 * (rng.standard_normal((1, 2)) + 1j * rng.standard_normal((1, 2)))
    msg = mt_report(est, pred, IDENTITY)
    # the two payload terms sum to the raw residual without rounding
    assert np.array_equal(msg.payload + msg.payload_tail, msg.payload - est + 0)
    assert np.array_equal(bs_reconstruct(pred, msg), est)


def test_identity_reconstruction_exact_near_zero_components():
    # tiny channel components break single-float round trips; the two-term
    # payload must still telescope exactly
    est = np.array([[1e-300 + 1e-17j, 0.5 - 1e-9j]])
    pred = np.array([[0.05 + 0.3j, 0.49 + 0.2j]])
    msg = mt_report(est, pred, IDENTITY)
    assert np.array_equal(bs_reconstruct(pred, msg), est)


def test_bs_reconstruct_empty_and_payload():
    pred = np.array([[0.5 + 0.5j]])
    msg = FeedbackMessage(slot=0, empty=True, bit_cost=0.0)
    assert np.array_equal(bs_reconstruct(pred, msg), pred)
    payload = np.array([[0.25 - 0.25j]])
    msg = FeedbackMessage(slot=0, empty=False, bit_cost=4.0, payload=payload)
    assert np.array_equal(
        bs_reconstruct(np.zeros((1, 1), dtype=complex), msg), -payload
    )


def test_substitution_identity():
    # reconstructing from a report equals prediction minus quantized residual
    rng = np.random.default_rng(1)
    for _ in range(20):
        est = rng.standard_normal((1, 2)) + 1j * rng.standard_normal((1, 2))
        pred = rng.standard_normal((1, 2)) + 1j * rng.standard_normal((1, 2))
        msg = mt_report(est, pred, B2R1)
        direct = pred - quantize_matrix(pred - est, B2R1)
        assert np.array_equal(bs_reconstruct(pred, msg), direct)


def test_message_bit_cost():
    assert message_bit_cost((1, 2), B2R1) == 8
    assert message_bit_cost((2, 2), QuantizerConfig(3, 1.0)) == 24
    assert message_bit_cost((1, 2), IDENTITY) == math.inf


def test_run_link_rejects_unknown_scheme():
    seq = np.zeros((10, 1, 2), dtype=complex)
    with pytest.raises(ValueError):
        run_link(seq, "magic", bits=1)


def test_conventional_trace_window():
    rng = np.random.default_rng(3)
    seq = rng.standard_normal((30, 1, 2)) + 1j * rng.standard_normal((30, 1, 2))
    trace = run_conventional(seq, bits=2, warmup_slots=10)
    assert trace.slots[0] == 10 and trace.slots[-1] == 29
    assert trace.channel.shape == (20, 1, 2)
    assert np.all(trace.bit_cost == 8.0)
    expected = quantize_matrix(seq[10:], QuantizerConfig(2, default_full_range()))
    assert np.array_equal(trace.reconstructed, expected)


def test_twin_predictions_bit_identical(link_setup):
    seq, setup = link_setup
    trace = run_operational(setup, seq, bits=2, collect_predictions=True)
    assert np.array_equal(trace.mt_predictions, trace.bs_predictions)
    assert trace.channel.shape[0] == 600


def test_run_deterministic(link_setup):
    seq, setup = link_setup
    a = run_operational(setup, seq, bits=1)
    b = run_operational(setup, seq, bits=1)
    assert np.array_equal(a.reconstructed, b.reconstructed)
    assert np.array_equal(a.bit_cost, b.bit_cost)


def test_identity_quantizer_recovers_channel_exactly(link_setup):
    seq, setup = link_setup
    trace = run_operational(setup, seq, bits=math.inf)
    assert np.array_equal(trace.reconstructed, trace.channel)
    assert np.all(np.isinf(trace.bit_cost))


def test_residual_noise_beats_full_quantization(link_setup):
    # per-slot reconstruction error must be lower than conventional reporting
    # in at least 90% of slots at every swept bit depth
    seq, setup = link_setup
    for bits in (1, 2, 3):
        prop = run_operational(setup, seq, bits=bits)
        conv = run_conventional(seq, bits=bits, warmup_slots=WARMUP)
        err_prop = np.sum(np.abs(prop.channel - prop.reconstructed) ** 2, axis=(1, 2))
        err_conv = np.sum(np.abs(conv.channel - conv.reconstructed) ** 2, axis=(1, 2))
        assert np.mean(err_prop < err_conv) >= 0.9


def test_bit_accounting(link_setup):
    seq, setup = link_setup
    trace = run_operational(setup, seq, bits=2)
    conv_cost = message_bit_cost((1, 2), QuantizerConfig(2, 1.0))
    assert np.all(trace.bit_cost <= conv_cost)
    assert set(np.unique(trace.bit_cost)) <= {0.0, float(conv_cost)}


def test_desync_detection(link_setup):
    # a single-ulp weight perturbation on one end must trip the guard
    import copy

    seq, setup = link_setup
    bad = copy.deepcopy(setup)
    bad.trained.imag.output[0, 0] = np.nextafter(
        bad.trained.imag.output[0, 0], np.inf
    )
    from csifb.protocol import _new_state

    mt = _new_state(setup)
    bs = _new_state(bad)
    with pytest.raises(DesyncError, match="slot"):
        for t in range(setup.warmup_slots, seq.shape[0]):
            if not np.array_equal(mt.predict(), bs.predict()):
                raise DesyncError(f"twin predictions diverged at slot {t}")


def test_frozen_channel_sends_nothing_after_transient():
    model = ArModel(coeffs=np.ones((1, 1, 2)), innovation_variance=np.zeros((1, 2)))
    seq = generate_sequence(model, (1, 2), 1500 + 800, seed=9)
    setup = prepare_twin(seq, RnnConfig(epochs=120, seed=1), 1500)
    trace = run_operational(setup, seq, bits=2)
    assert np.mean(trace.bit_cost == 0.0) > 0.95
    tail = trace.bit_cost[50:]
    assert np.all(tail == 0.0)


def test_trace_csv_export(tmp_path, link_setup):
    seq, setup = link_setup
    trace = run_operational(setup, seq[: WARMUP + 5], bits=2)
    path = tmp_path / "trace.csv"
    trace_to_csv(trace, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("slot,scheme,true_re_11,true_im_11")
    assert lines[0].endswith("bit_cost")
    assert len(lines) == 1 + 5