import numpy as np
import pytest

from csifb import predictor
from csifb.channel import ArModel, generate_sequence
from csifb.predictor import (
    ComplexityReport,
    NotReadyError,
    PredictorState,
    RnnConfig,
    RnnWeights,
    TrainingError,
    build_input,
    complexity,
    forward,
    input_size,
    load_weights,
    loss_and_gradients,
    mat_to_vec,
    output_size,
    prediction_mse,
    save_weights,
    train,
    vec_to_mat,
)
from csifb.quant import QuantizerConfig, default_full_range, quantize_matrix

from oracles import central_difference_gradient


def test_mat_to_vec_row_major():
    assert np.array_equal(mat_to_vec(np.array([[1, 2]])), [1, 2])
    assert np.array_equal(mat_to_vec(np.array([[1, 2], [3, 4]])), [1, 2, 3, 4])


def test_vec_to_mat_roundtrip():
    rng = np.random.default_rng(0)
    H = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
    assert np.array_equal(vec_to_mat(mat_to_vec(H), (2, 3)), H)
    with pytest.raises(ValueError):
        vec_to_mat(np.zeros(5), (2, 3))


def test_build_input_lengths():
    # 1x2 MIMO with one delay tap: M = 1*2*(1+2) = 6
    buf = [np.zeros(2), np.zeros(2)]
    assert build_input(buf, np.zeros(2)).size == 6
    assert input_size((1, 2), 1) == 6
    # no delay taps: M = 2 * n_sub
    assert build_input([np.zeros(2)], np.zeros(2)).size == 4
    assert input_size((1, 2), 0) == 4
    assert np.all(build_input(buf, np.zeros(2)) == 0.0)


def test_build_input_empty_buffer():
    with pytest.raises(NotReadyError):
        build_input([], np.zeros(2))


def test_forward_zero_weights():
    w = RnnWeights(hidden=np.zeros((4, 6)), output=np.zeros((2, 4)))
    assert np.all(forward(np.ones(6), w) == 0.0)


def test_forward_single_unit():
    # one hidden neuron wired to one active input of value 0.5
    hidden = np.zeros((1, 3))
    hidden[0, 1] = 1.0
    w = RnnWeights(hidden=hidden, output=np.ones((1, 1)))
    x = np.array([9.0, 0.5, -3.0]) * np.array([0.0, 1.0, 0.0]) + np.array([9.0, 0.0, -3.0]) * 0
    out = forward(np.array([0.0, 0.5, 0.0]), w)
    assert out[0] == pytest.approx(0.46211715726000974, abs=1e-15)


def test_output_index_mapping():
    # antenna pair (n_r=1, n_t=2) with N_t=2 lands on output slot 2 (index 1)
    dims = (1, 2)
    n_r, n_t = 1, 2
    n_t_total = dims[1]
    slot = n_t + (n_r - 1) * n_t_total
    H = np.array([[0.0, 7.0]])
    assert mat_to_vec(H)[slot - 1] == 7.0


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n_in, n_hidden, n_out, n_rows = 5, 4, 3, 12
    X = rng.standard_normal((n_rows, n_in))
    Y = rng.standard_normal((n_rows, n_out))
    w = RnnWeights(
        hidden=rng.standard_normal((n_hidden, n_in)) * 0.5,
        output=rng.standard_normal((n_out, n_hidden)) * 0.5,
    )
    _, g_h, g_o = loss_and_gradients(w, X, Y)

    def loss_of_hidden(h):
        return loss_and_gradients(RnnWeights(h, w.output), X, Y)[0]

    def loss_of_output(o):
        return loss_and_gradients(RnnWeights(w.hidden, o), X, Y)[0]

    num_h = central_difference_gradient(loss_of_hidden, w.hidden)
    num_o = central_difference_gradient(loss_of_output, w.output)
    rel_h = np.linalg.norm(g_h - num_h) / max(np.linalg.norm(g_h), np.linalg.norm(num_h))
    rel_o = np.linalg.norm(g_o - num_o) / max(np.linalg.norm(g_o), np.linalg.norm(num_o))
    assert rel_h <= 1e-5
    assert rel_o <= 1e-5


def _constant_history(value, T, dims=(1, 2)):
    return np.full((T, *dims), value, dtype=complex)


def test_train_constant_history():
    history = _constant_history(0.4 - 0.3j, 400)
    cfg = RnnConfig(seed=1)
    trained = train(history, cfg)
    assert trained.report.test_mse_real <= 1e-6
    assert trained.report.test_mse_imag <= 1e-6


def test_predict_after_constant_training():
    value = 0.4 - 0.3j
    history = _constant_history(value, 400)
    trained = train(history, RnnConfig(seed=1))
    state = PredictorState(trained)
    with pytest.raises(NotReadyError):
        state.predict()
    state.push(history[-2])
    state.push(history[-1])
    state.seed_recurrent(history[-1])
    pred = state.predict()
    assert np.max(np.abs(pred - value)) <= 1e-3
    assert np.array_equal(state.last_prediction, pred)


def test_training_is_deterministic():
    rng = np.random.default_rng(3)
    history = rng.standard_normal((300, 1, 2)) + 1j * rng.standard_normal((300, 1, 2))
    cfg = RnnConfig(epochs=60, seed=5)
    a = train(history, cfg)
    b = train(history, cfg)
    assert np.array_equal(a.real.hidden, b.real.hidden)
    assert np.array_equal(a.real.output, b.real.output)
    assert np.array_equal(a.imag.hidden, b.imag.hidden)
    assert np.array_equal(a.imag.output, b.imag.output)


def test_identical_states_predict_identically():
    rng = np.random.default_rng(4)
    history = rng.standard_normal((300, 1, 2)) + 1j * rng.standard_normal((300, 1, 2))
    trained = train(history, RnnConfig(epochs=40, seed=2))
    states = [PredictorState(trained) for _ in range(2)]
    for st in states:
        st.push(history[-2])
        st.push(history[-1])
        st.seed_recurrent(history[-1])
    preds = [st.predict() for st in states]
    assert np.array_equal(preds[0], preds[1])


def test_insufficient_history_rejected():
    with pytest.raises(TrainingError):
        train(_constant_history(1.0, 8), RnnConfig())


def test_divergence_reported_with_epoch():
    rng = np.random.default_rng(6)
    history = 1e3 * (rng.standard_normal((120, 1, 2)) + 1j * rng.standard_normal((120, 1, 2)))
    with pytest.raises(TrainingError, match="epoch"):
        train(history, RnnConfig(epochs=200, learning_rate=1e155, seed=0))


def test_prediction_mse():
    a = np.ones((3, 1, 2), dtype=complex)
    assert prediction_mse(a, a) == 0.0
    x = np.array([[[0.1]]])
    y = np.array([[[0.2]]])
    assert prediction_mse(x, y) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        prediction_mse(np.empty((0, 1, 1)), np.empty((0, 1, 1)))


def test_complexity_values():
    rep = complexity(RnnConfig(delay_taps=1, hidden_neurons=16), (1, 2))
    assert rep.multiplications == 128
    assert rep.prediction_order == rep.mimo_size * rep.network_scale
    tiny = complexity(RnnConfig(delay_taps=0, hidden_neurons=1), (1, 1))
    assert tiny.multiplications == 3


def test_complexity_formulas_agree():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n_rx = int(rng.integers(1, 5))
        n_tx = int(rng.integers(1, 5))
        k = int(rng.integers(0, 6))
        m_h = int(rng.integers(1, 64))
        cfg = RnnConfig(delay_taps=k, hidden_neurons=m_h)
        rep = complexity(cfg, (n_rx, n_tx))
        # layer-by-layer count: (M + M_o) * M_h
        m = input_size((n_rx, n_tx), k)
        m_o = output_size((n_rx, n_tx))
        assert rep.multiplications == (m + m_o) * m_h


def test_training_order_scales_with_samples():
    cfg = RnnConfig(delay_taps=1, hidden_neurons=16, epochs=100)
    rep = complexity(cfg, (1, 2), history_length=1000)
    assert isinstance(rep, ComplexityReport)
    assert rep.training_order == rep.prediction_order * int((1000 - 2) * 0.8) * 100


@pytest.mark.parametrize("fm", [0.005, 0.01])
def test_trained_predictor_beats_hold(fm):
    qcfg = QuantizerConfig(bits=6, clip_range=default_full_range())
    model = ArModel.from_doppler(fm, 1, (1, 2))
    for seed in (0, 1, 2):
        seq = generate_sequence(model, (1, 2), 4000, seed=seed)
        history = quantize_matrix(seq, qcfg)
        trained = train(history, RnnConfig(seed=seed))
        assert trained.report.beats_hold


def test_weights_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(9)
    history = rng.standard_normal((300, 1, 2)) + 1j * rng.standard_normal((300, 1, 2))
    trained = train(history, RnnConfig(epochs=30, seed=8))
    path = tmp_path / "weights.npz"
    save_weights(trained, path)
    loaded = load_weights(path)
    assert np.array_equal(loaded.real.hidden, trained.real.hidden)
    assert np.array_equal(loaded.real.output, trained.real.output)
    assert np.array_equal(loaded.imag.hidden, trained.imag.hidden)
    assert np.array_equal(loaded.imag.output, trained.imag.output)
    assert loaded.dims == trained.dims
    assert loaded.cfg.delay_taps == trained.cfg.delay_taps
