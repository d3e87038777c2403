"""Recurrent channel predictor trained on quantized CSI history.

The network has a single tanh hidden layer and a linear output layer with no
bias terms, so the weights are two matrices: hidden (M_h x M) and output
(M_o x M_h).  Its input concatenates the vectorized quantized CSI at the
current slot, k delayed copies, and the previous prediction fed back, giving
M = n_rx * n_tx * (k + 2) inputs for M_o = n_rx * n_tx outputs.

Complex channels are handled by two independent real-valued networks, one for
the real part and one for the imaginary part.

Training is a deterministic function of the history and the seed: the hidden
layer starts with a block of small single-input probe units (operating tanh
in its linear region, so the least-squares readout begins at the best linear
filter) plus random units, and full-batch Adam with plateau-halved learning
rate polishes both layers against teacher-forced samples, where the feedback
slot carries the ground-truth value it targets.

For one-step operation that slot duplicates the newest delay-line input, so
any weight it attracts becomes an uncontrolled closed-loop gain once the
network feeds on its own output; slowly fading channels then drift into
unseen amplitude ranges where the loop can run away.  After the main fit the
feedback columns are therefore zeroed and kept frozen while the readout is
refit and polished, which pins the closed-loop gain at zero without changing
the input layout.  The feedback entries are additionally clamped to the
training range as a deployment guard.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
EARLY_STOP_PATIENCE = 25
# plateaus halve the learning rate this many times before stopping for good
MAX_RATE_HALVINGS = 5
# input weight of the near-linear probe units
PROBE_WEIGHT = 0.05
# the feedback input is clamped to this multiple of the training value range
FEEDBACK_MARGIN = 1.25


class NotReadyError(RuntimeError):
    """The delay line is not filled yet, so no prediction can be formed."""


class TrainingError(RuntimeError):
    """Training could not run or diverged."""


@dataclass(frozen=True)
class RnnConfig:
    delay_taps: int = 1
    horizon: int = 1
    hidden_neurons: int = 16
    epochs: int = 250
    learning_rate: float = 1e-3
    seed: int = 0
    splits: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.delay_taps < 0:
            raise ValueError("delay_taps must be nonnegative")
        if self.horizon < 1 or self.hidden_neurons < 1 or self.epochs < 1:
            raise ValueError("horizon, hidden_neurons and epochs must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if len(self.splits) != 3 or min(self.splits) <= 0:
            raise ValueError("splits must be three positive fractions")
        if abs(sum(self.splits) - 1.0) > 1e-9:
            raise ValueError("splits must sum to 1")


@dataclass
class RnnWeights:
    hidden: np.ndarray  # (hidden_neurons, n_inputs)
    output: np.ndarray  # (n_outputs, hidden_neurons)
    # closed-loop guard: feedback entries are clamped to +/- this bound before
    # entering the network, keeping free-running trajectories in the region
    # the training data covered; inf disables the clamp
    feedback_bound: float = np.inf


def input_size(dims: tuple[int, int], delay_taps: int) -> int:
    return dims[0] * dims[1] * (delay_taps + 2)


def output_size(dims: tuple[int, int]) -> int:
    return dims[0] * dims[1]


def mat_to_vec(H: np.ndarray) -> np.ndarray:
    """Unroll a channel matrix row by row into a vector."""
    return np.asarray(H).reshape(-1)


def vec_to_mat(v: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    """Inverse of mat_to_vec."""
    v = np.asarray(v)
    if v.size != dims[0] * dims[1]:
        raise ValueError(f"vector of length {v.size} cannot fill dims {dims}")
    return v.reshape(dims)


def build_input(buffer, feedback) -> np.ndarray:
    """Concatenate the delay line (newest first) with the recurrent feedback.

    `buffer` holds the k+1 most recent vectorized CSI values, newest first;
    `feedback` is the previous prediction.
    """
    parts = [np.asarray(b).reshape(-1) for b in buffer]
    if not parts:
        raise NotReadyError("delay line is empty")
    return np.concatenate(parts + [np.asarray(feedback).reshape(-1)])


def forward(x: np.ndarray, weights: RnnWeights) -> np.ndarray:
    """Network output for one input vector."""
    hidden = np.tanh(weights.hidden @ x)
    return weights.output @ hidden


def forward_batch(X: np.ndarray, weights: RnnWeights) -> np.ndarray:
    hidden = np.tanh(X @ weights.hidden.T)
    return hidden @ weights.output.T


def loss_and_gradients(weights: RnnWeights, X: np.ndarray, Y: np.ndarray):
    """Mean squared error over rows of (X, Y) and its weight gradients."""
    hidden = np.tanh(X @ weights.hidden.T)
    pred = hidden @ weights.output.T
    err = pred - Y
    n = X.shape[0]
    loss = float(np.sum(err ** 2) / n)
    d_pred = 2.0 * err / n
    g_output = d_pred.T @ hidden
    d_hidden = (d_pred @ weights.output) * (1.0 - hidden ** 2)
    g_hidden = d_hidden.T @ X
    return loss, g_hidden, g_output


@dataclass
class TrainReport:
    test_mse_real: float
    test_mse_imag: float
    hold_mse_real: float
    hold_mse_imag: float
    epochs_real: int
    epochs_imag: int

    @property
    def beats_hold(self) -> bool:
        return (
            self.test_mse_real < self.hold_mse_real
            and self.test_mse_imag < self.hold_mse_imag
        )


@dataclass
class TrainedPredictor:
    real: RnnWeights
    imag: RnnWeights
    dims: tuple[int, int]
    cfg: RnnConfig
    report: TrainReport | None = None


def _init_hidden(n_in, n_hidden, rng) -> np.ndarray:
    """Random tanh units plus single-input probes in the near-linear region.

    The probes give the least-squares readout a linear basis over every input
    slot, so training starts from the best linear filter instead of having to
    discover it by gradient descent.
    """
    hidden = rng.uniform(-1.0, 1.0, size=(n_hidden, n_in)) / np.sqrt(n_in)
    n_probe = min(n_in, n_hidden // 2)
    for i in range(n_probe):
        hidden[i, :] = 0.0
        hidden[i, i % n_in] = PROBE_WEIGHT
    return hidden


def _lstsq_readout(X: np.ndarray, Y: np.ndarray, hidden: np.ndarray) -> np.ndarray:
    """Least-squares output layer for fixed hidden weights.

    A small ridge keeps near-duplicate hidden features from producing huge
    cancelling coefficient pairs, which would be brittle off the training
    manifold.
    """
    features = np.tanh(X @ hidden.T)
    gram = features.T @ features
    ridge = 1e-8 * (np.trace(gram) / gram.shape[0] + 1.0)
    gram[np.diag_indices_from(gram)] += ridge
    return np.linalg.solve(gram, features.T @ Y).T


def _make_dataset(V: np.ndarray, k: int, horizon: int):
    """Teacher-forced design matrix and targets from a (T, n) value matrix."""
    T = V.shape[0]
    n_samples = T - k - horizon
    blocks = [V[k - d : k - d + n_samples] for d in range(k + 1)]
    blocks.append(V[k : k + n_samples])  # recurrent slot, teacher forced
    X = np.hstack(blocks)
    Y = V[k + horizon : k + horizon + n_samples]
    return X, Y


def _adam_fit(
    X, Y, X_val, Y_val, weights: RnnWeights, rate: float, epochs: int,
    frozen_tail: int = 0,
) -> tuple[RnnWeights, int]:
    """Full-batch Adam with plateau-halved rate and early stop.

    `frozen_tail` masks gradients of that many trailing hidden columns so a
    zeroed feedback block stays zero.
    """
    m_h = np.zeros_like(weights.hidden)
    v_h = np.zeros_like(weights.hidden)
    m_o = np.zeros_like(weights.output)
    v_o = np.zeros_like(weights.output)
    best_val = np.inf
    stale = 0
    halvings = 0
    epochs_run = 0
    for epoch in range(1, epochs + 1):
        loss, g_h, g_o = loss_and_gradients(weights, X, Y)
        if not np.isfinite(loss):
            raise TrainingError(f"loss became non-finite at epoch {epoch}")
        if frozen_tail:
            g_h[:, -frozen_tail:] = 0.0
        t = epoch
        for grad, m, v, w in ((g_h, m_h, v_h, weights.hidden), (g_o, m_o, v_o, weights.output)):
            m *= ADAM_BETA1
            m += (1 - ADAM_BETA1) * grad
            v *= ADAM_BETA2
            v += (1 - ADAM_BETA2) * grad ** 2
            m_hat = m / (1 - ADAM_BETA1 ** t)
            v_hat = v / (1 - ADAM_BETA2 ** t)
            w -= rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        epochs_run = epoch
        val_pred = forward_batch(X_val, weights)
        val_loss = float(np.mean(np.sum((val_pred - Y_val) ** 2, axis=1)))
        if not np.isfinite(val_loss):
            raise TrainingError(f"validation loss became non-finite at epoch {epoch}")
        if val_loss < best_val:
            best_val = val_loss
            stale = 0
        else:
            stale += 1
            if stale >= EARLY_STOP_PATIENCE:
                if halvings >= MAX_RATE_HALVINGS:
                    break
                rate /= 2.0
                halvings += 1
                stale = 0
    return weights, epochs_run


def _free_run_mse(weights: RnnWeights, V: np.ndarray, k: int, horizon: int, start: int, stop: int) -> float:
    """Squared prediction error over samples [start, stop) with the recurrent
    input fed by the network's own previous (clamped) output.

    The delay-line part of every input is known up front, so its hidden
    pre-activations are batched; only the feedback contribution is sequential.
    """
    n = V.shape[1]
    w_anchor = weights.hidden[:, :-n]
    w_feedback = weights.hidden[:, -n:]
    idx = np.arange(start, stop) + k
    anchored = np.hstack([V[idx - d] for d in range(k + 1)])
    pre = anchored @ w_anchor.T
    bound = weights.feedback_bound
    recurrent = V[start + k]  # teacher value seeds the first step
    total = 0.0
    for s in range(stop - start):
        fb = np.clip(recurrent, -bound, bound)
        hidden = np.tanh(pre[s] + w_feedback @ fb)
        pred = weights.output @ hidden
        diff = pred - V[idx[s] + horizon]
        total += float(diff @ diff)
        recurrent = pred
    return total / (stop - start)


def _hold_mse(V: np.ndarray, k: int, horizon: int, start: int, stop: int) -> float:
    """Error of the trivial predictor that repeats the latest value."""
    t = np.arange(start, stop) + k
    diff = V[t + horizon] - V[t]
    return float(np.mean(np.sum(diff ** 2, axis=1)))


def _fit_part(values: np.ndarray, cfg: RnnConfig, rng, n_train: int, n_val: int):
    """Full training pipeline for one real-valued network."""
    k, horizon = cfg.delay_taps, cfg.horizon
    n = values.shape[1]
    n_samples = values.shape[0] - k - horizon
    X, Y = _make_dataset(values, k, horizon)
    X_t, Y_t = X[:n_train], Y[:n_train]
    X_v, Y_v = X[n_train : n_train + n_val], Y[n_train : n_train + n_val]

    hidden = _init_hidden(X.shape[1], cfg.hidden_neurons, rng)
    bound = FEEDBACK_MARGIN * float(np.max(np.abs(X_t)))
    weights = RnnWeights(hidden, _lstsq_readout(X_t, Y_t, hidden), bound)
    weights, epochs_main = _adam_fit(X_t, Y_t, X_v, Y_v, weights, cfg.learning_rate, cfg.epochs)

    # pin the closed-loop gain at zero, refit the readout, polish the rest
    hidden = weights.hidden
    hidden[:, -n:] = 0.0
    weights = RnnWeights(hidden, _lstsq_readout(X_t, Y_t, hidden), bound)
    weights, epochs_polish = _adam_fit(
        X_t, Y_t, X_v, Y_v, weights,
        cfg.learning_rate / 2.0, max(1, cfg.epochs // 2), frozen_tail=n,
    )

    test_mse = _free_run_mse(weights, values, k, horizon, n_train + n_val, n_samples)
    hold = _hold_mse(values, k, horizon, n_train + n_val, n_samples)
    return weights, test_mse, hold, epochs_main + epochs_polish


def train(history: np.ndarray, cfg: RnnConfig) -> TrainedPredictor:
    """Fit the real and imaginary networks on a quantized CSI history.

    `history` is a complex array (T, n_rx, n_tx).  The sample windows are
    split chronologically into train/validation/test fractions; validation
    only monitors early stopping and variant selection, and the test segment
    is evaluated free-running.  Bit-identical given (history, cfg).
    """
    arr = np.asarray(history, dtype=complex)
    if arr.ndim != 3:
        raise ValueError("history must have shape (T, n_rx, n_tx)")
    T = arr.shape[0]
    dims = arr.shape[1:]
    k, horizon = cfg.delay_taps, cfg.horizon
    n_samples = T - k - horizon
    n_train = int(n_samples * cfg.splits[0])
    n_val = int(n_samples * cfg.splits[1])
    n_test = n_samples - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise TrainingError(
            f"history of length {T} leaves {n_samples} windows, not enough for "
            f"a {cfg.splits} split with delay_taps={k}, horizon={horizon}"
        )

    V = arr.reshape(T, -1)
    nets = []
    reports = []
    for part_idx, values in enumerate((V.real, V.imag)):
        rng = np.random.default_rng([cfg.seed, part_idx])
        weights, test_mse, hold, epochs_run = _fit_part(values, cfg, rng, n_train, n_val)
        nets.append(weights)
        reports.append((test_mse, hold, epochs_run))

    report = TrainReport(
        test_mse_real=reports[0][0],
        test_mse_imag=reports[1][0],
        hold_mse_real=reports[0][1],
        hold_mse_imag=reports[1][1],
        epochs_real=reports[0][2],
        epochs_imag=reports[1][2],
    )
    return TrainedPredictor(real=nets[0], imag=nets[1], dims=dims, cfg=cfg, report=report)


def prediction_mse(predictions, targets) -> float:
    """Mean squared Frobenius error between two equal-length sequences."""
    preds = np.asarray(predictions)
    targs = np.asarray(targets)
    if preds.shape != targs.shape:
        raise ValueError("predictions and targets must have equal shapes")
    if preds.shape[0] == 0:
        raise ValueError("empty sequences")
    diff = preds - targs
    return float(np.mean(np.sum(np.abs(diff) ** 2, axis=tuple(range(1, diff.ndim)))))


@dataclass(frozen=True)
class ComplexityReport:
    multiplications: int
    mimo_size: int        # number of subchannels
    network_scale: int    # delay taps times hidden neurons
    prediction_order: int
    training_order: int | None


def complexity(cfg: RnnConfig, dims: tuple[int, int], history_length: int | None = None) -> ComplexityReport:
    """Multiplication count of one prediction and the related growth orders."""
    n_sub = dims[0] * dims[1]
    kappa = n_sub * (cfg.delay_taps + 3) * cfg.hidden_neurons
    scale = cfg.delay_taps * cfg.hidden_neurons
    training = None
    if history_length is not None:
        n_samples = history_length - cfg.delay_taps - cfg.horizon
        n_train = int(n_samples * cfg.splits[0])
        training = n_sub * scale * n_train * cfg.epochs
    return ComplexityReport(
        multiplications=kappa,
        mimo_size=n_sub,
        network_scale=scale,
        prediction_order=n_sub * scale,
        training_order=training,
    )


class PredictorState:
    """Delay line, recurrent feedback and weights of one deployed predictor.

    Instantiated once per link end.  Both ends stay bit-identical as long as
    they are constructed from the same trained weights and fed the same
    synchronization sequence.
    """

    def __init__(self, trained: TrainedPredictor):
        self._trained = trained
        self._k = trained.cfg.delay_taps
        self._buffer: deque = deque(maxlen=self._k + 1)
        self.last_prediction: np.ndarray | None = None

    @property
    def dims(self) -> tuple[int, int]:
        return self._trained.dims

    @property
    def ready(self) -> bool:
        return len(self._buffer) == self._k + 1

    def push(self, H: np.ndarray) -> None:
        """Append one quantized or reconstructed CSI matrix to the delay line."""
        self._buffer.append(mat_to_vec(np.asarray(H, dtype=complex)).copy())

    def seed_recurrent(self, H: np.ndarray) -> None:
        """Set the recurrent feedback used by the next prediction."""
        self.last_prediction = np.asarray(H, dtype=complex).copy()

    def predict(self) -> np.ndarray:
        """One-horizon-ahead prediction; also becomes the next feedback."""
        if not self.ready:
            raise NotReadyError(
                f"delay line holds {len(self._buffer)} of {self._k + 1} values"
            )
        window = list(reversed(self._buffer))  # newest first
        feedback = (
            self.last_prediction
            if self.last_prediction is not None
            else vec_to_mat(self._buffer[-1], self.dims)
        )
        feedback = mat_to_vec(feedback)
        pred_parts = []
        for weights, as_part in (
            (self._trained.real, np.real),
            (self._trained.imag, np.imag),
        ):
            fb = np.clip(as_part(feedback), -weights.feedback_bound, weights.feedback_bound)
            x = build_input([as_part(v) for v in window], fb)
            pred_parts.append(forward(x, weights))
        pred = vec_to_mat(pred_parts[0] + 1j * pred_parts[1], self.dims)
        self.last_prediction = pred
        return pred


def save_weights(trained: TrainedPredictor, path) -> None:
    """Serialize trained weights with their dimensions; loads bit-identically."""
    cfg = trained.cfg
    np.savez(
        path,
        real_hidden=trained.real.hidden,
        real_output=trained.real.output,
        imag_hidden=trained.imag.hidden,
        imag_output=trained.imag.output,
        feedback_bounds=np.array(
            [trained.real.feedback_bound, trained.imag.feedback_bound]
        ),
        meta=np.array(
            [
                trained.dims[0],
                trained.dims[1],
                cfg.delay_taps,
                cfg.horizon,
                cfg.hidden_neurons,
            ],
            dtype=np.int64,
        ),
    )


def load_weights(path) -> TrainedPredictor:
    with np.load(path) as data:
        n_rx, n_tx, k, horizon, hidden = (int(v) for v in data["meta"])
        bounds = data["feedback_bounds"]
        cfg = RnnConfig(delay_taps=k, horizon=horizon, hidden_neurons=hidden)
        return TrainedPredictor(
            real=RnnWeights(data["real_hidden"].copy(), data["real_output"].copy(), float(bounds[0])),
            imag=RnnWeights(data["imag_hidden"].copy(), data["imag_output"].copy(), float(bounds[1])),
            dims=(n_rx, n_tx),
            cfg=cfg,
        )
