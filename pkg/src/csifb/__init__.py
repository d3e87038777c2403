"""Link-level simulator for residual CSI feedback with twin channel predictors."""

from .channel import ArModel, DopplerParams, acf, bessel_j0, generate_sequence, solve_yule_walker
from .harness import ExperimentConfig, export, load_config, run_experiment
from .metrics import RunResult, mf_precoder, overhead, precoding_snr, recovery_mse
from .predictor import PredictorState, RnnConfig, complexity, prediction_mse, train
from .protocol import FeedbackMessage, run_link
from .quant import QuantizerConfig, distortion_power, quantize_matrix, quantize_scalar

__version__ = "0.1.0"
