"""Seeded Monte-Carlo experiment orchestration and result export.

A run sweeps quantization bit depths for both feedback schemes over a set of
independent channel realizations (trials), aggregates recovery MSE, precoding
SNR and overhead across trials, and writes a CSV plus grouped bar charts.
Identical configuration yields byte-identical CSV output.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ArModel, generate_sequence
from .metrics import RunResult, summarize
from .predictor import RnnConfig
from .protocol import (
    TRAINING_BITS,
    ZERO_RESIDUAL_TOL,
    prepare_twin,
    run_conventional,
    run_operational,
)
from .quant import QuantizerConfig, default_full_range

CSV_HEADER = "scheme,bits,trials,mse_mean,mse_stderr,snr_db_mean,snr_db_stderr,bits_per_slot_mean"

_MASK64 = (1 << 64) - 1


def mix_seed(*parts: int) -> int:
    """Derive a child seed by avalanche-mixing integers (splitmix64 style).

    Documented so alternative implementations can reproduce the per-trial
    streams: fold each part in with xor, then multiply-xorshift twice.
    """
    x = 0x9E3779B97F4A7C15
    for p in parts:
        x ^= int(p) & _MASK64
        x = (x * 0xBF58476D1CE4E5B9) & _MASK64
        x ^= x >> 27
        x = (x * 0x94D049BB133111EB) & _MASK64
        x ^= x >> 31
    return x


@dataclass(frozen=True)
class ExperimentConfig:
    n_tx: int = 2
    n_rx: int = 1
    ar_order: int = 1
    fm: float = 0.01
    bits: tuple = (1, 2, 3)
    warmup_slots: int = 10_000
    operational_slots: int = 2_000
    trials: int = 20
    base_seed: int = 2024
    training_bits: float = TRAINING_BITS
    zero_residual_tol: float = ZERO_RESIDUAL_TOL
    rnn: RnnConfig = field(default_factory=RnnConfig)
    schemes: tuple = ("conventional", "proposed")

    def __post_init__(self):
        if self.n_tx < 1 or self.n_rx < 1 or self.ar_order < 1:
            raise ValueError("antenna counts and AR order must be positive")
        if not self.bits:
            raise ValueError("bits list must be nonempty")
        if self.trials < 1 or self.warmup_slots < 1 or self.operational_slots < 1:
            raise ValueError("trials and slot counts must be positive")
        for s in self.schemes:
            if s not in ("conventional", "proposed"):
                raise ValueError(f"unknown scheme {s!r}")

    @property
    def dims(self) -> tuple[int, int]:
        return (self.n_rx, self.n_tx)


@dataclass(frozen=True)
class AggregateRow:
    scheme: str
    bits: float
    trials: int
    mse_mean: float
    mse_stderr: float
    snr_db_mean: float
    snr_db_stderr: float
    bits_per_slot_mean: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    per_trial: list  # RunResult, all trials and arms
    aggregates: list  # AggregateRow, one per (scheme, bits)


def run_trial(cfg: ExperimentConfig, trial: int) -> list[RunResult]:
    """Simulate every (scheme, bits) arm on one channel realization."""
    channel_seed = mix_seed(cfg.base_seed, trial)
    model = ArModel.from_doppler(cfg.fm, cfg.ar_order, cfg.dims)
    total = cfg.warmup_slots + cfg.operational_slots
    seq = generate_sequence(model, cfg.dims, total, seed=channel_seed)

    results = []
    setup = None
    if "proposed" in cfg.schemes:
        rnn_cfg = replace(cfg.rnn, seed=mix_seed(cfg.base_seed, trial, 1))
        training_q = (
            QuantizerConfig(math.inf)
            if cfg.training_bits == math.inf
            else QuantizerConfig(cfg.training_bits, default_full_range())
        )
        setup = prepare_twin(seq, rnn_cfg, cfg.warmup_slots, training_q)
    for bits in cfg.bits:
        for scheme in cfg.schemes:
            if scheme == "conventional":
                trace = run_conventional(seq, bits, cfg.warmup_slots)
            else:
                trace = run_operational(
                    setup, seq, bits, zero_tol=cfg.zero_residual_tol
                )
            results.append(summarize(trace, seed=channel_seed))
    return results


def _aggregate(cfg: ExperimentConfig, per_trial: list[RunResult]) -> list[AggregateRow]:
    rows = []
    for scheme in cfg.schemes:
        for bits in cfg.bits:
            arm = [r for r in per_trial if r.scheme == scheme and r.bits == bits]
            mses = np.array([r.mse for r in arm])
            snrs = np.array([r.snr_db for r in arm])
            costs = np.array([r.avg_bits_per_slot for r in arm])
            n = len(arm)
            stderr = lambda v: float(np.std(v, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
            rows.append(
                AggregateRow(
                    scheme=scheme,
                    bits=bits,
                    trials=n,
                    mse_mean=float(mses.mean()),
                    mse_stderr=stderr(mses),
                    snr_db_mean=float(snrs.mean()),
                    snr_db_stderr=stderr(snrs),
                    bits_per_slot_mean=float(costs.mean()),
                )
            )
    return rows


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run all trials and aggregate.  Deterministic for a given config."""
    per_trial = []
    for trial in range(cfg.trials):
        per_trial.extend(run_trial(cfg, trial))
    return ExperimentResult(
        config=cfg, per_trial=per_trial, aggregates=_aggregate(cfg, per_trial)
    )


def _format_bits(bits) -> str:
    if bits == math.inf:
        return "inf"
    return str(int(bits))


def write_csv(result: ExperimentResult, path) -> None:
    rows = sorted(result.aggregates, key=lambda r: (r.scheme, r.bits))
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in rows:
            fh.write(
                f"{r.scheme},{_format_bits(r.bits)},{r.trials},"
                f"{r.mse_mean:.10g},{r.mse_stderr:.10g},"
                f"{r.snr_db_mean:.10g},{r.snr_db_stderr:.10g},"
                f"{r.bits_per_slot_mean:.10g}\n"
            )


def _plot_grouped(result: ExperimentResult, value, err, ylabel, title, path, log_scale=False):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cfg = result.config
    bits = sorted({r.bits for r in result.aggregates})
    x = np.arange(len(bits))
    width = 0.8 / max(len(cfg.schemes), 1)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for i, scheme in enumerate(cfg.schemes):
        rows = {r.bits: r for r in result.aggregates if r.scheme == scheme}
        vals = [value(rows[b]) for b in bits]
        errs = [err(rows[b]) for b in bits]
        offset = (i - (len(cfg.schemes) - 1) / 2) * width
        ax.bar(x + offset, vals, width, yerr=errs, capsize=3, label=scheme)
    ax.set_xticks(x)
    ax.set_xticklabels([_format_bits(b) for b in bits])
    ax.set_xlabel("Quantization bits")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if log_scale:
        ax.set_yscale("log")
    ax.legend()
    ax.grid(True, axis="y", linestyle=":", alpha=0.6)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def export(result: ExperimentResult, out_dir, plot: bool = False) -> list[str]:
    """Write the results CSV (and optionally the bar charts); returns paths."""
    if not result.aggregates:
        raise ValueError("refusing to export empty results")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    csv_path = os.path.join(out_dir, "results.csv")
    write_csv(result, csv_path)
    paths.append(csv_path)
    if plot:
        mse_path = os.path.join(out_dir, "mse_vs_bits.svg")
        _plot_grouped(
            result,
            value=lambda r: r.mse_mean,
            err=lambda r: r.mse_stderr,
            ylabel="Recovery MSE",
            title="CSI recovery error vs feedback resolution",
            path=mse_path,
            log_scale=True,
        )
        paths.append(mse_path)
        snr_path = os.path.join(out_dir, "snr_vs_bits.svg")
        _plot_grouped(
            result,
            value=lambda r: r.snr_db_mean,
            err=lambda r: r.snr_db_stderr,
            ylabel="Precoding SNR penalty [dB]",
            title="Matched-filter SNR vs feedback resolution",
            path=snr_path,
        )
        paths.append(snr_path)
    return paths


# --- configuration files -----------------------------------------------

_CONFIG_KEYS = {
    "dims.n_tx": ("n_tx", int),
    "dims.n_rx": ("n_rx", int),
    "channel.ar_order": ("ar_order", int),
    "channel.fm": ("fm", float),
    "quant.bits": ("bits", "bits_list"),
    "quant.training_bits": ("training_bits", "bits_value"),
    "run.warmup_slots": ("warmup_slots", int),
    "run.operational_slots": ("operational_slots", int),
    "run.trials": ("trials", int),
    "run.base_seed": ("base_seed", int),
    "protocol.zero_residual_tol": ("zero_residual_tol", float),
    "rnn.delay_taps": ("delay_taps", int),
    "rnn.horizon": ("horizon", int),
    "rnn.hidden_neurons": ("hidden_neurons", int),
    "rnn.epochs": ("epochs", int),
    "rnn.learning_rate": ("learning_rate", float),
    "rnn.seed": ("seed", int),
}


def _parse_bits_value(text: str) -> float:
    if text.strip() in ("inf", "identity"):
        return math.inf
    return int(text)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Read `key = value` lines with dotted section names into a config.

    Unknown keys are rejected so typos fail loudly.  Lines starting with `#`
    and blank lines are ignored.
    """
    cfg = base if base is not None else ExperimentConfig()
    overrides = {}
    rnn_overrides = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in _CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            attr, conv = _CONFIG_KEYS[key]
            if conv == "bits_list":
                parsed = tuple(_parse_bits_value(v) for v in value.split(","))
            elif conv == "bits_value":
                parsed = _parse_bits_value(value)
            else:
                parsed = conv(value)
            if key.startswith("rnn."):
                rnn_overrides[attr] = parsed
            else:
                overrides[attr] = parsed
    if rnn_overrides:
        overrides["rnn"] = replace(cfg.rnn, **rnn_overrides)
    return replace(cfg, **overrides)
