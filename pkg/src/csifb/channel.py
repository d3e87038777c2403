"""Time-correlated flat-fading MIMO channel generation.

Each transmit/receive antenna pair carries an independent complex
autoregressive fading process whose autocorrelation is fitted to the
isotropic-scattering (Jakes) profile J0(2*pi*fm*|lag|), with fm the maximum
Doppler frequency normalized by the slot rate.  Per-entry stationary power
is normalized to 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, signal, special


class YuleWalkerError(ValueError):
    """The autocorrelation system is singular or too ill-conditioned."""


class UnstableModelError(ValueError):
    """The AR coefficients describe a non-stationary process."""


_COND_LIMIT = 1e12
_WARMUP_FACTOR = 10


def bessel_j0(x):
    """Zeroth-order Bessel function of the first kind."""
    return special.j0(x)


def acf(lag, fm):
    """Jakes fading autocorrelation J0(2*pi*fm*|lag|).

    Even in the lag and bounded by acf(0) = 1.  Accepts scalars or arrays.
    """
    return bessel_j0(2.0 * np.pi * fm * np.abs(lag))


@dataclass(frozen=True)
class DopplerParams:
    """Mobility parameters of the terminal.

    The normalized Doppler is fm = (speed / wavelength) * sample_period and
    must stay below 0.5 so the fading process is sampled above Nyquist.
    """

    speed: float
    wavelength: float
    sample_period: float

    def __post_init__(self):
        if self.wavelength <= 0 or self.sample_period <= 0:
            raise ValueError("wavelength and sample_period must be positive")
        if self.speed < 0:
            raise ValueError("speed must be nonnegative")
        if self.fm >= 0.5:
            raise ValueError(f"normalized Doppler {self.fm:.4g} is not below 0.5")

    @property
    def fm(self) -> float:
        return self.speed / self.wavelength * self.sample_period

    @classmethod
    def from_normalized(cls, fm: float) -> "DopplerParams":
        """Build parameters directly from a normalized Doppler value."""
        return cls(speed=float(fm), wavelength=1.0, sample_period=1.0)


@dataclass(frozen=True)
class ArModel:
    """Fitted AR(u) fading model.

    coeffs has shape (order, n_rx, n_tx): one real coefficient matrix per lag,
    applied entrywise.  innovation_variance has shape (n_rx, n_tx) and is the
    per-entry variance of the complex Gaussian driving noise.
    """

    coeffs: np.ndarray
    innovation_variance: np.ndarray

    def __post_init__(self):
        coeffs = np.atleast_3d(np.asarray(self.coeffs, dtype=float))
        var = np.asarray(self.innovation_variance, dtype=float)
        if coeffs.ndim != 3 or coeffs.shape[0] < 1:
            raise ValueError("coeffs must have shape (order, n_rx, n_tx)")
        var = np.broadcast_to(var, coeffs.shape[1:]).copy()
        if np.any(var < 0):
            raise ValueError("innovation_variance must be nonnegative")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "innovation_variance", var)
        self._check_stability()

    def _check_stability(self):
        u = self.order
        if u == 1:
            phi = self.coeffs[0]
            # |phi| = 1 is allowed only for the frozen (zero innovation) case
            frozen = (np.abs(phi) == 1.0) & (self.innovation_variance == 0.0)
            if np.any((np.abs(phi) >= 1.0) & ~frozen):
                raise UnstableModelError(
                    f"AR(1) coefficient magnitude reaches {np.abs(phi).max():.6g}"
                )
            return
        for idx in np.ndindex(self.dims):
            poly = np.concatenate(([1.0], -self.coeffs[(slice(None), *idx)]))
            roots = np.roots(poly)
            if roots.size and np.max(np.abs(roots)) >= 1.0:
                raise UnstableModelError(
                    f"AR({u}) entry {idx} has a characteristic root on or "
                    "outside the unit circle"
                )

    @property
    def order(self) -> int:
        return self.coeffs.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.coeffs.shape[1:]

    @classmethod
    def from_doppler(cls, fm: float, order: int, dims: tuple[int, int]) -> "ArModel":
        """Fit an AR(order) model to the Jakes profile, shared by all entries."""
        coeffs, var = solve_yule_walker(order, fm)
        n_rx, n_tx = dims
        tiled = np.repeat(coeffs, n_rx * n_tx).reshape(order, n_rx, n_tx)
        return cls(coeffs=tiled, innovation_variance=np.full(dims, var))


def solve_yule_walker(order: int, fm: float) -> tuple[np.ndarray, float]:
    """Fit AR coefficients to the Jakes autocorrelation.

    Solves R c = r where R is the Toeplitz matrix of autocorrelations at lags
    0..order-1 and r holds lags 1..order.  The innovation variance follows
    from the fitted coefficients so the stationary process variance stays 1.
    """
    if order < 1:
        raise ValueError("order must be at least 1")
    lags = acf(np.arange(order + 1), fm)
    R = linalg.toeplitz(lags[:order])
    r = lags[1:]
    cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise YuleWalkerError(
            f"autocorrelation system is ill-conditioned (cond={cond:.3g}) "
            f"for fm={fm}, order={order}"
        )
    coeffs = np.linalg.solve(R, r)
    innovation = 1.0 - float(coeffs @ r)
    if innovation < -1e-9:
        raise YuleWalkerError(
            f"negative innovation variance {innovation:.3g} for fm={fm}, order={order}"
        )
    return coeffs, max(innovation, 0.0)


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Square-root factor of a covariance that may be numerically rank-deficient.

    Smooth fading makes the joint covariance of consecutive samples nearly
    singular, so plain Cholesky can fail; clip tiny eigenvalues instead.
    """
    w, v = np.linalg.eigh((cov + cov.T) / 2.0)
    w = np.clip(w, 0.0, None)
    return v * np.sqrt(w)


def _stationary_start(model: ArModel, rng: np.random.Generator) -> np.ndarray:
    """Draw the first `order` samples per entry from the stationary law."""
    u = model.order
    n_rx, n_tx = model.dims
    start = np.empty((u, n_rx, n_tx), dtype=complex)
    unit = (
        rng.standard_normal((u, n_rx, n_tx)) + 1j * rng.standard_normal((u, n_rx, n_tx))
    ) / np.sqrt(2.0)
    for idx in np.ndindex((n_rx, n_tx)):
        phi = model.coeffs[(slice(None), *idx)]
        var = model.innovation_variance[idx]
        if var == 0.0:
            # frozen process: stationary power is the unit normalization
            start[(slice(None), *idx)] = unit[(slice(None), *idx)]
            continue
        companion = np.zeros((u, u))
        companion[0, :] = phi
        if u > 1:
            companion[1:, :-1] = np.eye(u - 1)
        drive = np.zeros((u, u))
        drive[0, 0] = var
        cov = linalg.solve_discrete_lyapunov(companion, drive)
        start[(slice(None), *idx)] = _psd_factor(cov) @ unit[(slice(None), *idx)]
    return start


def generate_sequence(
    model: ArModel,
    dims: tuple[int, int],
    length: int,
    seed: int,
) -> np.ndarray:
    """Generate `length` channel matrices as a complex array (length, n_rx, n_tx).

    The recursion is seeded from the stationary distribution and an extra
    10*order slots are generated and discarded before the returned window.
    Identical (model, dims, length, seed) inputs give a bit-identical output.
    """
    if length < 1:
        raise ValueError("length must be at least 1")
    if tuple(dims) != model.dims:
        raise ValueError(f"dims {tuple(dims)} do not match model dims {model.dims}")
    u = model.order
    n_rx, n_tx = model.dims
    total = length + _WARMUP_FACTOR * u
    rng = np.random.default_rng(seed)

    sigma = np.sqrt(model.innovation_variance / 2.0)
    noise = sigma * (
        rng.standard_normal((total, n_rx, n_tx))
        + 1j * rng.standard_normal((total, n_rx, n_tx))
    )
    start = _stationary_start(model, rng)

    seq = np.empty((total, n_rx, n_tx), dtype=complex)
    if u == 1:
        drive = noise
        drive[0] = start[0]
        for idx in np.ndindex((n_rx, n_tx)):
            phi = model.coeffs[(0, *idx)]
            seq[(slice(None), *idx)] = signal.lfilter(
                [1.0], [1.0, -phi], drive[(slice(None), *idx)]
            )
    else:
        seq[:u] = start
        for t in range(u, total):
            acc = noise[t].copy()
            for i in range(u):
                acc += model.coeffs[i] * seq[t - 1 - i]
            seq[t] = acc
    return seq[total - length:]


def sequence_to_csv(seq: np.ndarray, path) -> None:
    """Write a channel sequence as CSV rows (slot, n_r, n_t, re, im)."""
    seq = np.asarray(seq)
    with open(path, "w", newline="") as fh:
        fh.write("slot,n_r,n_t,re,im\n")
        for t in range(seq.shape[0]):
            for i in range(seq.shape[1]):
                for j in range(seq.shape[2]):
                    h = seq[t, i, j]
                    fh.write(f"{t},{i + 1},{j + 1},{h.real:.17g},{h.imag:.17g}\n")
