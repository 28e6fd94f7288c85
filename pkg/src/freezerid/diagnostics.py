"""Residual diagnostics for one-step prediction errors."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ekf
from .model import Dataset, ThermalParams, ValidationError

KS_95 = 1.358
Z95 = 1.959963984540054
BURN_IN = 10


class UndefinedStatisticError(ValueError):
    """A statistic is undefined for the given input (e.g. zero variance)."""


def acf(x, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelation for lags ``0..max_lag``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValidationError("acf expects a 1-D sequence")
    if max_lag < 1 or x.size <= max_lag:
        raise ValidationError(f"need len(x) > max_lag >= 1, got len {x.size}, max_lag {max_lag}")
    d = x - x.mean()
    denom = float(d @ d)
    if denom == 0.0 or not math.isfinite(denom):
        raise UndefinedStatisticError("autocorrelation undefined for a constant sequence")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for h in range(1, max_lag + 1):
        out[h] = float(d[:-h] @ d[h:]) / denom
    return out


def acf_band(n: int) -> float:
    return Z95 / math.sqrt(n)


def cumulated_periodogram(x):
    """Normalised cumulated periodogram at the nonzero Fourier frequencies.

    Returns ``(frequencies, cumulative, band)`` with frequencies in cycles per
    sample, ``cumulative[-1] == 1`` and ``band`` the KS 95% offset.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 16:
        raise ValidationError("cumulated periodogram needs a 1-D sequence of length >= 16")
    d = x - x.mean()
    if not np.any(d):
        raise UndefinedStatisticError("cumulated periodogram undefined for zero-variance input")
    n = x.size
    power = np.abs(np.fft.rfft(d)) ** 2
    n_freq = (n - 1) // 2  # exclude zero and, for even n, the Nyquist term
    power = power[1:n_freq + 1]
    freqs = np.arange(1, n_freq + 1) / n
    cum = np.cumsum(power)
    cum /= cum[-1]
    return freqs, cum, KS_95 / math.sqrt(n_freq)


def periodogram_inside_band(cum, band) -> bool:
    n = cum.size
    diagonal = np.arange(1, n + 1) / n
    return bool(np.max(np.abs(cum - diagonal)) <= band)


def rmse(pred, obs) -> float:
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if pred.shape != obs.shape:
        raise ValidationError(f"length mismatch: {pred.shape} vs {obs.shape}")
    if pred.size == 0:
        raise ValidationError("rmse needs at least one sample")
    return float(np.sqrt(np.mean((pred - obs) ** 2)))


def whiteness_fraction(rho, band) -> float:
    """Fraction of lags >= 1 with |acf| inside the band."""
    lags = np.asarray(rho)[1:]
    return float(np.mean(np.abs(lags) <= band))


@dataclass(frozen=True, eq=False)
class DiagnosticsReport:
    standardized_residuals: np.ndarray
    acf: np.ndarray
    acf_band: float
    cp_frequencies: np.ndarray
    cumulated_periodogram: np.ndarray
    cp_band: float
    rmse: float
    whiteness_summary: float

    @property
    def cp_inside(self) -> bool:
        return periodogram_inside_band(self.cumulated_periodogram, self.cp_band)

    def summary(self) -> dict:
        return {
            "n": int(self.standardized_residuals.size),
            "rmse": self.rmse,
            "acf_band": self.acf_band,
            "whiteness_summary": self.whiteness_summary,
            "cp_band": self.cp_band,
            "cp_max_deviation": float(np.max(np.abs(
                self.cumulated_periodogram
                - np.arange(1, self.cumulated_periodogram.size + 1) / self.cumulated_periodogram.size))),
            "cp_inside": self.cp_inside,
        }


def residual_report(residuals, raw_errors=None, max_lag: int = 40) -> DiagnosticsReport:
    """Diagnostics for an already standardised residual sequence.

    ``raw_errors`` (in degC) feeds the RMSE; defaults to ``residuals``.
    """
    r = np.asarray(residuals, dtype=float)
    raw = r if raw_errors is None else np.asarray(raw_errors, dtype=float)
    max_lag = min(max_lag, r.size - 1)
    rho = acf(r, max_lag)
    band = acf_band(r.size)
    freqs, cum, cp_band = cumulated_periodogram(r)
    return DiagnosticsReport(
        standardized_residuals=r, acf=rho, acf_band=band, cp_frequencies=freqs,
        cumulated_periodogram=cum, cp_band=cp_band, rmse=rmse(raw, np.zeros_like(raw)),
        whiteness_summary=whiteness_fraction(rho, band),
    )


def diagnose(p: ThermalParams, data: Dataset, max_lag: int = 40, burn_in: int = BURN_IN,
             substeps: int = ekf.DEFAULT_SUBSTEPS) -> DiagnosticsReport:
    """One-step prediction residual diagnostics; the first ``burn_in`` samples are dropped."""
    if len(data) <= burn_in + 16:
        raise ValidationError(f"need more than {burn_in + 16} samples for diagnostics")
    fp = ekf.filter_pass(p, data, substeps=substeps)
    return residual_report(fp.standardized_innovations[burn_in:], fp.innovations[burn_in:], max_lag)
