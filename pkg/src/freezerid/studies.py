"""Synthetic-data studies: predictive recovery, identifiability and retuning.

Shared by the acceptance tests and the scripts in ``scripts/``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import ekf, estimate, profile
from .diagnostics import rmse
from .model import DEFAULT_TRUTH, Dataset, ThermalParams
from .simulate import SimConfig, SimOutput, simulate_sde


@dataclass(frozen=True)
class RecoveryConfig:
    truth: ThermalParams = DEFAULT_TRUTH
    sim_seed: int = 1
    duration: float = 2880.0
    split: int = 1440
    perturb_factor: float = 2.0
    perturb_seed: int = 0
    optimizer: estimate.OptimizerSettings = field(default_factory=estimate.OptimizerSettings)


@dataclass(frozen=True, eq=False)
class RecoveryResult:
    config: RecoveryConfig
    sim: SimOutput
    train: Dataset
    init: ThermalParams
    fit: estimate.FitReport
    rmse_fit: float
    rmse_truth: float
    seconds: float


def heldout_rmse(p: ThermalParams, sim: SimOutput, split: int) -> float:
    """Open-loop prediction RMSE on ``[split, end)`` against the noise-free chamber state."""
    pred = ekf.predict_from(p, sim.dataset, split)
    return rmse(pred.T_c, sim.true_states[split:, 0])


def recovery_study(cfg: RecoveryConfig = RecoveryConfig()) -> RecoveryResult:
    sim = simulate_sde(cfg.truth, SimConfig(duration=cfg.duration, seed=cfg.sim_seed))
    train = sim.dataset.segment(0, cfg.split)
    init = estimate.perturbed(cfg.truth, cfg.perturb_factor, cfg.perturb_seed)
    t0 = time.perf_counter()
    report = estimate.fit(estimate.FitSpec(init=init, optimizer=cfg.optimizer), train)
    seconds = time.perf_counter() - t0
    return RecoveryResult(
        config=cfg, sim=sim, train=train, init=init, fit=report,
        rmse_fit=heldout_rmse(report.estimates, sim, cfg.split),
        rmse_truth=heldout_rmse(cfg.truth, sim, cfg.split),
        seconds=seconds,
    )


def max_abs_correlation(report: estimate.FitReport):
    """``(|r|, name_i, name_j)`` of the strongest off-diagonal correlation."""
    if report.correlation is None:
        return float("nan"), None, None
    c = np.abs(report.correlation.copy())
    np.fill_diagonal(c, 0.0)
    i, j = np.unravel_index(np.argmax(c), c.shape)
    return float(c[i, j]), report.free_names[i], report.free_names[j]


@dataclass(frozen=True, eq=False)
class IdentifiabilityResult:
    free: profile.ProfileResult
    pinned: profile.ProfileResult
    seconds: float


def identifiability_study(rec: RecoveryResult, param="C_c", pin="R_ce", points=21, factor=30.0,
                          settings=profile.PROFILE_OPTIMIZER) -> IdentifiabilityResult:
    fit = rec.fit
    grid = profile.default_grid(param, getattr(fit.estimates, param), points, factor)
    t0 = time.perf_counter()
    free = profile.profile_likelihood(rec.train, param, grid, fit, settings=settings)
    pinned = profile.profile_likelihood(rec.train, param, grid, fit, settings=settings,
                                        pinned=[(pin, getattr(fit.estimates, pin))])
    return IdentifiabilityResult(free, pinned, time.perf_counter() - t0)


@dataclass(frozen=True, eq=False)
class RetuneResult:
    new_truth: ThermalParams
    data: Dataset
    report: estimate.FitReport
    mean_residual: float
    seconds: float


def retune_study(baseline: estimate.FitReport, truth: ThermalParams = DEFAULT_TRUTH,
                 C_c_factor: float = 1.4, seed: int = 2, duration: float = 1440.0) -> RetuneResult:
    """Regenerate data with ``C_c`` scaled and retune the default subset on it."""
    new_truth = truth.replace(C_c=truth.C_c * C_c_factor)
    data = simulate_sde(new_truth, SimConfig(duration=duration, seed=seed)).dataset
    t0 = time.perf_counter()
    report = estimate.retune(baseline, data)
    seconds = time.perf_counter() - t0
    pred = ekf.predict_from(report.estimates, data, 0)
    return RetuneResult(new_truth, data, report, float(np.mean(data.y - pred.T_c)), seconds)
