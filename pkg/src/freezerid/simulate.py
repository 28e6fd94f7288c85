"""Synthetic closed-loop freezer data.

A thermostat switches the compressor from the true chamber temperature, the
evaporator inlet/outlet temperatures follow first-order lags toward ON/OFF
levels, and the three-state SDE is integrated with Euler-Maruyama.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    Dataset,
    InputSeries,
    ThermalParams,
    ValidationError,
    sigmoid,
    steady_wall_temperature,
    transform_signal,
)


class SimulationUnstableError(RuntimeError):
    pass


@dataclass(frozen=True)
class InputProfile:
    T_a_mean: float = 22.0
    T_a_amplitude: float = 0.5
    T_a_period: float = 1440.0
    T_in_cold: float = -95.0
    T_in_warm: float = -70.0
    tau_in: float = 4.0
    T_out_cold: float = -85.0
    T_out_warm: float = -65.0
    tau_out: float = 10.0


@dataclass(frozen=True)
class SimConfig:
    setpoint: float = -80.0
    deadband: float = 0.5
    duration: float = 2880.0
    sample_dt: float = 1.0
    substeps: int = 10
    seed: int = 0
    burn_in: float = 720.0
    input_profile: InputProfile = field(default_factory=InputProfile)

    def __post_init__(self):
        if not self.duration > 0:
            raise ValidationError("duration must be > 0")
        if not self.sample_dt > 0:
            raise ValidationError("sample_dt must be > 0")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValidationError("substeps must be an integer >= 1")
        if self.deadband < 0:
            raise ValidationError("deadband must be >= 0")
        if self.burn_in < 0:
            raise ValidationError("burn_in must be >= 0")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.sample_dt))

    @property
    def n_burn(self) -> int:
        return int(round(self.burn_in / self.sample_dt))


@dataclass(frozen=True, eq=False)
class SimOutput:
    inputs: InputSeries
    true_states: np.ndarray  # (N, 3)
    observations: np.ndarray
    truth_params: ThermalParams

    @property
    def dataset(self) -> Dataset:
        return Dataset(self.inputs, self.observations)


def thermostat(T_c: float, m_prev: int, setpoint: float, deadband: float) -> int:
    if T_c > setpoint + deadband:
        return 1
    if T_c < setpoint - deadband:
        return 0
    return int(m_prev)


class _EvaporatorLags:
    """First-order lag generators for the evaporator inlet/outlet temperatures."""

    def __init__(self, prof: InputProfile, dt: float):
        self.prof = prof
        self.g_in = 1.0 - math.exp(-dt / prof.tau_in)
        self.g_out = 1.0 - math.exp(-dt / prof.tau_out)
        self.T_in = prof.T_in_warm
        self.T_out = prof.T_out_warm

    def step(self, m: int):
        p = self.prof
        target_in = p.T_in_cold if m == 1 else p.T_in_warm
        target_out = p.T_out_cold if m == 1 else p.T_out_warm
        self.T_in += (target_in - self.T_in) * self.g_in
        self.T_out += (target_out - self.T_out) * self.g_out
        return self.T_in, self.T_out


def _ambient(prof: InputProfile, t):
    return prof.T_a_mean + prof.T_a_amplitude * np.sin(2.0 * np.pi * np.asarray(t) / prof.T_a_period)


def synth_inputs(cfg: SimConfig, m_sequence) -> InputSeries:
    """Open-loop exogenous inputs for a given compressor schedule."""
    m = np.asarray(m_sequence).astype(np.int64)
    prof = cfg.input_profile
    t = np.arange(m.size) * cfg.sample_dt
    lags = _EvaporatorLags(prof, cfg.sample_dt)
    T_in = np.empty(m.size)
    T_out = np.empty(m.size)
    for k in range(m.size):
        T_in[k], T_out[k] = lags.step(int(m[k]))
    return InputSeries.from_columns(t, _ambient(prof, t), T_in, T_out, m)


def simulate_sde(p: ThermalParams, cfg: SimConfig = SimConfig()) -> SimOutput:
    """Closed-loop Euler-Maruyama simulation of the freezer.

    The first ``cfg.burn_in`` minutes are simulated and discarded so the record
    starts on the limit cycle.  The accumulated signal is restarted at the first
    recorded sample so the stored ``M_ac`` column matches ``accumulate_signal``
    applied to the recorded compressor states.
    """
    rng = np.random.default_rng(cfg.seed)
    prof = cfg.input_profile
    dt = cfg.sample_dt
    nsub = int(cfg.substeps)
    h = dt / nsub
    sqrt_h = math.sqrt(h)
    n_burn, n = cfg.n_burn, cfg.n_samples
    total = n_burn + n

    k_cw, k_ce = 1.0 / (p.C_c * p.R_cw), 1.0 / (p.C_c * p.R_ce)
    k_wc, k_wa = 1.0 / (p.C_w * p.R_cw), 1.0 / (p.C_w * p.R_wa)
    sig = (p.sigma_c * sqrt_h, p.sigma_w * sqrt_h, p.sigma_e * sqrt_h)

    T_c = cfg.setpoint
    T_w = float(steady_wall_temperature(p, T_c, prof.T_a_mean))
    # evaporator starts at its OFF-level target so the loop cannot start frozen cold
    T_e = p.a * prof.T_out_warm + p.b * prof.T_in_warm
    m_prev, M_ac = 0, 0.0
    lags = _EvaporatorLags(prof, dt)

    t_rec = np.arange(n) * dt
    cols = {name: np.empty(n) for name in ("T_a", "T_e_in", "T_e_out", "M_ac")}
    m_rec = np.empty(n, dtype=np.int64)
    states = np.empty((n, 3))

    for k in range(total):
        m = thermostat(T_c, m_prev, cfg.setpoint, cfg.deadband)
        if k == n_burn:
            M_ac = float(transform_signal(m))
        elif m_prev == 0 and m == 1:
            M_ac = 0.0
        else:
            M_ac += transform_signal(m)
        T_in, T_out = lags.step(m)
        T_a = float(_ambient(prof, (k - n_burn) * dt))
        if k >= n_burn:
            j = k - n_burn
            states[j] = (T_c, T_w, T_e)
            cols["T_a"][j], cols["T_e_in"][j], cols["T_e_out"][j] = T_a, T_in, T_out
            cols["M_ac"][j] = M_ac
            m_rec[j] = m
        S = sigmoid(p.alpha, p.beta, M_ac)
        k_e = S / p.C_e
        T_hyp = p.a * T_out + p.b * T_in
        z = rng.standard_normal((nsub, 3))
        for i in range(nsub):
            dTc = k_cw * (T_w - T_c) + k_ce * (T_e - T_c)
            dTw = k_wa * (T_a - T_w) + k_wc * (T_c - T_w)
            dTe = k_e * (T_hyp - T_e)
            T_c += dTc * h + sig[0] * z[i, 0]
            T_w += dTw * h + sig[1] * z[i, 1]
            T_e += dTe * h + sig[2] * z[i, 2]
        if not (abs(T_c) < 1e3 and abs(T_w) < 1e3 and abs(T_e) < 1e3):
            raise SimulationUnstableError(
                f"state diverged at sample {k - n_burn}; reduce the sub-step (increase substeps)"
            )
        m_prev = m

    noise = rng.standard_normal(n) * math.sqrt(p.nu)
    inputs = InputSeries(
        t=t_rec, T_a=cols["T_a"], T_e_in=cols["T_e_in"], T_e_out=cols["T_e_out"],
        m=m_rec, M_ac=cols["M_ac"],
    )
    return SimOutput(inputs=inputs, true_states=states, observations=states[:, 0] + noise, truth_params=p)


def duty_cycle_periods(m) -> np.ndarray:
    """Lengths (in samples) between consecutive OFF->ON switches."""
    m = np.asarray(m)
    starts = np.flatnonzero((m[1:] == 1) & (m[:-1] == 0)) + 1
    return np.diff(starts)
