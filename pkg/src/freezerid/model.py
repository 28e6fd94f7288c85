"""Three-state heat-dynamics model of an ultra-low temperature freezing chamber.

States are the RTD chamber temperature ``T_c``, the envelope (wall)
temperature ``T_w`` and the local evaporator temperature ``T_e``.  The
evaporator state relaxes toward the hypothetical evaporator temperature
``a*T_e_out + b*T_e_in`` at a rate modulated by a sigmoid of the accumulated
compressor signal.  Time is measured in minutes.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

PARAM_NAMES = (
    "a", "b", "C_c", "C_w", "C_e", "R_wa", "R_ce", "R_cw",
    "alpha", "beta", "sigma_c", "sigma_w", "sigma_e", "nu",
)
STATE_NAMES = ("T_c", "T_w", "T_e")

# Parameters optimised on the log scale; the rest are optimised as-is.
LOG_PARAMS = frozenset(
    ("C_c", "C_w", "C_e", "R_wa", "R_ce", "R_cw", "alpha",
     "sigma_c", "sigma_w", "sigma_e", "nu")
)
_STRICTLY_POSITIVE = ("C_c", "C_w", "C_e", "R_wa", "R_ce", "R_cw", "alpha", "nu")
_NONNEGATIVE = ("a", "b", "sigma_c", "sigma_w", "sigma_e")

# exp() overflows a little above 709
_EXP_CLAMP = 700.0


class ValidationError(ValueError):
    """Raised when a parameter set or input record violates its invariants."""


@dataclass(frozen=True)
class ThermalParams:
    a: float
    b: float
    C_c: float
    C_w: float
    C_e: float
    R_wa: float
    R_ce: float
    R_cw: float
    alpha: float
    beta: float
    sigma_c: float
    sigma_w: float
    sigma_e: float
    nu: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValidationError(f"parameter {f.name} must be finite, got {v!r}")
        for name in _STRICTLY_POSITIVE:
            if getattr(self, name) <= 0.0:
                raise ValidationError(f"parameter {name} must be > 0, got {getattr(self, name)!r}")
        for name in _NONNEGATIVE:
            if getattr(self, name) < 0.0:
                raise ValidationError(f"parameter {name} must be >= 0, got {getattr(self, name)!r}")

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values) -> "ThermalParams":
        values = np.asarray(values, dtype=float)
        if values.shape != (len(PARAM_NAMES),):
            raise ValidationError(f"expected {len(PARAM_NAMES)} parameter values, got shape {values.shape}")
        return cls(**{n: float(v) for n, v in zip(PARAM_NAMES, values)})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ThermalParams":
        unknown = set(d) - set(PARAM_NAMES)
        if unknown:
            raise ValidationError(f"unknown parameter(s): {sorted(unknown)}")
        missing = set(PARAM_NAMES) - set(d)
        if missing:
            raise ValidationError(f"missing parameter(s): {sorted(missing)}")
        return cls(**{n: float(d[n]) for n in PARAM_NAMES})

    def replace(self, **changes) -> "ThermalParams":
        return replace(self, **changes)


# Synthetic ground truth (time unit: minutes).  Under the default SimConfig
# the closed loop cycles every ~34 min with T_c in about [-81.5, -76.5] degC;
# scripts/calibrate_truth.py prints these figures.
DEFAULT_TRUTH = ThermalParams(
    a=0.3, b=0.7,
    C_c=40.0, C_w=400.0, C_e=4.0,
    R_wa=10.0, R_ce=0.5, R_cw=2.5,
    alpha=0.4, beta=6.0,
    sigma_c=0.01, sigma_w=0.02, sigma_e=0.1,
    nu=0.0025,
)


@dataclass(frozen=True)
class InputRecord:
    """Exogenous inputs for one sample, held constant over the sample interval."""

    t: float
    T_a: float
    T_e_in: float
    T_e_out: float
    m: int
    M_ac: float


def transform_signal(m):
    """Map the binary compressor state to -1 (OFF) / +1 (ON); works elementwise."""
    if np.ndim(m) == 0:
        return 1 if int(m) == 1 else -1
    return np.where(np.asarray(m) == 1, 1, -1)


def accumulate_signal(m_sequence) -> np.ndarray:
    """Accumulated transformed compressor signal with reset at each OFF->ON switch.

    ``M_ac[0]`` is ``transform_signal(m[0])`` since there is no earlier switch.
    """
    m = np.asarray(m_sequence)
    if m.ndim != 1 or m.size == 0:
        raise ValidationError("compressor state sequence must be a nonempty 1-D sequence")
    bad = np.flatnonzero((m != 0) & (m != 1))
    if bad.size:
        i = int(bad[0])
        raise ValidationError(f"compressor state at index {i} is {m[i]!r}, expected 0 or 1")
    m = m.astype(np.int64)
    out = np.empty(m.size, dtype=float)
    acc = float(transform_signal(m[0]))
    out[0] = acc
    for k in range(1, m.size):
        if m[k - 1] == 0 and m[k] == 1:
            acc = 0.0
        else:
            acc += 1.0 if m[k] == 1 else -1.0
        out[k] = acc
    return out


def sigmoid(alpha, beta, M_ac):
    """Logistic cooling-intensity factor ``1 / (1 + exp(-alpha (M_ac - beta)))``."""
    z = np.clip(-alpha * (np.asarray(M_ac, dtype=float) - beta), -_EXP_CLAMP, _EXP_CLAMP)
    s = 1.0 / (1.0 + np.exp(z))
    return float(s) if np.ndim(s) == 0 else s


def hypothetical_evaporator_temperature(p: ThermalParams, T_e_out, T_e_in):
    return p.a * np.asarray(T_e_out) + p.b * np.asarray(T_e_in)


def drift(x, p: ThermalParams, u: InputRecord) -> np.ndarray:
    """Deterministic rate of change of ``[T_c, T_w, T_e]`` in degC/min."""
    T_c, T_w, T_e = (float(v) for v in x)
    S = sigmoid(p.alpha, p.beta, u.M_ac)
    dT_c = ((T_w - T_c) / p.R_cw + (T_e - T_c) / p.R_ce) / p.C_c
    dT_w = ((u.T_a - T_w) / p.R_wa + (T_c - T_w) / p.R_cw) / p.C_w
    dT_e = (p.a * u.T_e_out + p.b * u.T_e_in - T_e) * S / p.C_e
    return np.array([dT_c, dT_w, dT_e])


def jacobian_state(p: ThermalParams, u: InputRecord) -> np.ndarray:
    S = sigmoid(p.alpha, p.beta, u.M_ac)
    return state_matrix(p, S)


def state_matrix(p: ThermalParams, S: float) -> np.ndarray:
    """State matrix for a given sigmoid value (the model is linear in the states)."""
    return np.array([
        [-1.0 / (p.C_c * p.R_cw) - 1.0 / (p.C_c * p.R_ce), 1.0 / (p.C_c * p.R_cw), 1.0 / (p.C_c * p.R_ce)],
        [1.0 / (p.C_w * p.R_cw), -1.0 / (p.C_w * p.R_wa) - 1.0 / (p.C_w * p.R_cw), 0.0],
        [0.0, 0.0, -S / p.C_e],
    ])


def input_matrix(p: ThermalParams, u: InputRecord) -> np.ndarray:
    """Input matrix acting on ``[T_a, T_e_out, T_e_in]``."""
    S = sigmoid(p.alpha, p.beta, u.M_ac)
    B = np.zeros((3, 3))
    B[1, 0] = 1.0 / (p.C_w * p.R_wa)
    B[2, 1] = p.a * S / p.C_e
    B[2, 2] = p.b * S / p.C_e
    return B


def input_vector(u: InputRecord) -> np.ndarray:
    return np.array([u.T_a, u.T_e_out, u.T_e_in])


def diffusion_matrix(p: ThermalParams) -> np.ndarray:
    return np.diag([p.sigma_c, p.sigma_w, p.sigma_e])


def steady_wall_temperature(p: ThermalParams, T_c, T_a):
    """Envelope temperature in equilibrium with fixed chamber and ambient levels."""
    g_wa, g_cw = 1.0 / p.R_wa, 1.0 / p.R_cw
    return (g_wa * T_a + g_cw * T_c) / (g_wa + g_cw)


# --- optimiser-facing parameter transforms --------------------------------

def to_internal(name: str, value: float) -> float:
    return math.log(value) if name in LOG_PARAMS else float(value)


def from_internal(name: str, value: float) -> float:
    return math.exp(value) if name in LOG_PARAMS else float(value)


@dataclass(frozen=True, eq=False)
class InputSeries:
    """Uniformly sampled exogenous record (one entry per minute)."""

    t: np.ndarray
    T_a: np.ndarray
    T_e_in: np.ndarray
    T_e_out: np.ndarray
    m: np.ndarray
    M_ac: np.ndarray

    @classmethod
    def from_columns(cls, t, T_a, T_e_in, T_e_out, m) -> "InputSeries":
        m = np.asarray(m)
        M_ac = accumulate_signal(m)
        return cls(
            t=np.asarray(t, dtype=float), T_a=np.asarray(T_a, dtype=float),
            T_e_in=np.asarray(T_e_in, dtype=float), T_e_out=np.asarray(T_e_out, dtype=float),
            m=m.astype(np.int64), M_ac=M_ac,
        )

    def __len__(self):
        return self.t.size

    def record(self, k: int) -> InputRecord:
        return InputRecord(
            t=float(self.t[k]), T_a=float(self.T_a[k]), T_e_in=float(self.T_e_in[k]),
            T_e_out=float(self.T_e_out[k]), m=int(self.m[k]), M_ac=float(self.M_ac[k]),
        )

    @property
    def dt(self) -> float:
        if self.t.size < 2:
            return 1.0
        return float(self.t[1] - self.t[0])

    def segment(self, start: int, stop: int) -> "InputSeries":
        """Sub-series with ``M_ac`` recomputed so it again starts from the convention."""
        return InputSeries.from_columns(
            self.t[start:stop], self.T_a[start:stop], self.T_e_in[start:stop],
            self.T_e_out[start:stop], self.m[start:stop],
        )

    def window(self, start: int, stop: int) -> "InputSeries":
        """Sub-series that keeps the original ``M_ac`` values (continuation
        of the same record, e.g. a held-out prediction span)."""
        sl = slice(start, stop)
        return InputSeries(self.t[sl], self.T_a[sl], self.T_e_in[sl], self.T_e_out[sl], self.m[sl], self.M_ac[sl])


@dataclass(frozen=True, eq=False)
class Dataset:
    """Inputs plus the observed chamber (RTD) temperature."""

    inputs: InputSeries
    y: np.ndarray

    def __post_init__(self):
        if np.asarray(self.y).shape != (len(self.inputs),):
            raise ValidationError("observation length does not match input length")

    def __len__(self):
        return self.y.size

    def segment(self, start: int, stop: int) -> "Dataset":
        return Dataset(self.inputs.segment(start, stop), np.asarray(self.y[start:stop], dtype=float))

    def window(self, start: int, stop: int) -> "Dataset":
        return Dataset(self.inputs.window(start, stop), np.asarray(self.y[start:stop], dtype=float))
