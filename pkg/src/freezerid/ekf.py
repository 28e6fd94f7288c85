"""Continuous-discrete extended Kalman filter for the freezer model.

Between samples the state mean and covariance obey

    dm/dt = A m + c,        dP/dt = A P + P A^T + diag(sigma)^2,

with the sigmoid and the inputs held at their start-of-interval values
(zero-order hold).  Both are integrated with classical RK4 on ``substeps``
equal sub-intervals.  Measurements observe ``T_c`` with variance ``nu``; the
update uses the Joseph form.

The inner loops are compiled with numba; the Python-level functions wrap them
with the dataclass types used elsewhere in the package.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .model import Dataset, InputRecord, InputSeries, ThermalParams, sigmoid, steady_wall_temperature

DEFAULT_SUBSTEPS = 10
DEFAULT_PRIOR_VAR = (1.0, 25.0, 25.0)
# Innovations before this index are excluded from the likelihood.
NLL_START = 1

_OK, _PSD_LOST, _BAD_R, _NONFINITE = 0, 1, 2, 3
_CODES = {
    _PSD_LOST: "state covariance lost positive semi-definiteness; increase substeps",
    _BAD_R: "innovation variance is not positive",
    _NONFINITE: "filter produced non-finite values; increase substeps",
}


class NumericalInstabilityError(RuntimeError):
    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"{message} (sample {index})")
        self.index = index


@dataclass(frozen=True, eq=False)
class FilterState:
    mean: np.ndarray
    cov: np.ndarray
    t: float = 0.0


@dataclass(frozen=True, eq=False)
class FilterPass:
    t: np.ndarray
    innovations: np.ndarray
    innovation_variances: np.ndarray
    predicted_means: np.ndarray    # one-step predictions (prior), (N, 3)
    predicted_covs: np.ndarray     # (N, 3, 3)
    filtered_means: np.ndarray     # posterior after the update, (N, 3)
    filtered_covs: np.ndarray
    neg_log_lik: float
    nll_start: int = NLL_START

    @property
    def predicted_observations(self) -> np.ndarray:
        return self.predicted_means[:, 0]

    @property
    def filtered_states(self) -> list[FilterState]:
        return [FilterState(m, P, float(t)) for m, P, t in zip(self.filtered_means, self.filtered_covs, self.t)]

    @property
    def standardized_innovations(self) -> np.ndarray:
        return self.innovations / np.sqrt(self.innovation_variances)


@dataclass(frozen=True, eq=False)
class Prediction:
    t: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray

    @property
    def T_c(self) -> np.ndarray:
        return self.means[:, 0]


# --- compiled kernels -------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _coefficients(theta, S, T_a, T_out, T_in, A, c):
    a, b, C_c, C_w, C_e = theta[0], theta[1], theta[2], theta[3], theta[4]
    R_wa, R_ce, R_cw = theta[5], theta[6], theta[7]
    k_cw = 1.0 / (C_c * R_cw)
    k_ce = 1.0 / (C_c * R_ce)
    k_wc = 1.0 / (C_w * R_cw)
    k_wa = 1.0 / (C_w * R_wa)
    k_e = S / C_e
    A[0, 0] = -k_cw - k_ce
    A[0, 1] = k_cw
    A[0, 2] = k_ce
    A[1, 0] = k_wc
    A[1, 1] = -k_wa - k_wc
    A[1, 2] = 0.0
    A[2, 0] = 0.0
    A[2, 1] = 0.0
    A[2, 2] = -k_e
    c[0] = 0.0
    c[1] = k_wa * T_a
    c[2] = k_e * (a * T_out + b * T_in)


@numba.njit(cache=True, nogil=True, inline="always")
def _rhs(A, c, q, m0, m1, m2, p00, p01, p02, p11, p12, p22):
    """Mean and (upper-triangle) covariance derivatives.

    Uses the model's sparsity: A[1, 2] = A[2, 0] = A[2, 1] = 0 and c[0] = 0.
    """
    a00, a01, a02 = A[0, 0], A[0, 1], A[0, 2]
    a10, a11, a22 = A[1, 0], A[1, 1], A[2, 2]
    dm0 = a00 * m0 + a01 * m1 + a02 * m2
    dm1 = a10 * m0 + a11 * m1 + c[1]
    dm2 = a22 * m2 + c[2]
    r00 = a00 * p00 + a01 * p01 + a02 * p02
    r01 = a00 * p01 + a01 * p11 + a02 * p12
    r02 = a00 * p02 + a01 * p12 + a02 * p22
    r10 = a10 * p00 + a11 * p01
    r11 = a10 * p01 + a11 * p11
    r12 = a10 * p02 + a11 * p12
    dp00 = 2.0 * r00 + q[0]
    dp01 = r01 + r10
    dp02 = r02 + a22 * p02
    dp11 = 2.0 * r11 + q[1]
    dp12 = r12 + a22 * p12
    dp22 = 2.0 * a22 * p22 + q[2]
    return dm0, dm1, dm2, dp00, dp01, dp02, dp11, dp12, dp22


@numba.njit(cache=True, nogil=True)
def _propagate_inplace(m, P, A, c, q, dt, nsub):
    """Classical RK4 over ``nsub`` sub-steps, updating ``m`` and ``P`` in place."""
    h = dt / nsub
    h2 = 0.5 * h
    h6 = h / 6.0
    x0, x1, x2 = m[0], m[1], m[2]
    x3, x4, x5 = P[0, 0], 0.5 * (P[0, 1] + P[1, 0]), 0.5 * (P[0, 2] + P[2, 0])
    x6, x7, x8 = P[1, 1], 0.5 * (P[1, 2] + P[2, 1]), P[2, 2]
    for _ in range(nsub):
        a0, a1, a2, a3, a4, a5, a6, a7, a8 = _rhs(A, c, q, x0, x1, x2, x3, x4, x5, x6, x7, x8)
        b0, b1, b2, b3, b4, b5, b6, b7, b8 = _rhs(
            A, c, q, x0 + h2 * a0, x1 + h2 * a1, x2 + h2 * a2, x3 + h2 * a3, x4 + h2 * a4,
            x5 + h2 * a5, x6 + h2 * a6, x7 + h2 * a7, x8 + h2 * a8)
        d0, d1, d2, d3, d4, d5, d6, d7, d8 = _rhs(
            A, c, q, x0 + h2 * b0, x1 + h2 * b1, x2 + h2 * b2, x3 + h2 * b3, x4 + h2 * b4,
            x5 + h2 * b5, x6 + h2 * b6, x7 + h2 * b7, x8 + h2 * b8)
        e0, e1, e2, e3, e4, e5, e6, e7, e8 = _rhs(
            A, c, q, x0 + h * d0, x1 + h * d1, x2 + h * d2, x3 + h * d3, x4 + h * d4,
            x5 + h * d5, x6 + h * d6, x7 + h * d7, x8 + h * d8)
        x0 += h6 * (a0 + 2.0 * (b0 + d0) + e0)
        x1 += h6 * (a1 + 2.0 * (b1 + d1) + e1)
        x2 += h6 * (a2 + 2.0 * (b2 + d2) + e2)
        x3 += h6 * (a3 + 2.0 * (b3 + d3) + e3)
        x4 += h6 * (a4 + 2.0 * (b4 + d4) + e4)
        x5 += h6 * (a5 + 2.0 * (b5 + d5) + e5)
        x6 += h6 * (a6 + 2.0 * (b6 + d6) + e6)
        x7 += h6 * (a7 + 2.0 * (b7 + d7) + e7)
        x8 += h6 * (a8 + 2.0 * (b8 + d8) + e8)
    m[0], m[1], m[2] = x0, x1, x2
    P[0, 0], P[1, 1], P[2, 2] = x3, x6, x8
    P[0, 1] = P[1, 0] = x4
    P[0, 2] = P[2, 0] = x5
    P[1, 2] = P[2, 1] = x7
    return _check_cov(m, P)


@numba.njit(cache=True, nogil=True)
def _check_cov(m, P):
    for i in range(3):
        if not np.isfinite(m[i]):
            return _NONFINITE
        for j in range(3):
            if not np.isfinite(P[i, j]):
                return _NONFINITE
    scale = max(1.0, P[0, 0] + P[1, 1] + P[2, 2])
    tol = 1e-10 * scale
    # nonnegative diagonal and 2x2 principal minors (cheap PSD screen)
    for i in range(3):
        if P[i, i] < -tol:
            return _PSD_LOST
    for i in range(3):
        for j in range(i + 1, 3):
            if P[i, i] * P[j, j] - P[i, j] * P[i, j] < -tol * scale:
                return _PSD_LOST
    return _OK


@numba.njit(cache=True, nogil=True)
def _update_inplace(m, P, y, nu):
    """Joseph-form update with observation row h = [1, 0, 0]; returns (eps, R, code).

    With ``K = P h^T / R`` the Joseph form ``(I - K h) P (I - K h)^T + K nu K^T``
    expands to ``P - K g^T - g K^T + R K K^T`` where ``g = P h^T``.
    """
    R = P[0, 0] + nu
    eps = y - m[0]
    if not (R > 0.0):
        return eps, R, _BAD_R
    g0, g1, g2 = P[0, 0], P[1, 0], P[2, 0]
    k0, k1, k2 = g0 / R, g1 / R, g2 / R
    m[0] += k0 * eps
    m[1] += k1 * eps
    m[2] += k2 * eps
    g = (g0, g1, g2)
    k = (k0, k1, k2)
    for i in range(3):
        for j in range(i, 3):
            v = 0.5 * (P[i, j] + P[j, i]) - k[i] * g[j] - g[i] * k[j] + R * k[i] * k[j]
            P[i, j] = v
            P[j, i] = v
    return eps, R, _OK


@numba.njit(cache=True, nogil=True)
def _run_filter(theta, T_a, T_out, T_in, S, y, m0, P0, dt, nsub, do_update,
                prior_m, prior_P, post_m, post_P, eps_out, R_out):
    n = T_a.shape[0]
    nu = theta[13]
    q = np.empty(3)
    q[0] = theta[10] * theta[10]
    q[1] = theta[11] * theta[11]
    q[2] = theta[12] * theta[12]
    A = np.empty((3, 3))
    c = np.empty(3)
    m = m0.copy()
    P = P0.copy()
    for k in range(n):
        prior_m[k] = m
        prior_P[k] = P
        if do_update:
            e, R, code = _update_inplace(m, P, y[k], nu)
            if code != _OK:
                return code, k
            code = _check_cov(m, P)
            if code != _OK:
                return code, k
        else:
            e = y[k] - m[0]
            R = P[0, 0] + nu
        eps_out[k] = e
        R_out[k] = R
        post_m[k] = m
        post_P[k] = P
        if k < n - 1:
            _coefficients(theta, S[k], T_a[k], T_out[k], T_in[k], A, c)
            code = _propagate_inplace(m, P, A, c, q, dt, nsub)
            if code != _OK:
                return code, k
    return _OK, -1


# --- Python API -------------------------------------------------------------

def _raise(code, index):
    raise NumericalInstabilityError(_CODES.get(code, f"filter error {code}"), index)


def propagate(fs: FilterState, p: ThermalParams, u: InputRecord, dt: float,
              substeps: int = DEFAULT_SUBSTEPS) -> FilterState:
    """Propagate mean and covariance over ``[t, t+dt)`` with inputs ``u`` held."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    theta = p.to_array()
    A = np.empty((3, 3))
    c = np.empty(3)
    _coefficients(theta, sigmoid(p.alpha, p.beta, u.M_ac), u.T_a, u.T_e_out, u.T_e_in, A, c)
    m = np.array(fs.mean, dtype=float)
    P = np.array(fs.cov, dtype=float)
    q = np.array([p.sigma_c, p.sigma_w, p.sigma_e]) ** 2
    code = _propagate_inplace(m, P, A, c, q, float(dt), int(substeps))
    if code != _OK:
        _raise(code, None)
    return FilterState(m, P, fs.t + dt)


def update(fs: FilterState, y: float, nu: float):
    """Measurement update; returns ``(posterior, innovation, innovation variance)``."""
    m = np.array(fs.mean, dtype=float)
    P = np.array(fs.cov, dtype=float)
    eps, R, code = _update_inplace(m, P, float(y), float(nu))
    if code != _OK:
        _raise(code, None)
    return FilterState(m, P, fs.t), eps, R


def default_initial_state(p: ThermalParams, data: Dataset, prior_var=DEFAULT_PRIOR_VAR) -> FilterState:
    """Prior at the first sample: T_c at the first observation, T_w at the
    envelope equilibrium, T_e at the hypothetical evaporator temperature."""
    u = data.inputs
    y0 = float(data.y[0])
    mean = np.array([
        y0,
        float(steady_wall_temperature(p, y0, u.T_a[0])),
        p.a * u.T_e_out[0] + p.b * u.T_e_in[0],
    ])
    return FilterState(mean, np.diag(np.asarray(prior_var, dtype=float)), float(u.t[0]))


def _columns(inputs: InputSeries):
    return (np.ascontiguousarray(inputs.T_a, dtype=float), np.ascontiguousarray(inputs.T_e_out, dtype=float),
            np.ascontiguousarray(inputs.T_e_in, dtype=float))


def _sweep(p, inputs, y, init, substeps, do_update):
    n = len(inputs)
    theta = p.to_array()
    T_a, T_out, T_in = _columns(inputs)
    S = np.ascontiguousarray(sigmoid(p.alpha, p.beta, inputs.M_ac), dtype=float)
    prior_m = np.empty((n, 3))
    prior_P = np.empty((n, 3, 3))
    post_m = np.empty((n, 3))
    post_P = np.empty((n, 3, 3))
    eps = np.empty(n)
    R = np.empty(n)
    code, idx = _run_filter(
        theta, T_a, T_out, T_in, S, np.ascontiguousarray(y, dtype=float),
        np.asarray(init.mean, dtype=float), np.asarray(init.cov, dtype=float),
        float(inputs.dt), int(substeps), do_update, prior_m, prior_P, post_m, post_P, eps, R,
    )
    if code != _OK:
        _raise(code, int(idx))
    return prior_m, prior_P, post_m, post_P, eps, R


def gaussian_nll(eps, R, start: int = NLL_START) -> float:
    e, r = np.asarray(eps)[start:], np.asarray(R)[start:]
    return float(np.sum(0.5 * e * e / r + 0.5 * np.log(2.0 * np.pi * r)))


def filter_pass(p: ThermalParams, data: Dataset, init: FilterState | None = None,
                substeps: int = DEFAULT_SUBSTEPS) -> FilterPass:
    """One filtering sweep; the NLL excludes innovations before ``NLL_START``."""
    if init is None:
        init = default_initial_state(p, data)
    prior_m, prior_P, post_m, post_P, eps, R = _sweep(p, data.inputs, data.y, init, substeps, True)
    return FilterPass(
        t=np.asarray(data.inputs.t, dtype=float), innovations=eps, innovation_variances=R,
        predicted_means=prior_m, predicted_covs=prior_P, filtered_means=post_m, filtered_covs=post_P,
        neg_log_lik=gaussian_nll(eps, R),
    )


def unconditional_predict(p: ThermalParams, inputs: InputSeries, x0, cov0=None,
                          substeps: int = DEFAULT_SUBSTEPS) -> Prediction:
    """Propagate from ``x0`` through the whole record with no measurement updates."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (3,) or not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be three finite temperatures")
    cov0 = np.zeros((3, 3)) if cov0 is None else np.asarray(cov0, dtype=float)
    dummy_y = np.zeros(len(inputs))
    prior_m, prior_P, _, _, _, _ = _sweep(p, inputs, dummy_y, FilterState(x0, cov0), substeps, False)
    half = 1.96 * np.sqrt(prior_P[:, 0, 0] + p.nu)
    return Prediction(t=np.asarray(inputs.t, dtype=float), means=prior_m, covs=prior_P,
                      lo95=prior_m[:, 0] - half, hi95=prior_m[:, 0] + half)


def split_state(p: ThermalParams, data: Dataset, split: int, substeps: int = DEFAULT_SUBSTEPS) -> np.ndarray:
    """Filtered one-step prediction of the state at index ``split`` using only
    observations before it; the starting point for a held-out prediction."""
    fp = filter_pass(p, data.segment(0, split + 1), substeps=substeps)
    return fp.predicted_means[split].copy()



def predict_from(p: ThermalParams, data: Dataset, start: int = 0,
                 substeps: int = DEFAULT_SUBSTEPS) -> Prediction:
    """Open-loop prediction of ``data[start:]``.

    With ``start == 0`` the prediction starts from the default prior; otherwise
    from the filter's one-step prediction (mean and covariance) at ``start``.
    """
    n = len(data)
    if not 0 <= start < n:
        raise ValueError(f"start must be in [0, {n}), got {start}")
    if start == 0:
        init = default_initial_state(p, data)
        x0, cov0 = init.mean, init.cov
    else:
        fp = filter_pass(p, data.segment(0, start + 1), substeps=substeps)
        x0, cov0 = fp.predicted_means[start], fp.predicted_covs[start]
    return unconditional_predict(p, data.inputs.window(start, n), x0, cov0, substeps)
