"""Maximum-likelihood estimation, Hessian-based uncertainty and partial retuning."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from . import ekf
from .model import (
    LOG_PARAMS,
    PARAM_NAMES,
    Dataset,
    ThermalParams,
    ValidationError,
    from_internal,
    to_internal,
)

log = logging.getLogger(__name__)

PENALTY = 1e10
RETUNE_SET = ("C_c", "R_cw", "a", "b")
Z95 = 1.959963984540054

DEFAULT_BOUNDS = {name: (1e-8, 1e8) for name in LOG_PARAMS}
DEFAULT_BOUNDS.update({"a": (0.0, 5.0), "b": (0.0, 5.0), "beta": (-500.0, 500.0)})


class EstimationFailedError(RuntimeError):
    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


@dataclass(frozen=True)
class OptimizerSettings:
    method: str = "nelder-mead"   # or "lbfgs"
    max_iters: int = 4000
    tolerance: float = 1e-6
    restarts: int = 5
    jitter: float = 0.5           # restart perturbation std, in units of the simplex step
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.method not in ("nelder-mead", "lbfgs"):
            raise ValidationError(f"unknown optimizer method {self.method!r}")
        if self.restarts < 1 or self.max_iters < 1 or not self.tolerance > 0:
            raise ValidationError("restarts/max_iters must be >= 1 and tolerance > 0")


@dataclass(frozen=True)
class FitSpec:
    init: ThermalParams
    free_mask: tuple = (True,) * len(PARAM_NAMES)
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    optimizer: OptimizerSettings = OptimizerSettings()
    hessian_step: float = 1e-4
    substeps: int = ekf.DEFAULT_SUBSTEPS

    def __post_init__(self):
        if len(self.free_mask) != len(PARAM_NAMES):
            raise ValidationError(f"free_mask needs {len(PARAM_NAMES)} entries")
        object.__setattr__(self, "free_mask", tuple(bool(f) for f in self.free_mask))
        if not any(self.free_mask):
            raise ValidationError("at least one parameter must be free")
        full = dict(DEFAULT_BOUNDS)
        full.update(self.bounds)
        object.__setattr__(self, "bounds", full)
        for name in PARAM_NAMES:
            lo, hi = full[name]
            v = getattr(self.init, name)
            if not lo <= v <= hi:
                raise ValidationError(f"initial {name}={v} outside bounds [{lo}, {hi}]")

    @property
    def free_names(self) -> tuple:
        return tuple(n for n, f in zip(PARAM_NAMES, self.free_mask) if f)

    @classmethod
    def with_free(cls, init: ThermalParams, names, **kwargs) -> "FitSpec":
        names = set(names)
        unknown = names - set(PARAM_NAMES)
        if unknown:
            raise ValidationError(f"unknown parameter(s) {sorted(unknown)}")
        return cls(init=init, free_mask=tuple(n in names for n in PARAM_NAMES), **kwargs)


@dataclass(frozen=True, eq=False)
class HessianResult:
    names: tuple
    hessian: np.ndarray
    covariance: np.ndarray | None
    correlation: np.ndarray | None
    std_errors: np.ndarray | None
    positive_definite: bool
    max_asymmetry: float


@dataclass(frozen=True, eq=False)
class FitReport:
    estimates: ThermalParams
    free_mask: tuple
    std_errors: dict        # transformed scale (log for positive parameters)
    wald_ci95: dict         # raw scale
    correlation: np.ndarray | None
    neg_log_lik: float
    converged: bool
    iterations: int
    n_evals: int = 0
    hessian: np.ndarray | None = None
    hessian_pd: bool = True
    warnings: tuple = ()
    restarts: tuple = ()    # per-restart (start nll, end nll, converged)
    relative_changes: dict | None = None

    @property
    def free_names(self) -> tuple:
        return tuple(n for n, f in zip(PARAM_NAMES, self.free_mask) if f)

    @property
    def std_errors_raw(self) -> dict:
        """Delta-method standard errors on the raw parameter scale."""
        out = {}
        for n, se in self.std_errors.items():
            v = getattr(self.estimates, n)
            out[n] = v * se if n in LOG_PARAMS else se
        return out

    @property
    def z_values(self) -> dict:
        return {n: getattr(self.estimates, n) / se if se > 0 else math.inf
                for n, se in self.std_errors_raw.items()}


# --- objective ---------------------------------------------------------------

def neg_log_lik(p: ThermalParams, data: Dataset, substeps: int = ekf.DEFAULT_SUBSTEPS) -> float:
    """Filter NLL, or ``PENALTY`` when the filter fails numerically."""
    try:
        value = ekf.filter_pass(p, data, substeps=substeps).neg_log_lik
    except ekf.NumericalInstabilityError:
        return PENALTY
    return value if math.isfinite(value) else PENALTY


def encode(p: ThermalParams, names) -> np.ndarray:
    return np.array([to_internal(n, getattr(p, n)) for n in names])


def decode(z, base: ThermalParams, names) -> ThermalParams:
    return base.replace(**{n: from_internal(n, float(v)) for n, v in zip(names, z)})


def internal_bounds(bounds: dict, names):
    out = []
    for n in names:
        lo, hi = bounds[n]
        if n in LOG_PARAMS:
            out.append((math.log(lo), math.log(hi)))
        else:
            out.append((lo, hi))
    return out


class Objective:
    """NLL as a function of the free parameters on the transformed scale."""

    def __init__(self, data: Dataset, base: ThermalParams, names, substeps=ekf.DEFAULT_SUBSTEPS):
        self.data = data
        self.base = base
        self.names = tuple(names)
        self.substeps = substeps
        self.n_evals = 0

    def params(self, z) -> ThermalParams:
        return decode(z, self.base, self.names)

    def __call__(self, z) -> float:
        self.n_evals += 1
        try:
            p = self.params(z)
        except (ValidationError, OverflowError):
            return PENALTY
        return neg_log_lik(p, self.data, self.substeps)


def _steps(z0, names):
    return np.array([0.2 if n in LOG_PARAMS else 0.1 * max(abs(v), 1.0) for n, v in zip(names, z0)])


def _initial_simplex(z0, names):
    steps = _steps(z0, names)
    simplex = np.tile(z0, (len(z0) + 1, 1))
    simplex[1:] += np.diag(steps)
    return simplex


def minimize(objective, z0, bounds, settings: OptimizerSettings):
    """Run a single local optimisation; returns the scipy result."""
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    z0 = np.clip(z0, lo, hi)
    if settings.method == "nelder-mead":
        simplex = np.clip(_initial_simplex(z0, objective.names), lo, hi)
        return optimize.minimize(
            objective, z0, method="Nelder-Mead", bounds=bounds,
            options={"maxiter": settings.max_iters, "maxfev": 4 * settings.max_iters,
                     "xatol": settings.tolerance, "fatol": settings.tolerance,
                     "adaptive": True, "initial_simplex": simplex},
        )
    return optimize.minimize(
        objective, z0, method="L-BFGS-B", bounds=bounds,
        options={"maxiter": settings.max_iters, "ftol": settings.tolerance * 1e-6, "gtol": 1e-6, "eps": 1e-7},
    )


def optimize_free(objective: Objective, z0, bounds, settings: OptimizerSettings):
    """Multi-start minimisation: restart 0 from ``z0``, later restarts from the
    incumbent perturbed by ``settings.jitter``.  Returns (z, nll, converged, iters, log)."""
    rng = np.random.default_rng(settings.seed)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    best_z = np.asarray(z0, dtype=float)
    best_f = objective(best_z)
    best_conv, iters = False, 0
    diagnostics = []
    for k in range(settings.restarts):
        if k == 0:
            start = best_z
        else:
            kick = rng.normal(0.0, settings.jitter, best_z.size) * _steps(best_z, objective.names)
            start = np.clip(best_z + kick, lo, hi)
        f_start = objective(start)
        res = minimize(objective, start, bounds, settings)
        iters += int(res.get("nit", 0))
        diagnostics.append((float(f_start), float(res.fun), bool(res.success), str(res.message)))
        log.debug("restart %d: %.6f -> %.6f (%s)", k, f_start, res.fun, res.message)
        if res.fun < best_f - 1e-12 or (k == 0 and res.fun <= best_f):
            best_z, best_f, best_conv = np.asarray(res.x, dtype=float), float(res.fun), bool(res.success)
        elif res.fun <= best_f + settings.tolerance:
            best_conv = best_conv or bool(res.success)
    return best_z, best_f, best_conv, iters, diagnostics


# --- uncertainty -------------------------------------------------------------

def _map(fun, points, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fun, points))
    return [fun(x) for x in points]


def finite_difference_hessian(fun, x, step=1e-4, threads=1):
    """Central-difference Hessian with steps ``step * max(1, |x_i|)``.

    Returns ``(H_symmetrized, max_asymmetry)``; the raw estimate is
    symmetric by construction except for the diagonal/off-diagonal mix, so the
    asymmetry reported is between the two mixed-difference orderings.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    h = step * np.maximum(1.0, np.abs(x))
    E = np.diag(h)
    points = [x]
    for i in range(n):
        points += [x + E[i], x - E[i]]
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for i, j in pairs:
        points += [x + E[i] + E[j], x + E[i] - E[j], x - E[i] + E[j], x - E[i] - E[j]]
    vals = _map(fun, points, threads)
    f0 = vals[0]
    H = np.empty((n, n))
    for i in range(n):
        fp, fm = vals[1 + 2 * i], vals[2 + 2 * i]
        H[i, i] = (fp - 2.0 * f0 + fm) / h[i] ** 2
    off = 1 + 2 * n
    asym = 0.0
    for k, (i, j) in enumerate(pairs):
        fpp, fpm, fmp, fmm = vals[off + 4 * k: off + 4 * k + 4]
        # the two diagonal-pair estimates of the mixed partial
        d1 = (fpp - fpm - vals[1 + 2 * i] + f0) / (h[i] * h[j])
        d2 = (fpp - fmp - vals[1 + 2 * j] + f0) / (h[i] * h[j])
        asym = max(asym, abs(d1 - d2))
        H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])
    return 0.5 * (H + H.T), asym


def covariance_from_hessian(H, names=()):
    """Invert a NLL Hessian; returns ``(cov, corr, std_errors, pd)``.

    ``cov = H^-1`` and ``cov = diag(se) corr diag(se)``.  When ``H`` is not
    positive definite the covariance and correlation are ``None``.
    """
    H = 0.5 * (np.asarray(H, dtype=float) + np.asarray(H, dtype=float).T)
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return None, None, None, False
    Linv = np.linalg.inv(L)
    cov = Linv.T @ Linv
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.diag(cov))
    corr = cov / np.outer(se, se)
    np.fill_diagonal(corr, 1.0)
    return cov, np.clip(corr, -1.0, 1.0), se, True


def hessian_covariance(fun, x_hat, step=1e-4, names=(), threads=1) -> HessianResult:
    H, asym = finite_difference_hessian(fun, x_hat, step, threads)
    cov, corr, se, pd = covariance_from_hessian(H)
    return HessianResult(tuple(names), H, cov, corr, se, pd, asym)


def wald_ci(estimate, std_error, transform="identity"):
    """95% Wald interval computed on the transformed scale and mapped back.

    ``std_error`` is on the transformed scale (the log scale for ``"log"``).
    """
    if std_error < 0:
        raise ValueError("std_error must be >= 0")
    if transform == "log":
        c = math.log(estimate)
        return math.exp(c - Z95 * std_error), math.exp(c + Z95 * std_error)
    if transform != "identity":
        raise ValueError(f"unknown transform {transform!r}")
    return estimate - Z95 * std_error, estimate + Z95 * std_error


# --- fitting -----------------------------------------------------------------

def _report(objective, z, nll, converged, iters, diagnostics, spec_step, threads, extra_warnings=()):
    names = objective.names
    p_hat = objective.params(z)
    warnings = list(extra_warnings)
    hr = hessian_covariance(objective, z, spec_step, names, threads)
    if hr.positive_definite:
        std = {n: float(s) for n, s in zip(names, hr.std_errors)}
        ci = {n: wald_ci(getattr(p_hat, n), std[n], "log" if n in LOG_PARAMS else "identity") for n in names}
    else:
        warnings.append("Hessian not positive definite; correlation omitted (use profile likelihood)")
        std = {n: math.nan for n in names}
        ci = {n: (math.nan, math.nan) for n in names}
    return FitReport(
        estimates=p_hat,
        free_mask=tuple(n in names for n in PARAM_NAMES),
        std_errors=std, wald_ci95=ci, correlation=hr.correlation,
        neg_log_lik=float(nll), converged=bool(converged), iterations=int(iters),
        n_evals=objective.n_evals, hessian=hr.hessian, hessian_pd=hr.positive_definite,
        warnings=tuple(warnings), restarts=tuple(diagnostics),
    )


def fit(spec: FitSpec, data: Dataset, compute_uncertainty: bool = True) -> FitReport:
    """Maximise the likelihood over the free parameters of ``spec``."""
    if len(data) < 100:
        raise ValidationError("fit needs at least 100 samples")
    names = spec.free_names
    objective = Objective(data, spec.init, names, spec.substeps)
    bounds = internal_bounds(spec.bounds, names)
    z0 = encode(spec.init, names)
    z, nll, conv, iters, diag = optimize_free(objective, z0, bounds, spec.optimizer)
    if nll >= PENALTY:
        raise EstimationFailedError("all restarts failed to reach a finite likelihood", diag)
    if not compute_uncertainty:
        return FitReport(
            estimates=objective.params(z), free_mask=spec.free_mask, std_errors={}, wald_ci95={},
            correlation=None, neg_log_lik=nll, converged=conv, iterations=iters,
            n_evals=objective.n_evals, hessian=None, hessian_pd=False, restarts=tuple(diag),
        )
    return _report(objective, z, nll, conv, iters, diag, spec.hessian_step, spec.optimizer.threads)


def retune(baseline: FitReport, new_data: Dataset, free_set=RETUNE_SET,
           optimizer: OptimizerSettings = OptimizerSettings(restarts=2), **spec_kwargs) -> FitReport:
    """Re-estimate a parameter subset on new data, the rest fixed at baseline."""
    if not baseline.converged:
        raise ValidationError("baseline fit did not converge")
    spec = FitSpec.with_free(baseline.estimates, free_set, optimizer=optimizer, **spec_kwargs)
    report = fit(spec, new_data)
    old = baseline.estimates
    changes = {n: (getattr(report.estimates, n) - getattr(old, n)) / getattr(old, n)
               if getattr(old, n) != 0 else math.inf for n in spec.free_names}
    return replace(report, relative_changes=changes)


def perturbed(p: ThermalParams, factor: float = 2.0, seed: int = 0) -> ThermalParams:
    """Multiply every parameter by ``factor`` or ``1/factor`` (random sign per parameter)."""
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=len(PARAM_NAMES))
    return ThermalParams.from_array(p.to_array() * factor ** signs)
