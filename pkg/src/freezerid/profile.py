"""Profile likelihood over a grid of one parameter, with optional pinned parameters."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import ekf
from .estimate import (
    PENALTY,
    FitReport,
    Objective,
    OptimizerSettings,
    decode,
    encode,
    internal_bounds,
    optimize_free,
    DEFAULT_BOUNDS,
)
from .model import LOG_PARAMS, Dataset, ValidationError, to_internal

# Half the 95% chi-square quantile for 1 and 2 degrees of freedom.
HALF_CHI2_95 = {1: 3.841458820694124 / 2.0, 2: 5.991464547107979 / 2.0}

PROFILE_OPTIMIZER = OptimizerSettings(restarts=1, max_iters=3000)


@dataclass(frozen=True, eq=False)
class ProfileResult:
    param_name: str
    grid: np.ndarray
    profile_nll: np.ndarray
    mle_nll: float
    in_ci: np.ndarray
    ci_interval: tuple           # (lo, hi), raw scale
    ci_open: tuple               # (lo_open, hi_open): region reaches the grid edge
    pinned: tuple = ()           # ((name, value), ...)
    failed: np.ndarray = None
    optima: tuple = ()           # ThermalParams at each grid point
    threshold: float = HALF_CHI2_95[1]

    @property
    def ci_ratio(self) -> float:
        lo, hi = self.ci_interval
        return hi / lo if lo > 0 else math.inf

    def trace(self, partner: str) -> np.ndarray:
        return np.array([getattr(p, partner) for p in self.optima])


class _Restricted:
    """View of an objective with some coordinates held at fixed values."""

    def __init__(self, fun, template, free_idx, names):
        self.fun = fun
        self.template = np.asarray(template, dtype=float)
        self.free_idx = np.asarray(free_idx, dtype=int)
        self.names = tuple(names[i] for i in free_idx)
        self.n_evals = 0

    def full(self, z):
        x = self.template.copy()
        x[self.free_idx] = z
        return x

    def __call__(self, z):
        self.n_evals += 1
        return self.fun(self.full(z))


def profile_core(fun, z_hat, index, grid_z, pinned=(), bounds=None, names=None,
                 settings: OptimizerSettings = PROFILE_OPTIMIZER, cold_start=False, threads=1,
                 repair_sweeps=2, order="outward"):
    """Profile ``fun`` over coordinate ``index`` on the transformed-scale grid.

    ``pinned`` lists ``(coordinate, value)`` pairs held fixed throughout.
    With ``order="outward"`` the grid is walked outward from the point nearest
    ``z_hat[index]``; ``"ascending"`` and ``"descending"`` walk it end to end.
    Each solve starts from the neighbouring solution shifted along the secant
    of the two previous solutions (a continuation heuristic for following
    ridges).  Up to ``repair_sweeps`` passes then re-solve any point whose
    neighbour's optimum gives a lower value.  ``cold_start`` solves every
    point from ``z_hat`` independently.  Returns ``(values, optima, failed)``.
    """
    z_hat = np.asarray(z_hat, dtype=float).copy()
    grid_z = np.asarray(grid_z, dtype=float)
    n = z_hat.size
    names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(n))
    bounds = bounds if bounds is not None else [(-np.inf, np.inf)] * n
    for i, v in pinned:
        z_hat[i] = v
    fixed = {index} | {i for i, _ in pinned}
    free_idx = [i for i in range(n) if i not in fixed]
    sub_bounds = [bounds[i] for i in free_idx]

    values = np.full(grid_z.size, np.nan)
    optima = [None] * grid_z.size
    failed = np.zeros(grid_z.size, dtype=bool)

    def solve(k, start_full):
        template = start_full.copy()
        template[index] = grid_z[k]
        obj = _Restricted(fun, template, free_idx, names)
        if free_idx:
            z, f, _, _, _ = optimize_free(obj, template[free_idx], sub_bounds, settings)
            x = obj.full(z)
        else:
            x, f = template, fun(template)
        return k, x, f

    def record(k, x, f):
        values[k] = f
        optima[k] = x
        failed[k] = not (np.isfinite(f) and f < PENALTY)

    if cold_start:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda k: solve(k, z_hat), range(grid_z.size)))
        else:
            results = [solve(k, z_hat) for k in range(grid_z.size)]
        for k, x, f in results:
            record(k, x, f)
        return values, optima, failed

    if order == "outward":
        centre = int(np.argmin(np.abs(grid_z - z_hat[index])))
        chains = (1, -1)
    elif order in ("ascending", "descending"):
        centre = 0 if order == "ascending" else grid_z.size - 1
        chains = (1,) if order == "ascending" else (-1,)
    else:
        raise ValueError(f"unknown order {order!r}")
    record(*solve(centre, z_hat))
    for direction in chains:
        prev2, prev = None, optima[centre]
        k = centre + direction
        while 0 <= k < grid_z.size:
            start = prev.copy()
            if prev2 is not None and not failed[k - direction]:
                dz = grid_z[k - direction] - grid_z[k - 2 * direction]
                if dz != 0:
                    slope = (prev - prev2) / dz
                    start = prev + slope * (grid_z[k] - grid_z[k - direction])
                    lo = np.array([b[0] for b in bounds])
                    hi = np.array([b[1] for b in bounds])
                    start = np.clip(start, lo, hi)
                    # keep the extrapolated guess only if it is no worse
                    s_try, p_try = start.copy(), prev.copy()
                    s_try[index] = p_try[index] = grid_z[k]
                    if fun(s_try) > fun(p_try):
                        start = prev.copy()
            record(*solve(k, start))
            prev2, prev = prev, optima[k]
            k += direction

    # repair pass: re-solve a point when a neighbour's optimum beats it
    for _ in range(repair_sweeps):
        improved = False
        for k in range(grid_z.size):
            for j in (k - 1, k + 1):
                if not 0 <= j < grid_z.size or optima[j] is None:
                    continue
                cand = optima[j].copy()
                cand[index] = grid_z[k]
                if fun(cand) < values[k] - settings.tolerance:
                    _, x, f = solve(k, cand)
                    if f < values[k]:
                        record(k, x, f)
                        improved = True
        if not improved:
            break
    return values, optima, failed


def _crossing(x, f, k_in, k_out, level):
    """Abscissa where the profile crosses ``level`` between two grid indices.

    Uses the quadratic through three neighbouring points when available
    (exact for a quadratic profile), otherwise linear interpolation.
    """
    x1, x2, f1, f2 = x[k_in], x[k_out], f[k_in], f[k_out]
    k3 = k_in - (k_out - k_in)
    if 0 <= k3 < len(x) and np.isfinite(f[k3]):
        c = np.polyfit([x[k3], x1, x2], [f[k3], f1, f2], 2)
        c[-1] -= level
        roots = np.roots(c)
        roots = roots[np.isreal(roots)].real
        lo, hi = min(x1, x2), max(x1, x2)
        roots = roots[(roots >= lo - 1e-12) & (roots <= hi + 1e-12)]
        if roots.size:
            return float(roots[0])
    if f2 == f1:
        return float(x2)
    return float(x1 + (level - f1) * (x2 - x1) / (f2 - f1))


def confidence_region(grid_z, values, mle_nll, threshold, centre_z):
    """Contiguous region around ``centre_z`` below ``mle_nll + threshold``.

    Returns ``(in_ci, (lo_z, hi_z), (lo_open, hi_open))`` on the grid's scale.
    """
    grid_z = np.asarray(grid_z, dtype=float)
    values = np.asarray(values, dtype=float)
    level = mle_nll + threshold
    in_ci = np.isfinite(values) & (values <= level)
    inside = np.flatnonzero(in_ci)
    if inside.size == 0:
        return in_ci, (math.nan, math.nan), (False, False)
    c = inside[np.argmin(np.abs(grid_z[inside] - centre_z))]
    lo_k = c
    while lo_k - 1 >= 0 and in_ci[lo_k - 1]:
        lo_k -= 1
    hi_k = c
    while hi_k + 1 < grid_z.size and in_ci[hi_k + 1]:
        hi_k += 1
    lo_open = lo_k == 0
    hi_open = hi_k == grid_z.size - 1
    lo = grid_z[0] if lo_open else _crossing(grid_z, values, lo_k, lo_k - 1, level)
    hi = grid_z[-1] if hi_open else _crossing(grid_z, values, hi_k, hi_k + 1, level)
    return in_ci, (lo, hi), (lo_open, hi_open)


def default_grid(name: str, value: float, n: int = 21, factor: float = 30.0) -> np.ndarray:
    """Log-spaced grid spanning ``value / factor .. value * factor`` for positive
    parameters; a linear +-50% (at least +-0.5) grid otherwise, clipped to the
    default bounds."""
    if name in LOG_PARAMS:
        return value * np.logspace(-math.log10(factor), math.log10(factor), n)
    half = max(0.5 * abs(value), 0.5)
    lo, hi = DEFAULT_BOUNDS.get(name, (-math.inf, math.inf))
    return np.linspace(max(value - half, lo), min(value + half, hi), n)


def profile_likelihood(data: Dataset, param_name: str, grid, base_fit: FitReport, pinned=(),
                       settings: OptimizerSettings = PROFILE_OPTIMIZER, bounds=None,
                       substeps: int = ekf.DEFAULT_SUBSTEPS, cold_start=False, threads=1) -> ProfileResult:
    """Profile NLL of ``param_name``; ``pinned`` is a sequence of ``(name, value)``."""
    free = base_fit.free_names
    if param_name not in free:
        raise ValidationError(f"{param_name} is not free in the base fit")
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValidationError("profile grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise ValidationError("profile grid must be strictly increasing")
    pinned = tuple((n, float(v)) for n, v in pinned)
    for n, _ in pinned:
        if n not in free:
            raise ValidationError(f"pinned parameter {n} is not free in the base fit")
    full_bounds = dict(DEFAULT_BOUNDS)
    full_bounds.update(bounds or {})

    base = base_fit.estimates
    objective = Objective(data, base, free, substeps)
    idx = free.index(param_name)
    z_hat = encode(base, free)
    grid_z = np.array([to_internal(param_name, g) for g in grid])
    pin_z = [(free.index(n), to_internal(n, v)) for n, v in pinned]
    values, optima, failed = profile_core(
        objective, z_hat, idx, grid_z, pin_z, internal_bounds(full_bounds, free), free,
        settings, cold_start, threads,
    )
    mle = float(min(base_fit.neg_log_lik, np.nanmin(np.where(failed, np.inf, values))))
    if pinned:
        # the overall optimum is the unrestricted fit, not the pinned one
        mle = float(base_fit.neg_log_lik)
    threshold = HALF_CHI2_95[1]
    in_ci, (lo_z, hi_z), is_open = confidence_region(grid_z, values, mle, threshold, z_hat[idx])
    from_z = (lambda v: math.exp(v)) if param_name in LOG_PARAMS else float
    ci = (from_z(lo_z), from_z(hi_z)) if np.isfinite(lo_z) else (math.nan, math.nan)
    params = tuple(decode(x, base, free) if x is not None else None for x in optima)
    return ProfileResult(
        param_name=param_name, grid=grid, profile_nll=values, mle_nll=mle, in_ci=in_ci,
        ci_interval=ci, ci_open=is_open, pinned=pinned, failed=failed, optima=params,
        threshold=threshold,
    )


def profile_pair_trace(data: Dataset, param_name: str, grid, partner_name: str, base_fit: FitReport,
                       **kwargs):
    """``(grid value, re-optimised partner value)`` pairs along the profile."""
    if partner_name not in base_fit.free_names:
        raise ValidationError(f"{partner_name} is not free in the base fit")
    result = kwargs.pop("result", None) or profile_likelihood(data, param_name, grid, base_fit, **kwargs)
    return list(zip(result.grid.tolist(), result.trace(partner_name).tolist()))
