"""Strong errors with bootstrap error bars, log-log rate fits and moment scaling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CouplingViolationError, DegenerateFitError, IncompatiblePathsError, InvalidParameterError
from .functionals import grid_level, sup_distance
from .schemes import PathEnsemble

N_BOOTSTRAP = 1000
PREASYMPTOTIC_R2 = 0.98


@dataclass(frozen=True)
class ErrorReport:
    scheme_kind: str
    level: int
    p: float
    error: float
    std_error: float
    path_count: int
    ci_low: float = float("nan")
    ci_high: float = float("nan")

    @property
    def n(self):
        return 1 << self.level


@dataclass(frozen=True)
class RateFit:
    points: tuple
    slope: float
    intercept: float
    slope_stderr: float
    r_squared: float
    excluded: tuple = field(default=())


def bootstrap(samples, statistic, n_resamples=N_BOOTSTRAP, seed=0, chunk=64):
    """Nonparametric bootstrap: (standard error, 2.5% and 97.5% percentiles).

    ``statistic`` maps an array ``(r, M)`` of resampled rows to ``(r,)``.
    """
    samples = np.asarray(samples, dtype=float)
    rng = np.random.default_rng(seed)
    m = samples.shape[0]
    stats = []
    for start in range(0, n_resamples, chunk):
        r = min(chunk, n_resamples - start)
        idx = rng.integers(0, m, size=(r, m))
        stats.append(statistic(samples[idx]))
    stats = np.concatenate(stats)
    lo, hi = np.percentile(stats, [2.5, 97.5])
    return float(stats.std(ddof=1)), float(lo), float(hi)


def lp_norm(samples, p):
    samples = np.asarray(samples, dtype=float)
    return float(np.mean(samples**p) ** (1.0 / p))


def error_report(distances, p: float, scheme_kind: str, level: int, n_resamples=N_BOOTSTRAP, seed=0) -> ErrorReport:
    """``(mean D^p)^(1/p)`` over per-path sup distances ``D`` with bootstrap error."""
    if p < 1:
        raise InvalidParameterError(f"p must be >= 1, got {p}")
    d = np.asarray(distances, dtype=float)
    se, lo, hi = bootstrap(d, lambda s: np.mean(s**p, axis=-1) ** (1.0 / p), n_resamples, seed)
    return ErrorReport(scheme_kind, level, p, lp_norm(d, p), se, len(d), lo, hi)


def _align(reference: PathEnsemble, approx: PathEnsemble):
    ref_level, app_level = grid_level(reference.values), grid_level(approx.values)
    if app_level > ref_level:
        raise IncompatiblePathsError("approximation grid is finer than the reference grid")
    a = approx.values
    r = reference.values[:, :: 1 << (ref_level - app_level)]
    return r, a


def strong_error(reference: PathEnsemble, approx: PathEnsemble, p: float, n_resamples=N_BOOTSTRAP, seed=0) -> ErrorReport:
    """``|| sup_t |X_ref - X_approx| ||_{L^p}`` over grid points shared by both paths."""
    if reference.seed != approx.seed or reference.level_ref != approx.level_ref:
        raise CouplingViolationError(
            f"ensembles use different lattices (seed {reference.seed} vs {approx.seed}, "
            f"level {reference.level_ref} vs {approx.level_ref})"
        )
    if not np.array_equal(reference.path_indices, approx.path_indices):
        raise CouplingViolationError("ensembles cover different path indices")
    r, a = _align(reference, approx)
    return error_report(sup_distance(r, a), p, approx.scheme.scheme_kind, approx.scheme.level, n_resamples, seed)


def fit_loglog(x, y, base=2.0) -> RateFit:
    """OLS of ``log_base(y)`` on ``log_base(x)``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise DegenerateFitError("log-log fit needs strictly positive data")
    lx, ly = np.log(x) / np.log(base), np.log(y) / np.log(base)
    return fit_linear(lx, ly)


def fit_linear(x, y) -> RateFit:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) < 3:
        raise DegenerateFitError(f"need at least 3 points, got {len(x)}")
    if not np.all(np.isfinite(y)):
        raise DegenerateFitError("non-finite ordinate")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise DegenerateFitError("all abscissae coincide")
    slope = np.sum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    ssr, sst = np.sum(resid**2), np.sum((y - ym) ** 2)
    r2 = 1.0 if sst == 0 else float(np.clip(1.0 - ssr / sst, 0.0, 1.0))
    stderr = float(np.sqrt(ssr / (len(x) - 2) / sxx))
    return RateFit(tuple(zip(x.tolist(), y.tolist())), float(slope), float(intercept), stderr, r2)


def fit_rate(reports, drop_preasymptotic: bool = True) -> RateFit:
    """Slope of ``log2(error)`` against ``log2(n)``.

    When the fit has ``r^2 < 0.98`` and at least 6 levels, the two coarsest
    levels are dropped and listed in ``excluded``.
    """
    reports = sorted(reports, key=lambda r: r.level)
    if len(reports) < 4:
        raise DegenerateFitError(f"need at least 4 levels, got {len(reports)}")
    if len({r.scheme_kind for r in reports}) != 1 or len({r.p for r in reports}) != 1:
        raise DegenerateFitError("reports mix schemes or moment orders")
    if any(not r.error > 0 for r in reports):
        raise DegenerateFitError("zero error: log undefined")
    levels = [r.level for r in reports]
    errors = [r.error for r in reports]
    fit = fit_linear(levels, np.log2(errors))
    if drop_preasymptotic and fit.r_squared < PREASYMPTOTIC_R2 and len(reports) >= 6:
        trimmed = fit_linear(levels[2:], np.log2(errors[2:]))
        fit = RateFit(trimmed.points, trimmed.slope, trimmed.intercept, trimmed.slope_stderr,
                      trimmed.r_squared, excluded=tuple(levels[:2]))
    return fit


def increment_moment_sums(values, m: float, lags):
    """Sums of ``|X_{t+lag} - X_t|^m`` over paths and grid translates, with counts."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[None]
    sums, counts = [], []
    for lag in lags:
        diff = np.linalg.norm(values[:, lag:] - values[:, :-lag], axis=-1)
        sums.append(float(np.sum(diff**m)))
        counts.append(diff.size)
    return np.array(sums), np.array(counts)


def separation_lags(separations, fine_level: int):
    lags = []
    for s in separations:
        lag = s * (1 << fine_level)
        if not (1.0 / (1 << fine_level) <= s <= 1.0) or lag != int(lag):
            raise InvalidParameterError(f"separation {s} is not dyadic within [2^-{fine_level}, 1]")
        k = np.log2(s)
        if k != int(k):
            raise InvalidParameterError(f"separation {s} is not a power of two")
        lags.append(int(lag))
    return lags


def moment_scaling(ensemble, m: float, separations) -> RateFit:
    """Fit ``log2 ||X_{s+delta} - X_s||_{L^m}`` against ``log2 delta`` (expected 1/2)."""
    values = ensemble.values if isinstance(ensemble, PathEnsemble) else np.asarray(ensemble)
    lags = separation_lags(separations, grid_level(values))
    sums, counts = increment_moment_sums(values, m, lags)
    return moment_fit(separations, sums, counts, m)


def moment_fit(separations, sums, counts, m) -> RateFit:
    norms = (np.asarray(sums) / np.asarray(counts)) ** (1.0 / m)
    return fit_loglog(separations, norms)
