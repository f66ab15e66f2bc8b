"""Experiment runner: flat config files, pinned presets, pipelines and result files.

Every pipeline walks the paths in fixed batches of ``batch_size`` consecutive
path indices. Batches may run on a thread pool (``SDE_LAB_THREADS``) but are
gathered in index order and every reduction happens afterwards, so the worker
count never changes an output byte.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import bootstrap, error_report, fit_linear, fit_rate
from .brownian import MIN_SUBSTEP_GAP, generate_increments, good_event_indicator
from .coefficients import MODEL_FAMILIES, Cutoff, build_model, make_cutoff, validate_assumptions
from .errors import (
    AssumptionViolationError,
    ConfigurationError,
    DegenerateFitError,
    InvalidLevelError,
    InvalidParameterError,
    NumericalBlowupError,
    NumericalError,
    SDELabError,
)
from .functionals import additive_functional, girsanov_weight, local_expansion_residual, sup_distance
from .schemes import MAX_BLOWUP_FRACTION, SCHEME_KINDS, TRUNCATED_KINDS, SchemeConfig, simulate_batch

CSV_COLUMNS = ("experiment_id", "scheme", "alpha", "d", "d1", "n", "p", "error", "std_error", "path_count", "seed")
MODES = ("rate", "moments", "functional", "omega", "girsanov", "validate")
FUNCTIONALS = ("additive", "residual")
RATE_GAP = 6
THREADS_ENV = "SDE_LAB_THREADS"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ASSERT = 4


@dataclass(frozen=True)
class ModelSpec:
    family: str = "holder-sine"
    alpha: float = 0.5
    amplitude: float = 1.0
    frequency: float = 1.0
    s0: float = 1.0
    s1: float = 0.25
    d: int = 1
    d1: int = 1

    def build(self):
        return build_model(
            self.family,
            alpha=self.alpha,
            amplitude=self.amplitude,
            frequency=self.frequency,
            s0=self.s0,
            s1=self.s1,
            d=self.d,
            d1=self.d1,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment. Mode-specific keys are ignored by the other modes.

    ``kappa`` defaults to the certified cutoff threshold of the model.
    ``levels`` must hold exactly one level in moments and girsanov mode.
    """

    experiment_id: str
    mode: str = "rate"
    model: ModelSpec = field(default_factory=ModelSpec)
    scheme_kinds: tuple = ("milstein",)
    levels: tuple = (4, 5, 6, 7, 8, 9)
    level_ref: int = 15
    p_orders: tuple = (2.0,)
    path_count: int = 10_000
    seed: int = 0
    output_path: str = "results"
    initial_state: tuple | None = None
    kappa: float | None = None
    moment_order: float = 4.0
    separations: tuple = ()
    functional: str = "additive"
    batch_size: int = 512
    n_resamples: int = 1000

    def validate(self):
        if not self.experiment_id or any(c in self.experiment_id for c in "/\\ \t"):
            raise ConfigurationError(f"experiment_id must be a plain token, got {self.experiment_id!r}")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.model.family not in MODEL_FAMILIES:
            raise ConfigurationError(f"unknown model family {self.model.family!r}; available: {sorted(MODEL_FAMILIES)}")
        for kind in self.scheme_kinds:
            if kind not in SCHEME_KINDS:
                raise ConfigurationError(f"unknown scheme {kind!r}; expected one of {SCHEME_KINDS}")
        if not self.scheme_kinds:
            raise ConfigurationError("scheme_kinds is empty")
        if not self.levels or min(self.levels) < 0:
            raise ConfigurationError("levels must be a non-empty list of non-negative integers")
        if len(set(self.levels)) != len(self.levels):
            raise ConfigurationError("levels contain duplicates")
        gap = RATE_GAP if self.mode == "rate" else MIN_SUBSTEP_GAP
        if self.level_ref < max(self.levels) + gap:
            raise ConfigurationError(
                f"level_ref {self.level_ref} must be >= max(levels) + {gap} in {self.mode} mode"
            )
        if any(p < 1 for p in self.p_orders) or not self.p_orders:
            raise ConfigurationError("p_orders must be non-empty with every p >= 1")
        if self.path_count < 1 or self.batch_size < 1:
            raise ConfigurationError("path_count and batch_size must be >= 1")
        if self.n_resamples < 2:
            raise ConfigurationError("n_resamples must be >= 2")
        if self.kappa is not None and not self.kappa > 0:
            raise ConfigurationError(f"kappa must be positive, got {self.kappa}")
        if self.initial_state is not None and len(self.initial_state) != self.model.d:
            raise ConfigurationError(f"initial_state needs {self.model.d} entries")
        if self.mode in ("moments", "girsanov") and len(self.levels) != 1:
            raise ConfigurationError(f"{self.mode} mode takes exactly one level")
        if self.mode == "moments":
            from .analysis import separation_lags

            if len(self.separations) < 3:
                raise ConfigurationError("moments mode needs at least 3 separations")
            try:
                separation_lags(self.separations, self.level_ref)
            except InvalidParameterError as exc:
                raise ConfigurationError(str(exc)) from None
        if self.mode == "functional" and self.functional not in FUNCTIONALS:
            raise ConfigurationError(f"functional must be one of {FUNCTIONALS}")
        if self.mode in ("rate", "functional") and len(self.levels) < 4:
            raise ConfigurationError(f"{self.mode} mode needs at least 4 levels for a rate fit")
        if self.mode == "omega" and len(self.levels) < 3:
            raise ConfigurationError("omega mode needs at least 3 levels")
        if self.mode == "girsanov" and self.model.d != self.model.d1:
            raise ConfigurationError("girsanov mode needs d == d1")
        if self.mode == "girsanov" and self.level_ref - self.levels[0] < MIN_SUBSTEP_GAP:
            raise ConfigurationError("girsanov mode needs the refinement gap")
        return self

    @property
    def x0(self):
        return tuple(self.initial_state) if self.initial_state is not None else (0.0,) * self.model.d

    def cutoff(self, field_=None):
        if self.kappa is not None:
            return Cutoff(self.kappa)
        f = field_ if field_ is not None else self.model.build()
        return make_cutoff(f.ellipticity, f.k_bound, f.dim_state)

    def as_dict(self):
        out = dataclasses.asdict(self)
        out["model"] = dataclasses.asdict(self.model)
        return out


# ----------------------------------------------------------------------------- config files

_MODEL_KEYS = {"model": "family", "alpha": "alpha", "amplitude": "amplitude", "frequency": "frequency",
               "s0": "s0", "s1": "s1", "d": "d", "d1": "d1"}
_FLOATS = {"alpha", "amplitude", "frequency", "s0", "s1", "kappa", "moment_order"}
_INTS = {"d", "d1", "level_ref", "path_count", "seed", "batch_size", "n_resamples"}
_INT_LISTS = {"levels"}
_FLOAT_LISTS = {"p_orders", "initial_state", "separations"}
_STR_LISTS = {"scheme_kinds"}
_STRINGS = {"experiment_id", "mode", "model", "output_path", "functional"}


def _parse_number(text, kind, key):
    try:
        if kind is int:
            return int(text, 0)
        return float(text)
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, lists are comma-separated."""
    values, model = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values or _MODEL_KEYS.get(key) in model:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        items = [v.strip() for v in value.split(",") if v.strip()]
        if key in _INTS:
            parsed = _parse_number(value, int, key)
        elif key in _FLOATS:
            parsed = _parse_number(value, float, key)
        elif key in _INT_LISTS:
            parsed = tuple(_parse_number(v, int, key) for v in items)
        elif key in _FLOAT_LISTS:
            parsed = tuple(_parse_number(v, float, key) for v in items)
        elif key in _STR_LISTS:
            parsed = tuple(items)
        elif key in _STRINGS:
            parsed = value
        else:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in _MODEL_KEYS:
            model[_MODEL_KEYS[key]] = parsed
        else:
            values[key] = parsed
    if "experiment_id" not in values:
        raise ConfigurationError("missing required key 'experiment_id'")
    return ExperimentConfig(model=ModelSpec(**model), **values).validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text)


def format_config(config: ExperimentConfig) -> str:
    """Inverse of ``parse_config_text``."""
    lines = []
    inverse = {v: k for k, v in _MODEL_KEYS.items()}
    for name, value in dataclasses.asdict(config.model).items():
        lines.append(f"{inverse[name]} = {value}")
    for f in dataclasses.fields(config):
        if f.name == "model":
            continue
        value = getattr(config, f.name)
        if value is None:
            continue
        if isinstance(value, tuple):
            value = ", ".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------- presets

ROUGH_MODEL = dict(amplitude=1.5, frequency=3.0, s0=1.0, s1=0.5)


def _rate(name, alpha, scheme, **model):
    spec = ModelSpec(alpha=alpha, **(model or ROUGH_MODEL))
    return ExperimentConfig(name, "rate", spec, (scheme,), tuple(range(4, 10)), 15, (2.0,), 10_000)


def _slope_window(lo, hi):
    def check(summary):
        fits = summary.get("fits", [])
        bad = [f for f in fits if f["slope"] is None or not lo <= f["slope"] <= hi]
        return [f"{f['scheme']}: slope {f['slope']} outside [{lo}, {hi}]" for f in bad] if fits else ["no fit"]

    return check


def _check_moments(summary):
    s = summary.get("fit", {}).get("slope")
    return [] if s is not None and 0.45 <= s <= 0.55 else [f"moment slope {s} outside [0.45, 0.55]"]


def _check_upper(bound):
    def check(summary):
        fits = summary.get("fits", [])
        bad = [f for f in fits if f["slope"] is None or f["slope"] > bound]
        return [f"{f['scheme']}: slope {f['slope']} above {bound}" for f in bad] if fits else ["no fit"]

    return check


def _check_omega(summary):
    fit = summary.get("fit")
    if not fit:
        return ["no fit"]
    out = []
    if not fit["slope"] < 0:
        out.append(f"slope {fit['slope']} is not negative")
    if not fit["r_squared"] >= 0.9:
        out.append(f"r^2 {fit['r_squared']} below 0.9")
    return out


def _check_girsanov(summary):
    z = summary.get("z_score")
    return [] if z is not None and abs(z) <= 3 else [f"|E rho - 1| is {z} standard errors"]


def _check_validate(summary):
    return [] if summary.get("passed") else ["assumption check failed"]


PRESETS = {
    "smooth-rate": (
        _rate("smooth-rate", 1.0, "milstein", amplitude=1.0, frequency=1.0, s0=1.0, s1=0.25),
        _slope_window(-1.10, -0.85),
    ),
    "main-rate-a05": (_rate("main-rate-a05", 0.5, "milstein"), _slope_window(-0.90, -0.62)),
    "euler-baseline-a05": (_rate("euler-baseline-a05", 0.5, "euler"), _slope_window(-0.62, -0.40)),
    "main-rate-a025": (_rate("main-rate-a025", 0.25, "milstein"), _slope_window(-0.775, -0.475)),
    "main-rate-a075": (_rate("main-rate-a075", 0.75, "milstein"), _slope_window(-1.025, -0.725)),
    "moments": (
        ExperimentConfig(
            "moments", "moments", ModelSpec(alpha=0.5, **ROUGH_MODEL), ("milstein",), (6,), 10, (4.0,), 100_000,
            moment_order=4.0, separations=tuple(2.0**-k for k in range(4, 11)),
        ),
        _check_moments,
    ),
    "functional-rate": (
        ExperimentConfig(
            "functional-rate", "functional", ModelSpec(alpha=0.5, **ROUGH_MODEL), ("milstein",),
            tuple(range(4, 10)), 14, (2.0,), 10_000, functional="additive", batch_size=128,
        ),
        _check_upper(-0.6),
    ),
    "residual-smooth": (
        ExperimentConfig(
            "residual-smooth", "functional", ModelSpec(alpha=0.5, **ROUGH_MODEL), ("milstein",),
            tuple(range(3, 9)), 12, (4.0,), 10_000, functional="residual", batch_size=256,
        ),
        _check_upper(-0.9),
    ),
    "omega-decay": (
        ExperimentConfig(
            "omega-decay", "omega", ModelSpec(alpha=0.5, **ROUGH_MODEL), ("milstein_truncated",),
            (3, 4, 5, 6, 7), 11, (1.0,), 100_000, kappa=0.8, batch_size=1024,
        ),
        _check_omega,
    ),
    "girsanov-mean": (
        ExperimentConfig(
            "girsanov-mean", "girsanov", ModelSpec(alpha=0.5, **ROUGH_MODEL), ("milstein_truncated",),
            (6,), 10, (1.0,), 100_000, batch_size=1024,
        ),
        _check_girsanov,
    ),
    "validate-a05": (
        ExperimentConfig("validate-a05", "validate", ModelSpec(alpha=0.5, **ROUGH_MODEL), path_count=1),
        _check_validate,
    ),
}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name][0]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None


def preset_check(experiment_id: str):
    entry = PRESETS.get(experiment_id)
    return entry[1] if entry else None


# ----------------------------------------------------------------------------- batch machinery

def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def _map_batches(config: ExperimentConfig, work):
    """Apply ``work(indices)`` to every batch; results come back in batch order."""
    idx = np.arange(config.path_count)
    batches = [idx[i : i + config.batch_size] for i in range(0, config.path_count, config.batch_size)]
    threads = min(worker_count(), len(batches))
    if threads <= 1:
        return [work(b) for b in batches]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, batches))


def _gather(results):
    keys = results[0].keys()
    return {k: np.concatenate([r[k] for r in results]) for k in keys}


def _increments(config, indices):
    return generate_increments(config.model.d1, config.level_ref, config.seed, indices)


def _scheme(config, kind, level, cutoff):
    return SchemeConfig(kind, level, config.x0, cutoff if kind in TRUNCATED_KINDS else None)


def _drop_blown(values, warnings, label, total):
    bad = ~np.isfinite(values)
    if bad.any():
        count = int(bad.sum())
        if count > MAX_BLOWUP_FRACTION * total:
            raise NumericalBlowupError(f"{label}: {count} of {total} paths blew up")
        warnings.append(f"{label}: dropped {count} blown-up paths")
    return values[~bad]


def _row(config, scheme, n, p, error, std_error, path_count):
    return dict(
        experiment_id=config.experiment_id, scheme=scheme, alpha=config.model.alpha, d=config.model.d,
        d1=config.model.d1, n=n, p=p, error=error, std_error=std_error, path_count=path_count, seed=config.seed,
    )


def _boot_seed(config, k):
    return [config.seed & 0xFFFFFFFFFFFFFFFF, k]


# ----------------------------------------------------------------------------- pipelines

def _run_rate(config, field_, warnings):
    cutoff = config.cutoff(field_) if any(k in TRUNCATED_KINDS for k in config.scheme_kinds) else None

    def work(indices):
        incs = _increments(config, indices)
        refs = {}
        out = {}
        for kind in config.scheme_kinds:
            # at the lattice level the correction sums are empty, so one reference
            # per drift class serves every scheme
            ref_kind = "milstein" if SchemeConfig(kind, 0, config.x0, cutoff).has_drift else "milstein_driftless"
            if ref_kind not in refs:
                refs[ref_kind] = simulate_batch(
                    field_, SchemeConfig(ref_kind, config.level_ref, config.x0), incs, path_indices=indices,
                    on_blowup="mask",
                )
            ref = refs[ref_kind]
            for level in config.levels:
                x = simulate_batch(field_, _scheme(config, kind, level, cutoff), incs, path_indices=indices,
                                   on_blowup="mask")
                out[(kind, level)] = sup_distance(ref[:, :: 1 << (config.level_ref - level)], x)
        return out

    dist = _gather(_map_batches(config, work))
    rows, fits = [], []
    k = 0
    for kind in config.scheme_kinds:
        for p in config.p_orders:
            reports = []
            for level in sorted(config.levels):
                d = _drop_blown(dist[(kind, level)], warnings, f"{kind} level {level}", config.path_count)
                rep = error_report(d, p, kind, level, config.n_resamples, _boot_seed(config, k))
                k += 1
                reports.append(rep)
                rows.append(_row(config, kind, rep.n, p, rep.error, rep.std_error, rep.path_count))
            fits.append(_fit_summary(kind, p, lambda r=reports: fit_rate(r), warnings))
    return rows, {"fits": fits, "reference": f"same scheme family at level_ref={config.level_ref}"}


def _fit_summary(scheme, p, fitter, warnings):
    try:
        fit = fitter()
    except DegenerateFitError as exc:
        warnings.append(f"{scheme} p={p}: fit failed: {exc}")
        return dict(scheme=scheme, p=p, slope=None, slope_stderr=None, r_squared=None, excluded=[])
    return dict(scheme=scheme, p=p, slope=fit.slope, intercept=fit.intercept, slope_stderr=fit.slope_stderr,
                r_squared=fit.r_squared, excluded=list(fit.excluded))


def _run_moments(config, field_, warnings):
    from .analysis import separation_lags

    level = config.levels[0]
    cutoff = config.cutoff(field_) if any(k in TRUNCATED_KINDS for k in config.scheme_kinds) else None
    lags = separation_lags(config.separations, config.level_ref)
    m = config.moment_order

    def work(indices):
        incs = _increments(config, indices)
        out = {}
        for kind in config.scheme_kinds:
            x = simulate_batch(field_, _scheme(config, kind, level, cutoff), incs, dense=True,
                               path_indices=indices, on_blowup="mask")
            for lag in lags:
                # per-path mean of |X_{t+lag} - X_t|^m over grid translates
                diff = np.linalg.norm(x[:, lag:] - x[:, :-lag], axis=-1)
                out[(kind, lag)] = np.mean(diff**m, axis=1)
        return out

    per_path = _gather(_map_batches(config, work))
    rows, fits = [], []
    k = 0
    for kind in config.scheme_kinds:
        norms = []
        for sep, lag in zip(config.separations, lags):
            q = _drop_blown(per_path[(kind, lag)], warnings, f"{kind} lag {lag}", config.path_count)
            norm = float(np.mean(q) ** (1.0 / m))
            se, _, _ = bootstrap(q, lambda s: np.mean(s, axis=-1) ** (1.0 / m), config.n_resamples,
                                 _boot_seed(config, k))
            k += 1
            norms.append(norm)
            rows.append(_row(config, kind, int(round(1.0 / sep)), m, norm, se, len(q)))
        fits.append(_fit_summary(kind, m, lambda: fit_linear(np.log2(config.separations), np.log2(norms)), warnings))
    return rows, {"fit": fits[0], "fits": fits, "level": level}


def _residual_test_function(field_):
    # first diagonal diffusion entry: smooth, with analytic gradient
    def f(x):
        return field_.diffusion(x)[..., 0, 0]

    def grad(x):
        return field_.diffusion_gradient(x)[..., 0, 0, :]

    return f, grad


def _run_functional(config, field_, warnings):
    cutoff = config.cutoff(field_) if any(k in TRUNCATED_KINDS for k in config.scheme_kinds) else None
    if config.functional == "additive":
        return _run_additive(config, field_, cutoff, warnings)
    return _run_residual(config, field_, cutoff, warnings)


def _run_additive(config, field_, cutoff, warnings):
    # h = 1 and f = first drift component, which carries the drift's Hölder regularity
    def h(x):
        return np.ones(x.shape[:-1])

    def f(x):
        return field_.drift(x)[..., 0]

    def work(indices):
        incs = _increments(config, indices)
        out = {}
        for kind in config.scheme_kinds:
            for level in config.levels:
                x = simulate_batch(field_, _scheme(config, kind, level, cutoff), incs, dense=True,
                                   path_indices=indices, on_blowup="mask")
                out[(kind, level)] = additive_functional(h, f, x, level)
        return out

    vals = _gather(_map_batches(config, work))
    rows, fits = [], []
    k = 0
    for kind in config.scheme_kinds:
        for p in config.p_orders:
            reports = []
            for level in sorted(config.levels):
                v = _drop_blown(vals[(kind, level)], warnings, f"{kind} level {level}", config.path_count)
                rep = error_report(v, p, kind, level, config.n_resamples, _boot_seed(config, k))
                k += 1
                reports.append(rep)
                rows.append(_row(config, kind, rep.n, p, rep.error, rep.std_error, rep.path_count))
            fits.append(_fit_summary(kind, p, lambda r=reports: fit_rate(r), warnings))
    return rows, {"fits": fits, "functional": "additive", "h": "1", "f": "drift component 1"}


def _run_residual(config, field_, cutoff, warnings):
    """``sup_t || residual_t ||_{L^p}``: the bound holds at each fixed time.

    First pass accumulates the pointwise p-th moments and locates the worst
    time; a second pass over the same (keyed) lattices collects the per-path
    values there for the bootstrap.
    """
    f, grad = _residual_test_function(field_)
    combos = [(kind, level) for kind in config.scheme_kinds for level in config.levels]

    def residuals(indices):
        incs = _increments(config, indices)
        for kind, level in combos:
            x = simulate_batch(field_, _scheme(config, kind, level, cutoff), incs, dense=True,
                               path_indices=indices, on_blowup="mask")
            yield (kind, level), np.abs(local_expansion_residual(field_, f, grad, x, incs, level))

    rows, fits = [], []
    k = 0
    for p in config.p_orders:
        def first(indices):
            out = {}
            for key, r in residuals(indices):
                finite = np.isfinite(r).all(axis=1)
                out[key] = (np.sum(r[finite] ** p, axis=0), int(finite.sum()))
            return out

        moments = {}
        for part in _map_batches(config, first):
            for key, (s, c) in part.items():
                acc = moments.setdefault(key, [0.0, 0])
                acc[0] = acc[0] + s
                acc[1] += c
        worst = {key: int(np.argmax(s)) for key, (s, _) in moments.items()}

        def second(indices):
            return {key: r[:, worst[key]] for key, r in residuals(indices)}

        at_worst = _gather(_map_batches(config, second))
        for kind in config.scheme_kinds:
            reports = []
            for level in sorted(config.levels):
                v = _drop_blown(at_worst[(kind, level)], warnings, f"{kind} level {level}", config.path_count)
                rep = error_report(v, p, kind, level, config.n_resamples, _boot_seed(config, k))
                k += 1
                reports.append(rep)
                rows.append(_row(config, kind, rep.n, p, rep.error, rep.std_error, rep.path_count))
            fits.append(_fit_summary(kind, p, lambda r=reports: fit_rate(r), warnings))
    return rows, {"fits": fits, "functional": "residual", "f": "sigma^{11}",
                  "statistic": "sup over fine times of the pointwise L^p norm"}


def _run_omega(config, field_, warnings):
    cutoff = config.cutoff(field_)
    kappa = cutoff.kappa

    def work(indices):
        incs = _increments(config, indices)
        return {level: ~good_event_indicator(incs, level, kappa) for level in config.levels}

    bad = _gather(_map_batches(config, work))
    rows, ns, logs = [], [], []
    for k, level in enumerate(sorted(config.levels)):
        flags = bad[level].astype(float)
        prob = float(flags.mean())
        se, _, _ = bootstrap(flags, lambda s: np.mean(s, axis=-1), config.n_resamples, _boot_seed(config, k))
        rows.append(_row(config, "omega", 1 << level, 1.0, prob, se, config.path_count))
        if prob > 0:
            ns.append(1 << level)
            logs.append(math.log(prob))
        else:
            warnings.append(f"level {level}: no path left the good event; excluded from the fit")
    summary = {"kappa": kappa, "anchor": "left"}
    try:
        fit = fit_linear(ns, logs)
        summary["fit"] = dict(slope=fit.slope, intercept=fit.intercept, slope_stderr=fit.slope_stderr,
                              r_squared=fit.r_squared, n=ns)
    except DegenerateFitError as exc:
        warnings.append(f"fit failed: {exc}")
        summary["fit"] = None
    return rows, summary


def _run_girsanov(config, field_, warnings):
    cutoff = config.cutoff(field_)
    level = config.levels[0]
    kind = "milstein_truncated"

    def work(indices):
        incs = _increments(config, indices)
        x = simulate_batch(field_, SchemeConfig(kind, level, config.x0, cutoff), incs, path_indices=indices,
                           on_blowup="mask")
        return {"rho": girsanov_weight(field_, cutoff, x, incs, level)}

    rho = _drop_blown(_gather(_map_batches(config, work))["rho"], warnings, "rho", config.path_count)
    mean = float(rho.mean())
    se, lo, hi = bootstrap(rho, lambda s: np.mean(s, axis=-1), config.n_resamples, _boot_seed(config, 0))
    rows = [_row(config, kind, 1 << level, 1.0, abs(mean - 1.0), se, len(rho))]
    z = (mean - 1.0) / se if se > 0 else float("inf")
    return rows, {"mean": mean, "std_error": se, "ci": [lo, hi], "z_score": z, "kappa": cutoff.kappa,
                  "min_weight": float(rho.min())}


def _run_validate(config, field_, warnings):
    try:
        report = validate_assumptions(field_)
    except AssumptionViolationError as exc:
        return None, {"passed": False, "check": exc.check, "message": str(exc),
                      "witness": np.asarray(exc.witness).tolist() if exc.witness is not None else None}
    return None, {"passed": True, "report": report.as_dict()}


_PIPELINES = {
    "rate": _run_rate,
    "moments": _run_moments,
    "functional": _run_functional,
    "omega": _run_omega,
    "girsanov": _run_girsanov,
    "validate": _run_validate,
}


# ----------------------------------------------------------------------------- output

def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"], capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class RunResult:
    status: int
    rows: list | None
    summary: dict
    warnings: list
    csv_path: Path | None
    sidecar_path: Path
    failures: list = field(default_factory=list)


def run(config: ExperimentConfig, out_dir=None, check=None) -> RunResult:
    """Execute ``config`` and write ``<id>.csv`` (not in validate mode) and ``<id>.json``.

    ``check`` maps the summary to a list of failure strings; any failure
    turns the status into ``EXIT_ASSERT``. Configuration and numerical
    errors propagate as exceptions.
    """
    config.validate()
    out = Path(out_dir if out_dir is not None else config.output_path)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    warnings: list = []
    try:
        field_ = config.model.build()
    except (InvalidParameterError, AssumptionViolationError) as exc:
        raise ConfigurationError(f"model: {exc}") from None
    rows, summary = _PIPELINES[config.mode](config, field_, warnings)
    wall = time.perf_counter() - t0
    failures = list(check(summary)) if check is not None else []
    if config.mode == "validate" and not summary["passed"]:
        failures.append(summary["message"])
    out.mkdir(parents=True, exist_ok=True)
    csv_path = None
    if rows is not None:
        csv_path = out / f"{config.experiment_id}.csv"
        csv_path.write_text(rows_to_csv(rows))
    sidecar = {
        "config": config.as_dict(),
        "version": version_string(),
        "started_at": started.isoformat(),
        "wall_seconds": wall,
        "warnings": warnings,
        "summary": summary,
    }
    if check is not None:
        sidecar["summary"]["assertions"] = failures
    sidecar_path = out / f"{config.experiment_id}.json"
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True, default=_json_default) + "\n")
    status = EXIT_OK
    if failures and (check is not None or config.mode == "validate"):
        status = EXIT_ASSERT if check is not None else EXIT_CONFIG
    return RunResult(status, rows, summary, warnings, csv_path, sidecar_path, failures)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (NumericalBlowupError, NumericalError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (ConfigurationError, InvalidParameterError, InvalidLevelError, AssumptionViolationError)):
        return EXIT_CONFIG
    if isinstance(exc, SDELabError):
        return EXIT_NUMERICAL
    raise exc
