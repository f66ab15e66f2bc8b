"""Coefficient fields b, sigma with analytic gradients, test families and checks.

All field callables are vectorised over leading axes: a state array of shape
``(..., d)`` maps to ``(..., d)`` for the drift, ``(..., d, d1)`` for the
diffusion and ``(..., d, d1, d)`` for its gradient, where
``gradient[..., i, k, j] = d sigma^{ik} / d x_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AssumptionViolationError, InvalidParameterError

Array = np.ndarray


@dataclass(frozen=True)
class CoefficientField:
    dim_state: int
    dim_noise: int
    drift: Callable[[Array], Array]
    diffusion: Callable[[Array], Array]
    diffusion_gradient: Callable[[Array], Array]
    alpha: float
    ellipticity: float
    k_bound: float
    drift_norm: float
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim_state < 1 or self.dim_noise < self.dim_state:
            raise InvalidParameterError(
                f"need 1 <= d <= d1, got d={self.dim_state}, d1={self.dim_noise}"
            )
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidParameterError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 < self.ellipticity <= 1.0:
            raise InvalidParameterError(
                f"ellipticity constant must lie in (0, 1], got {self.ellipticity}"
            )

    def milstein_tensor(self, x: Array) -> Array:
        """``M[..., i, k, l] = sum_j d_j sigma^{ik}(x) sigma^{jl}(x)``.

        Index ``k`` pairs with the dW integrator and ``l`` with the running
        increment inside the step.
        """
        return np.einsum("...ikj,...jl->...ikl", self.diffusion_gradient(x), self.diffusion(x))


@dataclass(frozen=True)
class DriftPart:
    func: Callable[[Array], Array]
    dim_state: int
    alpha: float
    sup_bound: float
    holder_seminorm: float
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.func(x)


@dataclass(frozen=True)
class DiffusionPart:
    func: Callable[[Array], Array]
    gradient: Callable[[Array], Array]
    dim_state: int
    dim_noise: int
    ellipticity: float
    k_bound: float
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.func(x)


def _septic_smoothstep(t):
    # S(0)=0, S(1)=1, first three derivatives vanish at both ends
    return t**4 * (35.0 - 84.0 * t + 70.0 * t**2 - 20.0 * t**3)


def _septic_smoothstep_deriv(t):
    return 140.0 * t**3 * (1.0 - t) ** 3


@dataclass(frozen=True)
class Cutoff:
    """Odd truncation: identity on ``|x| <= kappa/2``, zero on ``|x| >= kappa``.

    In between ``chi(x) = x * (1 - S((|x| - kappa/2) / (kappa/2)))`` with ``S``
    the septic smoothstep, which makes ``chi`` C^3 and keeps ``|chi(x)| <= |x|``.
    """

    kappa: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise InvalidParameterError(f"kappa must be positive, got {self.kappa}")

    def _ramp_coordinate(self, ax):
        half = 0.5 * self.kappa
        return np.clip((ax - half) / half, 0.0, 1.0)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        t = self._ramp_coordinate(ax)
        ramp = x * (1.0 - _septic_smoothstep(t))
        out = np.where(ax <= 0.5 * self.kappa, x, ramp)
        return np.where(ax >= self.kappa, 0.0, out)

    __call__ = evaluate

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        t = self._ramp_coordinate(ax)
        half = 0.5 * self.kappa
        ramp = 1.0 - _septic_smoothstep(t) - ax * _septic_smoothstep_deriv(t) / half
        out = np.where(ax <= half, 1.0, ramp)
        return np.where(ax >= self.kappa, 0.0, out)


def make_cutoff(lam: float, k_bound: float, dim_state: int) -> Cutoff:
    """Cutoff with ``kappa = lam / (4 k_bound d^2)``."""
    if not 0.0 < lam <= 1.0:
        raise InvalidParameterError(f"lambda must lie in (0, 1], got {lam}")
    if not k_bound > 0:
        raise InvalidParameterError(f"k_bound must be positive, got {k_bound}")
    if dim_state < 1:
        raise InvalidParameterError(f"dim_state must be >= 1, got {dim_state}")
    return Cutoff(kappa=lam / (4.0 * k_bound * dim_state**2))


def holder_drift_family(alpha: float, amplitude: float, frequency: float, dim_state: int) -> DriftPart:
    """``b_i(x) = A sign(sin(w x_i)) |sin(w x_i)|^alpha``.

    The Hölder seminorm of ``y -> sign(y)|y|^alpha`` is ``2^(1-alpha)``, attained
    across a sign change, so ``[b]_alpha = A 2^(1-alpha) w^alpha d^((1-alpha)/2)``.
    """
    if not 0.0 < alpha <= 1.0:
        raise InvalidParameterError(f"alpha must lie in (0, 1], got {alpha}")
    if amplitude < 0:
        raise InvalidParameterError(f"amplitude must be >= 0, got {amplitude}")
    if not frequency > 0:
        raise InvalidParameterError(f"frequency must be positive, got {frequency}")
    if dim_state < 1:
        raise InvalidParameterError(f"dim_state must be >= 1, got {dim_state}")

    def drift(x):
        s = np.sin(frequency * np.asarray(x, dtype=float))
        if alpha == 1.0:
            return amplitude * s
        return amplitude * np.sign(s) * np.abs(s) ** alpha

    seminorm = amplitude * 2.0 ** (1.0 - alpha) * frequency**alpha * dim_state ** ((1.0 - alpha) / 2.0)
    return DriftPart(
        func=drift,
        dim_state=dim_state,
        alpha=alpha,
        sup_bound=amplitude * np.sqrt(dim_state),
        holder_seminorm=seminorm,
        params=dict(alpha=alpha, amplitude=amplitude, frequency=frequency),
    )


def constant_drift(c) -> DriftPart:
    c = np.atleast_1d(np.asarray(c, dtype=float))

    def drift(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(c, x.shape).copy()

    return DriftPart(
        func=drift,
        dim_state=c.size,
        alpha=1.0,
        sup_bound=float(np.linalg.norm(c)),
        holder_seminorm=0.0,
        params=dict(constant=c.tolist()),
    )


def zero_drift(dim_state: int) -> DriftPart:
    return constant_drift(np.zeros(dim_state))


def elliptic_diffusion_family(base: float, modulation: float, dim_state: int, dim_noise: int) -> DiffusionPart:
    """Diagonal ``sigma^{ii}(x) = s0 + s1 sin(x_i)`` embedded in a d x d1 matrix.

    ``sigma sigma^*`` has eigenvalues in ``[(s0-s1)^2, (s0+s1)^2]``, so the
    certified constant is ``min((s0-s1)^2, (s0+s1)^-2, 1)``.
    """
    if dim_state < 1 or dim_noise < dim_state:
        raise InvalidParameterError(f"need 1 <= d <= d1, got d={dim_state}, d1={dim_noise}")
    if modulation < 0:
        raise InvalidParameterError(f"modulation must be >= 0, got {modulation}")
    if not base > modulation:
        raise AssumptionViolationError(
            "ellipticity", f"base {base} must exceed modulation {modulation}"
        )
    idx = np.arange(dim_state)

    def diffusion(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (dim_state, dim_noise))
        out[..., idx, idx] = base + modulation * np.sin(x)
        return out

    def gradient(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (dim_state, dim_noise, dim_state))
        out[..., idx, idx, idx] = modulation * np.cos(x)
        return out

    lam = min((base - modulation) ** 2, (base + modulation) ** -2, 1.0)
    k_bound = (base + 2.0 * modulation) * np.sqrt(dim_state)
    return DiffusionPart(
        func=diffusion,
        gradient=gradient,
        dim_state=dim_state,
        dim_noise=dim_noise,
        ellipticity=lam,
        k_bound=k_bound,
        params=dict(base=base, modulation=modulation),
    )


def make_field(drift: DriftPart, diffusion: DiffusionPart, name: str = "custom") -> CoefficientField:
    if drift.dim_state != diffusion.dim_state:
        raise InvalidParameterError("drift and diffusion disagree on the state dimension")
    return CoefficientField(
        dim_state=diffusion.dim_state,
        dim_noise=diffusion.dim_noise,
        drift=drift.func,
        diffusion=diffusion.func,
        diffusion_gradient=diffusion.gradient,
        alpha=drift.alpha,
        ellipticity=diffusion.ellipticity,
        k_bound=diffusion.k_bound,
        drift_norm=drift.sup_bound + drift.holder_seminorm,
        name=name,
        params={**drift.params, **diffusion.params},
    )


def holder_sine_model(alpha=0.5, amplitude=1.0, frequency=1.0, s0=1.0, s1=0.25, d=1, d1=None) -> CoefficientField:
    """The shipped model: Hölder sine drift plus the elliptic sine diffusion."""
    d1 = d if d1 is None else d1
    return make_field(
        holder_drift_family(alpha, amplitude, frequency, d),
        elliptic_diffusion_family(s0, s1, d, d1),
        name="holder-sine",
    )


MODEL_FAMILIES = {"holder-sine": holder_sine_model}


def build_model(name: str, **params) -> CoefficientField:
    try:
        factory = MODEL_FAMILIES[name]
    except KeyError:
        raise InvalidParameterError(
            f"unknown model family {name!r}; available: {sorted(MODEL_FAMILIES)}"
        ) from None
    return factory(**params)


@dataclass(frozen=True)
class ValidationReport:
    probe_count: int
    rayleigh_min: float
    rayleigh_max: float
    holder_quotient: float
    drift_sup: float
    gradient_rel_error: float
    ellipticity: float
    drift_norm: float

    def as_dict(self):
        return dict(self.__dict__)


def _central_gradient(func, x, step):
    d = x.shape[-1]
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        cols.append((func(x + e) - func(x - e)) / (2.0 * step))
    return np.stack(cols, axis=-1)


def holder_quotient(func, x, y, alpha):
    num = np.linalg.norm(func(x) - func(y), axis=-1)
    den = np.linalg.norm(x - y, axis=-1) ** alpha
    return num / den


def validate_assumptions(
    field: CoefficientField,
    probe_count: int = 1000,
    rng_seed: int = 0,
    box: tuple[float, float] = (-2.0 * np.pi, 2.0 * np.pi),
    holder_pairs: int = 100_000,
    near_diagonal_pairs: int = 1000,
    fd_step: float = 1e-5,
    fd_rtol: float = 1e-6,
    tol: float = 1e-9,
) -> ValidationReport:
    """Probe ellipticity, drift Hölder regularity and gradient consistency.

    Raises AssumptionViolationError naming the first failing check.
    """
    if probe_count < 100:
        raise InvalidParameterError(f"probe_count must be >= 100, got {probe_count}")
    d, d1 = field.dim_state, field.dim_noise
    lo, hi = box
    rng = np.random.default_rng(rng_seed)
    x = rng.uniform(lo, hi, size=(probe_count, d))

    # (i) Rayleigh quotient of sigma sigma^* along random unit directions
    xi = rng.standard_normal((probe_count, d))
    xi /= np.linalg.norm(xi, axis=-1, keepdims=True)
    sig = field.diffusion(x)
    rayleigh = np.sum(np.einsum("pik,pi->pk", sig, xi) ** 2, axis=-1)
    lam = field.ellipticity
    i_min, i_max = int(np.argmin(rayleigh)), int(np.argmax(rayleigh))
    if rayleigh[i_min] < lam - tol:
        raise AssumptionViolationError(
            "ellipticity-lower",
            f"Rayleigh quotient {rayleigh[i_min]:.6g} < lambda {lam:.6g}",
            witness=(x[i_min], xi[i_min]),
        )
    if rayleigh[i_max] > 1.0 / lam + tol:
        raise AssumptionViolationError(
            "ellipticity-upper",
            f"Rayleigh quotient {rayleigh[i_max]:.6g} > 1/lambda {1.0 / lam:.6g}",
            witness=(x[i_max], xi[i_max]),
        )

    # (ii) boundedness and Hölder quotient of the drift
    drift_sup_arr = np.linalg.norm(field.drift(x), axis=-1)
    i_sup = int(np.argmax(drift_sup_arr))
    if drift_sup_arr[i_sup] > field.drift_norm * (1.0 + tol) + tol:
        raise AssumptionViolationError(
            "drift-bound",
            f"|b| = {drift_sup_arr[i_sup]:.6g} exceeds declared norm {field.drift_norm:.6g}",
            witness=x[i_sup],
        )
    px = rng.uniform(lo, hi, size=(holder_pairs, d))
    py = rng.uniform(lo, hi, size=(holder_pairs, d))
    base = rng.uniform(lo, hi, size=(near_diagonal_pairs, d))
    direction = rng.standard_normal((near_diagonal_pairs, d))
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    near = [base + 10.0 ** (-k) * direction for k in range(1, 7)]
    px = np.concatenate([px] + [base] * 6)
    py = np.concatenate([py] + near)
    q = holder_quotient(field.drift, px, py, field.alpha)
    i_q = int(np.argmax(q))
    if q[i_q] > field.drift_norm * (1.0 + 1e-6):
        raise AssumptionViolationError(
            "drift-holder",
            f"Hölder quotient {q[i_q]:.6g} exceeds declared norm {field.drift_norm:.6g}",
            witness=(px[i_q], py[i_q]),
        )

    # (iii) analytic gradient of sigma against central differences
    fd = _central_gradient(field.diffusion, x, fd_step)
    analytic = field.diffusion_gradient(x)
    err = np.linalg.norm((fd - analytic).reshape(probe_count, -1), axis=-1)
    scale = np.maximum(np.linalg.norm(analytic.reshape(probe_count, -1), axis=-1), 1.0)
    rel = err / scale
    i_g = int(np.argmax(rel))
    if rel[i_g] > fd_rtol:
        raise AssumptionViolationError(
            "diffusion-gradient",
            f"gradient mismatch {rel[i_g]:.3g} > {fd_rtol:g}",
            witness=x[i_g],
        )

    return ValidationReport(
        probe_count=probe_count,
        rayleigh_min=float(rayleigh[i_min]),
        rayleigh_max=float(rayleigh[i_max]),
        holder_quotient=float(q[i_q]),
        drift_sup=float(drift_sup_arr[i_sup]),
        gradient_rel_error=float(rel[i_g]),
        ellipticity=lam,
        drift_norm=field.drift_norm,
    )
