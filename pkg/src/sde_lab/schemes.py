"""Time-stepping engines coupled to a shared Brownian lattice.

Every scheme at level ``l`` reads the same fine increments: coarse increments
are dyadic sums of them and the stochastic integral inside a step is a
left-point sum over the fine sub-grid. Two resolutions driven by one lattice
are therefore strongly coupled.

The Milstein correction follows the coordinate form

    X^i += sum_{k, l} M^{ikl}(x) J^{lk},   M^{ikl} = sum_j d_j sigma^{ik} sigma^{jl},

with ``J^{lk} = int_s^t (W^l_r - W^l_s) dW^k_r``; see
``CoefficientField.milstein_tensor``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .brownian import (
    MIN_SUBSTEP_GAP,
    BrownianLattice,
    coarse_increments,
    generate_increments,
    running_increments,
    subsummed_integrals,
    _substeps,
)
from .coefficients import CoefficientField, Cutoff
from .errors import ConfigurationError, InvalidLevelError, NumericalBlowupError

SCHEME_KINDS = (
    "euler",
    "milstein",
    "milstein_truncated",
    "milstein_driftless",
    "milstein_truncated_drifted",
)
TRUNCATED_KINDS = ("milstein_truncated", "milstein_truncated_drifted")
DRIFTLESS_KINDS = ("milstein_driftless", "milstein_truncated")
BLOWUP_LIMIT = 1e12
MAX_BLOWUP_FRACTION = 1e-3


@dataclass(frozen=True)
class SchemeConfig:
    scheme_kind: str
    level: int
    initial_state: tuple
    cutoff: Cutoff | None = None

    def __post_init__(self):
        if self.scheme_kind not in SCHEME_KINDS:
            raise ConfigurationError(
                f"unknown scheme {self.scheme_kind!r}; expected one of {SCHEME_KINDS}"
            )
        if self.scheme_kind in TRUNCATED_KINDS and self.cutoff is None:
            raise ConfigurationError(f"{self.scheme_kind} requires a cutoff")
        if self.level < 0:
            raise InvalidLevelError(f"level must be >= 0, got {self.level}")
        object.__setattr__(self, "initial_state", tuple(float(v) for v in np.atleast_1d(self.initial_state)))

    @property
    def n(self):
        return 1 << self.level

    @property
    def has_drift(self):
        return self.scheme_kind not in DRIFTLESS_KINDS

    @property
    def uses_correction(self):
        return self.scheme_kind != "euler"

    def check_lattice(self, level_ref: int):
        """Milstein kinds need a refinement gap, except at the lattice's own level."""
        if self.level > level_ref:
            raise InvalidLevelError(f"level {self.level} exceeds lattice level {level_ref}")
        if self.uses_correction and self.level != level_ref and self.level > level_ref - MIN_SUBSTEP_GAP:
            raise InvalidLevelError(
                f"{self.scheme_kind} at level {self.level} needs at least "
                f"{MIN_SUBSTEP_GAP} dyadic levels of refinement below lattice level {level_ref}"
            )


@dataclass
class PathEnsemble:
    scheme: SchemeConfig
    seed: int
    level_ref: int
    path_indices: np.ndarray
    values: np.ndarray
    dense: bool
    blown_up: list = field(default_factory=list)

    @property
    def path_count(self):
        return len(self.path_indices)

    @property
    def grid_level(self):
        return self.level_ref if self.dense else self.scheme.level


def _euler_increment(field: CoefficientField, x, dt, dW, with_drift=True):
    out = np.einsum("...ik,...k->...i", field.diffusion(x), dW)
    if with_drift:
        out = out + field.drift(x) * dt
    return out


def _correction(field: CoefficientField, x, J):
    return np.einsum("...ikl,...lk->...i", field.milstein_tensor(x), J)


def _check_finite(x, step_index=None):
    x = np.asarray(x)
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) > BLOWUP_LIMIT):
        raise NumericalBlowupError("non-finite or exploding state", step_index=step_index)
    return x


def step_euler(field: CoefficientField, x, dt, dW, with_drift=True):
    """``x + b(x) dt + sigma(x) dW``."""
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float)
    return _check_finite(x + _euler_increment(field, x, dt, np.asarray(dW, dtype=float), with_drift))


def step_milstein(field: CoefficientField, x, dt, dW, J, with_drift=True):
    """Euler step plus ``sum_{k,l} M^{ikl}(x) J^{lk}``.

    ``J[..., l, k]`` is the iterated integral of ``W^l - W^l_s`` against ``dW^k``.
    """
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float)
    J = np.asarray(J, dtype=float)
    if J.shape[-2:] != (field.dim_noise, field.dim_noise):
        raise ConfigurationError(f"J must end in shape {(field.dim_noise,) * 2}, got {J.shape}")
    inc = _euler_increment(field, x, dt, np.asarray(dW, dtype=float), with_drift)
    return _check_finite(x + inc + _correction(field, x, J))


def step_milstein_truncated(field: CoefficientField, cutoff: Cutoff, x, sub_increments, dt=None):
    """One step of the truncated scheme over the fine increments of the step.

    Left-point sum of ``(sigma(x) + M(x) chi(W_{u_i} - W_s)) dW_i`` with
    ``chi`` applied per component. Driftless unless ``dt`` is given, in which
    case ``b(x) dt`` is added with ``b`` frozen at ``x``.
    """
    if cutoff is None:
        raise ConfigurationError("truncated step requires a cutoff")
    sub = np.asarray(sub_increments, dtype=float)
    if sub.shape[-2] < 1 << MIN_SUBSTEP_GAP:
        raise InvalidLevelError(f"need at least {1 << MIN_SUBSTEP_GAP} sub-increments, got {sub.shape[-2]}")
    x = np.asarray(x, dtype=float)
    run = np.zeros_like(sub)
    np.cumsum(sub[..., :-1, :], axis=-2, out=run[..., 1:, :])
    Jchi = np.einsum("...mj,...ml->...jl", cutoff.evaluate(run), sub)
    dW = sub.sum(axis=-2)
    inc = _euler_increment(field, x, dt if dt is not None else 0.0, dW, with_drift=dt is not None)
    return _check_finite(x + inc + _correction(field, x, Jchi))


def simulate_batch(
    field: CoefficientField,
    config: SchemeConfig,
    increments: np.ndarray,
    dense: bool = False,
    path_indices=None,
    on_blowup: str = "raise",
):
    """Run ``config`` over a batch of lattices ``(B, 2**L, d1)``.

    Returns the trajectories ``(B, 2**level + 1, d)``, or ``(B, 2**L + 1, d)``
    in dense mode where the within-step interpolation is recorded on the fine
    grid. With ``on_blowup="mask"`` exploding paths are filled with NaN instead
    of raising.
    """
    increments = np.asarray(increments, dtype=float)
    if increments.ndim != 3 or increments.shape[-1] != field.dim_noise:
        raise ConfigurationError(f"increments must have shape (B, 2**L, {field.dim_noise})")
    batch, n_fine, _ = increments.shape
    level_ref = n_fine.bit_length() - 1
    config.check_lattice(level_ref)
    if len(config.initial_state) != field.dim_state:
        raise ConfigurationError(
            f"initial state has {len(config.initial_state)} entries, field has d={field.dim_state}"
        )
    if path_indices is None:
        path_indices = np.arange(batch)
    level, n = config.level, config.n
    dt = 1.0 / n
    dW = coarse_increments(increments, level)
    correction = config.uses_correction and level < level_ref
    if correction:
        cutoff = config.cutoff if config.scheme_kind in TRUNCATED_KINDS else None
        J = subsummed_integrals(increments, level, cutoff)

    xs = np.empty((batch, n + 1, field.dim_state))
    x = np.broadcast_to(np.asarray(config.initial_state), (batch, field.dim_state)).copy()
    xs[:, 0] = x
    alive = np.ones(batch, dtype=bool)
    for k in range(n):
        x = x + _euler_increment(field, x, dt, dW[:, k], config.has_drift)
        if correction:
            x = x + _correction(field, xs[:, k], J[:, k])
        if not np.abs(x).max() <= BLOWUP_LIMIT:
            bad = ~np.all(np.isfinite(x), axis=-1) | np.any(np.abs(x) > BLOWUP_LIMIT, axis=-1)
            bad &= alive
        else:
            bad = None
        if bad is not None and bad.any():
            first = int(np.flatnonzero(bad)[0])
            if on_blowup == "raise":
                raise NumericalBlowupError(
                    f"path {int(path_indices[first])} blew up at step {k}",
                    step_index=k,
                    path_index=int(path_indices[first]),
                )
            alive &= ~bad
            x[bad] = np.nan
        xs[:, k + 1] = x

    if not dense or level == level_ref:
        return xs
    return _densify(field, config, increments, xs)


def _densify(field, config, increments, xs):
    level = config.level
    batch, n_fine, d1 = increments.shape
    n = config.n
    m = n_fine // n
    left = xs[:, :-1]
    sub = _substeps(increments, level)
    partial_w = np.cumsum(sub, axis=-2)
    vals = np.einsum("bnik,bnmk->bnmi", field.diffusion(left), partial_w)
    if config.has_drift:
        frac = (np.arange(1, m + 1) / n_fine)[None, None, :, None]
        vals += field.drift(left)[:, :, None, :] * frac
    if config.uses_correction:
        run = running_increments(increments, level)
        if config.scheme_kind in TRUNCATED_KINDS:
            run = config.cutoff.evaluate(run)
        partial_j = np.cumsum(run[..., :, None] * sub[..., None, :], axis=-3)
        vals += np.einsum("bnikl,bnmlk->bnmi", field.milstein_tensor(left), partial_j)
    vals += left[:, :, None, :]
    dense = np.empty((batch, n_fine + 1, field.dim_state))
    dense[:, 0] = xs[:, 0]
    dense[:, 1:] = vals.reshape(batch, n_fine, field.dim_state)
    # grid points carry the exact recursion values
    dense[:, ::m] = xs
    return dense


def simulate(field: CoefficientField, config: SchemeConfig, lattice: BrownianLattice, dense: bool = False):
    """Single-path trajectory driven by ``lattice``."""
    try:
        return simulate_batch(field, config, lattice.increments[None], dense, [lattice.path_index])[0]
    except NumericalBlowupError as exc:
        exc.path_index = lattice.path_index
        raise


def simulate_ensemble(
    field: CoefficientField,
    config: SchemeConfig,
    seed: int,
    path_count: int,
    dense: bool = False,
    level_ref: int | None = None,
    batch_size: int = 256,
) -> PathEnsemble:
    """Paths ``0 .. path_count-1`` of ``config``, each on its own keyed lattice."""
    if path_count < 1:
        raise ConfigurationError(f"path_count must be >= 1, got {path_count}")
    if level_ref is None:
        level_ref = config.level + (MIN_SUBSTEP_GAP if config.uses_correction else 0)
    indices = np.arange(path_count)
    chunks = []
    blown = []
    for start in range(0, path_count, batch_size):
        idx = indices[start : start + batch_size]
        incs = generate_increments(field.dim_noise, level_ref, seed, idx)
        vals = simulate_batch(field, config, incs, dense, idx, on_blowup="mask")
        blown.extend(int(i) for i in idx[np.isnan(vals).any(axis=(1, 2))])
        chunks.append(vals)
    if len(blown) > MAX_BLOWUP_FRACTION * path_count:
        raise NumericalBlowupError(
            f"{len(blown)} of {path_count} paths blew up (first: {blown[0]})",
            path_index=blown[0],
        )
    return PathEnsemble(config, seed, level_ref, indices, np.concatenate(chunks), dense, blown)
