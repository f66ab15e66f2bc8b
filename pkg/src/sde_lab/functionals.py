"""Path functionals: sup distance, additive functionals, Girsanov weight, local residual.

Paths are arrays ``(..., npts, d)`` on a dyadic grid with ``npts = 2**L + 1``;
a leading batch axis is allowed everywhere. "Dense" means observed on the fine
lattice grid, which is what the time integrals below need.
"""

from __future__ import annotations

import numpy as np

from .brownian import brownian_path, running_increments, _substeps
from .coefficients import CoefficientField, Cutoff
from .errors import ConfigurationError, IncompatiblePathsError, NumericalError
from .schemes import PathEnsemble


def _values(path):
    if isinstance(path, PathEnsemble):
        if not path.dense:
            raise ConfigurationError("functional needs a dense ensemble (fine-grid observations)")
        return path.values
    return np.asarray(path, dtype=float)


def grid_level(path) -> int:
    npts = np.shape(path)[-2]
    level = (npts - 1).bit_length() - 1
    if npts - 1 != 1 << level:
        raise IncompatiblePathsError(f"{npts} grid points is not 2**L + 1")
    return level


def coarse_anchor_index(fine_level: int, level: int) -> np.ndarray:
    """For every fine grid index, the index of its coarse left endpoint ``k_n(t)``."""
    if level > fine_level:
        raise ConfigurationError(f"coarse level {level} is finer than the path grid {fine_level}")
    m = 1 << (fine_level - level)
    return (np.arange((1 << fine_level) + 1) // m) * m


def sup_distance(path_a, path_b):
    """Largest Euclidean distance between two paths on the same grid."""
    a, b = _raw(path_a), _raw(path_b)
    if a.shape[-2:] != b.shape[-2:]:
        raise IncompatiblePathsError(f"grid mismatch: {a.shape} vs {b.shape}")
    return np.linalg.norm(a - b, axis=-1).max(axis=-1)


def _raw(path):
    return path.values if isinstance(path, PathEnsemble) else np.asarray(path, dtype=float)


def additive_integral(h, f, path, level: int):
    """Running integral ``int_0^t h(X_r) (f(X_r) - f(X_{k_n(r)})) dr`` at fine times ``t > 0``.

    ``h`` and ``f`` map ``(..., d) -> (...)``; left-point rectangle rule on
    the fine grid. Linear in ``h`` and in ``f``.
    """
    x = _values(path)
    fine = grid_level(x)
    if level > fine:
        raise ConfigurationError(f"path grid level {fine} is coarser than level {level}")
    anchor = coarse_anchor_index(fine, level)
    left = x[..., :-1, :]
    integrand = h(left) * (f(left) - f(x[..., anchor[:-1], :]))
    return np.cumsum(integrand, axis=-1) / (1 << fine)


def additive_functional(h, f, path, level: int):
    """``sup_t |int_0^t h(X_r) (f(X_r) - f(X_{k_n(r)})) dr|`` over fine grid times."""
    return np.abs(additive_integral(h, f, path, level)).max(axis=-1)


def local_expansion_residual(field: CoefficientField, f, grad_f, path, increments, level: int):
    """``f(X_t) - f(X_k) - [grad f sigma](X_k) (W_t - W_k)`` at every fine time.

    ``X_k`` is the scheme at the coarse left endpoint ``k_n(t)``. Exactly zero
    at coarse grid points.
    """
    x = _values(path)
    fine = grid_level(x)
    w = brownian_path(increments)
    if w.shape[-2] != x.shape[-2]:
        raise IncompatiblePathsError("path and lattice live on different grids")
    anchor = coarse_anchor_index(fine, level)
    xk = x[..., anchor, :]
    gs = np.einsum("...i,...ik->...k", grad_f(xk), field.diffusion(xk))
    lin = np.sum(gs * (w - w[..., anchor, :]), axis=-1)
    return f(x) - f(xk) - lin


def girsanov_weight(field: CoefficientField, cutoff: Cutoff, path, increments, level: int):
    """Exponential weight turning the driftless truncated scheme into the drifted one.

    ``rho = exp(-sum v . dW - 1/2 sum |v|^2 dt)`` over fine sub-steps, with
    ``v = (sigma + M chi(W_u - W_s))^{-1} b`` frozen at the coarse left
    endpoint. ``path`` may be dense or coarse; only grid values are read.
    """
    if field.dim_state != field.dim_noise:
        raise ConfigurationError("Girsanov weight needs square sigma (d1 == d)")
    x = _raw(path)
    incs = np.asarray(increments, dtype=float)
    fine = incs.shape[-2].bit_length() - 1
    stride = (x.shape[-2] - 1) >> level
    xk = x[..., :-1:stride, :][..., : 1 << level, :]
    sub = _substeps(incs, level)
    run = cutoff.evaluate(running_increments(incs, level))
    mat = field.diffusion(xk)[..., None, :, :] + np.einsum(
        "...nikl,...nml->...nmik", field.milstein_tensor(xk), run
    )
    b = np.broadcast_to(field.drift(xk)[..., None, :], mat.shape[:-1])
    try:
        v = np.linalg.solve(mat, b[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        det = np.linalg.det(mat)
        bad = np.unravel_index(int(np.argmin(np.abs(det))), det.shape)
        raise NumericalError("singular diffusion in Girsanov weight", witness=mat[bad]) from exc
    stoch = np.sum(v * sub, axis=(-3, -2, -1))
    quad = np.sum(v * v, axis=(-3, -2, -1)) / (1 << fine)
    return np.exp(-stoch - 0.5 * quad)
