"""Driving Brownian motion on a dyadic lattice.

A lattice holds the ``2**level_ref`` fine increments of one path. Coarser
increments are built by pairwise (dyadic tree) summation, so level ``l - 1`` is
bitwise the pairwise sum of level ``l``. Increments come from a Philox stream
keyed by ``(seed, path_index)``; the raw draw at position ``step * d1 + comp``
feeds the Gaussian for that step and component, so any path can be rebuilt in
isolation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import InvalidLevelError, InvalidParameterError, ResourceGuardError

MAX_LEVEL = 24
MIN_SUBSTEP_GAP = 4
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class BrownianLattice:
    dim_noise: int
    level_ref: int
    increments: np.ndarray
    seed: int
    path_index: int

    @property
    def n_ref(self):
        return 1 << self.level_ref

    @property
    def endpoint(self):
        return coarse_increments(self.increments, 0)[0]

    def path(self):
        """W at every fine grid point, ``shape (2**L + 1, d1)``."""
        return brownian_path(self.increments)


@dataclass(frozen=True)
class IteratedIntegrals:
    level: int
    values: np.ndarray
    increments: np.ndarray
    quadratic: np.ndarray


def _check_level_ref(level_ref):
    if not 1 <= level_ref <= MAX_LEVEL:
        raise ResourceGuardError(f"level_ref must lie in [1, {MAX_LEVEL}], got {level_ref}")


def _uniforms(seed, path_index, count):
    key = np.array([seed & _MASK64, path_index & _MASK64], dtype=np.uint64)
    raw = np.random.Philox(key=key).random_raw(count)
    # 53 high bits, shifted to the open interval (0, 1)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def generate_increments(dim_noise, level_ref, seed, path_indices) -> np.ndarray:
    """Fine increments for several paths, ``shape (len(path_indices), 2**L, d1)``."""
    _check_level_ref(level_ref)
    if dim_noise < 1:
        raise InvalidParameterError(f"dim_noise must be >= 1, got {dim_noise}")
    n = 1 << level_ref
    scale = np.sqrt(1.0 / n)
    path_indices = np.atleast_1d(path_indices)
    out = np.empty((len(path_indices), n, dim_noise))
    for row, p in enumerate(path_indices):
        u = _uniforms(int(seed), int(p), n * dim_noise)
        out[row] = (ndtri(u) * scale).reshape(n, dim_noise)
    return out


def generate_lattice(dim_noise: int, level_ref: int, seed: int, path_index: int) -> BrownianLattice:
    incs = generate_increments(dim_noise, level_ref, seed, [path_index])[0]
    incs.flags.writeable = False
    return BrownianLattice(dim_noise, level_ref, incs, int(seed), int(path_index))


def _as_increments(lattice_or_array):
    if isinstance(lattice_or_array, BrownianLattice):
        return lattice_or_array.increments
    return np.asarray(lattice_or_array, dtype=float)


def _level_of(incs):
    n = incs.shape[-2]
    level = n.bit_length() - 1
    if n != 1 << level:
        raise InvalidLevelError(f"number of increments {n} is not a power of two")
    return level


def coarse_increments(lattice, level: int) -> np.ndarray:
    """Increments at ``level``: each entry is the dyadic-tree sum of its fine children.

    Accepts a lattice or an array ``(..., 2**L, d1)``.
    """
    incs = _as_increments(lattice)
    level_ref = _level_of(incs)
    if not 0 <= level <= level_ref:
        raise InvalidLevelError(f"level must lie in [0, {level_ref}], got {level}")
    out = incs
    for _ in range(level_ref - level):
        out = out[..., 0::2, :] + out[..., 1::2, :]
    return out


def brownian_path(lattice) -> np.ndarray:
    incs = _as_increments(lattice)
    zero = np.zeros(incs.shape[:-2] + (1, incs.shape[-1]))
    return np.concatenate([zero, np.cumsum(incs, axis=-2)], axis=-2)


def _substeps(incs, level):
    level_ref = _level_of(incs)
    if not 0 <= level <= level_ref:
        raise InvalidLevelError(f"level must lie in [0, {level_ref}], got {level}")
    n, m = 1 << level, 1 << (level_ref - level)
    return incs.reshape(incs.shape[:-2] + (n, m, incs.shape[-1]))


def running_increments(incs, level) -> np.ndarray:
    """``W_{u_i} - W_s`` at the left point of every fine sub-step.

    Shape ``(..., n, m, d1)``; the first sub-step of each coarse step is 0.
    """
    sub = _substeps(incs, level)
    out = np.zeros_like(sub)
    np.cumsum(sub[..., :-1, :], axis=-2, out=out[..., 1:, :])
    return out


def subsummed_integrals(incs, level, cutoff=None) -> np.ndarray:
    """Left-point sums ``J^{jl} = sum_i g(W^j_{u_i} - W^j_s) dW^l_i`` per coarse step.

    ``g`` is the identity, or the cutoff when one is given. No refinement
    check: with one sub-step per coarse step the result is 0.
    """
    incs = _as_increments(incs)
    sub = _substeps(incs, level)
    run = running_increments(incs, level)
    if cutoff is not None:
        run = cutoff.evaluate(run)
    return np.einsum("...mj,...ml->...jl", run, sub)


def iterated_integrals(lattice, level: int) -> IteratedIntegrals:
    incs = _as_increments(lattice)
    level_ref = _level_of(incs)
    if level > level_ref - MIN_SUBSTEP_GAP or level < 0:
        raise InvalidLevelError(
            f"iterated integrals need level <= level_ref - {MIN_SUBSTEP_GAP} "
            f"(= {level_ref - MIN_SUBSTEP_GAP}), got {level}"
        )
    sub = _substeps(incs, level)
    return IteratedIntegrals(
        level=level,
        values=subsummed_integrals(incs, level),
        increments=coarse_increments(incs, level),
        quadratic=np.einsum("...mj,...ml->...jl", sub, sub),
    )


def good_event_indicator(lattice, level: int, kappa: float, anchor: str = "left"):
    """True where every within-step oscillation stays strictly below ``kappa/2``.

    The oscillation is measured on the fine sub-grid (both endpoints included)
    relative to the step's left endpoint, or its right endpoint with
    ``anchor="right"``. Returns a bool, or a bool array for batched input.
    """
    if anchor not in ("left", "right"):
        raise InvalidParameterError(f"anchor must be 'left' or 'right', got {anchor!r}")
    incs = _as_increments(lattice)
    sub = _substeps(incs, level)
    partial = np.cumsum(sub, axis=-2)
    if anchor == "left":
        dev = np.abs(partial)
    else:
        dev = np.abs(partial - partial[..., -1:, :])
    worst = dev.max(axis=(-3, -2, -1))
    if anchor == "right":
        worst = np.maximum(worst, np.abs(partial[..., -1, :]).max(axis=(-2, -1)))
    ok = worst < 0.5 * kappa
    return bool(ok) if np.ndim(ok) == 0 else ok


_HEADER = struct.Struct("<4Q")


def dump_lattice(lattice: BrownianLattice, path) -> None:
    """Binary dump: 4 little-endian uint64 (d1, level, seed, path_index), then f64 increments."""
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                lattice.dim_noise,
                lattice.level_ref,
                lattice.seed & _MASK64,
                lattice.path_index & _MASK64,
            )
        )
        fh.write(np.ascontiguousarray(lattice.increments, dtype="<f8").tobytes())


def load_lattice(path) -> BrownianLattice:
    with open(path, "rb") as fh:
        d1, level, seed, path_index = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<f8")
    _check_level_ref(level)
    incs = data.reshape(1 << level, d1).astype(float)
    incs.flags.writeable = False
    return BrownianLattice(int(d1), int(level), incs, int(seed), int(path_index))
