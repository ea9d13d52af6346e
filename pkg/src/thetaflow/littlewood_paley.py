"""Dyadic frequency decomposition and homogeneous Besov norms on the grid.

The low-pass profile is the smooth radial bump

    chi(r) = h(4/3 - r) / (h(4/3 - r) + h(r - 3/4)),   h(t) = exp(-1/t) for t > 0,

equal to 1 on ``r <= 3/4`` and 0 on ``r >= 4/3``.  The annular profiles are
``psi(r) = chi(r/2) - chi(r)``, supported in ``[3/4, 8/3]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from thetaflow.errors import ConfigurationError, OutOfRangeWarning, PreconditionError
from thetaflow.spectral import Grid, SpectralField

INNER = 3.0 / 4.0
OUTER = 4.0 / 3.0


def _h(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def chi(r):
    """Smooth non-increasing radial cutoff: 1 on [0, 3/4], 0 beyond 4/3."""
    r = np.abs(np.asarray(r, dtype=float))
    up = _h(OUTER - r)
    down = _h(r - INNER)
    total = up + down
    out = np.where(r <= INNER, 1.0, 0.0)
    mid = (r > INNER) & (r < OUTER)
    out = np.where(mid, up / np.where(mid, total, 1.0), out)
    return out if out.ndim else float(out)


def psi(r):
    return chi(np.asarray(r, dtype=float) / 2.0) - chi(r)


@dataclass(frozen=True, eq=False)
class FilterBank:
    """Sampled Littlewood-Paley cutoffs on a grid.

    ``chi_scales[i]`` holds ``chi(2^-(j_min+i) |k|)`` for ``i = 0 .. nj``, so that
    ``psi[i] = chi_scales[i+1] - chi_scales[i]`` is the block ``j = j_min + i``.
    """

    grid: Grid
    j_min: int
    j_max: int
    j0: int
    chi_scales: np.ndarray
    psi: np.ndarray

    @property
    def j_range(self) -> range:
        return range(self.j_min, self.j_max + 1)

    @property
    def js(self) -> np.ndarray:
        return np.arange(self.j_min, self.j_max + 1)

    @property
    def low_mask(self) -> np.ndarray:
        """Boolean over blocks: ``j <= j0``."""
        return self.js <= self.j0

    def psi_j(self, j: int) -> np.ndarray:
        return self.psi[j - self.j_min]

    def chi_j(self, j: int) -> np.ndarray:
        """``chi(2^-j |k|)``, valid for ``j_min <= j <= j_max + 1``; clamped outside."""
        i = min(max(j - self.j_min, 0), len(self.chi_scales) - 1)
        if j < self.j_min:
            return np.zeros(self.grid.shape)
        return self.chi_scales[i]

    @property
    def low_symbol(self) -> np.ndarray:
        """Multiplier of the low-frequency part, ``sum_{j<=j0} psi_j``."""
        return self.chi_scales[self.j0 + 1 - self.j_min] - self.chi_scales[0]

    @property
    def high_symbol(self) -> np.ndarray:
        return self.chi_scales[-1] - self.chi_scales[self.j0 + 1 - self.j_min]

    def block_norms(self, coeffs: np.ndarray, weight: np.ndarray | None = None) -> np.ndarray:
        """L2 norms of every dyadic block of ``coeffs`` (times optional multiplier ``weight``)."""
        g = self.grid
        power = np.abs(coeffs) ** 2
        if power.ndim > g.n:
            power = power.reshape((-1,) + g.shape).sum(axis=0)
        if weight is not None:
            power = power * np.abs(weight) ** 2
        flat = (self.psi**2).reshape(len(self.psi), -1)
        return np.sqrt(g.volume * (flat @ power.ravel()))


def build_filter_bank(grid: Grid, j0: int = 1) -> FilterBank:
    """Sample ``chi`` and ``psi`` on ``grid`` with blocks covering every nonzero mode."""
    moduli = grid.moduli()
    if len(moduli) < 2:
        raise ConfigurationError("grid needs at least two distinct nonzero moduli")
    kmin, kmax = float(moduli[0]), float(grid.kmod.max())
    # chi(2^-j_min kmin) = 0 and chi(2^-(j_max+1) kmax) = 1
    j_min = int(np.floor(np.log2(INNER * kmin)))
    j_max = int(np.ceil(np.log2(kmax / INNER))) - 1
    if not j_min <= j0 < j_max:
        raise ConfigurationError(
            f"j0={j0} not inside the resolved range [{j_min}, {j_max - 1}] for {grid}")
    scales = np.stack([chi(2.0 ** (-j) * grid.kmod) for j in range(j_min, j_max + 2)])
    psi_arr = scales[1:] - scales[:-1]
    return FilterBank(grid, j_min, j_max, int(j0), scales, psi_arr)


def dyadic_block(bank: FilterBank, j: int, z: SpectralField) -> SpectralField:
    """``psi(2^-j D) z``; a zero field (with a warning) when ``j`` is outside the bank."""
    if j not in bank.j_range:
        warnings.warn(f"block j={j} outside [{bank.j_min}, {bank.j_max}]", OutOfRangeWarning, stacklevel=2)
        return SpectralField(z.grid, np.zeros_like(z.coeffs))
    return SpectralField(z.grid, z.coeffs * bank.psi_j(j))


def low_cutoff(bank: FilterBank, j: int, z: SpectralField) -> SpectralField:
    """``chi(2^-j D) z``; the zero mode is dropped (homogeneous convention)."""
    if j > bank.j_max + 1:
        sym = np.ones(z.grid.shape)
    else:
        sym = bank.chi_j(j).copy()
    sym[z.grid.zero] = 0.0
    return SpectralField(z.grid, z.coeffs * sym)


def weighted_sum(norms: np.ndarray, js: np.ndarray, s: float, r: float = 1.0) -> float:
    terms = 2.0 ** (s * js) * norms
    if np.isinf(r):
        return float(terms.max(initial=0.0))
    return float(np.sum(terms**r) ** (1.0 / r))


def besov_norm(bank: FilterBank, z: SpectralField, s: float, r: float = 1.0) -> float:
    """Homogeneous ``B^s_{2,r}`` norm: l^r over j of ``2^(js) ||Delta_j z||_L2``."""
    if r < 1:
        raise PreconditionError("summability index must be >= 1")
    return weighted_sum(bank.block_norms(z.coeffs), bank.js, s, r)


def split_low_high(bank: FilterBank, z: SpectralField) -> tuple[SpectralField, SpectralField]:
    """``z^l = sum_{j<=j0} Delta_j z`` and ``z^h = sum_{j>j0} Delta_j z``."""
    return (SpectralField(z.grid, z.coeffs * bank.low_symbol),
            SpectralField(z.grid, z.coeffs * bank.high_symbol))


def chemin_lerner_accumulate(times, block_norms, js, s: float, q: float) -> float:
    """Chemin-Lerner norm from a time-stamped table of block L2 norms.

    ``block_norms`` has shape ``(len(times), len(js))``.  For ``q = inf`` the
    per-block maximum over samples is taken, for ``q = 1`` the per-block
    trapezoidal time integral; either is then l^1-summed with weights ``2^(js)``.
    """
    times = np.asarray(times, dtype=float)
    table = np.asarray(block_norms, dtype=float)
    if times.size == 0:
        return 0.0
    weights = 2.0 ** (s * np.asarray(js))
    if np.isinf(q):
        per_block = table.max(axis=0)
    elif q == 1:
        if times.size == 1:
            return 0.0
        per_block = np.trapezoid(table, times, axis=0)
    else:
        if times.size == 1:
            return 0.0
        per_block = np.trapezoid(table**q, times, axis=0) ** (1.0 / q)
    return float(np.sum(weights * per_block))


def bernstein_ratio(bank: FilterBank, z: SpectralField, j: int, order: int) -> float:
    """``||grad^order z|| / (2^(j*order) ||z||)`` for a field localized in block ``j``."""
    g = z.grid
    power = np.abs(z.coeffs) ** 2
    if power.ndim > g.n:
        power = power.reshape((-1,) + g.shape).sum(axis=0)
    total = power.sum()
    if total == 0:
        raise PreconditionError("bernstein_ratio needs a nonzero field")
    lo, hi = INNER * 2.0**j, 8.0 / 3.0 * 2.0**j
    outside = power[(g.kmod < lo * (1 - 1e-12)) | (g.kmod > hi * (1 + 1e-12))].sum()
    if outside > 1e-24 * total:
        raise PreconditionError(f"field is not localized in the annulus of block {j}")
    num = np.sum(g.kmod ** (2 * order) * power)
    return float(np.sqrt(num / total) / 2.0 ** (j * order))
