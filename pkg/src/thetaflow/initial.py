"""Initial data generators.

Every generator returns a zero-mean :class:`PerturbationState` scaled so that
``||(a^l, u, b^l)||_{B^{n/2-1}} + ||(a^h, b^h)||_{B^{n/2}}`` equals ``c0``.
"""

from __future__ import annotations

import numpy as np

from thetaflow.config import RunConfig
from thetaflow.errors import ConfigurationError
from thetaflow.evolve import acoustic_eigenvalues, checkpoint_load
from thetaflow.ledger import theorem_norm
from thetaflow.littlewood_paley import INNER, build_filter_bank
from thetaflow.model import PerturbationState, check_floor
from thetaflow.spectral import Grid, band_limited_coeffs


def band_moduli(grid: Grid, j_lo: int, j_hi: int) -> tuple[float, float]:
    """Modulus range ``[3/4 2^j_lo, 8/3 2^j_hi]`` covered by blocks ``j_lo..j_hi``."""
    return INNER * 2.0**j_lo, (8.0 / 3.0) * 2.0**j_hi


def _index_band(grid: Grid, kmax: float) -> int:
    # stay inside the dealiased cube with a margin for pointwise nonlinearities
    return int(min(grid.N // 4, np.floor(kmax * grid.L)))


def _check_band(grid: Grid, cfg: RunConfig) -> tuple[float, float]:
    kmin, kmax = band_moduli(grid, cfg.band_lo, cfg.band_hi)
    bank = build_filter_bank(grid, cfg.j0)
    if cfg.band_lo < bank.j_min or cfg.band_hi > bank.j_max:
        raise ConfigurationError(
            f"band [{cfg.band_lo}, {cfg.band_hi}] outside the grid's blocks [{bank.j_min}, {bank.j_max}]")
    return kmin, kmax


def _normalize(state: PerturbationState, cfg: RunConfig, bank) -> PerturbationState:
    norm = theorem_norm(bank, state)
    if cfg.c0 == 0 or norm == 0:
        return PerturbationState.zeros(state.grid)
    scale = cfg.c0 / norm
    a, u, b = (x * scale for x in state.arrays())
    out = PerturbationState.from_arrays(state.grid, a, u, b)
    check_floor(out.a.physical(), cfg.floor)
    return out


def random_band(grid: Grid, cfg: RunConfig) -> PerturbationState:
    kmin, kmax = _check_band(grid, cfg)
    rng = np.random.default_rng(cfg.seed)
    m = _index_band(grid, kmax)
    a = band_limited_coeffs(grid, rng, m, 1, kmin, kmax)
    u = band_limited_coeffs(grid, rng, m, grid.n, kmin, kmax)
    b = band_limited_coeffs(grid, rng, m, 1, kmin, kmax)
    return PerturbationState.from_arrays(grid, a, u, b)


def taylor_green(grid: Grid, cfg: RunConfig) -> PerturbationState:
    """Divergence-free cellular vortex ``(sin x cos y, -cos x sin y)`` at the lowest lattice wavenumber."""
    x = grid.x / grid.L
    u = np.zeros((grid.n,) + grid.shape)
    u[0] = np.sin(x[0]) * np.cos(x[1])
    u[1] = -np.cos(x[0]) * np.sin(x[1])
    z = np.zeros(grid.shape, dtype=complex)
    return PerturbationState.from_arrays(grid, z, grid.to_spectral(u), z.copy())


def single_mode_index(grid: Grid, j: int) -> tuple[int, ...]:
    """A lattice index whose modulus lies in ``2^j [4/3, 3/2]``, where only block ``j`` is nonzero."""
    lo, hi = 4.0 / 3.0 * 2.0**j, 1.5 * 2.0**j
    best = None
    for m0 in range(0, grid.N // 3 + 1):
        for m1 in range(0, grid.N // 3 + 1):
            r = np.hypot(m0, m1) / grid.L
            if lo <= r <= hi and (best is None or r < best[0]):
                best = (r, m0, m1)
    if best is None:
        raise ConfigurationError(f"no lattice mode isolates block {j} on {grid}")
    return (best[1], best[2]) + (0,) * (grid.n - 2)


def single_mode(grid: Grid, cfg: RunConfig) -> PerturbationState:
    _check_band(grid, cfg)
    m = single_mode_index(grid, cfg.band_lo)
    b = np.zeros(grid.shape, dtype=complex)
    b[m] = 0.5
    b[tuple(-x % grid.N for x in m)] = 0.5
    z = np.zeros(grid.shape, dtype=complex)
    return PerturbationState.from_arrays(grid, z, np.zeros((grid.n,) + grid.shape, dtype=complex), b)


def slow_branch(grid: Grid, cfg: RunConfig) -> PerturbationState:
    """Kernel component plus the slowly decaying acoustic branch, no divergence-free velocity.

    Per mode, ``(b, v)`` is an eigenvector of the acoustic block for the slow
    root, so ``|b(k, t)|`` decays monotonically in the linear flow; ``a`` adds
    an independent random kernel part ``gamma a - b``.
    """
    kmin, kmax = _check_band(grid, cfg)
    rng = np.random.default_rng(cfg.seed)
    m = _index_band(grid, kmax)
    phi = band_limited_coeffs(grid, rng, m, 1, kmin, kmax)
    b = band_limited_coeffs(grid, rng, m, 1, kmin, kmax)
    gam = cfg.gamma
    slow, _ = acoustic_eigenvalues(grid.kmod, gam, cfg.lam + 2 * cfg.mu)
    slow = np.where(grid.upper_half, slow, np.conj(slow))
    v = -slow * b / (gam * grid.kmod_safe)
    v[grid.zero] = 0.0
    u = -1j * grid.khat * v
    a = (phi + b) / gam
    return PerturbationState.from_arrays(grid, a, u, b)


def make_initial(cfg: RunConfig) -> PerturbationState:
    """Initial state for ``cfg``; deterministic given the seed."""
    grid = cfg.grid()
    if cfg.kind == "checkpoint":
        state, _ = checkpoint_load(cfg.checkpoint)
        if state.grid != grid:
            raise ConfigurationError(f"checkpoint grid {state.grid} differs from configured {grid}")
        return state
    bank = build_filter_bank(grid, cfg.j0)
    raw = {
        "random-band": random_band,
        "taylor-green": taylor_green,
        "single-mode": single_mode,
        "slow-branch": slow_branch,
    }[cfg.kind](grid, cfg)
    return _normalize(raw, cfg, bank)
