"""Randomized probes of the harmonic-analysis inequalities used by the energy method.

Each probe draws band-limited random fields whose coefficients do not depend
on the grid size (see :func:`band_limited_coeffs`), evaluates both sides of an
inequality with constant 1, and reports the supremum of ``lhs / rhs`` over the
trials.  Quadratic expressions are exact on the grid as long as twice the
index band stays below ``N/2``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from thetaflow.errors import ConfigurationError
from thetaflow.littlewood_paley import FilterBank, chemin_lerner_accumulate, weighted_sum
from thetaflow.spectral import band_limited_coeffs

DEFAULT_BAND = 8


class ProbeResult(NamedTuple):
    name: str
    sup_ratio: float
    trials: int
    skipped: int


def _besov(bank: FilterBank, coeffs: np.ndarray, s: float) -> float:
    return weighted_sum(bank.block_norms(coeffs), bank.js, s)


def _check_band(bank: FilterBank, m_max: int) -> None:
    if 4 * m_max >= bank.grid.N:
        raise ConfigurationError(f"index band {m_max} too wide for exact products on N={bank.grid.N}")


def _sup(name, ratios, trials):
    vals = [r for r in ratios if r is not None]
    sup = float(max(vals)) if vals else np.nan
    return ProbeResult(name, sup, trials, trials - len(vals))


def probe_product(bank: FilterBank, rng, trials: int, m_max: int = DEFAULT_BAND,
                  s1: float | None = None, s2: float | None = None, zero_second: bool = False) -> ProbeResult:
    """``||f g||_{B^{s1+s2-n/2}} <= ||f||_{B^{s1}} ||g||_{B^{s2}}`` (default ``s1 = s2 = n/2``)."""
    g = bank.grid
    _check_band(bank, m_max)
    s1 = g.n / 2 if s1 is None else s1
    s2 = g.n / 2 if s2 is None else s2
    ratios = []
    for _ in range(trials):
        f = band_limited_coeffs(g, rng, m_max)
        h = band_limited_coeffs(g, rng, m_max)
        if zero_second:
            h[:] = 0.0
        prod = g.to_spectral(g.to_physical(f) * g.to_physical(h))
        rhs = _besov(bank, f, s1) * _besov(bank, h, s2)
        ratios.append(_besov(bank, prod, s1 + s2 - g.n / 2) / rhs if rhs > 0 else None)
    return _sup("product", ratios, trials)


def commutator_sum(bank: FilterBank, w: np.ndarray, f: np.ndarray, s: float) -> float:
    """``sum_j 2^{js} ||[Delta_j, w.grad] f||`` for coefficient arrays ``w`` (vector) and ``f``."""
    g = bank.grid
    w_p = g.to_physical(w)
    adv = g.to_spectral(np.sum(w_p * g.to_physical(g.grad(f)), axis=0))
    total = 0.0
    for j in bank.j_range:
        psi = bank.psi_j(j)
        inner = g.to_spectral(np.sum(w_p * g.to_physical(g.grad(psi * f)), axis=0))
        total += 2.0 ** (j * s) * g.norm2(psi * adv - inner)
    return total


def probe_commutator(bank: FilterBank, rng, trials: int, m_max: int = DEFAULT_BAND,
                     s: float | None = None) -> ProbeResult:
    """``sum_j 2^{js} ||[Delta_j, w.grad] f|| <= ||grad w||_{B^{n/2}} ||f||_{B^s}`` (default ``s = n/2 - 1``)."""
    g = bank.grid
    _check_band(bank, m_max)
    s = g.n / 2 - 1 if s is None else s
    ratios = []
    for _ in range(trials):
        f = band_limited_coeffs(g, rng, m_max)
        w = band_limited_coeffs(g, rng, m_max, g.n)
        rhs = _besov(bank, g.grad(w), g.n / 2) * _besov(bank, f, s)
        ratios.append(commutator_sum(bank, w, f, s) / rhs if rhs > 0 else None)
    return _sup("commutator", ratios, trials)


def probe_composition(bank: FilterBank, rng, trials: int, m_max: int = DEFAULT_BAND,
                      s: float | None = None, sup: float = 0.5) -> ProbeResult:
    """``||I(f)||_{B^s} <= ||f||_{B^s}`` for ``I(f) = f/(1+f)`` with ``sup |f| <= 0.5``."""
    g = bank.grid
    _check_band(bank, m_max)
    s = g.n / 2 if s is None else s
    ratios = []
    for _ in range(trials):
        f = band_limited_coeffs(g, rng, m_max)
        # the coefficient l1 norm bounds the sup norm independently of N
        l1 = np.abs(f).sum()
        f = f * (sup * rng.uniform(0.1, 1.0) / l1) if l1 > 0 else f
        fp = g.to_physical(f)
        comp = g.to_spectral(fp / (1.0 + fp))
        rhs = _besov(bank, f, s)
        ratios.append(_besov(bank, comp, s) / rhs if rhs > 0 else None)
    return _sup("composition", ratios, trials)


def heat_solution_blocks(bank: FilterBank, u0: np.ndarray, f: np.ndarray, mu: float, times) -> np.ndarray:
    """Block norms of the exact solution of ``u_t - mu Lap u = f`` (``f`` constant in time)."""
    g = bank.grid
    k2 = g.k2
    out = []
    with np.errstate(invalid="ignore", divide="ignore"):
        for t in times:
            decay = np.exp(-mu * k2 * t)
            gain = np.where(k2 > 0, (1.0 - decay) / (mu * np.where(k2 > 0, k2, 1.0)), t)
            out.append(bank.block_norms(decay * u0 + gain * f))
    return np.array(out)


def probe_heat(bank: FilterBank, rng, trials: int, m_max: int = DEFAULT_BAND, mu: float = 1.0,
               T: float = 1.0, samples: int = 201, forced: bool = True) -> ProbeResult:
    """``||u||_{L~inf(B^s)} + mu ||u||_{L1(B^{s+2})} <= ||u0||_{B^s} + ||f||_{L1(B^s)}`` at ``s = n/2 - 1``."""
    g = bank.grid
    s = g.n / 2 - 1
    times = np.linspace(0.0, T, samples)
    ratios = []
    for _ in range(trials):
        u0 = band_limited_coeffs(g, rng, m_max)
        f = band_limited_coeffs(g, rng, m_max) if forced else np.zeros_like(u0)
        tab = heat_solution_blocks(bank, u0, f, mu, times)
        lhs = (chemin_lerner_accumulate(times, tab, bank.js, s, np.inf)
               + mu * chemin_lerner_accumulate(times, tab, bank.js, s + 2, 1))
        rhs = _besov(bank, u0, s) + T * _besov(bank, f, s)
        ratios.append(lhs / rhs if rhs > 0 else None)
    return _sup("heat", ratios, trials)


def lemma_probes(bank: FilterBank, trials: int = 100, seed: int = 0,
                 m_max: int = DEFAULT_BAND) -> dict[str, ProbeResult]:
    """Empirical constants of the product, commutator, composition and heat inequalities."""
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    out = {}
    for i, probe in enumerate((probe_product, probe_commutator, probe_composition, probe_heat)):
        rng = np.random.default_rng([seed, i])
        res = probe(bank, rng, trials, m_max)
        out[res.name] = res
    return out
