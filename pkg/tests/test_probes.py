import numpy as np
import pytest

from thetaflow.errors import ConfigurationError
from thetaflow.littlewood_paley import besov_norm, build_filter_bank, chemin_lerner_accumulate
from thetaflow.probes import (
    commutator_sum,
    heat_solution_blocks,
    lemma_probes,
    probe_commutator,
    probe_composition,
    probe_heat,
    probe_product,
)
from thetaflow.spectral import Grid, SpectralField, band_limited_coeffs


def test_product_with_zero_factor_is_skipped(bank64, rng):
    res = probe_product(bank64, rng, 5, zero_second=True)
    assert res.skipped == 5 and np.isnan(res.sup_ratio)


def test_product_with_proportional_factor(bank64, rng):
    g = bank64.grid
    f = band_limited_coeffs(g, rng, 6)
    prod = g.to_spectral(g.to_physical(f) * g.to_physical(-3.0 * f))
    F, P = SpectralField(g, f), SpectralField(g, prod)
    ratio = besov_norm(bank64, P, 1.0) / (besov_norm(bank64, F, 1.0) * besov_norm(bank64, F * -3.0, 1.0))
    assert np.isfinite(ratio) and ratio > 0


def test_commutator_with_constant_field_vanishes(bank64, rng):
    g = bank64.grid
    w = np.zeros((2,) + g.shape, complex)
    w[(slice(None),) + g.zero] = [0.7, -1.3]
    f = band_limited_coeffs(g, rng, 6)
    assert commutator_sum(bank64, w, f, 0.0) < 1e-13 * besov_norm(bank64, SpectralField(g, f), 0.0)


def test_heat_single_mode_sup_is_initial_norm(bank64):
    g = bank64.grid
    u0 = np.zeros(g.shape, complex)
    u0[3, 1] = u0[-3, -1] = 0.5
    times = np.linspace(0, 1, 51)
    tab = heat_solution_blocks(bank64, u0, np.zeros_like(u0), 1.0, times)
    sup = chemin_lerner_accumulate(times, tab, bank64.js, 0.0, np.inf)
    assert sup == pytest.approx(besov_norm(bank64, SpectralField(g, u0), 0.0), rel=1e-14)


@pytest.mark.parametrize("probe", [probe_product, probe_commutator, probe_composition, probe_heat])
def test_probe_constants_finite(bank64, probe):
    res = probe(bank64, np.random.default_rng(0), 4)
    assert np.isfinite(res.sup_ratio) and res.sup_ratio > 0 and res.skipped == 0


def test_composition_respects_sup_bound(bank64):
    g = bank64.grid
    rng = np.random.default_rng(3)
    f = band_limited_coeffs(g, rng, 8)
    f *= 0.5 / np.abs(f).sum()
    assert np.abs(g.to_physical(f)).max() <= 0.5


def test_probe_guards(bank64):
    with pytest.raises(ConfigurationError):
        lemma_probes(bank64, trials=0)
    with pytest.raises(ConfigurationError):
        probe_product(bank64, np.random.default_rng(0), 1, m_max=16)


def test_probes_are_deterministic(bank64):
    a = lemma_probes(bank64, trials=3, seed=7)
    b = lemma_probes(bank64, trials=3, seed=7)
    assert all(a[k].sup_ratio == b[k].sup_ratio for k in a)


def test_probes_resolution_independent():
    small = lemma_probes(build_filter_bank(Grid(2, 64, 4.0)), trials=3)
    large = lemma_probes(build_filter_bank(Grid(2, 128, 4.0)), trials=3)
    for k in small:
        assert large[k].sup_ratio == pytest.approx(small[k].sup_ratio, rel=1e-8)
