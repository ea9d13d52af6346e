import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from thetaflow.errors import ConfigurationError, OutOfRangeWarning, PreconditionError
from thetaflow.littlewood_paley import (
    INNER,
    OUTER,
    besov_norm,
    bernstein_ratio,
    build_filter_bank,
    chemin_lerner_accumulate,
    chi,
    dyadic_block,
    low_cutoff,
    psi,
    split_low_high,
)
from thetaflow.spectral import Grid, SpectralField, band_limited_coeffs, l2_norm


def mode(g, m, amp=1.0):
    c = np.zeros(g.shape, complex)
    c[m] = 0.5 * amp
    c[tuple(-x % g.N for x in m)] += 0.5 * amp
    return SpectralField(g, c)


def test_chi_support_values():
    assert chi(0.5) == 1.0
    assert chi(1.5) == 0.0
    assert chi(INNER) == 1.0
    assert chi(OUTER) == 0.0
    assert 0.0 <= psi(1.0) <= 1.0
    assert psi(1.0) == pytest.approx(1.0 - chi(1.0))


@given(r=st.floats(0, 10), s=st.floats(0, 10))
def test_chi_monotone_and_bounded(r, s):
    lo, hi = min(r, s), max(r, s)
    assert 0.0 <= chi(hi) <= chi(lo) <= 1.0


@given(r=st.floats(1e-3, 1e3))
def test_psi_partition_pointwise(r):
    js = np.arange(-20, 21)
    assert np.sum(psi(2.0 ** (-js) * r)) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("N,L", [(64, 4.0), (128, 4.0), (32, 1.0)])
def test_partition_of_unity_on_grid(N, L):
    g = Grid(2, N, L)
    bank = build_filter_bank(g)
    total = bank.psi.sum(axis=0)
    nz = g.kmod > 0
    assert np.abs(total[nz] - 1.0).max() < 1e-12
    assert total[g.zero] == 0.0


def test_bank_rejects_unresolved_j0(grid64):
    with pytest.raises(ConfigurationError):
        build_filter_bank(grid64, 40)


def test_two_block_mode():
    g = Grid(2, 32, 1.0)
    bank = build_filter_bank(g, 0)
    z = mode(g, (2, 0))
    active = [j for j in bank.j_range if l2_norm(dyadic_block(bank, j, z)) > 1e-14]
    assert active == [0, 1]
    total = dyadic_block(bank, 0, z) + dyadic_block(bank, 1, z)
    assert np.abs(total.coeffs - z.coeffs).max() < 1e-12


def test_reconstruction_and_constant(bank64, rng):
    g = bank64.grid
    z = SpectralField(g, band_limited_coeffs(g, rng, 20))
    total = sum((dyadic_block(bank64, j, z) for j in bank64.j_range), SpectralField.zeros(g))
    assert np.abs(total.coeffs - z.coeffs).max() < 1e-10 * np.abs(z.coeffs).max()
    const = SpectralField(g, np.where(g.kmod == 0, 3.0, 0.0).astype(complex))
    assert np.abs(dyadic_block(bank64, 0, const).coeffs).max() == 0


def test_out_of_range_block_warns(bank64, rng):
    g = bank64.grid
    z = SpectralField(g, band_limited_coeffs(g, rng, 5))
    with pytest.warns(OutOfRangeWarning):
        out = dyadic_block(bank64, bank64.j_max + 3, z)
    assert np.abs(out.coeffs).max() == 0


def test_quasi_orthogonality(bank64):
    for i, j in enumerate(bank64.js):
        for k, jj in enumerate(bank64.js):
            if abs(j - jj) >= 2:
                assert np.abs(bank64.psi[i] * bank64.psi[k]).max() < 1e-12


def test_low_cutoff_limits_and_telescoping(bank64, rng):
    g = bank64.grid
    z = SpectralField(g, band_limited_coeffs(g, rng, 20))
    top = low_cutoff(bank64, bank64.j_max + 1, z)
    assert np.abs(top.coeffs - z.coeffs).max() < 1e-10 * np.abs(z.coeffs).max()
    assert np.abs(low_cutoff(bank64, bank64.j_min, z).coeffs).max() < 1e-12
    for j in range(bank64.j_min, bank64.j_max + 1):
        step = low_cutoff(bank64, j + 1, z) - low_cutoff(bank64, j, z)
        assert np.abs(step.coeffs - dyadic_block(bank64, j, z).coeffs).max() < 1e-13


def test_besov_zero_and_l2_bounds(bank64, rng):
    g = bank64.grid
    assert besov_norm(bank64, SpectralField.zeros(g), 1.0) == 0.0
    z = SpectralField(g, band_limited_coeffs(g, rng, 20))
    b = besov_norm(bank64, z, 0.0, 2)
    # sum_j psi_j^2 lies in [1/2, 1] when the psi_j sum to one with at most two overlapping
    assert l2_norm(z) / np.sqrt(2) - 1e-12 <= b <= l2_norm(z) + 1e-12


@pytest.mark.parametrize("s", [-1.0, 0.0, 0.5, 2.0])
def test_besov_single_annulus(s):
    g = Grid(2, 32, 1.0)
    bank = build_filter_bank(g, 0)
    z = mode(g, (2, 0))
    expected = sum(2.0 ** (j * s) * l2_norm(dyadic_block(bank, j, z)) for j in (0, 1))
    assert besov_norm(bank, z, s) == pytest.approx(expected, rel=1e-13)


def test_besov_rejects_small_r(bank64):
    with pytest.raises(PreconditionError):
        besov_norm(bank64, SpectralField.zeros(bank64.grid), 0.0, 0.5)


def test_split_low_high(bank64, rng):
    g = bank64.grid
    lo = mode(g, (1, 0))       # |k| = 1/4
    hi = mode(g, (24, 0))      # |k| = 6
    assert l2_norm(split_low_high(bank64, lo)[1]) == 0
    assert l2_norm(split_low_high(bank64, hi)[0]) == 0
    z = SpectralField(g, band_limited_coeffs(g, rng, 20))
    a, b = split_low_high(bank64, z)
    assert np.abs((a + b).coeffs - z.coeffs).max() < 1e-10 * np.abs(z.coeffs).max()


def test_chemin_lerner_constant_and_decaying(bank64, rng):
    g = bank64.grid
    z = SpectralField(g, band_limited_coeffs(g, rng, 12))
    norms = bank64.block_norms(z.coeffs)
    t = np.linspace(0, 2.0, 11)
    table = np.tile(norms, (len(t), 1))
    ref = besov_norm(bank64, z, 0.5)
    assert chemin_lerner_accumulate(t, table, bank64.js, 0.5, np.inf) == pytest.approx(ref)
    assert chemin_lerner_accumulate(t, table, bank64.js, 0.5, 1) == pytest.approx(2.0 * ref)
    t = np.arange(0, 1.0 + 5e-4, 1e-3)
    decaying = np.exp(-t)[:, None] * norms
    got = chemin_lerner_accumulate(t, decaying, bank64.js, 0.5, 1)
    assert abs(got - (1 - np.exp(-1)) * ref) < 1e-4 * ref


def test_bernstein_ratios():
    g = Grid(2, 32, 1.0)
    bank = build_filter_bank(g, 0)
    z = mode(g, (4, 0))
    assert bernstein_ratio(bank, z, 2, 1) == pytest.approx(1.0)
    assert bernstein_ratio(bank, z, 2, 0) == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    c = band_limited_coeffs(g, rng, 10)
    f = SpectralField(g, c * bank.psi_j(2) * (bank.psi_j(2) > 0.999))
    r = bernstein_ratio(bank, f, 2, 1)
    assert INNER <= r <= 8 / 3


def test_bernstein_rejects_unlocalized(bank64, rng):
    g = bank64.grid
    with pytest.raises(PreconditionError):
        bernstein_ratio(bank64, SpectralField(g, band_limited_coeffs(g, rng, 20)), 0, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with pytest.raises(PreconditionError):
            bernstein_ratio(bank64, SpectralField.zeros(g), 0, 1)
