import csv

import numpy as np
import pytest

from thetaflow.config import RunConfig
from thetaflow.errors import PreconditionError
from thetaflow.evolve import IntegratorConfig, acoustic_eigenvalues, run
from thetaflow.initial import make_initial
from thetaflow.ledger import (
    Ledger,
    block_decay_check,
    coercivity_check,
    continuity_constant,
    continuity_inequality_check,
    dense_eigenvalues,
    energy_functional,
    estimate_terms,
    heat_estimate_check_Pu,
    high_freq_damping_check,
    lin_eigenvalues,
    lyapunov_block,
    non_dissipativity_check,
    theorem_norm,
    write_blocks_csv,
    write_constants_csv,
    write_energy_csv,
    write_rates_csv,
)
from thetaflow.littlewood_paley import build_filter_bank
from thetaflow.model import FluidParams, PerturbationState
from thetaflow.spectral import Grid, SpectralField, band_limited_coeffs


def scalar_mode(g, m, amp):
    c = np.zeros(g.shape, complex)
    c[m] = c[tuple(-x % g.N for x in m)] = 0.5 * amp
    return c


def read_csv(path):
    with open(path) as fh:
        first = fh.readline()
        return first, list(csv.reader(fh))


@pytest.mark.parametrize("r", 2.0 ** np.arange(-4, 7))
@pytest.mark.parametrize("gamma,lam", [(1.4, 0.0), (1.1, 0.5), (3.0, -0.5)])
def test_eigenvalues_match_dense(r, gamma, lam):
    p = FluidParams(gamma=gamma, lam=lam)
    e = lin_eigenvalues(r, p)
    dense = dense_eigenvalues(r, p)
    closed = np.sort_complex(np.array([0.0, e.slow, e.fast]))
    assert np.abs(closed - np.sort_complex(dense)).max() < 1e-10 * max(1.0, p.nu_q * r * r)
    assert e.slow.real >= e.fast.real


def test_eigenvalue_examples():
    p = FluidParams(gamma=1.0 + 1e-15)
    e = lin_eigenvalues(1.0, p)
    assert e.slow == pytest.approx(-1.0, abs=1e-6) and e.fast == pytest.approx(-1.0, abs=1e-6)
    e = lin_eigenvalues(0.1, p)
    assert e.slow == pytest.approx(-0.01 + 0.099498743710662j, abs=1e-10)
    assert lin_eigenvalues(1e4, p).slow.real == pytest.approx(-0.5, rel=1e-6)
    slow8 = acoustic_eigenvalues(np.array([8.0]), 1.0, 2.0)[0][0].real
    assert slow8 == pytest.approx(-0.5, rel=0.01)
    with pytest.raises(PreconditionError):
        lin_eigenvalues(0.0, p)


def test_zero_state_energy(bank64, params):
    g = bank64.grid
    recs = energy_functional([(t, PerturbationState.zeros(g)) for t in (0, 0.5, 1.0)], bank64, params)
    assert all(r.E == 0 for r in recs)


def test_frozen_state_energy(bank64, params, rng):
    g = bank64.grid
    st = PerturbationState.from_arrays(g, *(1e-3 * band_limited_coeffs(g, rng, 8, c) for c in (1, 2, 1)))
    recs = energy_functional([(t, st) for t in np.linspace(0, 1, 6)], bank64, params)
    assert all(r.cl_inf_low == recs[0].cl_inf_low for r in recs)
    l1 = np.array([r.l1_low + r.l1_high for r in recs])
    assert np.allclose(np.diff(l1), l1[1] - l1[0], rtol=1e-12)
    assert all(x >= 0 for r in recs for x in (r.inst_low, r.inst_high, r.l1_low, r.l1_high))
    assert recs[0].inst == pytest.approx(theorem_norm(bank64, st))


def test_low_annulus_only_in_low_norms(bank64, params):
    g = bank64.grid
    z = np.zeros(g.shape, complex)
    b = scalar_mode(g, (2, 0), 1e-3)       # |k| = 1/2, blocks -1 and 0
    st = PerturbationState.from_arrays(g, z, np.zeros((2,) + g.shape, complex), b)
    rec = energy_functional([(0.0, st)], bank64, params)[0]
    assert rec.inst_high == 0 and rec.inst_low > 0


def test_lyapunov_block_cases(grid64, params, rng):
    g = grid64
    z = SpectralField.zeros(g)
    assert lyapunov_block(z, z, params) == 0
    b = SpectralField(g, scalar_mode(g, (3, 0), 1.0))
    vol = g.volume
    expected = vol * np.sum(np.abs(b.coeffs) ** 2) * (1 + (3 / 4) ** 2 / params.gamma)
    assert lyapunov_block(b, z, params) == pytest.approx(expected)


@pytest.mark.parametrize("j", [-3, -2, -1, 0, 1])
def test_lyapunov_ratio_within_annulus_bounds(bank64, params, rng, j):
    g = bank64.grid
    psi = bank64.psi_j(j) * bank64.low_symbol
    b = SpectralField(g, psi * band_limited_coeffs(g, rng, 30))
    v = SpectralField(g, psi * band_limited_coeffs(g, rng, 30))
    L2 = lyapunov_block(b, v, params)
    den = (g.norm2(b.coeffs) + g.norm2(v.coeffs)) ** 2
    # per-mode quadratic form on (|b|, |v|); (|b|+|v|)^2 lies between the l2 sum and twice it
    r = g.kmod[psi > 0]
    gam = params.gamma
    eig = [np.linalg.eigvalsh([[1 + x * x / gam, -x / 2], [-x / 2, gam]]) for x in (r.min(), r.max())]
    lo = min(e[0] for e in eig) / 2
    hi = max(e[1] for e in eig)
    assert lo <= L2 / den <= hi
    if j <= -1:
        assert 0.25 <= L2 / den <= 4


def short_run(cfg, T, residual_stride=0):
    bank = build_filter_bank(cfg.grid(), cfg.j0)
    led = Ledger(bank, cfg.params(), residual_stride=residual_stride, residual_span=4)
    init = make_initial(cfg)
    res = run(init, IntegratorConfig(dt=cfg.dt, T=T, snapshot_interval=cfg.snapshot_interval), cfg.params(),
              callback=led, pair_callback=led.pair)
    return led, init, res


@pytest.fixture(scope="module")
def linear_run():
    cfg = RunConfig(N=32, L=4.0, kind="slow-branch", c0=1e-6, band_lo=-3, band_hi=1, seed=1,
                    dt=4e-3, snapshot_interval=5)
    return (cfg,) + short_run(cfg, 1.0, residual_stride=40)


def test_linear_run_decay_and_kernel(linear_run):
    cfg, led, init, res = linear_run
    fit = block_decay_check(led)
    assert fit.passed and fit.c_min > 0
    rep = non_dissipativity_check(led)
    assert rep.kernel_drift < 0.01
    coer = coercivity_check(led)
    assert coer.ratio_min > 0
    rows = led.residuals
    assert rows and max(r.G for r in rows) < 1e-6


def test_zero_trajectory_decay_holds(bank64, params):
    led = Ledger(bank64, params)
    for t in (0.0, 0.1, 0.2):
        led(t, PerturbationState.zeros(bank64.grid))
    assert block_decay_check(led).passed
    rep = high_freq_damping_check(led, PerturbationState.zeros(bank64.grid))
    assert rep.rows == []


def test_growing_b_violates_decay(bank64, params):
    g = bank64.grid
    b0 = scalar_mode(g, (1, 1), 1e-8)
    z = np.zeros(g.shape, complex)
    led = Ledger(bank64, params)
    for t in np.linspace(0, 1, 11):
        led(t, PerturbationState.from_arrays(g, z, np.zeros((2,) + g.shape, complex), np.exp(t) * b0))
    fit = block_decay_check(led)
    assert not fit.passed and fit.violations > 0


def test_decay_needs_sources_every_sample(bank64, params):
    led = Ledger(bank64, params, source_stride=2)
    for t in (0.0, 0.1, 0.2, 0.3):
        led(t, PerturbationState.zeros(bank64.grid))
    with pytest.raises(PreconditionError):
        block_decay_check(led)


def test_high_frequency_plateau():
    cfg = RunConfig(N=64, L=1.0, gamma=4.0, kind="single-mode", c0=1e-6, band_lo=4, band_hi=4,
                    j0=1, dt=1e-2, snapshot_interval=5)
    led, init, _ = short_run(cfg, 2.0)
    rep = high_freq_damping_check(led, init, amplitude=cfg.c0)
    row = [r for r in rep.rows if r.j == 4][0]
    assert row.asserted
    assert abs(row.rate - 2.0) <= 0.2 * 2.0
    assert rep.high_ok


def test_kernel_data_is_stationary(params):
    g = Grid(2, 32, 4.0)
    a = scalar_mode(g, (3, 2), 1e-4)
    z = np.zeros(g.shape, complex)
    st = PerturbationState.from_arrays(g, a, np.zeros((2,) + g.shape, complex), z)
    res = run(st, IntegratorConfig(dt=1e-2, T=0.5), params)
    assert np.abs(res.state.a.coeffs - a).max() < 1e-10 * np.abs(a).max()
    assert np.abs(res.state.b.coeffs).max() < 1e-10 * np.abs(a).max()


def test_pure_b_mode_keeps_kernel_projection(params):
    g = Grid(2, 32, 4.0)
    bank = build_filter_bank(g, 1)
    b = scalar_mode(g, (6, 0), 1e-6)
    z = np.zeros(g.shape, complex)
    st = PerturbationState.from_arrays(g, z, np.zeros((2,) + g.shape, complex), b)
    led = Ledger(bank, params)
    run(st, IntegratorConfig(dt=1e-2, T=1.0), params, callback=led)
    assert non_dissipativity_check(led).kernel_drift < 0.01


def test_estimate_terms_cases(bank64, params, rng):
    g = bank64.grid
    t = estimate_terms(PerturbationState.zeros(g), bank64, params)
    assert all(t[k] == 0 for k in t if not k.startswith("ratio_"))
    assert all(np.isnan(t[k]) for k in t if k.startswith("ratio_"))
    a, b = (1e-3 * band_limited_coeffs(g, rng, 8) for _ in range(2))
    st = PerturbationState.from_arrays(g, a, np.zeros((2,) + g.shape, complex), b)
    t = estimate_terms(st, bank64, params)
    assert t["lhs_u_grad_u"] == 0 and t["lhs_b_div_u"] == 0 and t["lhs_F"] > 0
    st = PerturbationState.from_arrays(g, a, 1e-3 * band_limited_coeffs(g, rng, 8, 2), b)
    t = estimate_terms(st, bank64, params)
    assert all(np.isfinite(t[k]) and t[k] > 0 for k in ("ratio_u_grad_u", "ratio_F", "ratio_b_div_u"))


@pytest.mark.parametrize("E0,E", [(1.0, 1.5), (1e-2, 2.5e-2), (1e-4, 1e-4 * 1.01)])
def test_continuity_constant_solves_equality(E0, E):
    C = continuity_constant(E, E0)
    assert E == pytest.approx(E0 + C * E**2 * (1 + C * E), rel=1e-10)
    assert continuity_constant(E0, E0) == 0.0


def test_continuity_zero_and_blowup():
    assert continuity_inequality_check([]).C == 0.0
    from thetaflow.ledger import EnergyRecord
    recs = [EnergyRecord(0, 0, 0, 0, 0, 0, 0)] * 3
    assert continuity_inequality_check(recs).C == 0.0
    assert continuity_inequality_check(recs, blowup=True).C == np.inf


def test_heat_estimate_single_mode(params):
    g = Grid(2, 16, 4.0)
    bank = build_filter_bank(g, 0)
    psi = scalar_mode(g, (2, 0), 1e-3)
    u0 = np.stack([g.ddx(psi, 1), -g.ddx(psi, 0)])
    k2 = g.k2[2, 0]
    T = 1.0
    times = np.linspace(0, T, 2001)
    z = np.zeros(g.shape, complex)
    states = [PerturbationState.from_arrays(g, z, u0 * np.exp(-params.mu * k2 * t), z) for t in times]
    rep = heat_estimate_check_Pu(times, states, bank, params)
    norms = bank.block_norms(u0)
    js = bank.js
    exact = np.sum(norms) + params.mu * np.sum(2.0 ** (2 * js) * norms) * (1 - np.exp(-params.mu * k2 * T)) / (params.mu * k2)
    assert rep.lhs == pytest.approx(exact, rel=1e-8)
    zero = heat_estimate_check_Pu([0.0], [PerturbationState.zeros(g)], bank, params)
    assert np.isnan(zero.ratio)


def test_csv_outputs(tmp_path, linear_run):
    cfg, led, init, res = linear_run
    write_energy_csv(tmp_path / "energy.csv", led.records())
    write_blocks_csv(tmp_path / "blocks.csv", led)
    write_rates_csv(tmp_path / "rates.csv", high_freq_damping_check(led, init))
    write_constants_csv(tmp_path / "constants.csv", [("C", 1.5, "N=32")])
    for name, first_col in [("energy", "t"), ("blocks", "t"), ("rates", "j"), ("constants", "check")]:
        header, rows = read_csv(tmp_path / f"{name}.csv")
        assert header == f"# thetaflow {name} v1\n"
        assert rows[0][0] == first_col and len(rows) > 1
    _, rows = read_csv(tmp_path / "energy.csv")
    assert float(rows[1][-1]) == pytest.approx(led.records()[0].E)
