"""Self-check suites behind ``thetaflow check``.

Each suite returns ``(name, passed, detail)``.  The suites are cheap: oracles
are evaluated on small grids, the residual suite integrates a few steps.
"""

from __future__ import annotations

import dataclasses
import tempfile
from pathlib import Path

import numpy as np
import scipy.linalg

from thetaflow.config import RunConfig
from thetaflow.evolve import (
    IntegratorConfig,
    block_matrix,
    build_linear_propagator,
    checkpoint_load,
    checkpoint_save,
    run,
)
from thetaflow.initial import make_initial
from thetaflow.ledger import Ledger, g_equation_supported
from thetaflow.littlewood_paley import FilterBank, build_filter_bank
from thetaflow.model import (
    PerturbationState,
    mm1_as_perturbation_tendency,
    primitive_from_perturbation,
    q_project,
    rhs_mm3,
)
from thetaflow.probes import lemma_probes
from thetaflow.spectral import Grid, band_limited_coeffs

RESIDUAL_TOL = 1e-6


def corrupted(bank: FilterBank, factor: float = 1.01) -> FilterBank:
    """A bank whose middle block is scaled by ``factor``; used to test that the suite bites."""
    psi = bank.psi.copy()
    psi[len(psi) // 2] *= factor
    return dataclasses.replace(bank, psi=psi)


def partition_of_unity(bank: FilterBank):
    g = bank.grid
    defect = np.abs(bank.psi.sum(axis=0) - 1.0)
    defect[g.zero] = 0.0
    err = float(defect.max())
    return "partition of unity", err < 1e-12, f"max |sum psi_j - 1| = {err:.2e}"


def projector_algebra(grid: Grid, rng):
    u = band_limited_coeffs(grid, rng, grid.N // 4, grid.n)
    q = q_project(grid, u)
    p = u - q
    errs = (grid.norm2(q_project(grid, q) - q), grid.norm2(grid.div(p)), grid.norm2(q_project(grid, p)))
    err = max(errs) / grid.norm2(u)
    return "helmholtz projectors", err < 1e-12, f"max relative defect {err:.2e}"


def direct_dft(grid: Grid, rng):
    small = Grid(grid.n, 8, grid.L)
    f = rng.standard_normal(small.shape)
    m = np.arange(8)
    F = np.exp(-2j * np.pi * np.outer(m, m) / 8) / 8
    ref = f.astype(complex)
    for ax in range(small.n):
        ref = np.moveaxis(np.tensordot(F, ref, axes=([1], [ax])), 0, ax)
    err = float(np.abs(small.to_spectral(f) - ref).max())
    return "transform vs direct DFT", err < 1e-13, f"max deviation {err:.2e} on 8^{small.n}"


def propagator_expm(grid: Grid, params, dt: float):
    prop = build_linear_propagator(grid, params, dt)
    worst = 0.0
    for m in range(1, min(grid.N // 2, 12)):
        idx = (m,) + (0,) * (grid.n - 1)
        ref = scipy.linalg.expm(block_matrix(float(grid.kmod[idx]), params.gamma, params.nu_q) * dt)
        worst = max(worst, float(np.abs(prop.matrix(idx) - ref).max()))
    return "propagator vs expm", worst < 1e-12, f"max deviation {worst:.2e}"


def formulation_agreement(cfg: RunConfig, rng):
    g = Grid(cfg.n, 64, cfg.L)
    params = cfg.params()
    a, b = (1e-2 * band_limited_coeffs(g, rng, 3) for _ in range(2))
    u = 1e-2 * band_limited_coeffs(g, rng, 3, g.n)
    st = PerturbationState.from_arrays(g, a, u, b)
    t3 = rhs_mm3(st, params)
    t1 = mm1_as_perturbation_tendency(primitive_from_perturbation(st, params), params)
    err = max(g.norm2(x.coeffs - y.coeffs) / g.norm2(x.coeffs) for x, y in zip(t3, t1))
    return "primitive vs perturbation tendencies", err < 1e-8, f"max relative deviation {err:.2e}"


def probes_finite(bank: FilterBank, trials: int):
    res = lemma_probes(bank, trials=trials, m_max=min(8, bank.grid.N // 4 - 1))
    ok = all(np.isfinite(r.sup_ratio) for r in res.values())
    detail = ", ".join(f"{k}={r.sup_ratio:.3g}" for k, r in res.items())
    return "inequality probes", ok, detail


def residuals(cfg: RunConfig):
    small = cfg.replace(kind="slow-branch", c0=1e-4, band_lo=max(cfg.band_lo, -1), band_hi=min(cfg.band_hi, 1),
                        checkpoint="")
    params = small.params()
    bank = build_filter_bank(small.grid(), small.j0)
    led = Ledger(bank, params, source_stride=0, residual_stride=1, residual_span=4, track_kernel=False)
    state = make_initial(small)
    run(state, IntegratorConfig(dt=small.dt, T=8 * small.dt, scheme=small.scheme),
        params, pair_callback=led.pair)
    rows = led.residuals
    phi = max(r.phi for r in rows)
    G = max(r.G for r in rows)
    bd = max(r.b_damped for r in rows)
    ok = phi < RESIDUAL_TOL and bd < RESIDUAL_TOL and (G < RESIDUAL_TOL or not g_equation_supported(params))
    return "equation residuals", ok, f"phi={phi:.2e} G={G:.2e} b_damped={bd:.2e}"


def checkpoint_roundtrip(cfg: RunConfig, rng):
    g = Grid(cfg.n, 16, cfg.L)
    st = PerturbationState.from_arrays(g, band_limited_coeffs(g, rng, 3), band_limited_coeffs(g, rng, 3, g.n),
                                       band_limited_coeffs(g, rng, 3))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "state.thfl"
        checkpoint_save(st, 0.125, path)
        back, t = checkpoint_load(path)
    same = t == 0.125 and all(np.array_equal(x, y) for x, y in zip(st.arrays(), back.arrays()))
    return "checkpoint round trip", bool(same), "bitwise" if same else "mismatch"


def run_suites(cfg: RunConfig, corrupt_bank: bool = False, trials: int = 20) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(cfg.seed)
    grid, params = cfg.grid(), cfg.params()
    bank = build_filter_bank(grid, cfg.j0)
    if corrupt_bank:
        bank = corrupted(bank)
    return [
        partition_of_unity(bank),
        projector_algebra(grid, rng),
        direct_dft(grid, rng),
        propagator_expm(grid, params, cfg.dt),
        formulation_agreement(cfg, rng),
        probes_finite(bank, trials),
        residuals(cfg),
        checkpoint_roundtrip(cfg, rng),
    ]
