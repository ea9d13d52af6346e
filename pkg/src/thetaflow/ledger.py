"""Frequency-localized energy bookkeeping along a trajectory.

A :class:`Ledger` is a streaming callback for :func:`thetaflow.evolve.run`.
At each snapshot it stores per-block L2 norms (cheap: one weighted sum over
the coefficient power per block, no transforms), and at a configurable stride
the source terms and the residuals of the derived evolution equations.  The
checks below then work on those tables.

Conventions
-----------
* Tuples are normed additively: ``||(f, g)|| = ||f|| + ||g||``.
* Low/high parts use the multipliers ``FilterBank.low_symbol`` and
  ``FilterBank.high_symbol``; block ``k`` of ``f^l`` is ``psi_k * low * f``.
* Time integrals are trapezoidal over the recorded samples.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from thetaflow.errors import PreconditionError
from thetaflow.evolve import acoustic_eigenvalues, block_matrix
from thetaflow.littlewood_paley import FilterBank, chemin_lerner_accumulate, weighted_sum
from thetaflow.model import (
    FluidParams,
    PerturbationState,
    _dot_grad,
    compressible_coeffs,
    force_physical,
    mm3_pieces,
    residual_b_damped,
    residual_G_equation,
    residual_phi_equation,
    sources_arrays,
)
from thetaflow.spectral import SpectralField

CSV_VERSION = 1
SIGNIFICANT = 1e-2


# -- linear structure ---------------------------------------------------------

class Eigen(NamedTuple):
    slow: complex
    fast: complex
    kernel: np.ndarray


def lin_eigenvalues(r: float, params: FluidParams) -> Eigen:
    """Roots of ``x^2 + nu_q r^2 x + gamma r^2`` and the kernel direction of ``M(r)``.

    ``slow`` is the root with the larger real part.  The kernel of ``M(r)`` is
    spanned by ``(1, 0, 0)`` in ``(a, b, v)`` coordinates.
    """
    if not r > 0:
        raise PreconditionError(f"modulus must be positive, got {r}")
    slow, fast = acoustic_eigenvalues(np.array([float(r)]), params.gamma, params.nu_q)
    return Eigen(complex(slow[0]), complex(fast[0]), np.array([1.0, 0.0, 0.0]))


def dense_eigenvalues(r: float, params: FluidParams) -> np.ndarray:
    """Eigenvalues of ``M(r)`` from a dense eigensolver, sorted by real part (descending)."""
    ev = np.linalg.eigvals(block_matrix(r, params.gamma, params.nu_q))
    return ev[np.argsort(-ev.real, kind="stable")]


# -- records --------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyRecord:
    t: float
    inst_low: float     # ||(a^l, b^l, u)|| in B^{n/2-1}
    inst_high: float    # ||(a^h, b^h)|| in B^{n/2}
    cl_inf_low: float
    cl_inf_high: float
    l1_low: float       # int ||(b^l, u)||_{B^{n/2+1}}
    l1_high: float      # int ||b^h||_{B^{n/2}}

    @property
    def E(self) -> float:
        return self.cl_inf_low + self.cl_inf_high + self.l1_low + self.l1_high

    @property
    def inst(self) -> float:
        return self.inst_low + self.inst_high


TABLES = ("a_lo", "b_lo", "u", "a_hi", "b_hi", "b", "v_lo", "lb_lo", "cross_lo")


def theorem_norm(bank: FilterBank, state: PerturbationState) -> float:
    """``||(a^l, u, b^l)||_{B^{n/2-1}} + ||(a^h, b^h)||_{B^{n/2}}``."""
    n = state.grid.n
    js = bank.js
    lo, hi = bank.low_symbol, bank.high_symbol
    total = 0.0
    for coeffs, w, s in ((state.a.coeffs, lo, n / 2 - 1), (state.b.coeffs, lo, n / 2 - 1),
                         (state.u.coeffs, None, n / 2 - 1),
                         (state.a.coeffs, hi, n / 2), (state.b.coeffs, hi, n / 2)):
        total += weighted_sum(bank.block_norms(coeffs, w), js, s)
    return total


def _block_power(bank: FilterBank, power: np.ndarray) -> np.ndarray:
    g = bank.grid
    flat = (bank.psi**2).reshape(len(bank.psi), -1)
    return g.volume * (flat @ power.ravel())


@dataclass
class Ledger:
    """Streaming recorder; pass as ``callback`` (and ``pair_callback``) to ``run``.

    Parameters
    ----------
    bank, params
        Filter bank and physical parameters.
    source_stride
        Record low-frequency source norms every this many snapshots (0 disables).
    residual_stride
        Start a residual window every this many accepted steps (0 disables).
    residual_span
        Steps between the three equally spaced samples of a residual window.
    track_kernel
        Keep the initial per-mode kernel projection and its maximal relative drift.
    """

    bank: FilterBank
    params: FluidParams
    source_stride: int = 1
    residual_stride: int = 0
    residual_span: int = 8
    track_kernel: bool = True
    times: list = field(default_factory=list)
    tables: dict = field(default_factory=lambda: {k: [] for k in TABLES})
    source_times: list = field(default_factory=list)
    sources: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    kernel_drift: list = field(default_factory=list)
    _phi0: np.ndarray | None = None
    _sig: np.ndarray | None = None
    _calls: int = 0
    _pairs: int = 0
    _window: list | None = None
    _window_start: int = 0

    def __call__(self, t: float, state: PerturbationState) -> None:
        bank, g = self.bank, self.bank.grid
        lo, hi = bank.low_symbol, bank.high_symbol
        a, u, b = state.arrays()
        v = compressible_coeffs(g, u)
        self.times.append(float(t))
        T = self.tables
        T["a_lo"].append(bank.block_norms(a, lo))
        T["b_lo"].append(bank.block_norms(b, lo))
        T["u"].append(bank.block_norms(u))
        T["a_hi"].append(bank.block_norms(a, hi))
        T["b_hi"].append(bank.block_norms(b, hi))
        T["b"].append(bank.block_norms(b))
        T["v_lo"].append(bank.block_norms(v, lo))
        T["lb_lo"].append(bank.block_norms(b, lo * g.kmod))
        T["cross_lo"].append(_block_power(bank, lo**2 * g.kmod * (v * np.conj(b)).real))
        if self.source_stride and self._calls % self.source_stride == 0:
            f1, f2 = sources_arrays(g, self.params, a, u, b)
            self.source_times.append(float(t))
            self.sources.append((bank.block_norms(f1, lo), bank.block_norms(f2, lo)))
        if self.track_kernel:
            phi = self.params.gamma * a - b
            if self._phi0 is None:
                self._phi0 = phi.copy()
                mag = np.abs(phi)
                self._sig = mag > SIGNIFICANT * mag.max() if mag.max() > 0 else np.zeros(g.shape, bool)
                self._sig[g.zero] = False
            drift = 0.0
            if self._sig.any():
                d = np.abs(phi - self._phi0)[self._sig] / np.abs(self._phi0)[self._sig]
                drift = float(d.max())
            self.kernel_drift.append(drift)
        self._calls += 1

    def pair(self, t0: float, s0: PerturbationState, t1: float, s1: PerturbationState) -> None:
        """Hook for every accepted step ``(t0, s0) -> (t1, s1)``."""
        if self.residual_stride:
            if self._window is None and self._pairs % self.residual_stride == 0:
                self._window, self._window_start = [(t0, s0)], self._pairs
            if self._window is not None:
                done = self._pairs + 1 - self._window_start
                if done % self.residual_span == 0:
                    self._window.append((t1, s1))
                if len(self._window) == 3:
                    (t_a, _), (t_b, _), (t_c, _) = self._window
                    # windows broken by a step-size change are dropped
                    if abs((t_b - t_a) - (t_c - t_b)) <= 1e-9 * (t_c - t_a):
                        self.residuals.append(residual_row(self._window, self.params))
                    self._window = None
        self._pairs += 1

    # -- derived series -------------------------------------------------------
    def table(self, name: str) -> np.ndarray:
        return np.asarray(self.tables[name], dtype=float).reshape(len(self.times), -1)

    def records(self) -> list[EnergyRecord]:
        n = self.bank.grid.n
        js = self.bank.js
        t = np.asarray(self.times)
        lo_tabs = [self.table(k) for k in ("a_lo", "b_lo", "u")]
        hi_tabs = [self.table(k) for k in ("a_hi", "b_hi")]
        w_lo, w_hi, w_l1 = 2.0 ** ((n / 2 - 1) * js), 2.0 ** (n / 2 * js), 2.0 ** ((n / 2 + 1) * js)
        inst_low = sum(tab @ w_lo for tab in lo_tabs)
        inst_high = sum(tab @ w_hi for tab in hi_tabs)
        l1_low_rate = self.table("b_lo") @ w_l1 + self.table("u") @ w_l1
        l1_high_rate = self.table("b_hi") @ w_hi
        out = []
        run_lo = [np.zeros(len(js)) for _ in lo_tabs]
        run_hi = [np.zeros(len(js)) for _ in hi_tabs]
        l1_low = l1_high = 0.0
        for i in range(len(t)):
            for acc, tab in zip(run_lo, lo_tabs):
                np.maximum(acc, tab[i], out=acc)
            for acc, tab in zip(run_hi, hi_tabs):
                np.maximum(acc, tab[i], out=acc)
            if i:
                h = t[i] - t[i - 1]
                l1_low += 0.5 * h * (l1_low_rate[i] + l1_low_rate[i - 1])
                l1_high += 0.5 * h * (l1_high_rate[i] + l1_high_rate[i - 1])
            out.append(EnergyRecord(
                t=float(t[i]), inst_low=float(inst_low[i]), inst_high=float(inst_high[i]),
                cl_inf_low=float(sum(acc @ w_lo for acc in run_lo)),
                cl_inf_high=float(sum(acc @ w_hi for acc in run_hi)),
                l1_low=float(l1_low), l1_high=float(l1_high)))
        return out

    def lyapunov_table(self) -> tuple[np.ndarray, np.ndarray]:
        """``(L_k^2, ||(b_k, v_k)||^2)`` for every sample and low block ``k <= j0``."""
        g = self.params.gamma
        k = self.bank.low_mask
        b, v = self.table("b_lo")[:, k], self.table("v_lo")[:, k]
        lb, cross = self.table("lb_lo")[:, k], self.table("cross_lo")[:, k]
        L2 = b**2 + g * v**2 + lb**2 / g - cross
        return L2, (b + v) ** 2

    def source_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Sample times and ``||((f1)^l_k, (f2)^l_k)||`` per low block."""
        k = self.bank.low_mask
        if not self.sources:
            return np.asarray(self.source_times), np.zeros((0, int(k.sum())))
        f = np.array([f1[k] + f2[k] for f1, f2 in self.sources])
        return np.asarray(self.source_times), f


def energy_functional(samples: Iterable[tuple[float, PerturbationState]], bank: FilterBank,
                      params: FluidParams) -> list[EnergyRecord]:
    """Energy records for a sequence of ``(t, state)`` samples."""
    led = Ledger(bank, params, source_stride=0, track_kernel=False)
    for t, s in samples:
        led(t, s)
    return led.records()


# -- Lyapunov functional ----------------------------------------------------------

def lyapunov_block(b_k: SpectralField, v_k: SpectralField, params: FluidParams) -> float:
    """``||b||^2 + gamma ||v||^2 + (1/gamma) ||Lambda b||^2 - <v, Lambda b>`` for block-localized fields."""
    g = b_k.grid
    vol, r = g.volume, g.kmod
    bb = vol * np.sum(np.abs(b_k.coeffs) ** 2)
    vv = vol * np.sum(np.abs(v_k.coeffs) ** 2)
    lb = vol * np.sum(r**2 * np.abs(b_k.coeffs) ** 2)
    cross = vol * np.sum(r * (v_k.coeffs * np.conj(b_k.coeffs)).real)
    return float(bb + params.gamma * vv + lb / params.gamma - cross)


class CoercivityReport(NamedTuple):
    ratio_min: float
    ratio_max: float
    per_block_min: np.ndarray
    per_block_max: np.ndarray
    passed: bool


def coercivity_check(ledger: Ledger, lo: float = 0.25, hi: float = 4.0) -> CoercivityReport:
    """Range of ``L_k^2 / ||(b_k, v_k)||^2`` over samples, for each low block with content."""
    L2, den = ledger.lyapunov_table()
    live = den > 1e-300
    if not live.any():
        nan = np.full(L2.shape[1], np.nan)
        return CoercivityReport(np.nan, np.nan, nan, nan, True)
    ratio = np.where(live, L2 / np.where(live, den, 1.0), np.nan)
    pmin, pmax = np.nanmin(ratio, axis=0), np.nanmax(ratio, axis=0)
    rmin, rmax = float(np.nanmin(pmin)), float(np.nanmax(pmax))
    return CoercivityReport(rmin, rmax, pmin, pmax, bool(lo <= rmin and rmax <= hi))


class DecayFit(NamedTuple):
    c: np.ndarray         # largest c per low block at the given C
    C: float
    c_min: float
    passed: bool
    violations: int


def block_decay_check(ledger: Ledger, C: float = 100.0, c_required: float = 0.1) -> DecayFit:
    """Fit ``d/dt L_k + c 2^{2k} L_k <= C ||f_k||`` on the recorded samples.

    For fixed ``C`` the largest admissible ``c`` per block is the minimum over
    samples of ``(C ||f_k|| - dL_k/dt) / (2^{2k} L_k)``; ``dL/dt`` is a
    second-order finite difference in time.  Requires source norms at every sample.
    """
    t = np.asarray(ledger.times)
    if len(t) < 3:
        raise PreconditionError("block_decay_check needs at least three samples")
    st, f = ledger.source_table()
    if len(st) != len(t):
        raise PreconditionError("source norms must be recorded at every sample (source_stride=1)")
    L2, _ = ledger.lyapunov_table()
    L = np.sqrt(np.maximum(L2, 0.0))
    dL = np.gradient(L, t, axis=0)
    js = ledger.bank.js[ledger.bank.low_mask]
    scale = 2.0 ** (2 * js) * L
    floor = 1e-12 * max(L.max(), 1e-300)
    live = L > floor
    with np.errstate(divide="ignore", invalid="ignore"):
        cands = np.where(live, (C * f - dL) / np.where(live, scale, 1.0), np.inf)
    c = cands.min(axis=0)
    c_live = c[np.isfinite(c)]
    c_min = float(c_live.min()) if c_live.size else np.inf
    violations = int(np.sum(cands < c_required))
    return DecayFit(c, C, c_min, bool(c_min >= c_required), violations)


# -- decay rates ------------------------------------------------------------------

def fit_rate(t: np.ndarray, y: np.ndarray, window: float = 0.6) -> float:
    """Exponential decay rate from least squares on ``log y`` over the middle ``window`` of the samples."""
    t, y = np.asarray(t, float), np.asarray(y, float)
    m = len(t)
    skip = int(round(m * (1 - window) / 2))
    sel = slice(skip, m - skip)
    tt, yy = t[sel], y[sel]
    ok = yy > 0
    if ok.sum() < 2:
        return np.nan
    slope = np.polyfit(tt[ok], np.log(yy[ok]), 1)[0]
    return float(-slope)


class RateRow(NamedTuple):
    j: int
    rate: float
    r_eff: float
    predicted: float
    rel_err: float
    asserted: bool


class DampingReport(NamedTuple):
    rows: list
    plateau: float
    high_ok: bool
    low_scaling: float
    low_ok: bool
    low_blocks: list
    residual: float
    asserting: bool


def damping_threshold(params: FluidParams) -> float:
    """Lower bound on ``2^j`` above which a block is treated as high frequency, ``8 sqrt(gamma)/nu_q``."""
    return 8.0 * np.sqrt(params.gamma) / params.nu_q


def block_moduli(bank: FilterBank, coeffs: np.ndarray) -> np.ndarray:
    """Power-weighted RMS modulus of each block of ``coeffs``."""
    g = bank.grid
    power = np.abs(coeffs) ** 2
    num = _block_power(bank, power * g.k2)
    den = _block_power(bank, power)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.sqrt(np.where(den > 0, num / den, np.nan))


def high_freq_damping_check(ledger: Ledger, initial: PerturbationState, amplitude: float | None = None,
                            tol: float = 0.2) -> DampingReport:
    """Fitted decay rates of ``||Delta_j b||`` against the slow eigenvalue.

    Blocks with ``2^j >= 8 sqrt(gamma)/nu_q`` are asserted to decay at
    ``gamma/nu_q`` within ``tol``.  For the low blocks whose content sits in
    the oscillatory regime (RMS modulus below ``2 sqrt(gamma)/nu_q``) the
    normalized rates ``rate_j / 2^{2j}`` must all lie within a factor 2 of one
    common constant, i.e. their max/min spread is at most 4.  The check only
    asserts in the near-linear regime (``amplitude <= 1e-4``).
    """
    p = ledger.params
    bank = ledger.bank
    t = np.asarray(ledger.times)
    tab = ledger.table("b")
    r_eff = block_moduli(bank, initial.b.coeffs)
    plateau = p.gamma / p.nu_q
    thresh = damping_threshold(p)
    crit = 2.0 * np.sqrt(p.gamma) / p.nu_q
    rows, high_ok, low = [], True, []
    peak = tab.max() if tab.size else 0.0
    for i, j in enumerate(bank.js):
        col = tab[:, i]
        if peak == 0 or col[0] <= 1e-8 * peak:
            continue
        rate = fit_rate(t, col)
        pred = -float(acoustic_eigenvalues(np.array([r_eff[i]]), p.gamma, p.nu_q)[0][0].real)
        asserted = 2.0**j >= thresh
        if asserted:
            high_ok &= abs(rate - plateau) <= tol * plateau
        rel = abs(rate - pred) / pred if pred > 0 else np.nan
        rows.append(RateRow(int(j), rate, float(r_eff[i]), pred, rel, asserted))
        if r_eff[i] < crit:
            low.append((int(j), rate / 4.0**j))
    if len(low) >= 2:
        vals = np.array([x[1] for x in low])
        spread = float(vals.max() / vals.min())
        low_ok = spread <= 4.0
    else:
        spread, low_ok = np.nan, False
    res = [row.b_damped for row in ledger.residuals]
    residual = float(max(res)) if res else np.nan
    asserting = amplitude is None or amplitude <= 1e-4
    return DampingReport(rows, plateau, bool(high_ok and any(r.asserted for r in rows)),
                         spread, low_ok, low, residual, asserting)


class KernelReport(NamedTuple):
    kernel_drift: float
    b_high_drop: float
    passed: bool


def non_dissipativity_check(ledger: Ledger, tol: float = 0.01, drop: float = 0.5) -> KernelReport:
    """Per-mode kernel projection drift and the relative drop of ``||b^h||_{B^{n/2}}``."""
    n = ledger.bank.grid.n
    w = 2.0 ** (n / 2 * ledger.bank.js)
    bh = ledger.table("b_hi") @ w
    drift = float(max(ledger.kernel_drift)) if ledger.kernel_drift else 0.0
    fall = float(1.0 - bh[-1] / bh[0]) if bh[0] > 0 else 0.0
    return KernelReport(drift, fall, bool(drift < tol and fall >= drop))


def kernel_projection(state: PerturbationState, params: FluidParams) -> np.ndarray:
    """Per-mode coefficient along the kernel direction ``(1, 0, 0)``: ``(gamma a - b)/gamma``."""
    a, _, b = state.arrays()
    return (params.gamma * a - b) / params.gamma


# -- residuals ----------------------------------------------------------------------

class ResidualRow(NamedTuple):
    t: float
    phi: float
    G: float
    b_damped: float


def residual_row(samples, params: FluidParams) -> ResidualRow:
    rp = residual_phi_equation(samples, params)
    rg = residual_G_equation(samples, params)
    rb = residual_b_damped(samples, params)
    return ResidualRow(float(samples[0][0]), rp.relative, rg.relative, rb.relative)


def residual_summary(ledger: Ledger) -> dict:
    rows = ledger.residuals
    if not rows:
        return {"phi": np.nan, "G": np.nan, "b_damped": np.nan}
    return {k: float(max(getattr(r, k) for r in rows)) for k in ("phi", "G", "b_damped")}


def g_equation_supported(params: FluidParams) -> bool:
    """The classical effective-velocity equation is stated for ``nu_q = 2``."""
    return params.nu_q == 2.0


# -- estimate terms -----------------------------------------------------------------

def estimate_terms(state: PerturbationState, bank: FilterBank, params: FluidParams) -> dict:
    """Norms entering the master inequality and product-law ratio tests at one snapshot."""
    g = state.grid
    n = g.n
    js = bank.js
    lo, hi = bank.low_symbol, bank.high_symbol
    a, u, b = state.arrays()

    def B(coeffs, s, w=None):
        return weighted_sum(bank.block_norms(coeffs, w), js, s)

    t = {
        "al_m1": B(a, n / 2 - 1, lo), "bl_m1": B(b, n / 2 - 1, lo), "u_m1": B(u, n / 2 - 1),
        "ah_0": B(a, n / 2, hi), "bh_0": B(b, n / 2, hi),
        "u_p1": B(u, n / 2 + 1), "bl_p1": B(b, n / 2 + 1, lo),
        "a_0": B(a, n / 2), "b_0": B(b, n / 2), "u_0": B(u, n / 2),
    }
    X = t["al_m1"] + t["bl_m1"] + t["ah_0"]
    Y = t["bl_m1"] + t["u_m1"] + t["bh_0"]
    Z = t["bl_p1"] + t["u_p1"] + t["bh_0"]
    t["T1"] = X * (t["bh_0"] + t["u_p1"])
    t["T2"] = Y * Z
    t["T3"] = (X + 1.0) * X * t["bl_p1"]
    t["rhs_integrand"] = t["T1"] + t["T2"] + t["T3"]

    p = mm3_pieces(g, params, a, u, b)
    sp, D = g.to_spectral, g.dealias
    adv = D(sp(_dot_grad(g, p.u, p.grad_u)))
    F = D(sp(force_physical(g, p)))
    bdiv = D(sp(p.b * p.div_u))
    t["lhs_u_grad_u"] = B(adv, n / 2 - 1)
    t["lhs_F"] = B(F, n / 2 - 1)
    t["lhs_b_div_u"] = B(bdiv, n / 2 - 1)
    t["rhs_u_grad_u"] = t["u_m1"] * t["u_p1"]
    t["rhs_F"] = t["a_0"] * (t["b_0"] + t["u_p1"])
    t["rhs_b_div_u"] = t["b_0"] * t["u_0"]
    for name in ("u_grad_u", "F", "b_div_u"):
        rhs = t[f"rhs_{name}"]
        t[f"ratio_{name}"] = t[f"lhs_{name}"] / rhs if rhs > 0 else np.nan
    return t


# -- continuity inequality ---------------------------------------------------------

def continuity_constant(E: float, E0: float) -> float:
    """Smallest ``C >= 0`` with ``E <= E0 + C E^2 (1 + C E)``."""
    if E <= E0 or E == 0:
        return 0.0
    if not np.isfinite(E):
        return np.inf
    disc = E**4 + 4.0 * E**3 * (E - E0)
    return float((-E**2 + np.sqrt(disc)) / (2.0 * E**3))


class ContinuityReport(NamedTuple):
    C: float
    E0: float
    E_max: float


def continuity_inequality_check(records: list[EnergyRecord], blowup: bool = False) -> ContinuityReport:
    if not records:
        return ContinuityReport(0.0, 0.0, 0.0)
    E0 = records[0].inst
    Es = [r.E for r in records]
    if blowup:
        return ContinuityReport(np.inf, E0, float(max(Es)))
    C = max(continuity_constant(E, E0) for E in Es)
    return ContinuityReport(C, E0, float(max(Es)))


# -- heat estimate for the divergence-free velocity --------------------------------

class HeatReport(NamedTuple):
    lhs: float
    rhs: float
    ratio: float


def heat_estimate_check_Pu(times, states: list[PerturbationState], bank: FilterBank,
                           params: FluidParams) -> HeatReport:
    """``||Pu||_{L~inf(B^{n/2-1})} + mu ||Pu||_{L1(B^{n/2+1})}`` against ``||Pu0|| + int ||P(-u.grad u + F)||``.

    Norms are in ``B^{n/2-1}_{2,1}`` with constant 1; time integrals are trapezoidal.
    """
    g = bank.grid
    n = g.n
    js = bank.js
    times = np.asarray(times, float)
    pu_tab, force = [], []
    for s in states:
        a, u, b = s.arrays()
        kd = np.sum(g.k * u, axis=0) / g.kmod_safe**2
        pu = u - g.k * kd
        pu[(slice(None),) + g.zero] = 0.0
        pu_tab.append(bank.block_norms(pu))
        p = mm3_pieces(g, params, a, u, b)
        w = g.dealias(g.to_spectral(-_dot_grad(g, p.u, p.grad_u) + force_physical(g, p)))
        kw = np.sum(g.k * w, axis=0) / g.kmod_safe**2
        pw = w - g.k * kw
        pw[(slice(None),) + g.zero] = 0.0
        force.append(weighted_sum(bank.block_norms(pw), js, n / 2 - 1))
    pu_tab = np.array(pu_tab)
    lhs = (chemin_lerner_accumulate(times, pu_tab, js, n / 2 - 1, np.inf)
           + params.mu * chemin_lerner_accumulate(times, pu_tab, js, n / 2 + 1, 1))
    rhs = weighted_sum(pu_tab[0], js, n / 2 - 1)
    if len(times) > 1:
        rhs += float(np.trapezoid(force, times))
    ratio = lhs / rhs if rhs > 0 else np.nan
    return HeatReport(float(lhs), float(rhs), float(ratio))


# -- CSV ---------------------------------------------------------------------------

def _write(path: Path, name: str, header: list[str], rows: Iterable) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# thetaflow {name} v{CSV_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def write_energy_csv(path, records: list[EnergyRecord]) -> None:
    header = ["t", "inst_low", "inst_high", "cl_inf_low", "cl_inf_high", "l1_low", "l1_high", "E"]
    _write(Path(path), "energy", header,
           ([r.t, r.inst_low, r.inst_high, r.cl_inf_low, r.cl_inf_high, r.l1_low, r.l1_high, r.E]
            for r in records))


def write_blocks_csv(path, ledger: Ledger) -> None:
    js = ledger.bank.js
    low = ledger.bank.low_mask
    L2, _ = ledger.lyapunov_table()
    st, f = ledger.source_table()
    src = {float(t): row for t, row in zip(st, ledger.sources)}
    tabs = {k: ledger.table(k) for k in ("a_lo", "b_lo", "u", "a_hi", "b_hi", "b", "v_lo")}
    header = ["t", "j", "a_lo", "b_lo", "u", "a_hi", "b_hi", "b", "v_lo", "L2", "f1_lo", "f2_lo"]
    rows = []
    for i, t in enumerate(ledger.times):
        s = src.get(float(t))
        li = 0
        for jj, j in enumerate(js):
            l2 = f1 = f2 = ""
            if low[jj]:
                l2 = L2[i, li]
                if s is not None:
                    f1, f2 = s[0][jj], s[1][jj]
                li += 1
            rows.append([t, int(j)] + [tabs[k][i, jj] for k in tabs] + [l2, f1, f2])
    _write(Path(path), "blocks", header, rows)


def write_rates_csv(path, report: DampingReport) -> None:
    _write(Path(path), "rates", ["j", "rate", "r_eff", "predicted", "rel_err", "asserted"],
           ([r.j, r.rate, r.r_eff, r.predicted, r.rel_err, int(r.asserted)] for r in report.rows))


def write_constants_csv(path, rows: Iterable[tuple[str, float, str]]) -> None:
    _write(Path(path), "constants", ["check", "constant", "resolution"], rows)
