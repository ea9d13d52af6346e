"""Time integration with an exact per-mode linear propagator.

The linearization of the perturbation system decouples, per wavevector of
modulus ``r``, into the heat flow ``exp(-mu r^2 t)`` for the divergence-free
velocity and the 3x3 block

    d/dt (a, b, v) = M(r) (a, b, v),   M(r) = [[0, 0, -r], [0, 0, -gamma r], [0, r, -nu_q r^2]]

with ``v = Lambda^-1 div u``.  The nonlinear remainder is advanced with
Lawson-type integrating-factor Runge-Kutta stages.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg

from thetaflow.errors import BlowupError, CheckpointError, ConfigurationError, StateError
from thetaflow.model import (
    FluidParams,
    PerturbationState,
    PrimitiveState,
    check_floor,
    linear_mm3,
    mm1_arrays,
    nonlinear_mm3,
)
from thetaflow.littlewood_paley import build_filter_bank
from thetaflow.spectral import Grid, SpectralField, lame_coeffs

SCHEMES = ("IFRK4", "IFRK2", "RK4")
BLOWUP_NORM = 1e6
CFL_EPS = 1e-30
DOUBLE_ROOT_GAP = 1e-3


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3
    T: float = 10.0
    cfl_safety: float = 0.5
    scheme: str = "IFRK4"
    snapshot_interval: int = 10

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.T < 0 or (self.T > 0 and self.T < self.dt):
            raise ConfigurationError(f"horizon T={self.T} must be 0 or at least dt={self.dt}")
        if not 0 < self.cfl_safety <= 1:
            raise ConfigurationError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.snapshot_interval < 1:
            raise ConfigurationError("snapshot_interval must be >= 1")


def acoustic_eigenvalues(r, gamma: float, nu: float):
    """Nonzero eigenvalues of ``M(r)``: roots of ``x^2 + nu r^2 x + gamma r^2 = 0``.

    Returns complex arrays ``(slow, fast)``; ``slow`` has the larger real part.
    The slow real root is formed from the product of roots to avoid cancellation.
    """
    r = np.asarray(r, dtype=float)
    r2 = r * r
    disc = r2 * (nu * nu * r2 - 4.0 * gamma)
    sq = np.sqrt(np.abs(disc))
    real = disc >= 0
    fast_real = -0.5 * (nu * r2 + sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        slow_real = np.where(fast_real != 0, gamma * r2 / np.where(fast_real != 0, fast_real, 1.0), 0.0)
    slow = np.where(real, slow_real, -0.5 * nu * r2 + 0.5j * sq)
    fast = np.where(real, fast_real, -0.5 * nu * r2 - 0.5j * sq)
    return slow.astype(complex), fast.astype(complex)


def block_matrix(r: float, gamma: float, nu: float) -> np.ndarray:
    """``M(r)`` with rows and columns ordered ``(a, b, v)``."""
    return np.array([[0.0, 0.0, -r], [0.0, 0.0, -gamma * r], [0.0, r, -nu * r * r]])


@dataclass(frozen=True, eq=False)
class LinearPropagator:
    """Per-mode exponentials of the linear flow over one step ``dt``.

    ``Ebb, Ebv, Evb, Evv`` are the entries of ``exp(B dt)`` for the acoustic
    ``(b, v)`` pair; the ``a`` row follows from conservation of ``gamma a - b``.
    """

    grid: Grid
    params: FluidParams
    dt: float
    Ebb: np.ndarray
    Ebv: np.ndarray
    Evb: np.ndarray
    Evv: np.ndarray
    heat: np.ndarray

    @cached_property
    def half(self) -> "LinearPropagator":
        return build_linear_propagator(self.grid, self.params, 0.5 * self.dt)

    def matrix(self, index) -> np.ndarray:
        """Full 3x3 exponential at one grid index, rows/cols ``(a, b, v)``."""
        g = self.params.gamma
        bb, bv, vb, vv = (float(x[index]) for x in (self.Ebb, self.Ebv, self.Evb, self.Evv))
        return np.array([[1.0, (bb - 1.0) / g, bv / g], [0.0, bb, bv], [0.0, vb, vv]])

    def apply(self, a: np.ndarray, u: np.ndarray, b: np.ndarray):
        khat = self.grid.khat
        # v = Lambda^-1 div u = i khat.u and Qu = -i khat v
        v = 1j * np.sum(khat * u, axis=0)
        b_new = self.Ebb * b + self.Ebv * v
        v_new = self.Evb * b + self.Evv * v
        a_new = a + (b_new - b) / self.params.gamma
        u_new = self.heat * u - 1j * khat * (v_new - self.heat * v)
        return a_new, u_new, b_new


def _sylvester_2x2(r, dt, gamma, nu):
    slow, fast = acoustic_eigenvalues(r, gamma, nu)
    gap = slow - fast
    es, ef = np.exp(slow * dt), np.exp(fast * dt)
    safe = np.where(gap != 0, gap, 1.0)
    dd = (es - ef) / safe
    Ebb = ((slow * ef - fast * es) / safe).real
    Evv = ((slow * es - fast * ef) / safe).real
    Ebv = (-gamma * r * dd).real
    Evb = (r * dd).real
    scale = np.maximum(np.abs(slow), np.abs(fast))
    degenerate = np.abs(gap) <= DOUBLE_ROOT_GAP * np.where(scale > 0, scale, 1.0)
    return Ebb, Ebv, Evb, Evv, degenerate


def build_linear_propagator(grid: Grid, params: FluidParams, dt: float) -> LinearPropagator:
    """Exact per-mode exponentials of the linearized perturbation system for one step."""
    if dt < 0:
        raise ConfigurationError("dt must be non-negative")
    r = grid.kmod
    Ebb, Ebv, Evb, Evv, degenerate = _sylvester_2x2(r, dt, params.gamma, params.nu_q)
    zero = r == 0
    degenerate &= ~zero
    if degenerate.any():
        # near a double root: scaling-and-squaring on the full block
        for rr in np.unique(r[degenerate]):
            E = scipy.linalg.expm(block_matrix(rr, params.gamma, params.nu_q) * dt)
            sel = degenerate & (r == rr)
            Ebb[sel], Ebv[sel], Evb[sel], Evv[sel] = E[1, 1], E[1, 2], E[2, 1], E[2, 2]
    Ebb[zero], Ebv[zero], Evb[zero], Evv[zero] = 1.0, 0.0, 0.0, 1.0
    heat = np.exp(-params.mu * grid.k2 * dt)
    return LinearPropagator(grid, params, float(dt), Ebb, Ebv, Evb, Evv, heat)


# -- generic Lawson stages ------------------------------------------------------

def _axpy(x, alpha, y):
    return tuple(xi + alpha * yi for xi, yi in zip(x, y))


def _lawson_rk4(w, dt, full, half, nonlinear):
    k1 = nonlinear(w)
    hw = half(*w)
    w2 = _axpy(hw, 0.5 * dt, half(*k1))
    k2 = nonlinear(w2)
    w3 = _axpy(hw, 0.5 * dt, k2)
    k3 = nonlinear(w3)
    fw = full(*w)
    w4 = _axpy(fw, dt, half(*k3))
    k4 = nonlinear(w4)
    fk1 = full(*k1)
    hk23 = half(*_axpy(k2, 1.0, k3))
    return tuple(f + dt / 6.0 * (a + 2.0 * b + c) for f, a, b, c in zip(fw, fk1, hk23, k4))


def _lawson_rk2(w, dt, full, nonlinear):
    k1 = nonlinear(w)
    fw = full(*w)
    fk1 = full(*k1)
    k2 = nonlinear(_axpy(fw, dt, fk1))
    return tuple(f + 0.5 * dt * (a + b) for f, a, b in zip(fw, fk1, k2))


def _rk4(w, dt, rhs):
    k1 = rhs(w)
    k2 = rhs(_axpy(w, 0.5 * dt, k1))
    k3 = rhs(_axpy(w, 0.5 * dt, k2))
    k4 = rhs(_axpy(w, dt, k3))
    return tuple(x + dt / 6.0 * (a + 2 * b + 2 * c + d) for x, a, b, c, d in zip(w, k1, k2, k3, k4))


def step(state: PerturbationState, propagator: LinearPropagator, params: FluidParams,
         scheme: str = "IFRK4") -> PerturbationState:
    """Advance the perturbation system by ``propagator.dt``.

    Raises :class:`BlowupError` carrying the input state when the result is not
    finite or violates the density floor.
    """
    g = state.grid
    dt = propagator.dt
    w = (state.a.coeffs, state.u.coeffs, state.b.coeffs)

    def nonlinear(x):
        return tuple(nonlinear_mm3(g, params, *x))

    try:
        if scheme == "IFRK4":
            new = _lawson_rk4(w, dt, propagator.apply, propagator.half.apply, nonlinear)
        elif scheme == "IFRK2":
            new = _lawson_rk2(w, dt, propagator.apply, nonlinear)
        elif scheme == "RK4":
            def rhs(x):
                lin = linear_mm3(g, params, *x)
                non = nonlinear_mm3(g, params, *x)
                return tuple(p + q for p, q in zip(lin, non))
            new = _rk4(w, dt, rhs)
        else:
            raise ConfigurationError(f"unknown scheme {scheme!r}")
        if not all(np.isfinite(x).all() for x in new):
            raise StateError("non-finite coefficients")
        check_floor(g.to_physical(new[0]), params.floor)
    except StateError as exc:
        raise BlowupError(str(exc), state=state) from exc
    return PerturbationState.from_arrays(g, *new)


def cfl_dt(state: PerturbationState, grid: Grid, config: IntegratorConfig) -> float:
    """Advective step limit ``cfl_safety / (k_max max|u| + eps)`` with ``k_max = (N/2)/L``."""
    umax = float(np.abs(grid.to_physical(state.u.coeffs)).max())
    return config.cfl_safety / (grid.k_nyquist * umax + CFL_EPS)


class Snapshot(NamedTuple):
    t: float
    state: PerturbationState


@dataclass
class RunResult:
    state: PerturbationState
    t: float
    steps: int
    reason: str
    times: list = field(default_factory=list)

    @property
    def completed(self) -> bool:
        return self.reason == "completed"


def _instantaneous_norm(bank, state: PerturbationState) -> float:
    n = state.grid.n
    js = bank.js
    w_hi = 2.0 ** (0.5 * n * js)
    w_lo = 2.0 ** ((0.5 * n - 1) * js)
    total = 0.0
    for coeffs, w in ((state.a.coeffs, w_hi), (state.b.coeffs, w_hi), (state.u.coeffs, w_lo)):
        total += float(np.sum(w * bank.block_norms(coeffs)))
    return total


def run(initial: PerturbationState, config: IntegratorConfig, params: FluidParams,
        callback: Callable[[float, PerturbationState], None] | None = None,
        t0: float = 0.0, pair_callback=None) -> RunResult:
    """Integrate from ``t0`` to ``config.T``.

    ``callback(t, state)`` is invoked on the initial state, every
    ``snapshot_interval`` accepted steps, and on the final state.
    ``pair_callback(t_prev, prev, t, state)`` sees every accepted step.  The step is
    ``min(config.dt, cfl_dt)`` re-evaluated at each snapshot; the last step is
    shortened to land on ``T``.
    """
    g = initial.grid
    bank = build_filter_bank(g, j0=_any_j0(g))
    props: dict[float, LinearPropagator] = {}

    def prop(dt):
        if dt not in props:
            if len(props) > 4:
                props.clear()
            props[dt] = build_linear_propagator(g, params, dt)
        return props[dt]

    state, t, steps = initial, float(t0), 0
    times = [t]
    if callback:
        callback(t, state)
    dt = min(config.dt, cfl_dt(state, g, config))
    tol = 1e-12 * max(1.0, config.T)
    reason = "completed"
    while config.T - t > tol:
        h = min(dt, config.T - t)
        prev, t_prev = state, t
        try:
            state = step(state, prop(h), params, config.scheme)
        except BlowupError as exc:
            reason = f"blowup: {exc.reason}"
            break
        steps += 1
        t += h
        if config.T - t <= tol:
            t = config.T
        if pair_callback:
            pair_callback(t_prev, prev, t, state)
        at_snapshot = steps % config.snapshot_interval == 0
        if at_snapshot or t == config.T:
            times.append(t)
            if _instantaneous_norm(bank, state) > BLOWUP_NORM:
                reason = "blowup: Besov norm exceeded 1e6"
                if callback:
                    callback(t, state)
                break
            if callback:
                callback(t, state)
            dt = min(config.dt, cfl_dt(state, g, config))
    return RunResult(state, t, steps, reason, times)


def _any_j0(g: Grid) -> int:
    moduli = g.moduli()
    return int(np.floor(np.log2(0.75 * moduli[0])))


# -- primitive-variable oracle ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class ViscousFactor:
    """Integrating factor for the Lame operator alone (used by the primitive oracle)."""

    grid: Grid
    params: FluidParams
    dt: float

    @cached_property
    def _factors(self):
        g, p = self.grid, self.params
        return np.exp(-p.mu * g.k2 * self.dt), np.exp(-p.nu_q * g.k2 * self.dt)

    @cached_property
    def half(self):
        return ViscousFactor(self.grid, self.params, 0.5 * self.dt)

    def apply(self, rho, u, s):
        g = self.grid
        hp, hq = self._factors
        kdotu = np.sum(g.k * u, axis=0) / g.kmod_safe**2
        q = g.k * kdotu
        q[(slice(None),) + g.zero] = 0.0
        return rho, hp * (u - q) + hq * q, s


def step_primitive(w, factor: ViscousFactor, params: FluidParams):
    """One IFRK4 step of the primitive system on ``(rho, u, rho*theta)`` coefficient arrays."""
    g = factor.grid

    def nonlinear(x):
        d_rho, d_u, d_s = mm1_arrays(g, params, *x)
        return d_rho, d_u - g.dealias(lame_coeffs(g, x[1], params.mu, params.lam)), d_s

    return _lawson_rk4(tuple(w), factor.dt, factor.apply, factor.half.apply, nonlinear)


def run_primitive(initial: PrimitiveState, dt: float, T: float, params: FluidParams,
                  callback=None) -> tuple[PrimitiveState, float]:
    """Integrate the primitive system with the conserved product ``rho*theta`` as unknown."""
    g = initial.rho.grid
    s = g.to_spectral(initial.rho.physical() * initial.theta.physical())
    w = (initial.rho.coeffs, initial.u.coeffs, s)
    t = 0.0
    factor = ViscousFactor(g, params, dt)
    nsteps = int(round(T / dt))
    if callback:
        callback(t, w)
    for i in range(nsteps):
        w = step_primitive(w, factor, params)
        t = (i + 1) * dt
        if callback:
            callback(t, w)
    rho_p = g.to_physical(w[0])
    theta = SpectralField(g, g.to_spectral(g.to_physical(w[2]) / rho_p))
    return PrimitiveState(SpectralField(g, w[0]), SpectralField(g, w[1]), theta), t


# -- checkpoints --------------------------------------------------------------------

MAGIC = b"THFL"
VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")


def checkpoint_save(state: PerturbationState, t: float, path) -> None:
    """Write ``state`` at time ``t``; coefficients as little-endian complex128 in DFT order."""
    g = state.grid
    header = _HEADER.pack(MAGIC, VERSION, g.n, g.N, g.L, float(t))
    body = [np.ascontiguousarray(x, dtype="<c16").tobytes()
            for x in (state.a.coeffs, state.u.coeffs, state.b.coeffs)]
    Path(path).write_bytes(header + b"".join(body))


def checkpoint_load(path) -> tuple[PerturbationState, float]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version, n, N, L, t = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        g = Grid(n, N, L)
    except ConfigurationError as exc:
        raise CheckpointError(f"invalid grid in header: {exc}") from exc
    count = N**n
    expected = _HEADER.size + 16 * count * (n + 2)
    if len(data) != expected:
        raise CheckpointError(f"expected {expected} bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype="<c16", offset=_HEADER.size).astype(complex)
    a = arr[:count].reshape(g.shape)
    u = arr[count:count * (n + 1)].reshape((n,) + g.shape)
    b = arr[count * (n + 1):].reshape(g.shape)
    return PerturbationState.from_arrays(g, a, u, b), t
