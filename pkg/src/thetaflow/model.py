"""States, right-hand sides and derived unknowns of the compressible system.

Three formulations are represented:

* primitive ``(rho, u, theta)`` with pressure ``P = A (rho theta)^gamma``;
* pressure form ``(rho, u, P)``;
* perturbation form ``(a, u, b)`` with ``rho = 1 + a`` and ``P = 1 + b``.

Quadratic products are formed pseudo-spectrally and truncated by the 2/3 rule;
non-polynomial functions (``I(a) = a/(1+a)``, power laws, division by ``rho``)
are evaluated pointwise on the grid.  Keep the active spectrum below ``N/4``
per axis so the pointwise nonlinearities stay well resolved.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from thetaflow.errors import ParameterError, PreconditionError, StateError
from thetaflow.spectral import Grid, SpectralField, check_viscosity, lame_coeffs

DEFAULT_FLOOR = 0.1


@dataclass(frozen=True)
class FluidParams:
    mu: float = 1.0
    lam: float = 0.0
    gamma: float = 1.4
    A: float = 1.0
    n: int = 2
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        check_viscosity(self.mu, self.lam, self.n)
        if not self.gamma > 1:
            raise ParameterError(f"adiabatic index must exceed 1, got {self.gamma}")
        if not self.A > 0:
            raise ParameterError(f"pressure constant must be positive, got {self.A}")
        if not 0 < self.floor < 1:
            raise ParameterError(f"density floor must lie in (0, 1), got {self.floor}")

    @property
    def nu_q(self) -> float:
        """Viscosity felt by the gradient part of the velocity, ``lambda + 2 mu``."""
        return self.lam + 2 * self.mu


def _physical_min(f: SpectralField) -> float:
    return float(f.physical().min())


@dataclass(frozen=True, eq=False)
class PrimitiveState:
    rho: SpectralField
    u: SpectralField
    theta: SpectralField

    def __post_init__(self):
        if _physical_min(self.rho) <= 0:
            raise StateError("density must be positive")
        if _physical_min(self.theta) <= 0:
            raise StateError("potential temperature must be positive")


@dataclass(frozen=True, eq=False)
class PressureState:
    rho: SpectralField
    u: SpectralField
    P: SpectralField

    def __post_init__(self):
        if _physical_min(self.rho) <= 0:
            raise StateError("density must be positive")
        if _physical_min(self.P) <= 0:
            raise StateError("pressure must be positive")


@dataclass(frozen=True, eq=False)
class PerturbationState:
    """``(a, u, b)`` with ``rho = 1 + a`` and ``P = 1 + b``.

    ``a`` is zero-mean (its mean is conserved by the dynamics).  The mean of
    ``b`` is zero initially but not conserved on the torus; it is left free.
    """

    a: SpectralField
    u: SpectralField
    b: SpectralField

    @property
    def grid(self) -> Grid:
        return self.a.grid

    @classmethod
    def zeros(cls, grid: Grid) -> "PerturbationState":
        return cls(SpectralField.zeros(grid), SpectralField.zeros(grid, grid.n), SpectralField.zeros(grid))

    @classmethod
    def from_arrays(cls, grid: Grid, a, u, b) -> "PerturbationState":
        return cls(SpectralField(grid, a), SpectralField(grid, u), SpectralField(grid, b))

    def arrays(self):
        return self.a.coeffs, self.u.coeffs, self.b.coeffs


def check_floor(a_phys: np.ndarray, floor: float) -> None:
    lo = float(np.min(a_phys)) + 1.0
    if not lo > floor:
        raise StateError(f"min(1 + a) = {lo:.4g} is below the floor {floor}")


def check_zero_mean(f: SpectralField, name: str) -> None:
    mean = abs(complex(f.coeffs[f.grid.zero]))
    if mean > 1e-12 * max(np.abs(f.coeffs).max(), 1e-300) and mean > 0:
        raise PreconditionError(f"{name} must have zero mean (mean = {mean:.3g})")


def pressure_law(rho: SpectralField, theta: SpectralField, params: FluidParams) -> SpectralField:
    """``P = A (rho theta)^gamma`` evaluated pointwise."""
    r, th = rho.physical(), theta.physical()
    if r.min() <= 0 or th.min() <= 0:
        raise StateError("pressure law needs positive density and temperature")
    return SpectralField(rho.grid, rho.grid.to_spectral(params.A * (r * th) ** params.gamma))


def to_pressure_form(state: PrimitiveState, params: FluidParams) -> PressureState:
    return PressureState(state.rho, state.u, pressure_law(state.rho, state.theta, params))


def to_perturbation(state: PressureState, floor: float = DEFAULT_FLOOR) -> PerturbationState:
    g = state.rho.grid
    one = np.zeros(g.shape, dtype=complex)
    one[g.zero] = 1.0
    a = SpectralField(g, state.rho.coeffs - one)
    b = SpectralField(g, state.P.coeffs - one)
    check_zero_mean(a, "a")
    check_zero_mean(b, "b")
    check_floor(a.physical(), floor)
    return PerturbationState(a, state.u, b)


def from_perturbation(state: PerturbationState) -> PressureState:
    g = state.grid
    one = np.zeros(g.shape, dtype=complex)
    one[g.zero] = 1.0
    return PressureState(SpectralField(g, state.a.coeffs + one), state.u, SpectralField(g, state.b.coeffs + one))


def primitive_from_perturbation(state: PerturbationState, params: FluidParams) -> PrimitiveState:
    """Primitive variables with ``A (rho theta)^gamma = 1 + b``."""
    g = state.grid
    rho = 1.0 + state.a.physical()
    P = 1.0 + state.b.physical()
    if rho.min() <= 0 or P.min() <= 0:
        raise StateError("perturbation does not correspond to a positive state")
    s = (P / params.A) ** (1.0 / params.gamma)
    return PrimitiveState(SpectralField(g, g.to_spectral(rho)), state.u,
                          SpectralField(g, g.to_spectral(s / rho)))


def rational_density_fn(a, floor: float = DEFAULT_FLOOR):
    """``I(a) = a / (1 + a)`` pointwise; accepts physical arrays or spectral fields."""
    if isinstance(a, SpectralField):
        vals = a.physical()
        check_floor(vals, floor)
        return SpectralField(a.grid, a.grid.to_spectral(vals / (1.0 + vals)))
    a = np.asarray(a, dtype=float)
    check_floor(a, floor)
    return a / (1.0 + a)


# -- right-hand sides ---------------------------------------------------------

class Tendency(NamedTuple):
    a: np.ndarray
    u: np.ndarray
    b: np.ndarray


def _dot_grad(g: Grid, u_phys: np.ndarray, grad_phys: np.ndarray) -> np.ndarray:
    """``u . grad f`` for scalar (grad shape (n, ...)) or vector f (grad shape (n, c, ...))."""
    if grad_phys.ndim == u_phys.ndim:
        return np.sum(u_phys * grad_phys, axis=0)
    return np.sum(u_phys[:, None] * grad_phys, axis=0)


class Mm3Pieces(NamedTuple):
    a: np.ndarray          # physical a
    b: np.ndarray
    u: np.ndarray
    div_u: np.ndarray
    grad_b: np.ndarray
    grad_a: np.ndarray
    grad_u: np.ndarray
    lame_u: np.ndarray     # physical Lame u
    I: np.ndarray          # physical I(a)


def mm3_pieces(g: Grid, params: FluidParams, a: np.ndarray, u: np.ndarray, b: np.ndarray) -> Mm3Pieces:
    n = g.n
    lame_u = lame_coeffs(g, u, params.mu, params.lam)
    stack = np.concatenate([
        a[None], b[None], u, g.div(u)[None], g.grad(b), g.grad(a),
        g.grad(u).reshape((n * n,) + g.shape), lame_u,
    ])
    phys = g.to_physical(stack)
    a_p = phys[0]
    check_floor(a_p, params.floor)
    return Mm3Pieces(
        a=a_p, b=phys[1], u=phys[2:2 + n], div_u=phys[2 + n],
        grad_b=phys[3 + n:3 + 2 * n], grad_a=phys[3 + 2 * n:3 + 3 * n],
        grad_u=phys[3 + 3 * n:3 + 3 * n + n * n].reshape((n, n) + g.shape),
        lame_u=phys[3 + 3 * n + n * n:], I=a_p / (1.0 + a_p),
    )


def force_physical(g: Grid, p: Mm3Pieces) -> np.ndarray:
    """``F = I(a) grad b - I(a) Lame u`` in physical space (not truncated)."""
    return p.I * (p.grad_b - p.lame_u)


def nonlinear_mm3(g: Grid, params: FluidParams, a, u, b, pieces: Mm3Pieces | None = None) -> Tendency:
    """Nonlinear part of the perturbation system, truncated by the 2/3 rule."""
    p = pieces if pieces is not None else mm3_pieces(g, params, a, u, b)
    sp = g.to_spectral
    na = -(_dot_grad(g, p.u, p.grad_a) + p.a * p.div_u)
    nb = -(_dot_grad(g, p.u, p.grad_b) + params.gamma * p.b * p.div_u)
    nu = -_dot_grad(g, p.u, p.grad_u) + force_physical(g, p)
    out = g.dealias(sp(np.concatenate([na[None], nu, nb[None]])))
    out[(0,) + g.zero] = 0.0  # mean of a is exactly conserved
    return Tendency(out[0], out[1:1 + g.n], out[1 + g.n])


def linear_mm3(g: Grid, params: FluidParams, a, u, b) -> Tendency:
    div_u = g.div(u)
    return Tendency(-div_u, lame_coeffs(g, u, params.mu, params.lam) - g.grad(b), -params.gamma * div_u)


def rhs_mm3(state: PerturbationState, params: FluidParams) -> tuple[SpectralField, SpectralField, SpectralField]:
    """Tendencies ``(da/dt, du/dt, db/dt)`` of the perturbation system."""
    g = state.grid
    a, u, b = state.arrays()
    lin = linear_mm3(g, params, a, u, b)
    non = nonlinear_mm3(g, params, a, u, b)
    return tuple(SpectralField(g, x + y) for x, y in zip(lin, non))


class Mm1Tendency(NamedTuple):
    rho: SpectralField
    u: SpectralField
    theta: SpectralField
    rho_theta: SpectralField


def mm1_arrays(g: Grid, params: FluidParams, rho, u, s):
    """Tendencies of ``(rho, u, s = rho*theta)`` in the primitive system (truncated)."""
    ph, sp = g.to_physical, g.to_spectral
    r_p, u_p, s_p = ph(rho), ph(u), ph(s)
    if r_p.min() <= 0 or s_p.min() <= 0:
        raise StateError("primitive state lost positivity")
    P = params.A * s_p**params.gamma
    grad_P = ph(g.grad(sp(P)))
    lame = ph(lame_coeffs(g, u, params.mu, params.lam))
    grad_u = ph(g.grad(u))
    d_rho = -g.div(sp(r_p * u_p))
    d_s = -g.div(sp(s_p * u_p))
    d_u = sp(-_dot_grad(g, u_p, grad_u) + (lame - grad_P) / r_p)
    return g.dealias(d_rho), g.dealias(d_u), g.dealias(d_s)


def rhs_mm1(state: PrimitiveState, params: FluidParams) -> Mm1Tendency:
    g = state.rho.grid
    rho_p, th_p = state.rho.physical(), state.theta.physical()
    s = g.to_spectral(rho_p * th_p)
    d_rho, d_u, d_s = mm1_arrays(g, params, state.rho.coeffs, state.u.coeffs, s)
    # theta = s / rho  =>  d theta = (ds - theta d rho) / rho
    d_th = g.to_spectral((g.to_physical(d_s) - th_p * g.to_physical(d_rho)) / rho_p)
    return Mm1Tendency(SpectralField(g, d_rho), SpectralField(g, d_u),
                       SpectralField(g, d_th), SpectralField(g, d_s))


def mm1_as_perturbation_tendency(state: PrimitiveState, params: FluidParams) -> tuple:
    """Map primitive tendencies to ``(da, du, db)`` with ``db = gamma P / s * ds``."""
    g = state.rho.grid
    tend = rhs_mm1(state, params)
    s = state.rho.physical() * state.theta.physical()
    P = params.A * s**params.gamma
    db = g.to_spectral(params.gamma * P / s * tend.rho_theta.physical())
    return tend.rho, tend.u, SpectralField(g, db)


def nonlinear_force(a: SpectralField, u: SpectralField, b: SpectralField, params: FluidParams) -> SpectralField:
    """``F(a, u, b) = I(a) grad b - I(a) Lame u``, truncated."""
    g = a.grid
    p = mm3_pieces(g, params, a.coeffs, u.coeffs, b.coeffs)
    return SpectralField(g, g.dealias(g.to_spectral(force_physical(g, p))))


# -- good unknowns -----------------------------------------------------------

def good_unknown_phi(a: SpectralField, b: SpectralField, params: FluidParams) -> SpectralField:
    """``phi = gamma a - b``; annihilates the linear ``div u`` coupling."""
    return SpectralField(a.grid, params.gamma * a.coeffs - b.coeffs)


def compressible_coeffs(g: Grid, u: np.ndarray) -> np.ndarray:
    v = g.div(u) / g.kmod_safe
    v[g.zero] = 0.0
    return v


def compressible_scalar(u: SpectralField) -> SpectralField:
    """``v = Lambda^-1 div u``; for ``u = grad f`` this is ``-Lambda f``."""
    return SpectralField(u.grid, compressible_coeffs(u.grid, u.coeffs))


def q_from_compressible(g: Grid, v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`compressible_coeffs` on gradient fields: ``Qu = -grad Lambda^-1 v``."""
    q = -1j * g.k_odd * v / g.kmod_safe
    q[(slice(None),) + g.zero] = 0.0
    return q


def inv_lap_grad(g: Grid, f: np.ndarray) -> np.ndarray:
    """Symbol of ``Delta^-1 grad`` applied to scalar coefficients."""
    out = -1j * g.k_odd * f / g.kmod_safe**2
    out[(slice(None),) + g.zero] = 0.0
    return out


def q_project(g: Grid, u: np.ndarray) -> np.ndarray:
    kdotu = np.sum(g.k_odd * u, axis=0) / g.kmod_safe**2
    q = g.k_odd * kdotu
    q[(slice(None),) + g.zero] = 0.0
    return q


def effective_velocity(u: SpectralField, b: SpectralField, params: FluidParams) -> SpectralField:
    """``G = Qu - (1/nu_q) Delta^-1 grad b``."""
    g = u.grid
    return SpectralField(g, q_project(g, u.coeffs) - inv_lap_grad(g, b.coeffs) / params.nu_q)


def sources_arrays(g: Grid, params: FluidParams, a, u, b, pieces: Mm3Pieces | None = None):
    p = pieces if pieces is not None else mm3_pieces(g, params, a, u, b)
    sp = g.to_spectral
    f1 = g.dealias(sp(-(_dot_grad(g, p.u, p.grad_b) + params.gamma * p.b * p.div_u)))
    w = g.dealias(sp(-_dot_grad(g, p.u, p.grad_u) + force_physical(g, p)))
    f2 = compressible_coeffs(g, w)
    return f1, f2


def low_freq_sources(state: PerturbationState, params: FluidParams) -> tuple[SpectralField, SpectralField]:
    """``f1 = -u.grad b - gamma b div u`` and ``f2 = Lambda^-1 div(-u.grad u + F)``.

    ``f1`` keeps its mean, which drives the mean of ``b``.
    """
    g = state.grid
    f1, f2 = sources_arrays(g, params, *state.arrays())
    return SpectralField(g, f1), SpectralField(g, f2)


def conserved_integrals(state: PrimitiveState) -> tuple[float, float]:
    """``(int rho, int rho*theta)`` by grid quadrature."""
    g = state.rho.grid
    rho, th = state.rho.physical(), state.theta.physical()
    cell = g.volume / g.N**g.n
    return float(rho.sum() * cell), float((rho * th).sum() * cell)


# -- residual checks ---------------------------------------------------------

class Residual(NamedTuple):
    norm: float
    scale: float

    @property
    def relative(self) -> float:
        return self.norm / self.scale if self.scale > 0 else (0.0 if self.norm == 0 else np.inf)


def _time_residual(samples, terms_fn, g: Grid, params: FluidParams, drop_mean: bool = False) -> Residual:
    """Residual of ``d_t X + sum(terms) = 0`` from two or three equally spaced samples.

    Two samples use the centered difference with the trapezoidal average of the
    terms; three use the same difference across the outer samples with
    Simpson weights, which removes the ``O(h^2)`` quadrature error.
    """
    if len(samples) not in (2, 3):
        raise PreconditionError("residuals need two or three samples")
    evaluated = [(t, *terms_fn(g, params, s)) for t, s in samples]
    weights = (0.5, 0.5) if len(samples) == 2 else (1 / 6, 4 / 6, 1 / 6)
    t_first, x_first, _ = evaluated[0]
    t_last, x_last, _ = evaluated[-1]
    if len(samples) == 3:
        h1, h2 = evaluated[1][0] - t_first, t_last - evaluated[1][0]
        if abs(h1 - h2) > 1e-9 * abs(h1 + h2):
            raise PreconditionError("three-sample residuals need equally spaced samples")
    dx = (x_last - x_first) / (t_last - t_first)
    avg = [sum(w * e[2][i] for w, e in zip(weights, evaluated)) for i in range(len(evaluated[0][2]))]
    res = dx + sum(avg)
    if drop_mean:
        for arr in [res, dx] + avg:
            arr[g.zero] = 0.0
    scale = g.norm2(dx) + sum(g.norm2(x) for x in avg)
    return Residual(g.norm2(res), scale)


def _phi_terms(g, params, state):
    a, u, b = state.arrays()
    p = mm3_pieces(g, params, a, u, b)
    phi = params.gamma * a - b
    adv = g.dealias(g.to_spectral(_dot_grad(g, p.u, g.to_physical(g.grad(phi)))))
    src = g.dealias(g.to_spectral(params.gamma * (p.a - p.b) * p.div_u))
    return phi, [adv, src]


def residual_phi_equation(samples, params: FluidParams) -> Residual:
    """Residual of ``d_t phi + u.grad phi + gamma (a - b) div u = 0`` for ``phi = gamma a - b``.

    ``samples`` holds two or three equally spaced ``(t, PerturbationState)`` pairs.
    """
    g = samples[0][1].grid
    return _time_residual(samples, _phi_terms, g, params)


def _g_terms(g: Grid, params: FluidParams, state: PerturbationState):
    a, u, b = state.arrays()
    nu, gam = params.nu_q, params.gamma
    p = mm3_pieces(g, params, a, u, b)
    sp, D = g.to_spectral, g.dealias
    G = q_project(g, u) - inv_lap_grad(g, b) / nu
    bu = D(sp(p.b * p.u))
    bdiv = D(sp(p.b * p.div_u))
    adv = D(sp(_dot_grad(g, p.u, p.grad_u)))
    F = D(sp(force_physical(g, p)))
    terms = [
        -nu * g.laplacian(G),
        -(gam / nu) * G,
        -(gam / nu**2) * inv_lap_grad(g, b),
        -(1.0 / nu) * q_project(g, bu),
        -((gam - 1.0) / nu) * inv_lap_grad(g, bdiv),
        q_project(g, adv),
        -q_project(g, F),
    ]
    return G, terms


def residual_G_equation(samples, params: FluidParams) -> Residual:
    """Residual of the parabolic equation satisfied by the effective velocity.

    ``d_t G - nu Lap G = (gamma/nu) G + (gamma/nu^2) Delta^-1 grad b + (1/nu) Q(b u)
    + ((gamma-1)/nu) Delta^-1 grad(b div u) - Q(u.grad u) + Q F``.  With ``nu = 2``
    this is the classical form; other values are evaluated but flagged by callers.
    """
    g = samples[0][1].grid
    return _time_residual(samples, _g_terms, g, params)


def _b_damped_terms(g, params, state):
    a, u, b = state.arrays()
    p = mm3_pieces(g, params, a, u, b)
    G = q_project(g, u) - inv_lap_grad(g, b) / params.nu_q
    D, sp = g.dealias, g.to_spectral
    terms = [
        (params.gamma / params.nu_q) * b,
        D(sp(_dot_grad(g, p.u, p.grad_b))),
        params.gamma * g.div(G),
        D(sp(params.gamma * p.b * p.div_u)),
    ]
    return b, terms


def residual_b_damped(samples, params: FluidParams) -> Residual:
    """Residual of ``d_t b + (gamma/nu) b + u.grad b = -gamma div G - gamma b div u``.

    Evaluated on the zero-mean part (the mean of ``b`` is not governed by this form).
    """
    g = samples[0][1].grid
    return _time_residual(samples, _b_damped_terms, g, params, drop_mean=True)
