"""Periodic grid, Fourier transforms and symbol-defined operators.

The domain is the torus ``(2*pi*L * T)^n`` so the admissible wavenumbers are
``Z^n / L``.  Coefficients are stored in full (not half) DFT layout with the
``norm="forward"`` convention: a constant field ``c`` has coefficient ``c`` at
the zero mode and ``cos(k.x)`` has coefficients ``1/2`` at ``+-k``.

Scalar fields carry arrays of shape ``(N,)*n``; vector fields carry a leading
component axis, ``(n,) + (N,)*n``.

Operators with an odd symbol (``i k``) are applied with the Nyquist component
of ``k`` set to zero, which keeps real fields real.  Even symbols (``|k|^s``,
``k k^T / |k|^2``) use the raw Nyquist wavenumber.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from thetaflow.errors import ConfigurationError, ParameterError, PreconditionError

MEAN_TOL = 1e-12


class Grid:
    """Uniform periodic grid with precomputed wavenumber tables.

    Parameters
    ----------
    n : int
        Spatial dimension, 2 or 3.
    N : int
        Modes per axis; an even number, normally a power of two.
    L : float
        Period scale; each axis has length ``2*pi*L``.
    """

    def __init__(self, n: int = 2, N: int = 128, L: float = 4.0):
        if n not in (2, 3):
            raise ConfigurationError(f"dimension must be 2 or 3, got {n}")
        if N < 4 or N % 2:
            raise ConfigurationError(f"N must be even and >= 4, got {N}")
        if not L > 0:
            raise ConfigurationError(f"L must be positive, got {L}")
        self.n = int(n)
        self.N = int(N)
        self.L = float(L)
        self.shape = (self.N,) * self.n

        m = np.fft.fftfreq(self.N, 1.0 / self.N)
        self.k1d = m / self.L
        mesh = np.meshgrid(*([m] * self.n), indexing="ij")
        self.index = np.stack(mesh).astype(np.int64)
        self.k = np.stack(mesh) / self.L
        nyq = np.abs(self.index) == self.N // 2
        self.nyquist = nyq
        self.k_odd = np.where(nyq, 0.0, self.k)
        self.k2 = np.sum(self.k**2, axis=0)
        self.kmod = np.sqrt(self.k2)
        self.zero = (0,) * self.n
        # 2/3 rule: keep |m_axis| <= N/3
        self.dealias_mask = np.all(np.abs(self.index) <= self.N / 3.0, axis=0)

    def __repr__(self):
        return f"Grid(n={self.n}, N={self.N}, L={self.L!r})"

    def __eq__(self, other):
        return isinstance(other, Grid) and (self.n, self.N, self.L) == (other.n, other.N, other.L)

    def __hash__(self):
        return hash((self.n, self.N, self.L))

    @property
    def volume(self) -> float:
        return (2 * np.pi * self.L) ** self.n

    @property
    def k_nyquist(self) -> float:
        """Largest axis wavenumber, ``(N/2)/L``."""
        return self.N / 2 / self.L

    @property
    def k_dealias(self) -> float:
        return (2.0 / 3.0) * self.k_nyquist

    @cached_property
    def x(self) -> np.ndarray:
        """Physical coordinates, shape ``(n,) + shape``."""
        x1 = 2 * np.pi * self.L * np.arange(self.N) / self.N
        return np.stack(np.meshgrid(*([x1] * self.n), indexing="ij"))

    @cached_property
    def kmod_safe(self) -> np.ndarray:
        out = self.kmod.copy()
        out[self.zero] = 1.0
        return out

    @cached_property
    def neg_index(self):
        """Index tuple mapping each mode ``k`` to ``-k``."""
        idx = (-np.arange(self.N)) % self.N
        return np.ix_(*([idx] * self.n))

    @cached_property
    def upper_half(self) -> np.ndarray:
        """Mask of one representative per conjugate pair (lexicographically positive)."""
        mask = np.zeros(self.shape, dtype=bool)
        decided = np.zeros(self.shape, dtype=bool)
        for ax in range(self.n):
            m = self.index[ax]
            mask |= ~decided & (m > 0)
            decided |= m != 0
        return mask

    def moduli(self) -> np.ndarray:
        """Sorted distinct nonzero wavenumber moduli."""
        return np.unique(np.round(self.kmod[self.kmod > 0], 12))

    # -- raw transforms on coefficient arrays ---------------------------
    def _axes(self):
        return tuple(range(-self.n, 0))

    def to_physical(self, coeffs: np.ndarray) -> np.ndarray:
        # the half spectrum suffices for Hermitian input
        half = coeffs[..., : self.N // 2 + 1]
        return sfft.irfftn(half, s=self.shape, axes=self._axes(), norm="forward")

    def to_spectral(self, values: np.ndarray) -> np.ndarray:
        return sfft.fftn(values, axes=self._axes(), norm="forward")

    @cached_property
    def ik(self) -> np.ndarray:
        """Odd derivative symbol ``i k`` with Nyquist components removed."""
        return 1j * self.k_odd

    @cached_property
    def khat(self) -> np.ndarray:
        """``k_odd / |k|``, zero at the zero mode."""
        out = self.k_odd / self.kmod_safe
        out[(slice(None),) + self.zero] = 0.0
        return out

    def ddx(self, coeffs: np.ndarray, axis: int) -> np.ndarray:
        return self.ik[axis] * coeffs

    def grad(self, coeffs: np.ndarray) -> np.ndarray:
        """Gradient of scalar coeffs (or Jacobian rows of a vector, shape (n, n, ...))."""
        return self.ik.reshape((self.n,) + (1,) * (coeffs.ndim - self.n) + self.shape) * coeffs

    def div(self, coeffs: np.ndarray) -> np.ndarray:
        return np.sum(self.ik * coeffs, axis=0)

    def laplacian(self, coeffs: np.ndarray) -> np.ndarray:
        return -self.k2 * coeffs

    def dealias(self, coeffs: np.ndarray) -> np.ndarray:
        return np.where(self.dealias_mask, coeffs, 0.0)

    def norm2(self, coeffs: np.ndarray) -> float:
        return float(np.sqrt(self.volume * np.sum(np.abs(coeffs) ** 2)))


def _mean_is_zero(coeffs: np.ndarray, grid: Grid) -> bool:
    comps = coeffs.reshape((-1,) + grid.shape)
    mean = np.abs(comps[(slice(None),) + grid.zero]).max()
    scale = np.abs(coeffs).max() if coeffs.size else 0.0
    return mean <= MEAN_TOL * max(scale, 1e-300) or mean == 0.0


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients of a real periodic scalar or vector field."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        shape = self.coeffs.shape
        if shape[-self.grid.n:] != self.grid.shape or len(shape) not in (self.grid.n, self.grid.n + 1):
            raise ConfigurationError(f"coefficient shape {shape} does not match {self.grid}")

    @property
    def components(self) -> int:
        return 1 if self.coeffs.ndim == self.grid.n else self.coeffs.shape[0]

    @property
    def is_vector(self) -> bool:
        return self.coeffs.ndim == self.grid.n + 1

    @classmethod
    def zeros(cls, grid: Grid, components: int = 1) -> "SpectralField":
        shape = grid.shape if components == 1 else (components,) + grid.shape
        return cls(grid, np.zeros(shape, dtype=complex))

    def _wrap(self, coeffs):
        return SpectralField(self.grid, coeffs)

    def __add__(self, other):
        return self._wrap(self.coeffs + _coeffs(other))

    def __sub__(self, other):
        return self._wrap(self.coeffs - _coeffs(other))

    def __neg__(self):
        return self._wrap(-self.coeffs)

    def __mul__(self, scalar):
        return self._wrap(self.coeffs * scalar)

    __rmul__ = __mul__

    def __getitem__(self, i) -> "SpectralField":
        if not self.is_vector:
            raise TypeError("only vector fields can be indexed")
        return self._wrap(self.coeffs[i])

    @property
    def mean(self):
        return self.coeffs[(Ellipsis,) + self.grid.zero].real

    def physical(self) -> np.ndarray:
        return fft_inverse(self)

    def norm(self) -> float:
        return l2_norm(self)

    def hermitian_defect(self) -> float:
        """Relative violation of ``c(-k) = conj(c(k))``."""
        c = self.coeffs
        flipped = c[(Ellipsis,) + self.grid.neg_index]
        scale = np.abs(c).max()
        if scale == 0:
            return 0.0
        return float(np.abs(c - np.conj(flipped)).max() / scale)


def _coeffs(x):
    return x.coeffs if isinstance(x, SpectralField) else x


def fft_forward(grid: Grid, samples: np.ndarray) -> SpectralField:
    """Transform physical samples (scalar or vector) to a :class:`SpectralField`."""
    samples = np.asarray(samples)
    if samples.shape[-grid.n:] != grid.shape or samples.ndim not in (grid.n, grid.n + 1):
        raise ConfigurationError(f"sample shape {samples.shape} does not match {grid}")
    if np.iscomplexobj(samples):
        raise ConfigurationError("physical samples must be real")
    return SpectralField(grid, grid.to_spectral(samples))


def fft_inverse(field: SpectralField) -> np.ndarray:
    return field.grid.to_physical(field.coeffs)


def derivative(f: SpectralField, axis: int) -> SpectralField:
    if not 0 <= axis < f.grid.n:
        raise PreconditionError(f"axis {axis} out of range for n={f.grid.n}")
    return f._wrap(f.grid.ddx(f.coeffs, axis))


def gradient(f: SpectralField) -> SpectralField:
    if f.is_vector:
        raise PreconditionError("gradient expects a scalar field")
    return f._wrap(f.grid.grad(f.coeffs))


def divergence(u: SpectralField) -> SpectralField:
    if u.components != u.grid.n:
        raise PreconditionError("divergence expects an n-component vector field")
    return u._wrap(u.grid.div(u.coeffs))


def fractional_laplacian(f: SpectralField, s: float) -> SpectralField:
    """Apply ``Lambda^s``, the multiplier ``|k|^s``; the zero mode is sent to 0 for ``s != 0``."""
    g = f.grid
    if s == 0:
        return f._wrap(f.coeffs.copy())
    if s < 0 and not _mean_is_zero(f.coeffs, g):
        raise PreconditionError("negative powers of Lambda need a zero-mean field")
    sym = g.kmod_safe ** s
    sym[g.zero] = 0.0
    return f._wrap(f.coeffs * sym)


def inverse_laplacian(f: SpectralField) -> SpectralField:
    g = f.grid
    if not _mean_is_zero(f.coeffs, g):
        raise PreconditionError("inverse Laplacian needs a zero-mean field")
    sym = -1.0 / g.kmod_safe**2
    sym[g.zero] = 0.0
    return f._wrap(f.coeffs * sym)


def _q_symbol_apply(g: Grid, coeffs: np.ndarray) -> np.ndarray:
    kdotu = np.sum(g.k * coeffs, axis=0) / g.kmod_safe**2
    q = g.k * kdotu
    q[(slice(None),) + g.zero] = 0.0
    return q


def helmholtz(u: SpectralField) -> tuple[SpectralField, SpectralField]:
    """Split ``u`` into its divergence-free part ``Pu`` and gradient part ``Qu``.

    The zero mode is assigned entirely to ``Pu``.
    """
    if u.components != u.grid.n:
        raise PreconditionError("helmholtz expects an n-component vector field")
    q = _q_symbol_apply(u.grid, u.coeffs)
    return u._wrap(u.coeffs - q), u._wrap(q)


def check_viscosity(mu: float, lam: float, n: int) -> None:
    if not mu > 0 or not n * lam + 2 * mu > 0:
        raise ParameterError(f"need mu > 0 and n*lambda + 2*mu > 0 (mu={mu}, lambda={lam}, n={n})")


def lame_coeffs(g: Grid, coeffs: np.ndarray, mu: float, lam: float) -> np.ndarray:
    lap = -g.k2 * coeffs
    graddiv = -g.k * np.sum(g.k * coeffs, axis=0)
    return mu * lap + (lam + mu) * graddiv


def lame_operator(u: SpectralField, mu: float = 1.0, lam: float = 0.0) -> SpectralField:
    """``mu*Lap u + (lambda+mu)*grad div u``."""
    check_viscosity(mu, lam, u.grid.n)
    if u.components != u.grid.n:
        raise PreconditionError("lame_operator expects an n-component vector field")
    return u._wrap(lame_coeffs(u.grid, u.coeffs, mu, lam))


def dealias(f: SpectralField) -> SpectralField:
    return f._wrap(f.grid.dealias(f.coeffs))


def l2_norm(f: SpectralField) -> float:
    """L2 norm over the torus (Parseval, summed over components)."""
    return f.grid.norm2(f.coeffs)


def inner(f: SpectralField, g: SpectralField) -> float:
    """Real L2 inner product over the torus."""
    return float(f.grid.volume * np.sum((f.coeffs * np.conj(g.coeffs)).real))


def band_limited_coeffs(grid: Grid, rng: np.random.Generator, m_max: int,
                        components: int = 1, kmin: float = 0.0, kmax: float = np.inf) -> np.ndarray:
    """Random real-field coefficients on integer indices ``|m_axis| <= m_max``.

    The draw depends only on ``(rng, m_max, n, components)``, not on ``N``, so the
    same seed yields the same continuum field on every grid that resolves it.
    Modes with modulus outside ``[kmin, kmax]`` and the zero mode are removed.
    """
    if 2 * m_max >= grid.N:
        raise ConfigurationError(f"index band {m_max} does not fit on N={grid.N}")
    side = 2 * m_max + 1
    cube = (side,) * grid.n
    shape = cube if components == 1 else (components,) + cube
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    axes = tuple(range(-grid.n, 0))
    c = 0.5 * (c + np.conj(np.flip(c, axis=axes)))
    m = np.arange(-m_max, m_max + 1)
    mesh = np.stack(np.meshgrid(*([m] * grid.n), indexing="ij"))
    mod = np.sqrt(np.sum(mesh.astype(float) ** 2, axis=0)) / grid.L
    keep = (mod >= kmin) & (mod <= kmax) & (mod > 0)
    c = np.where(keep, c, 0.0)
    out = np.zeros(grid.shape if components == 1 else (components,) + grid.shape, dtype=complex)
    idx = np.ix_(*([m % grid.N] * grid.n))
    out[(Ellipsis,) + idx] = c
    return out
