"""Fourier-Galerkin operators for divergence-free fields on the torus [0, 2pi]^2.

Spectral coefficients are stored as normalized real-FFT half spectra with
shape ``(..., 2, N, N//2 + 1)``: the first axis is the vector component,
axis -2 runs over k1 (``fftfreq`` order) and axis -1 over k2 >= 0.  The
normalization is ``u(x) = sum_k u_hat(k) exp(i k.x)``, so Parseval reads
``||u||_H^2 = (2 pi)^2 sum_k |u_hat(k)|^2``.

All kernels accept arbitrary leading batch dimensions.  Products are formed
pseudospectrally; the quadratic term is dealiased by the 2/3 rule and the
Forchheimer power by evaluation on a zero-padded grid, so that for odd integer
exponents every pairing below is an exact integral of trigonometric
polynomials (up to rounding).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi
AREA = TWO_PI**2


class GridMismatchError(ValueError):
    """Raised when two fields live on different grids."""


def _is_odd_int(r: float) -> bool:
    return float(r).is_integer() and int(r) % 2 == 1


@dataclass(frozen=True)
class GridSpec:
    """Uniform N x N collocation grid on the 2pi-periodic torus.

    ``dealias`` is the fraction of the resolved band that is retained: a
    wavevector survives when ``|k_i| < dealias * N / 2`` for both components.
    """

    n: int
    dealias: Fraction = Fraction(2, 3)

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 4 or self.n % 2:
            raise ValueError(f"modes_per_axis must be an even integer >= 4, got {self.n!r}")
        frac = Fraction(self.dealias)
        if not 0 < frac <= 1:
            raise ValueError(f"dealias fraction must lie in (0, 1], got {self.dealias}")
        object.__setattr__(self, "dealias", frac)

    @property
    def period(self) -> float:
        return TWO_PI

    @property
    def half(self) -> int:
        return self.n // 2 + 1

    @property
    def spectral_shape(self) -> tuple[int, int, int]:
        return (2, self.n, self.half)

    @property
    def cell_area(self) -> float:
        return (TWO_PI / self.n) ** 2

    @cached_property
    def k1(self) -> np.ndarray:
        return (np.fft.fftfreq(self.n) * self.n)[:, None]

    @cached_property
    def k2(self) -> np.ndarray:
        return np.arange(self.half, dtype=float)[None, :]

    @cached_property
    def ksq(self) -> np.ndarray:
        return self.k1**2 + self.k2**2

    @cached_property
    def inv_ksq(self) -> np.ndarray:
        out = np.zeros_like(self.ksq)
        np.divide(1.0, self.ksq, out=out, where=self.ksq > 0)
        return out

    @cached_property
    def cutoff(self) -> int:
        """Largest retained |k_i|."""
        bound = self.dealias * self.n / 2
        return math.ceil(bound) - 1

    @cached_property
    def mask(self) -> np.ndarray:
        kc = self.cutoff
        keep = (np.abs(self.k1) <= kc) & (np.abs(self.k2) <= kc)
        return np.broadcast_to(keep, (self.n, self.half)).copy()

    @cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each stored half-spectrum entry in the full spectrum."""
        w = np.full((self.n, self.half), 2.0)
        w[:, 0] = 1.0
        w[:, -1] = 1.0
        return w

    @cached_property
    def _retained_index(self) -> tuple[np.ndarray, np.ndarray]:
        i1, i2 = np.nonzero(self.mask)
        return i1, i2

    def physical_size(self, r: float) -> int:
        """Collocation size on which the degree-r Forchheimer product is alias free."""
        if _is_odd_int(r):
            return math.ceil((r + 1) / 2) * self.n
        return self.n

    # -- transforms -------------------------------------------------------

    def to_physical(self, uh: np.ndarray, size: int | None = None) -> np.ndarray:
        """Sample coefficients on an M x M grid (M = N unless padded)."""
        if size is None or size == self.n:
            return sfft.irfft2(uh, s=(self.n, self.n), norm="forward")
        return sfft.irfft2(self.pad(uh, size), s=(size, size), norm="forward")

    def to_spectral(self, u: np.ndarray, size: int | None = None) -> np.ndarray:
        """Forward transform; padded samples are truncated to the retained set."""
        if size is None or size == self.n:
            return sfft.rfft2(u, norm="forward")
        return self.truncate(sfft.rfft2(u, norm="forward"), size)

    def _padded_index(self, size: int) -> tuple[np.ndarray, np.ndarray]:
        i1, i2 = self._retained_index
        k1 = self.k1[i1, 0].astype(int)
        return np.mod(k1, size), i2

    def pad(self, uh: np.ndarray, size: int) -> np.ndarray:
        """Embed retained coefficients in the half spectrum of a size x size grid."""
        i1, i2 = self._retained_index
        j1, j2 = self._padded_index(size)
        out = np.zeros(uh.shape[:-2] + (size, size // 2 + 1), dtype=complex)
        out[..., j1, j2] = uh[..., i1, i2]
        return out

    def truncate(self, vh: np.ndarray, size: int) -> np.ndarray:
        i1, i2 = self._retained_index
        j1, j2 = self._padded_index(size)
        out = np.zeros(vh.shape[:-2] + (self.n, self.half), dtype=complex)
        out[..., i1, i2] = vh[..., j1, j2]
        return out

    # -- linear operators -------------------------------------------------

    def apply_mask(self, uh: np.ndarray) -> np.ndarray:
        return np.where(self.mask, uh, 0.0)

    def leray(self, uh: np.ndarray) -> np.ndarray:
        """Per-mode projection (I - k k^T / |k|^2); the mean mode is zeroed."""
        k1, k2, inv = self.k1, self.k2, self.inv_ksq
        div = (k1 * uh[..., 0, :, :] + k2 * uh[..., 1, :, :]) * inv
        out = np.empty_like(uh, dtype=complex)
        out[..., 0, :, :] = uh[..., 0, :, :] - k1 * div
        out[..., 1, :, :] = uh[..., 1, :, :] - k2 * div
        out[..., :, 0, 0] = 0.0
        return out

    def stokes(self, uh: np.ndarray) -> np.ndarray:
        return self.ksq * uh

    def divergence(self, uh: np.ndarray) -> np.ndarray:
        return 1j * (self.k1 * uh[..., 0, :, :] + self.k2 * uh[..., 1, :, :])

    def gradient(self, uh: np.ndarray) -> np.ndarray:
        """Coefficients of d_i u_j with shape (..., i, j, N, half)."""
        return np.stack([1j * self.k1 * uh, 1j * self.k2 * uh], axis=-4)

    # -- nonlinear operators ----------------------------------------------

    def advect(self, uh: np.ndarray, vh: np.ndarray) -> np.ndarray:
        """Dealiased, unprojected coefficients of (u . grad) v."""
        u = self.to_physical(uh)
        dv = self.to_physical(self.gradient(vh))
        prod = u[..., 0:1, :, :] * dv[..., 0, :, :, :] + u[..., 1:2, :, :] * dv[..., 1, :, :, :]
        return self.apply_mask(self.to_spectral(prod))

    def convective(self, uh: np.ndarray, vh: np.ndarray) -> np.ndarray:
        return self.leray(self.advect(uh, vh))

    def power_term(self, uh: np.ndarray, r: float) -> np.ndarray:
        """Retained coefficients of |u|^(r-1) u before Leray projection."""
        size = self.physical_size(r)
        u = self.to_physical(uh, size)
        if r != 1:
            u = u * np.sum(u * u, axis=-3, keepdims=True) ** ((r - 1) / 2)
        return self.apply_mask(self.to_spectral(u, size))

    def forchheimer(self, uh: np.ndarray, r: float) -> np.ndarray:
        return self.leray(self.power_term(uh, r))

    def forchheimer_gateaux(self, uh: np.ndarray, vh: np.ndarray, r: float) -> np.ndarray:
        size = self.physical_size(r)
        v = self.to_physical(vh, size)
        if r == 1:
            return self.leray(self.apply_mask(self.to_spectral(v, size)))
        u = self.to_physical(uh, size)
        mag2 = np.sum(u * u, axis=-3, keepdims=True)
        udotv = np.sum(u * v, axis=-3, keepdims=True)
        if r >= 3:
            out = mag2 ** ((r - 1) / 2) * v + (r - 1) * mag2 ** ((r - 3) / 2) * u * udotv
        else:
            nz = mag2 > 0
            safe = np.where(nz, mag2, 1.0)
            out = safe ** ((r - 1) / 2) * v + (r - 1) * safe ** ((r - 3) / 2) * u * udotv
            out = np.where(nz, out, 0.0)
        return self.leray(self.apply_mask(self.to_spectral(out, size)))

    # -- pairings and norms -----------------------------------------------

    def inner(self, fh: np.ndarray, gh: np.ndarray) -> np.ndarray:
        """L^2 pairing (f, g) by Parseval, summed over components."""
        prod = (fh * np.conj(gh)).real * self.weights
        return AREA * prod.sum(axis=(-3, -2, -1))

    def norm_h(self, uh: np.ndarray) -> np.ndarray:
        return np.sqrt(self.inner(uh, uh))

    def norm_v(self, uh: np.ndarray) -> np.ndarray:
        return np.sqrt(self.inner(self.ksq * uh, uh))

    def quadrature(self, values: np.ndarray) -> np.ndarray:
        """Rectangle rule over the last two axes of an M x M sample array."""
        m = values.shape[-1]
        return values.sum(axis=(-2, -1)) * (TWO_PI / m) ** 2

    def lp_power(self, uh: np.ndarray, p: float) -> np.ndarray:
        """||u||_{L^p}^p by collocation on the grid that is exact for p = r + 1."""
        size = self.physical_size(p - 1)
        u = self.to_physical(uh, size)
        mag2 = np.sum(u * u, axis=-3)
        return self.quadrature(mag2 ** (p / 2))

    def lp_norm(self, uh: np.ndarray, p: float) -> np.ndarray:
        return self.lp_power(uh, p) ** (1.0 / p)

    def weighted_gap(self, wh: np.ndarray, dh: np.ndarray, r: float) -> np.ndarray:
        """|| |w|^((r-1)/2) d ||_H^2 by collocation on the padded grid."""
        size = self.physical_size(r)
        w = self.to_physical(wh, size)
        d = self.to_physical(dh, size)
        wr = np.sum(w * w, axis=-3) ** ((r - 1) / 2)
        return self.quadrature(wr * np.sum(d * d, axis=-3))

    # -- Galerkin ordering ------------------------------------------------

    @cached_property
    def pair_order(self) -> list[tuple[int, int]]:
        """Retained conjugate pairs as canonical wavevectors, ascending |k|^2.

        The canonical member has k2 > 0, or k2 == 0 and k1 > 0.  Ties within a
        shell are broken lexicographically on (k1, k2).
        """
        kc = self.cutoff
        pairs = [
            (a, b)
            for a in range(-kc, kc + 1)
            for b in range(0, kc + 1)
            if b > 0 or a > 0
        ]
        return sorted(pairs, key=lambda k: (k[0] ** 2 + k[1] ** 2, k[0], k[1]))

    def pair_mask(self, m: int) -> np.ndarray:
        """Half-spectrum mask selecting the first m conjugate pairs."""
        keep = np.zeros((self.n, self.half), dtype=bool)
        for a, b in self.pair_order[:m]:
            keep[a % self.n, b] = True
            if b == 0:
                keep[-a % self.n, 0] = True
        return keep

    def random_coeffs(self, rng: np.random.Generator, batch: tuple[int, ...] = (), decay: float = 2.0) -> np.ndarray:
        """Gaussian divergence-free coefficients with |k|^-decay amplitude."""
        noise = rng.standard_normal(batch + (2, self.n, self.n))
        uh = self.to_spectral(noise)
        amp = np.where(self.ksq > 0, np.sqrt(self.inv_ksq) ** decay, 0.0)
        return self.leray(self.apply_mask(uh * amp))


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable set of half-spectrum coefficients on a grid.

    Fields built by :func:`leray_project` (and every operator output) are
    divergence free with zero mean; :func:`to_spectral` returns raw
    coefficients that need not be.
    """

    grid: GridSpec
    coeffs: np.ndarray

    def __post_init__(self):
        arr = np.array(self.coeffs, dtype=complex)
        if arr.shape != self.grid.spectral_shape:
            raise GridMismatchError(
                f"coefficients of shape {arr.shape} do not fit grid {self.grid.spectral_shape}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "coeffs", arr)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "SpectralField":
        return cls(grid, np.zeros(grid.spectral_shape, dtype=complex))

    def _check(self, other: "SpectralField"):
        if other.grid != self.grid:
            raise GridMismatchError(f"grid {other.grid} does not match {self.grid}")

    def __add__(self, other):
        self._check(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.grid, scalar * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)

    def full_coeffs(self) -> np.ndarray:
        """Coefficients over the full N x N wavevector lattice."""
        return sfft.fft2(self.grid.to_physical(self.coeffs), norm="forward")

    def divergence_residual(self) -> float:
        """max_k |k . u_hat(k)| / max(||u_hat(k)||, tiny)."""
        k_dot = np.abs(self.grid.divergence(self.coeffs))
        mag = np.sqrt(np.sum(np.abs(self.coeffs) ** 2, axis=0))
        return float(np.max(k_dot / np.maximum(mag, 1e-300)))


@dataclass(frozen=True, eq=False)
class PhysicalField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.shape != (2, self.grid.n, self.grid.n):
            raise GridMismatchError(f"expected {self.grid.n}x{self.grid.n} samples, got {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "PhysicalField":
        """Sample ``fn(x, y) -> (u1, u2)`` on the collocation points."""
        x = np.arange(grid.n) * TWO_PI / grid.n
        X, Y = np.meshgrid(x, x, indexing="ij")
        u1, u2 = fn(X, Y)
        return cls(grid, np.stack([np.broadcast_to(u1, X.shape), np.broadcast_to(u2, X.shape)]))


@dataclass(frozen=True)
class FluidParams:
    """Viscosity mu, Darcy alpha, Forchheimer beta and absorption exponent r."""

    mu: float
    alpha: float
    beta: float
    r: float = 3.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.r < 1:
            raise ValueError(f"absorption exponent r must be >= 1, got {self.r}")

    @classmethod
    def unchecked(cls, mu: float, alpha: float, beta: float, r: float = 3.0) -> "FluidParams":
        """Build parameters without positivity checks (switch terms off in tests)."""
        obj = object.__new__(cls)
        for name, val in zip(("mu", "alpha", "beta", "r"), (mu, alpha, beta, r)):
            object.__setattr__(obj, name, val)
        return obj

    @property
    def critical_ok(self) -> bool | None:
        """2 beta mu >= 1, recorded for the critical exponent r = 3 only."""
        if self.r != 3:
            return None
        return 2 * self.beta * self.mu >= 1


# -- public operations on fields ------------------------------------------


def _same_grid(*fields: SpectralField) -> GridSpec:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatchError(f"grid {f.grid} does not match {grid}")
    return grid


def to_spectral(f: PhysicalField) -> SpectralField:
    """Raw (unprojected) forward transform of grid samples."""
    return SpectralField(f.grid, f.grid.to_spectral(f.values))


def to_physical(u: SpectralField) -> PhysicalField:
    return PhysicalField(u.grid, u.grid.to_physical(u.coeffs))


def leray_project(u_raw: SpectralField) -> SpectralField:
    return SpectralField(u_raw.grid, u_raw.grid.leray(u_raw.coeffs))


def dealias(u: SpectralField) -> SpectralField:
    return SpectralField(u.grid, u.grid.apply_mask(u.coeffs))


def stokes_apply(u: SpectralField) -> SpectralField:
    return SpectralField(u.grid, u.grid.stokes(u.coeffs))


def convective(u: SpectralField, v: SpectralField) -> SpectralField:
    """B(u, v) = P[(u . grad) v], dealiased by the 2/3 rule."""
    grid = _same_grid(u, v)
    return SpectralField(grid, grid.convective(u.coeffs, v.coeffs))


def trilinear(u: SpectralField, v: SpectralField, w: SpectralField) -> float:
    """b(u, v, w) = int (u . grad) v . w by collocation on the N x N grid."""
    grid = _same_grid(u, v, w)
    phys_u = grid.to_physical(u.coeffs)
    grad_v = grid.to_physical(grid.gradient(v.coeffs))
    phys_w = grid.to_physical(w.coeffs)
    integrand = np.einsum("ixy,ijxy,jxy->xy", phys_u, grad_v, phys_w)
    return float(grid.quadrature(integrand))


def _check_r(r: float):
    if r < 1:
        raise ValueError(f"absorption exponent r must be >= 1, got {r}")


def forchheimer(u: SpectralField, r: float, project: bool = True) -> SpectralField:
    """C(u) = P(|u|^(r-1) u); ``project=False`` returns the retained raw power."""
    _check_r(r)
    grid = u.grid
    raw = grid.power_term(u.coeffs, r)
    return SpectralField(grid, grid.leray(raw) if project else raw)


def forchheimer_gateaux(u: SpectralField, v: SpectralField, r: float) -> SpectralField:
    _check_r(r)
    grid = _same_grid(u, v)
    return SpectralField(grid, grid.forchheimer_gateaux(u.coeffs, v.coeffs, r))


def drift(u: SpectralField, p: FluidParams) -> SpectralField:
    """M(u) = mu A u + B(u) + alpha u + beta C(u)."""
    g, uh = u.grid, u.coeffs
    out = p.mu * g.stokes(uh) + g.convective(uh, uh) + p.alpha * uh
    if p.beta:
        out = out + p.beta * g.forchheimer(uh, p.r)
    return SpectralField(g, out)


def galerkin_project(u: SpectralField, m: int) -> SpectralField:
    """Keep the m lowest conjugate-pair modes of u (see ``GridSpec.pair_order``)."""
    grid = u.grid
    if m <= 0:
        raise ValueError(f"mode count must be positive, got {m}")
    if m > len(grid.pair_order):
        raise ValueError(f"mode count {m} exceeds the {len(grid.pair_order)} retained modes")
    return SpectralField(grid, np.where(grid.pair_mask(m), u.coeffs, 0.0))


def inner(u: SpectralField, v: SpectralField) -> float:
    grid = _same_grid(u, v)
    return float(grid.inner(u.coeffs, v.coeffs))


def norms(u: SpectralField, r: float = 3.0) -> dict[str, float]:
    """H and V norms by Parseval and the L^(r+1) norm by grid quadrature."""
    g = u.grid
    return {
        "h": float(g.norm_h(u.coeffs)),
        "v": float(g.norm_v(u.coeffs)),
        "lp": float(g.lp_norm(u.coeffs, r + 1)),
    }


def random_field(grid: GridSpec, rng: np.random.Generator, h_norm: float | None = None) -> SpectralField:
    """Random divergence-free field, optionally rescaled to a given H norm."""
    uh = grid.random_coeffs(rng)
    if h_norm is not None:
        uh = uh * (h_norm / grid.norm_h(uh))
    return SpectralField(grid, uh)
