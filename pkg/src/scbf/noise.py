"""Truncated cylindrical Wiener noise, its lagged dyadic derivative and the
diffusion coefficient G with the Wong-Zakai correction term.

The noise space K has orthonormal basis e_1..e_K (``k_dim`` directions) and
``G(u) e_k = G_k(u)`` for one of three families:

* ``additive``:        G_k(u) = q_k phi_k
* ``diagonal_linear``: G_k(u) = q_k u
* ``affine``:          G_k(u) = q_k (u + phi_k)

where phi_k are fixed unit, divergence-free Fourier modes.  All three are
affine in u, so DG_k is constant and every hypothesis constant has a closed
form.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np

from .spectral import GridSpec, SpectralField, random_field

FAMILIES = ("additive", "diagonal_linear", "affine")

PATH_MAGIC = b"SCBFPATH"
PATH_VERSION = 1
_HEADER = struct.Struct("<8sIdIIQ")


# -- noise shapes -----------------------------------------------------------


def mode_shapes(grid: GridSpec, count: int) -> np.ndarray:
    """First ``count`` real orthonormal divergence-free Fourier modes.

    Each conjugate pair k (in ``grid.pair_order``) contributes
    (k_perp / |k|) cos(k.x) / (sqrt(2) pi) followed by the matching sine.
    """
    pairs = grid.pair_order
    if count > 2 * len(pairs):
        raise ValueError(f"grid resolves only {2 * len(pairs)} modes, asked for {count}")
    amp = 1.0 / (np.sqrt(2.0) * np.pi)
    out = np.zeros((count,) + grid.spectral_shape, dtype=complex)
    for idx in range(count):
        a, b = pairs[idx // 2]
        d = np.array([-b, a], dtype=float) / np.hypot(a, b)
        coef = amp / 2 if idx % 2 == 0 else amp / 2j
        out[idx, :, a % grid.n, b] = d * coef
        if b == 0:
            # the conjugate partner is stored explicitly in the k2 = 0 column
            out[idx, :, -a % grid.n, 0] = d * np.conj(coef)
    return out


@dataclass(frozen=True)
class HypothesisConstants:
    """Closed-form constants certifying the growth and Lipschitz hypotheses."""

    L1: float
    L2: float
    rho: float
    gamma: float = 0.0


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Diffusion coefficient G on a grid with ``k_dim`` noise directions."""

    grid: GridSpec
    family: str
    weights: np.ndarray
    shapes: np.ndarray | None = None
    gamma: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}; expected one of {FAMILIES}")
        q = np.array(self.weights, dtype=float).reshape(-1)
        if q.size < 1:
            raise ValueError("noise needs at least one direction")
        q.flags.writeable = False
        object.__setattr__(self, "weights", q)
        if self.family != "diagonal_linear":
            shapes = self.shapes
            if shapes is None:
                shapes = mode_shapes(self.grid, q.size)
            shapes = np.array(shapes, dtype=complex)
            if shapes.shape != (q.size,) + self.grid.spectral_shape:
                raise ValueError(f"noise shapes have shape {shapes.shape}")
            shapes.flags.writeable = False
            object.__setattr__(self, "shapes", shapes)

    @classmethod
    def additive(cls, grid: GridSpec, weights) -> "NoiseModel":
        return cls(grid, "additive", weights)

    @classmethod
    def diagonal_linear(cls, grid: GridSpec, weights) -> "NoiseModel":
        return cls(grid, "diagonal_linear", weights)

    @classmethod
    def affine(cls, grid: GridSpec, weights) -> "NoiseModel":
        return cls(grid, "affine", weights)

    @property
    def k_dim(self) -> int:
        return self.weights.size

    @property
    def trace(self) -> float:
        """sum_k q_k^2."""
        return float(np.sum(self.weights**2))

    @property
    def has_state_dependence(self) -> bool:
        return self.family != "additive"

    @cached_property
    def hyp(self) -> HypothesisConstants:
        s = self.trace
        return HypothesisConstants(
            L1=2.0 * max(1.0, s),
            L2=0.0 if self.family == "additive" else (s**2 if self.family == "diagonal_linear" else 2.0 * s**2),
            rho=0.0 if self.family == "additive" else s,
            gamma=self.gamma,
        )

    # -- batched kernels on raw coefficient arrays ----------------------

    def g_apply(self, uh: np.ndarray, z: np.ndarray) -> np.ndarray:
        """sum_k z_k G_k(u) for uh of shape (..., 2, N, h) and z of shape (..., K)."""
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.k_dim:
            raise ValueError(f"noise vector has {z.shape[-1]} components, model has {self.k_dim}")
        zq = z * self.weights
        out = 0.0
        if self.family != "additive":
            out = zq.sum(axis=-1)[..., None, None, None] * uh
        if self.family != "diagonal_linear":
            out = out + np.tensordot(zq, self.shapes, axes=(-1, 0))
        return np.broadcast_to(out, np.broadcast_shapes(np.shape(out), uh.shape)).copy()

    def g_component(self, uh: np.ndarray, k: int) -> np.ndarray:
        """G_k(u) for a zero-based direction index."""
        q = self.weights[k]
        if self.family == "additive":
            return np.broadcast_to(q * self.shapes[k], uh.shape).copy()
        if self.family == "diagonal_linear":
            return q * uh
        return q * (uh + self.shapes[k])

    def dg_component(self, uh: np.ndarray, k: int, hh: np.ndarray) -> np.ndarray:
        """DG_k(u) h; constant in u for every family."""
        if self.family == "additive":
            return np.zeros_like(hh)
        return self.weights[k] * hh

    def correction_coeffs(self, n: int) -> tuple[float, np.ndarray | float]:
        """(a, b) with Tr_n(u) = a u + b in closed form."""
        self._check_level(n)
        q2 = self.weights[:n] ** 2
        if self.family == "additive":
            return 0.0, 0.0
        scale = float(q2.sum())
        if self.family == "diagonal_linear":
            return scale, 0.0
        return scale, np.tensordot(q2, self.shapes[:n], axes=(0, 0))

    def correction(self, uh: np.ndarray, n: int) -> np.ndarray:
        a, b = self.correction_coeffs(n)
        return a * uh + b

    def _check_level(self, n: int):
        if not 1 <= n <= self.k_dim:
            raise ValueError(f"correction level {n} outside 1..{self.k_dim}")

    def hilbert_schmidt_sq(self, uh: np.ndarray) -> np.ndarray:
        """||G(u)||_{L_2(K; H)}^2 = sum_k ||G_k(u)||_H^2."""
        g = self.grid
        return sum(g.inner(self.g_component(uh, k), self.g_component(uh, k)) for k in range(self.k_dim))


# -- field-level operations -------------------------------------------------


def apply_g(model: NoiseModel, u: SpectralField, z) -> SpectralField:
    return SpectralField(u.grid, model.g_apply(u.coeffs, z))


def dg_apply(model: NoiseModel, u: SpectralField, k: int, h: SpectralField) -> SpectralField:
    """DG_k(u) h for a one-based direction index k."""
    if not 1 <= k <= model.k_dim:
        raise IndexError(f"direction {k} outside 1..{model.k_dim}")
    return SpectralField(u.grid, model.dg_component(u.coeffs, k - 1, h.coeffs))


def correction_tr(model: NoiseModel, u: SpectralField, n: int) -> SpectralField:
    """Tr_n(u) = sum_{k<=n} DG_k(u) G_k(u), evaluated in closed form."""
    return SpectralField(u.grid, model.correction(u.coeffs, n))


def correction_tr_summed(model: NoiseModel, u: SpectralField, n: int) -> SpectralField:
    """Tr_n by literal summation of DG_k(u) G_k(u); reference for the closed form."""
    model._check_level(n)
    uh = u.coeffs
    total = sum(model.dg_component(uh, k, model.g_component(uh, k)) for k in range(n))
    return SpectralField(u.grid, total)


@dataclass
class AuditReport:
    family: str
    samples: int
    constants: HypothesisConstants
    growth_ratio: float  # max ||G(v)||^2 / (L1 (1 + ||v||^2))
    lipschitz_ratio: float  # max ||G(v1)-G(v2)||^2 / (rho ||v1-v2||^2), 0 if rho = 0
    lipschitz_excess: float  # max ||G(v1)-G(v2)||^2 - rho ||v1-v2||^2
    correction_ratio: float  # max ||Tr_n(v)||^2 / (L2 (1 + ||v||^2))
    correction_monotone_excess: float  # max (Tr(v2)-Tr(v1), v1-v2) - rho ||v1-v2||^2
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def hypothesis_audit(model: NoiseModel, sample_count: int = 1000, rng_seed: int = 0, tol: float = 1e-10) -> AuditReport:
    """Check the growth, Lipschitz and correction bounds on random field pairs."""
    grid = model.grid
    rng = np.random.default_rng(rng_seed)
    hyp = model.hyp
    n = model.k_dim
    growth = lip_ratio = lip_excess = corr = corr_mono = -np.inf
    for _ in range(sample_count):
        scale1, scale2 = 10.0 ** rng.uniform(-1, 1, size=2)
        v1 = random_field(grid, rng, scale1).coeffs
        v2 = random_field(grid, rng, scale2).coeffs
        h1 = grid.inner(v1, v1)
        d = v1 - v2
        dd = grid.inner(d, d)
        g1 = model.hilbert_schmidt_sq(v1)
        growth = max(growth, g1 / (hyp.L1 * (1 + h1)))
        gd = sum(
            grid.inner(model.g_component(v1, k) - model.g_component(v2, k), model.g_component(v1, k) - model.g_component(v2, k))
            for k in range(n)
        )
        lip_excess = max(lip_excess, gd - hyp.rho * dd)
        lip_ratio = max(lip_ratio, gd / (hyp.rho * dd) if hyp.rho > 0 else 0.0)
        tr1 = model.correction(v1, n)
        tr2 = model.correction(v2, n)
        tr_sq = grid.inner(tr1, tr1)
        corr = max(corr, tr_sq / (hyp.L2 * (1 + h1)) if hyp.L2 > 0 else tr_sq)
        corr_mono = max(corr_mono, grid.inner(tr2 - tr1, v1 - v2) - hyp.rho * dd)
    report = AuditReport(model.family, sample_count, hyp, growth, lip_ratio, lip_excess, corr, corr_mono)
    if growth > 1 + tol:
        report.violations.append("growth")
    if lip_excess > tol * max(1.0, hyp.rho):
        report.violations.append("lipschitz")
    if (hyp.L2 > 0 and corr > 1 + tol) or (hyp.L2 == 0 and corr > tol):
        report.violations.append("correction_growth")
    if corr_mono > tol:
        report.violations.append("correction_monotone")
    return report


# -- Brownian paths -----------------------------------------------------------


def _level_normals(seed: int, mode: int, level: int) -> np.ndarray:
    """Standard normals for one refinement level of one mode.

    Each (seed, mode, level) triple owns an independent Philox stream, so
    adding modes or finer levels never changes previously drawn values.
    """
    ss = np.random.SeedSequence([int(seed), int(mode), int(level)])
    return np.random.Generator(np.random.Philox(ss)).standard_normal(1 << max(level - 1, 0))


def _bridge_increments(seed: int, mode: int, t_horizon: float, max_level: int) -> np.ndarray:
    """Increments on the 2**max_level uniform mesh by midpoint (Levy) refinement."""
    incr = np.sqrt(t_horizon) * _level_normals(seed, mode, 0)
    for level in range(1, max_level + 1):
        h = t_horizon / 2 ** (level - 1)
        left = 0.5 * incr + 0.5 * np.sqrt(h) * _level_normals(seed, mode, level)
        fine = np.empty(2 * incr.size)
        fine[0::2] = left
        fine[1::2] = incr - left
        incr = fine
    return incr


MAX_DYADIC_DENOMINATOR = 2**40


def is_dyadic(t: float) -> bool:
    """True for positive p / 2**m with m <= 40.

    Every finite float is a binary fraction, so the bound on the
    denominator is what separates 0.375 from the rounded value of 0.1.
    """
    frac = Fraction(t)
    den = frac.denominator
    return frac > 0 and den & (den - 1) == 0 and den <= MAX_DYADIC_DENOMINATOR


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Increments of k_dim independent Brownian motions on a dyadic mesh of [0, T]."""

    t_horizon: float
    max_level: int
    k_dim: int
    seed: int
    increments: np.ndarray  # (k_dim, 2**max_level)

    def __post_init__(self):
        arr = np.array(self.increments, dtype=float)
        if arr.shape != (self.k_dim, 1 << self.max_level):
            raise ValueError(f"increment array has shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "increments", arr)
        object.__setattr__(self, "_levels", {self.max_level: arr})

    def level_increments(self, level: int) -> np.ndarray:
        """Increments over the 2**level cells, as pairwise sums of finer cells."""
        if not 0 <= level <= self.max_level:
            raise ValueError(f"level {level} outside 0..{self.max_level}")
        cache = self._levels
        if level not in cache:
            finer = self.level_increments(level + 1)
            arr = finer[:, 0::2] + finer[:, 1::2]
            arr.flags.writeable = False
            cache[level] = arr
        return cache[level]

    def values(self, level: int | None = None) -> np.ndarray:
        """w_k(j T / 2**level) for j = 0..2**level, shape (k_dim, 2**level + 1)."""
        incr = self.level_increments(self.max_level if level is None else level)
        out = np.zeros((self.k_dim, incr.shape[1] + 1))
        np.cumsum(incr, axis=1, out=out[:, 1:])
        return out

    def dump(self, target) -> None:
        """Binary audit dump: header then little-endian float64, mode-major."""
        header = _HEADER.pack(PATH_MAGIC, PATH_VERSION, self.t_horizon, self.max_level, self.k_dim, self.seed)
        Path(target).write_bytes(header + self.increments.astype("<f8").tobytes())

    @classmethod
    def load(cls, source) -> "BrownianPath":
        data = Path(source).read_bytes()
        magic, version, t_horizon, level, k_dim, seed = _HEADER.unpack_from(data)
        if magic != PATH_MAGIC or version != PATH_VERSION:
            raise ValueError("not a Brownian path dump (bad magic or version)")
        body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
        return cls(t_horizon, level, k_dim, seed, body.reshape(k_dim, 1 << level))


def sample_path(seed: int, t_horizon: float, max_level: int, k_dim: int) -> BrownianPath:
    if max_level < 1 or k_dim < 1 or not t_horizon > 0:
        raise ValueError(f"invalid path sizes: T={t_horizon}, L={max_level}, k_dim={k_dim}")
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    incr = np.stack([_bridge_increments(seed, k, t_horizon, max_level) for k in range(k_dim)])
    return BrownianPath(float(t_horizon), int(max_level), int(k_dim), int(seed), incr)


@dataclass(frozen=True)
class WZLevel:
    """Dyadic Wong-Zakai level n with cell width sigma = T / 2**n."""

    n: int
    t_horizon: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"level must be >= 1, got {self.n}")
        if not is_dyadic(self.t_horizon):
            raise ValueError(f"horizon {self.t_horizon} is not a dyadic rational")

    @property
    def sigma(self) -> float:
        return self.t_horizon / 2**self.n

    @property
    def cells(self) -> int:
        return 2**self.n


def wz_table(path: BrownianPath, lvl: WZLevel) -> np.ndarray:
    """Lagged difference quotients on each sigma cell, shape (2**n, k_dim).

    Row j holds (w(j sigma) - w((j-1) sigma)) / sigma for the first n modes;
    row 0 is zero because w vanishes for negative times.
    """
    if lvl.n > path.max_level:
        raise ValueError(f"level {lvl.n} exceeds path resolution {path.max_level}")
    if lvl.n > path.k_dim:
        raise ValueError(f"level {lvl.n} needs at least {lvl.n} noise directions, path has {path.k_dim}")
    if lvl.t_horizon != path.t_horizon:
        raise ValueError("level and path horizons differ")
    incr = path.level_increments(lvl.n)
    table = np.zeros((lvl.cells, path.k_dim))
    table[1:, : lvl.n] = incr[: lvl.n, :-1].T / lvl.sigma
    return table


def wz_derivative(path: BrownianPath, lvl: WZLevel, t: float) -> np.ndarray:
    """The adapted approximation dW^n/dt at time t, as a vector in K."""
    if t < 0 or t > path.t_horizon:
        raise ValueError(f"time {t} outside [0, {path.t_horizon}]")
    table = wz_table(path, lvl)
    j = int(np.floor(t / lvl.sigma))
    if j < lvl.cells:
        return table[j].copy()
    # t == T: the last lag still falls inside [0, T]
    out = np.zeros(path.k_dim)
    out[: lvl.n] = path.level_increments(lvl.n)[: lvl.n, -1] / lvl.sigma
    return out
