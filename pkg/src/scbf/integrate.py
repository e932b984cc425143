"""Exponential time stepping for the Ito, Wong-Zakai, skeleton and
controlled systems.

Every system is advanced by the same update

    u_{j+1} = E (u_j - dt [B(u_j) + beta C(u_j)] + G(u_j) xi_j - (dt/2) Tr_n(u_j) + R_j)

with E = exp(-(mu A + alpha) dt) applied exactly per mode.  The systems differ
only in the noise vector xi_j in K and in whether the correction is present:

    Ito          xi_j = dW_j                                  no correction
    Wong-Zakai   xi_j = dt Wdot^n(t_j)                        Tr_n
    skeleton     xi_j = dt k(t_j)                             Tr_n
    controlled   xi_j = dW_j - dt Wdot^n(t_j) + dt k(t_j)     no correction

so a skeleton driven by the realized Wdot^n performs bit-for-bit the same
arithmetic as the Wong-Zakai run.

R_j is the Milstein term 1/2 sum_{k,l} DG_k G_l (dW_k dW_l - delta_kl dt),
present only for systems with Ito increments under ``exponential-milstein``;
``exponential-euler`` drops it (Euler-Maruyama, strong order 1/2 for
multiplicative noise).

The default ``exponential-transform`` scheme removes the Ito noise of
diagonal_linear members by the substitution u = e^Z v with
Z(t) = q.W(t) - |q|^2 t / 2.  Since B is quadratic and C is homogeneous of
degree r, v solves the random equation

    v' = -(mu A + alpha) v - e^Z B(v) - beta e^{(r-1)Z} C(v) + G(v) xi_det

and the step uses the exact integrals of e^Z and e^{(r-1)Z} over each step,
taken from the finest level of the realized path.  The leading error is then
a deterministic functional of the path, so halving dt halves it.  Other
families fall back to the Milstein update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .noise import BrownianPath, NoiseModel, WZLevel, is_dyadic, wz_table
from .spectral import FluidParams, GridSpec, SpectralField


SCHEMES = ("exponential-transform", "exponential-milstein", "exponential-euler")


class BlowUpError(RuntimeError):
    """The state left the finite range; carries the offending step index."""

    def __init__(self, step: int, time: float):
        super().__init__(f"solution blew up at step {step} (t = {time:g})")
        self.step = step
        self.time = time


class PathMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    record_stride: int = 1
    diagnostics: bool = True
    nonlinear: bool = True  # False drops B and C (linear verification runs only)
    blowup_threshold: float = 1e8
    scheme: str = "exponential-transform"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unsupported scheme {self.scheme!r}")

    def dyadic_level(self, t_horizon: float) -> int:
        """l with dt = T / 2**l; rejects steps that are not dyadic fractions of T."""
        ratio = Fraction(t_horizon) / Fraction(self.dt)
        if ratio.denominator != 1 or ratio.numerator & (ratio.numerator - 1):
            raise ValueError(f"dt = {self.dt} is not a dyadic fraction of T = {t_horizon}")
        return ratio.numerator.bit_length() - 1

    def stability_number(self, grid: GridSpec, mu: float) -> float:
        """dt * mu * max retained |k|^2 (informational; the linear part is exact)."""
        return self.dt * mu * float(np.max(np.where(grid.mask, grid.ksq, 0.0)))


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Piecewise-constant control k: [0, T] -> R^K on a uniform dyadic mesh."""

    t_horizon: float
    values: np.ndarray  # (cells, k_dim)

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.ndim != 2:
            raise ValueError("control values must have shape (cells, k_dim)")
        cells = arr.shape[0]
        if cells & (cells - 1):
            raise ValueError(f"control mesh must have 2**m cells, got {cells}")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_wz(cls, path: BrownianPath, lvl: WZLevel) -> "ControlSignal":
        """The realized Wdot^n of a path, as a control."""
        return cls(path.t_horizon, wz_table(path, lvl))

    @property
    def cells(self) -> int:
        return self.values.shape[0]

    @property
    def k_dim(self) -> int:
        return self.values.shape[1]

    @property
    def cell_width(self) -> float:
        return self.t_horizon / self.cells

    @property
    def l2_norm(self) -> float:
        """||k||_{L^2(0, T; K)}."""
        return math.sqrt(float(np.sum(self.values**2)) * self.cell_width)

    def __call__(self, t: float) -> np.ndarray:
        j = min(int(np.floor(t / self.cell_width)), self.cells - 1)
        return self.values[j].copy()


@dataclass(eq=False)
class TrajectoryRecord:
    """Snapshots at the record stride plus per-step scalar diagnostics."""

    grid: GridSpec
    dt: float
    times: np.ndarray
    snapshots: np.ndarray  # (n_records, 2, N, N//2+1)
    step_times: np.ndarray  # (n_steps + 1,)
    h: np.ndarray
    v: np.ndarray
    lp: np.ndarray  # ||u||_{L^{r+1}}
    work: np.ndarray  # (n_steps,) energy injected by noise, control and correction
    r: float
    energy_residual: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> SpectralField:
        return SpectralField(self.grid, self.snapshots[-1])

    def snapshot(self, i: int) -> SpectralField:
        return SpectralField(self.grid, self.snapshots[i])


def sup_distance(a: TrajectoryRecord, b: TrajectoryRecord) -> float:
    """sup over shared snapshot times of ||a(t) - b(t)||_H."""
    if a.snapshots.shape != b.snapshots.shape or not np.array_equal(a.times, b.times):
        raise ValueError("records were taken on different time meshes")
    diff = a.snapshots - b.snapshots
    return float(np.max(a.grid.norm_h(diff)))


class Stepper:
    """One exponential step on batches of coefficient arrays."""

    def __init__(self, grid: GridSpec, params: FluidParams, model: NoiseModel | None, dt: float, nonlinear: bool = True):
        self.grid = grid
        self.params = params
        self.model = model
        self.dt = dt
        self.nonlinear = nonlinear
        rate = params.mu * grid.ksq + params.alpha
        self.decay = np.where(grid.mask, np.exp(-rate * dt), 0.0)
        self.size = grid.physical_size(params.r)

    def nonlinear_parts(self, uh: np.ndarray):
        """(unprojected B(u), unprojected |u|^{r-1} u or None, ||u||_{L^{r+1}}^{r+1})."""
        g, p = self.grid, self.params
        u = g.to_physical(uh, self.size)
        mag2 = np.sum(u * u, axis=-3, keepdims=True)
        lp_pow = g.quadrature(mag2[..., 0, :, :] ** ((p.r + 1) / 2))
        if not self.nonlinear:
            return None, None, lp_pow
        power = None
        if p.beta:
            power = u if p.r == 1 else u * mag2 ** ((p.r - 1) / 2)
            power = g.apply_mask(g.to_spectral(power, self.size))
        return g.advect(uh, uh), power, lp_pow

    def nonlinear_term(self, uh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(B(u) + beta C(u), ||u||_{L^{r+1}}^{r+1}) for a batch."""
        adv, power, lp_pow = self.nonlinear_parts(uh)
        if adv is None:
            return np.zeros_like(uh), lp_pow
        total = adv if power is None else adv + self.params.beta * power
        return self.grid.leray(total), lp_pow

    def _forcing(self, uh, xi, tr):
        forcing = None
        if xi is not None:
            forcing = self.model.g_apply(uh, xi)
        if tr is not None:
            scale, offset = tr
            corr = (0.5 * self.dt) * (scale * uh + offset)
            forcing = -corr if forcing is None else forcing - corr
        return forcing

    def step_transformed(self, vh, ez0, ez1, c1, cr, xi=None, tr=None, diagnostics=True):
        """Advance v = e^{-Z} u; returns (new v, forcing increment F of u, lp power of u).

        ``ez0``, ``ez1`` are e^Z at the step ends and ``c1``, ``cr`` the
        integrals of e^Z and e^{(r-1)Z} over the step, one per batch member
        (1, 1, dt, dt for members without the transform).
        """
        g, p, dt = self.grid, self.params, self.dt
        col = lambda a: np.asarray(a)[..., None, None, None]  # noqa: E731
        adv, power, lp_pow = self.nonlinear_parts(vh)
        rhs = vh
        if adv is not None:
            total = col(c1) * adv
            if power is not None:
                total = total + p.beta * col(cr) * power
            rhs = rhs - g.leray(total)
        forcing_v = self._forcing(vh, xi, tr)
        if forcing_v is not None:
            rhs = rhs + forcing_v
        forcing_u = None
        if diagnostics:
            u0 = col(ez0) * vh
            forcing_u = col(ez1) * rhs - u0
            if adv is not None:
                total = col(ez0**2) * adv
                if power is not None:
                    total = total + p.beta * col(ez0**p.r) * power
                forcing_u = forcing_u + dt * g.leray(total)
        return self.decay * rhs, forcing_u, np.asarray(ez0) ** (p.r + 1) * lp_pow

    def step(self, uh, xi=None, tr=None, dw=None, ito_tr=None):
        """Advance one step; returns (new state, forcing increment F, lp power).

        ``dw`` (Brownian increments, zero for members without Ito noise) and
        ``ito_tr`` (Tr_K coefficients, zeroed likewise) switch on the Milstein
        term 1/2 sum_{k,l} DG_k G_l (dW_k dW_l - delta_kl dt).
        """
        dt = self.dt
        nonlin, lp_pow = self.nonlinear_term(uh)
        rhs = uh - dt * nonlin
        forcing = self._forcing(uh, xi, tr)
        if dw is not None and self.model.has_state_dependence:
            # DG_k = q_k I, so sum_{k,l} DG_k G_l dW_k dW_l = (q . dW) G(u) dW
            qdw = (dw @ self.model.weights)[..., None, None, None]
            scale, offset = ito_tr
            forcing = forcing + 0.5 * qdw * self.model.g_apply(uh, dw) - (0.5 * dt) * (scale * uh + offset)
        if forcing is not None:
            rhs = rhs + forcing
        return self.decay * rhs, forcing, lp_pow


def _tr_arrays(model: NoiseModel | None, levels, batch_shape):
    """Broadcastable (scale, offset) of Tr_n per batch member, or None."""
    if model is None or levels is None:
        return None
    levels = np.broadcast_to(np.asarray(levels), batch_shape)
    scale = np.zeros(batch_shape)
    offset = np.zeros(batch_shape + model.grid.spectral_shape, dtype=complex)
    cache = {}
    for idx, n in np.ndenumerate(levels):
        if n <= 0:
            continue
        if n not in cache:
            cache[n] = model.correction_coeffs(int(n))
        a, b = cache[n]
        scale[idx] = a
        offset[idx] = b
    return scale[..., None, None, None], offset


def transform_coeffs(path: BrownianPath, model: NoiseModel, r: float, n_steps: int):
    """(e^Z at the n_steps + 1 step nodes, int e^Z, int e^{(r-1)Z} per step).

    Z = q.W - |q|^2 t / 2 is evaluated on the finest level of ``path`` and
    integrated by the trapezoid rule there, so the integral over a coarse
    step is exactly the sum of the integrals over its fine steps.
    """
    level = n_steps.bit_length() - 1
    if n_steps != 1 << level or level > path.max_level:
        raise PathMismatchError(f"{n_steps} steps need a dyadic path of level >= {level}, path has {path.max_level}")
    q = model.weights
    fine = path.max_level
    h = path.t_horizon / 2**fine
    z = q @ path.values() - 0.5 * float(q @ q) * (np.arange(2**fine + 1) * h)
    stride = 2 ** (fine - level)

    def integral(a):
        e = np.exp(a * z)
        return (0.5 * h * (e[1:] + e[:-1])).reshape(n_steps, stride).sum(axis=1)

    return np.exp(z[::stride]), integral(1.0), integral(r - 1.0)


def plain_coeffs(n_steps: int, dt: float):
    """Transform coefficients of a member that is not transformed."""
    return np.ones(n_steps + 1), np.full(n_steps, dt), np.full(n_steps, dt)


def evolve(
    grid: GridSpec,
    params: FluidParams,
    model: NoiseModel | None,
    x0h: np.ndarray,
    cfg: SolverConfig,
    n_steps: int,
    xi: np.ndarray | None = None,
    tr_levels=None,
    pairs: list[tuple[int, int]] | None = None,
    dw: np.ndarray | None = None,
    ito=None,
    transform=None,
):
    """Batch engine shared by every integrator and study.

    ``x0h`` has shape (B, 2, N, h); ``xi`` has shape (n_steps, B, K) or is None;
    ``tr_levels`` gives the correction level per member (0 = none).  ``dw``
    holds the Brownian increments inside ``xi`` and ``ito`` flags the members
    they drive.  ``transform`` is (e^Z (n_steps+1, B), int e^Z (n_steps, B),
    int e^{(r-1)Z} (n_steps, B)), required by the transform scheme for
    diagonal_linear noise.  When ``pairs`` is given, returns
    (sup_j ||u_a - u_b||_H^2 per pair, finite flag per member) instead of
    recording trajectories.
    """
    stepper = Stepper(grid, params, model, cfg.dt, cfg.nonlinear)
    uh = grid.leray(grid.apply_mask(np.asarray(x0h, dtype=complex)))
    batch = uh.shape[:-3]
    tr = _tr_arrays(model, tr_levels, batch)
    if tr is not None and not np.any(tr[0]) and not np.any(tr[1]):
        tr = None
    noisy = dw is not None and model is not None and model.has_state_dependence
    flags = np.broadcast_to(np.asarray(True if ito is None else ito), batch)
    ito_tr = None
    ez = None
    if noisy and cfg.scheme == "exponential-transform" and model.family == "diagonal_linear" and flags.any():
        if transform is None:
            raise ValueError("the transform scheme needs path integrals for the Ito members")
        ez, c1, cr = (np.array(a, dtype=float) for a in transform)
        plain = plain_coeffs(n_steps, cfg.dt)
        fl = flags.reshape(-1)
        for arr, default in zip((ez, c1, cr), plain):
            arr.reshape(arr.shape[0], -1)[:, ~fl] = default[:, None]
        # the Ito part of xi is carried by e^Z
        xi = xi - np.where(flags[..., None], dw, 0.0)
        dw = None
    elif noisy and cfg.scheme != "exponential-euler":
        ito_tr = _tr_arrays(model, np.where(flags, model.k_dim, 0), batch)
        dw = np.where(flags[..., None], dw, 0.0)
    else:
        dw = None

    def advance(j, state):
        x = None if xi is None else xi[j]
        if ez is not None:
            return stepper.step_transformed(state, ez[j], ez[j + 1], c1[j], cr[j], x, tr, cfg.diagnostics and pairs is None)
        return stepper.step(state, x, tr, None if dw is None else dw[j], ito_tr)

    def physical(j, state):
        return state if ez is None else ez[j][..., None, None, None] * state

    if pairs is not None:
        ia = np.array([a for a, _ in pairs])
        ib = np.array([b for _, b in pairs])
        sup = np.zeros(len(pairs))
        alive = np.ones(batch, dtype=bool)
        for j in range(n_steps):
            uh, _, _ = advance(j, uh)
            u = physical(j + 1, uh)
            bad = ~np.isfinite(u).all(axis=(-3, -2, -1)) | (grid.norm_h(np.where(np.isfinite(u), u, 0)) > cfg.blowup_threshold)
            if bad.any():
                alive &= ~bad
                uh[bad] = 0.0
                u[bad] = 0.0
            d = u[ia] - u[ib]
            np.maximum(sup, grid.inner(d, d), out=sup)
        return sup, alive

    stride = cfg.record_stride
    n_rec = n_steps // stride + 1 + (1 if n_steps % stride else 0)
    snaps = np.empty((n_rec,) + uh.shape, dtype=complex)
    rec_times = np.empty(n_rec)
    h = np.full((n_steps + 1,) + batch, np.nan)
    v = np.full_like(h, np.nan)
    lp = np.full_like(h, np.nan)
    work = np.zeros((n_steps,) + batch)
    snaps[0] = physical(0, uh)
    rec_times[0] = 0.0
    k = 1
    for j in range(n_steps):
        prev = physical(j, uh)
        uh, forcing, lp_pow = advance(j, uh)
        u = physical(j + 1, uh)
        if cfg.diagnostics:
            h[j] = grid.norm_h(prev)
            v[j] = grid.norm_v(prev)
            lp[j] = lp_pow ** (1.0 / (params.r + 1))
            if forcing is not None:
                work[j] = grid.inner(prev, forcing) + 0.5 * grid.inner(forcing, forcing)
        norm = grid.norm_h(u)
        if not np.all(np.isfinite(norm)) or np.any(norm > cfg.blowup_threshold):
            raise BlowUpError(j + 1, (j + 1) * cfg.dt)
        if (j + 1) % stride == 0 or j + 1 == n_steps:
            snaps[k] = u
            rec_times[k] = (j + 1) * cfg.dt
            k += 1
    if cfg.diagnostics:
        u = physical(n_steps, uh)
        h[n_steps] = grid.norm_h(u)
        v[n_steps] = grid.norm_v(u)
        lp[n_steps] = grid.lp_norm(u, params.r + 1)
    return dict(times=rec_times, snapshots=snaps, h=h, v=v, lp=lp, work=work)


def _record(grid, params, cfg, n_steps, out, **meta) -> TrajectoryRecord:
    """Squeeze a single-member engine output into a record."""
    rec = TrajectoryRecord(
        grid=grid,
        dt=cfg.dt,
        times=out["times"],
        snapshots=out["snapshots"][:, 0],
        step_times=np.arange(n_steps + 1) * cfg.dt,
        h=out["h"][:, 0],
        v=out["v"][:, 0],
        lp=out["lp"][:, 0],
        work=out["work"][:, 0],
        r=params.r,
        meta=meta,
    )
    if cfg.diagnostics:
        from .experiments import energy_budget

        rec.energy_residual = energy_budget(rec, params)
    return rec


# -- drive construction -------------------------------------------------------


def _steps_and_level(cfg: SolverConfig, t_horizon: float) -> tuple[int, int]:
    if not is_dyadic(t_horizon):
        raise ValueError(f"horizon {t_horizon} is not a dyadic rational")
    level = cfg.dyadic_level(t_horizon)
    return 2**level, level


def ito_increments(path: BrownianPath, cfg: SolverConfig) -> np.ndarray:
    """dW_j on the step mesh, shape (n_steps, K)."""
    n_steps, level = _steps_and_level(cfg, path.t_horizon)
    if level > path.max_level:
        raise PathMismatchError(f"dt = T/2^{level} is finer than the path resolution 2^{path.max_level}")
    return path.level_increments(level).T


def _cell_lookup(table: np.ndarray, n_steps: int) -> np.ndarray:
    """Expand per-cell values to per-step values (cells divide the step mesh)."""
    cells = table.shape[0]
    if n_steps % cells:
        raise ValueError(f"{cells} cells do not divide {n_steps} steps")
    return np.repeat(table, n_steps // cells, axis=0)


def wz_drive(path: BrownianPath, lvl: WZLevel, cfg: SolverConfig) -> np.ndarray:
    """dt * Wdot^n(t_j), shape (n_steps, K)."""
    n_steps, level = _steps_and_level(cfg, path.t_horizon)
    if level < lvl.n:
        raise ValueError(f"dt = {cfg.dt} does not divide sigma = {lvl.sigma}")
    return cfg.dt * _cell_lookup(wz_table(path, lvl), n_steps)


def control_drive(ctrl: ControlSignal, cfg: SolverConfig) -> np.ndarray:
    """dt * k(t_j), shape (n_steps, K)."""
    n_steps, _ = _steps_and_level(cfg, ctrl.t_horizon)
    return cfg.dt * _cell_lookup(ctrl.values, n_steps)


def controlled_drive(path: BrownianPath, ctrl: ControlSignal, lvl: WZLevel, cfg: SolverConfig) -> np.ndarray:
    return ito_increments(path, cfg) - wz_drive(path, lvl, cfg) + control_drive(ctrl, cfg)


def ito_transform(model: NoiseModel, path: BrownianPath, p: FluidParams, cfg: SolverConfig, n_steps: int):
    """Transform coefficients shaped for a single-member run, or None when unused."""
    if cfg.scheme != "exponential-transform" or model.family != "diagonal_linear":
        return None
    return tuple(a[:, None] for a in transform_coeffs(path, model, p.r, n_steps))


def _check_model(model: NoiseModel, x0: SpectralField, k_dim: int):
    if model.grid != x0.grid:
        raise ValueError("noise model and initial datum live on different grids")
    if model.k_dim != k_dim:
        raise PathMismatchError(f"noise model has {model.k_dim} directions, driver has {k_dim}")


# -- public integrators -------------------------------------------------------


def integrate_scbf(x0: SpectralField, p: FluidParams, model: NoiseModel, path: BrownianPath, cfg: SolverConfig) -> TrajectoryRecord:
    """Ito system driven by the stored increments."""
    _check_model(model, x0, path.k_dim)
    xi = ito_increments(path, cfg)
    n_steps = xi.shape[0]
    tf = ito_transform(model, path, p, cfg, n_steps)
    out = evolve(x0.grid, p, model, x0.coeffs[None], cfg, n_steps, xi[:, None], dw=xi[:, None], transform=tf)
    return _record(x0.grid, p, cfg, n_steps, out, system="ito", seed=path.seed)


def integrate_wz(x0, p, model, path: BrownianPath, lvl: WZLevel, cfg: SolverConfig) -> TrajectoryRecord:
    """Random ODE driven by the lagged dyadic derivative plus -(1/2) Tr_n."""
    _check_model(model, x0, path.k_dim)
    xi = wz_drive(path, lvl, cfg)
    n_steps = xi.shape[0]
    out = evolve(x0.grid, p, model, x0.coeffs[None], cfg, n_steps, xi[:, None], tr_levels=[lvl.n])
    return _record(x0.grid, p, cfg, n_steps, out, system="wong-zakai", level=lvl.n, seed=path.seed)


def integrate_skeleton(x0, p, model, ctrl: ControlSignal, lvl: WZLevel, cfg: SolverConfig) -> TrajectoryRecord:
    """Deterministic controlled system with +G(Y) k and -(1/2) Tr_n."""
    _check_model(model, x0, ctrl.k_dim)
    if ctrl.t_horizon != lvl.t_horizon:
        raise ValueError("control and level horizons differ")
    xi = control_drive(ctrl, cfg)
    n_steps = xi.shape[0]
    out = evolve(x0.grid, p, model, x0.coeffs[None], cfg, n_steps, xi[:, None], tr_levels=[lvl.n])
    return _record(x0.grid, p, cfg, n_steps, out, system="skeleton", level=lvl.n)


def integrate_controlled(x0, p, model, path: BrownianPath, ctrl: ControlSignal, lvl: WZLevel, cfg: SolverConfig) -> TrajectoryRecord:
    """G dW - G Wdot^n dt + G k dt, with no correction term."""
    _check_model(model, x0, path.k_dim)
    if ctrl.k_dim != path.k_dim or ctrl.t_horizon != path.t_horizon:
        raise PathMismatchError("control and path disagree on K or T")
    xi = controlled_drive(path, ctrl, lvl, cfg)
    n_steps = xi.shape[0]
    dw = ito_increments(path, cfg)
    tf = ito_transform(model, path, p, cfg, n_steps)
    out = evolve(x0.grid, p, model, x0.coeffs[None], cfg, n_steps, xi[:, None], dw=dw[:, None], transform=tf)
    return _record(x0.grid, p, cfg, n_steps, out, system="controlled", level=lvl.n, seed=path.seed)


def integrate_deterministic(x0: SpectralField, p: FluidParams, t_horizon: float, cfg: SolverConfig) -> TrajectoryRecord:
    """Unforced CBF flow (no noise model)."""
    n_steps, _ = _steps_and_level(cfg, t_horizon)
    out = evolve(x0.grid, p, None, x0.coeffs[None], cfg, n_steps)
    return _record(x0.grid, p, cfg, n_steps, out, system="deterministic")
