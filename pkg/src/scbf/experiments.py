"""Monte-Carlo convergence studies and sampled inequality batteries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .integrate import (
    SCHEMES,
    ControlSignal,
    SolverConfig,
    TrajectoryRecord,
    evolve,
    integrate_deterministic,
    integrate_skeleton,
    integrate_wz,
    ito_transform,
    plain_coeffs,
    transform_coeffs,
)
from .noise import BrownianPath, NoiseModel, WZLevel, sample_path, wz_table
from .spectral import FluidParams, GridSpec, PhysicalField, SpectralField, leray_project, to_spectral

DEFAULT_WEIGHTS = (0.4, 0.3, 0.2, 0.15, 0.1, 0.08, 0.06, 0.05)
# extra dyadic levels of the realized path below the time step; they feed
# the step integrals of the transform scheme
QUADRATURE_LEVELS = 4
Z95 = 1.959963984540054


# -- problem setup ------------------------------------------------------------


def cellular_field(grid: GridSpec, h_norm: float = 1.0) -> SpectralField:
    """Smooth divergence-free datum from the stream function
    psi = sin x sin y + cos(x + 2y) / 2, rescaled to the given H norm."""

    def velocity(x, y):
        # u = (d_y psi, -d_x psi)
        u1 = np.sin(x) * np.cos(y) - np.sin(x + 2 * y)
        u2 = -np.cos(x) * np.sin(y) + 0.5 * np.sin(x + 2 * y)
        return np.stack([u1, u2])

    u = leray_project(to_spectral(PhysicalField.from_function(grid, velocity)))
    return u * (h_norm / float(grid.norm_h(u.coeffs)))


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything a study needs besides sample counts and seeds."""

    grid: GridSpec
    params: FluidParams
    model: NoiseModel
    x0: SpectralField
    t_horizon: float
    dt: float
    scheme: str = SCHEMES[0]

    @classmethod
    def default(cls, family: str = "diagonal_linear", dt: float | None = None, n: int = 32) -> "Problem":
        grid = GridSpec(n)
        model = getattr(NoiseModel, family)(grid, DEFAULT_WEIGHTS)
        return cls(grid, FluidParams(1.0, 0.1, 1.0, 3), model, cellular_field(grid, 2 * math.pi), 0.5, dt or 0.5 / 2**12)

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(self.dt, diagnostics=False, scheme=self.scheme)

    @property
    def step_level(self) -> int:
        return self.solver.dyadic_level(self.t_horizon)

    @property
    def n_steps(self) -> int:
        return 2**self.step_level

    def with_model(self, model: NoiseModel) -> "Problem":
        return replace(self, model=model)

    def with_dt(self, dt: float) -> "Problem":
        return replace(self, dt=dt)

    def with_scheme(self, scheme: str) -> "Problem":
        return replace(self, scheme=scheme)

    def path(self, seed: int) -> BrownianPath:
        """A path resolved QUADRATURE_LEVELS below the time step."""
        return sample_path(seed, self.t_horizon, self.step_level + QUADRATURE_LEVELS, self.model.k_dim)

    def transform(self, path: BrownianPath | None):
        """Per-member transform coefficients: from ``path``, or the plain ones for None."""
        if path is None:
            return plain_coeffs(self.n_steps, self.dt)
        return transform_coeffs(path, self.model, self.params.r, self.n_steps)


def sample_seed(master_seed: int, index: int) -> int:
    """Per-sample path seed derived from the master seed."""
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, np.uint64)[0])


def default_control(t_horizon: float, k_dim: int, cells: int = 8, l2_norm: float = 1.0) -> ControlSignal:
    """Fixed smooth-in-time piecewise-constant control with the given L^2 norm."""
    t = (np.arange(cells) + 0.5) / cells
    k = np.arange(k_dim)
    values = np.cos(2 * np.pi * t[:, None] + 0.7 * k[None, :]) / (1.0 + k[None, :])
    ctrl = ControlSignal(t_horizon, values)
    return ControlSignal(t_horizon, values * (l2_norm / ctrl.l2_norm))


# -- convergence tables ---------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    samples: int
    err: float
    ci_half_width: float
    flagged: int = 0


@dataclass
class ConvergenceTable:
    """Monte-Carlo estimates of E[sup_t ||a(t) - b(t)||_H^2] per level."""

    name: str
    rows: list[ConvergenceRow]
    per_sample: np.ndarray | None = None  # (levels, samples); NaN where flagged
    meta: dict = field(default_factory=dict)

    @property
    def levels(self) -> list[int]:
        return [row.n for row in self.rows]

    @property
    def errors(self) -> np.ndarray:
        return np.array([row.err for row in self.rows])

    @property
    def half_widths(self) -> np.ndarray:
        return np.array([row.ci_half_width for row in self.rows])


def summarize(levels, sups: np.ndarray, ok: np.ndarray) -> list[ConvergenceRow]:
    """Mean and 95% normal-approximation half width over unflagged samples."""
    rows = []
    for i, n in enumerate(levels):
        vals = sups[i][ok]
        m = vals.size
        err = float(vals.mean()) if m else math.nan
        ci = float(Z95 * vals.std(ddof=1) / math.sqrt(m)) if m > 1 else math.nan
        rows.append(ConvergenceRow(int(n), m, err, ci, int((~ok).sum())))
    return rows


@dataclass(frozen=True)
class TrendVerdict:
    inversions: int
    tolerated: bool
    ratio: float
    ratio_limit: float
    passed: bool


def assess_trend(table: ConvergenceTable, ratio_limit: float = 0.2, max_inversions: int = 1) -> TrendVerdict:
    """Nonincreasing in n up to ``max_inversions`` CI-overlapping inversions,
    and err(finest) <= ratio_limit * err(coarsest)."""
    err, ci = table.errors, table.half_widths
    inversions = 0
    tolerated = True
    for i in range(len(err) - 1):
        if err[i + 1] > err[i]:
            inversions += 1
            overlap = err[i + 1] - ci[i + 1] <= err[i] + ci[i]
            tolerated &= bool(overlap)
    tolerated &= inversions <= max_inversions
    ratio = float(err[-1] / err[0]) if err[0] > 0 else (0.0 if err[-1] == 0 else math.inf)
    ok = tolerated and ratio <= ratio_limit and bool(np.all(np.isfinite(err)))
    return TrendVerdict(inversions, tolerated, ratio, ratio_limit, ok)


def _check_levels(levels, path_level: int, k_dim: int):
    levels = [int(n) for n in levels]
    if not levels:
        raise ValueError("at least one level is required")
    if max(levels) > path_level:
        raise ValueError(f"level {max(levels)} exceeds the step resolution 2^{path_level}")
    if max(levels) > k_dim:
        raise ValueError(f"level {max(levels)} needs {max(levels)} noise directions, model has {k_dim}")
    return levels


def _run_batches(problem: Problem, build, n_members: int, samples: int, pairs_per_sample, batch_samples: int):
    """Drive ``build(sample) -> (xi, tr_levels, dw, ito, transform)`` through the batch engine.

    Returns (sups with shape (pairs, samples), ok flags per sample).
    """
    p = problem
    n_pairs = len(pairs_per_sample)
    sups = np.zeros((n_pairs, samples))
    ok = np.ones(samples, dtype=bool)
    for start in range(0, samples, batch_samples):
        chunk = list(range(start, min(samples, start + batch_samples)))
        xis, trs, dws, itos, tfs = zip(*(build(s) for s in chunk))
        xi = np.concatenate(xis, axis=1)
        dw = np.concatenate(dws, axis=1)
        tr = np.concatenate(trs)
        ito = np.concatenate(itos)
        tf = tuple(np.concatenate(parts, axis=1) for parts in zip(*tfs))
        pairs = [(c * n_members + a, c * n_members + b) for c in range(len(chunk)) for a, b in pairs_per_sample]
        x0 = np.broadcast_to(p.x0.coeffs, (len(chunk) * n_members,) + p.grid.spectral_shape)
        sup, alive = evolve(p.grid, p.params, p.model, x0, p.solver, p.n_steps, xi, tr, pairs, dw, ito, tf)
        sup = sup.reshape(len(chunk), n_pairs)
        alive = alive.reshape(len(chunk), n_members).all(axis=1)
        sups[:, chunk] = sup.T
        ok[chunk] = alive
    sups[:, ~ok] = np.nan
    return sups, ok


def _member_transforms(problem: Problem, paths) -> tuple:
    """Stack transform coefficients over members, shape (steps(+1), members) each."""
    needed = problem.scheme == "exponential-transform" and problem.model.family == "diagonal_linear"
    cache = {}
    parts = []
    for path in paths:
        key = id(path) if needed else None
        if key not in cache:
            cache[key] = problem.transform(path if needed else None)
        parts.append(cache[key])
    return tuple(np.stack(arrs, axis=1) for arrs in zip(*parts))


def convergence_study(problem: Problem, levels, samples: int, master_seed: int, batch_samples: int = 8) -> ConvergenceTable:
    """E[sup_t ||u(t) - u^n(t)||_H^2] with the Ito and Wong-Zakai runs sharing paths.

    Member 0 of each sample is the Ito run; member i >= 1 is the Wong-Zakai
    run at ``levels[i-1]``.
    """
    p = problem
    levels = _check_levels(levels, p.step_level, p.model.k_dim)
    width = len(levels) + 1
    wz_tr = np.array([0] + levels)
    ito = np.arange(width) == 0

    def build(s):
        path = p.path(sample_seed(master_seed, s))
        xi = np.empty((p.n_steps, width, p.model.k_dim))
        xi[:, 0] = path.level_increments(p.step_level).T
        for i, n in enumerate(levels, start=1):
            xi[:, i] = p.dt * np.repeat(wz_table(path, WZLevel(n, p.t_horizon)), 2 ** (p.step_level - n), axis=0)
        dw = np.zeros_like(xi)
        dw[:, 0] = xi[:, 0]
        return xi, wz_tr, dw, ito, _member_transforms(p, [path] + [None] * len(levels))

    sups, ok = _run_batches(p, build, width, samples, [(0, i) for i in range(1, width)], batch_samples)
    return ConvergenceTable("wong-zakai", summarize(levels, sups, ok), sups, {"master_seed": master_seed})


def skeleton_wz_convergence(problem: Problem, ctrl: ControlSignal, levels, samples: int, master_seed: int, batch_samples: int = 8) -> ConvergenceTable:
    """E[sup_t ||Y^n_k(t) - Y_k(t)||_H^2] for controlled runs against one skeleton.

    The reference skeleton carries the correction at the finest requested
    level, which is the limit of the effective drift of the controlled runs.
    """
    p = problem
    levels = _check_levels(levels, p.step_level, p.model.k_dim)
    width = len(levels) + 1
    cells = ctrl.cells
    if p.n_steps % cells:
        raise ValueError("control mesh is finer than the time step")
    k_steps = p.dt * np.repeat(ctrl.values, p.n_steps // cells, axis=0)
    tr = np.array([max(levels)] + [0] * len(levels))
    ito = np.arange(width) > 0

    def build(s):
        path = p.path(sample_seed(master_seed, s))
        incr = path.level_increments(p.step_level).T
        xi = np.empty((p.n_steps, width, p.model.k_dim))
        dw = np.empty_like(xi)
        xi[:, 0] = k_steps
        dw[:, 0] = 0.0
        for i, n in enumerate(levels, start=1):
            wdot = p.dt * np.repeat(wz_table(path, WZLevel(n, p.t_horizon)), 2 ** (p.step_level - n), axis=0)
            xi[:, i] = incr - wdot + k_steps
            dw[:, i] = incr
        return xi, tr, dw, ito, _member_transforms(p, [None] + [path] * len(levels))

    sups, ok = _run_batches(p, build, width, samples, [(0, i) for i in range(1, width)], batch_samples)
    return ConvergenceTable(
        "skeleton", summarize(levels, sups, ok), sups, {"master_seed": master_seed, "control_l2": ctrl.l2_norm}
    )


def skeleton_consistency(problem: Problem, path: BrownianPath, n: int, cfg: SolverConfig | None = None) -> float:
    """sup_t ||Y(t) - u^n(t)||_H with the skeleton driven by the realized Wdot^n."""
    p = problem
    cfg = cfg or SolverConfig(p.dt, diagnostics=False)
    lvl = WZLevel(n, p.t_horizon)
    wz = integrate_wz(p.x0, p.params, p.model, path, lvl, cfg)
    sk = integrate_skeleton(p.x0, p.params, p.model, ControlSignal.from_wz(path, lvl), lvl, cfg)
    return float(np.max(p.grid.norm_h(wz.snapshots - sk.snapshots)))


# -- step halving -----------------------------------------------------------------


@dataclass(frozen=True)
class HalvingReport:
    system: str
    dts: tuple[float, ...]
    differences: tuple[float, ...]  # sup_t ||u_dt - u_{dt/2}||_H on the coarse mesh
    ratios: tuple[float, ...]

    def passed(self, limit: float = 1.8) -> bool:
        return all(r >= limit for r in self.ratios)


HALVING_SYSTEMS = ("ito", "wong-zakai", "skeleton", "controlled")


def step_halving(
    problem: Problem,
    path: BrownianPath,
    system: str,
    level: int,
    coarse_level: int,
    halvings: int = 3,
    ctrl: ControlSignal | None = None,
    scheme: str | None = None,
) -> HalvingReport:
    """Self-convergence of one integrator on a frozen path.

    Runs at dt = T / 2**(coarse_level + i) for i = 0..halvings+1 and compares
    consecutive runs at the coarse mesh points.  The path should be resolved
    below the finest step so the transform scheme sees its quadrature levels.
    """
    scheme = scheme or problem.scheme
    p = problem
    lvl = WZLevel(level, p.t_horizon)
    ctrl = ctrl if ctrl is not None else default_control(p.t_horizon, p.model.k_dim)
    finals = []
    dts = []
    for i in range(halvings + 2):
        lev = coarse_level + i
        cfg = SolverConfig(p.t_horizon / 2**lev, record_stride=2**i, diagnostics=False, scheme=scheme)
        dw = path.level_increments(lev).T
        if system == "ito":
            xi, tr = dw, None
        else:
            step = 2 ** (lev - level)
            wdot = cfg.dt * np.repeat(wz_table(path, lvl), step, axis=0)
            kdt = cfg.dt * np.repeat(ctrl.values, 2**lev // ctrl.cells, axis=0)
            if system == "wong-zakai":
                xi, tr = wdot, [level]
            elif system == "skeleton":
                xi, tr = kdt, [level]
            elif system == "controlled":
                xi, tr = dw - wdot + kdt, None
            else:
                raise ValueError(f"unknown system {system!r}")
        ito = system in ("ito", "controlled")
        tf = ito_transform(p.model, path, p.params, cfg, 2**lev) if ito else None
        out = evolve(p.grid, p.params, p.model, p.x0.coeffs[None], cfg, 2**lev, xi[:, None], tr, dw=dw[:, None], ito=[ito], transform=tf)
        finals.append(out["snapshots"][:, 0])
        dts.append(cfg.dt)
    diffs = [float(np.max(p.grid.norm_h(a - b))) for a, b in zip(finals, finals[1:])]
    ratios = [a / b if b > 0 else math.inf for a, b in zip(diffs, diffs[1:])]
    return HalvingReport(system, tuple(dts), tuple(diffs), tuple(ratios))


# -- energy budget ---------------------------------------------------------------


def energy_budget(record: TrajectoryRecord, params: FluidParams) -> np.ndarray:
    """Residual of the discrete energy identity after each step.

    residual_j = 1/2 |u_j|^2 - 1/2 |u_0|^2 + sum_{i<j} (dt D(u_i) - W_i)

    with dissipation D = mu |u|_V^2 + alpha |u|_H^2 + beta |u|_{L^{r+1}}^{r+1}
    and W_i the realized work of noise, control and correction over step i,
    including the quadratic term |F_i|^2 / 2.  For the exact flow the
    residual vanishes; the scheme leaves an O(dt) remainder.
    """
    h, v, lp = record.h, record.v, record.lp
    if np.any(np.isnan(h)):
        raise ValueError("record was produced without diagnostics")
    diss = params.mu * v[:-1] ** 2 + params.alpha * h[:-1] ** 2 + params.beta * lp[:-1] ** (params.r + 1)
    flux = np.concatenate([[0.0], np.cumsum(record.dt * diss - record.work)])
    return 0.5 * h**2 - 0.5 * h[0] ** 2 + flux


def energy_bound(record: TrajectoryRecord, params: FluidParams) -> float:
    """sup_t |u|_H^2 + int (mu |u|_V^2 + beta |u|_{L^{r+1}}^{r+1}) dt by left sums."""
    integral = np.sum(params.mu * record.v[:-1] ** 2 + params.beta * record.lp[:-1] ** (params.r + 1)) * record.dt
    return float(np.max(record.h**2) + integral)


def deterministic_budget(problem: Problem) -> float:
    """max |residual| of an unforced run."""
    rec = integrate_deterministic(problem.x0, problem.params, problem.t_horizon, SolverConfig(problem.dt))
    return float(np.max(np.abs(rec.energy_residual)))


# -- inequality batteries ----------------------------------------------------------


@dataclass(frozen=True)
class InequalityReport:
    name: str
    trials: int
    worst_margin: float
    tolerance: float
    passed: bool
    detail: str = ""

    @classmethod
    def from_margins(cls, name: str, margins, tolerance: float, detail: str = "") -> "InequalityReport":
        margins = np.asarray(margins, dtype=float)
        worst = float(np.min(margins)) if margins.size else math.inf
        ok = bool(margins.size and np.all(np.isfinite(margins)) and worst >= -tolerance)
        return cls(name, int(margins.size), worst, tolerance, ok, detail)


def random_batch(grid: GridSpec, rng: np.random.Generator, count: int, low: float = 0.1, high: float = 10.0) -> np.ndarray:
    """Random divergence-free fields with log-uniform H norms in [low, high]."""
    uh = grid.random_coeffs(rng, (count,))
    target = np.exp(rng.uniform(np.log(low), np.log(high), count))
    return uh * (target / grid.norm_h(uh))[:, None, None, None]


def _drift(grid: GridSpec, p: FluidParams, uh: np.ndarray) -> np.ndarray:
    out = p.mu * grid.stokes(uh) + grid.convective(uh, uh) + p.alpha * uh
    if p.beta:
        out = out + p.beta * grid.forchheimer(uh, p.r)
    return out


def monotonicity_constant(p: FluidParams, grid: GridSpec, u2h: np.ndarray, form: str) -> np.ndarray | float:
    """Coefficient of ||u1 - u2||_H^2 in the local monotonicity inequality.

    ``critical_global``: 0 (r = 3, 2 beta mu >= 1); ``supercritical_eta``: the
    eta constant (r > 3); ``l4_local``: 27 / (32 mu^3) ||u2||_{L^4}^4.
    """
    if form == "l4_local":
        return 27.0 / (32.0 * p.mu**3) * grid.lp_power(u2h, 4.0)
    if form == "supercritical_eta":
        r = p.r
        return eta_constant(p.mu, p.beta, r)
    if form == "critical_global":
        return 0.0
    raise ValueError(f"unknown form {form!r}")


def eta_constant(mu: float, beta: float, r: float) -> float:
    """((r-3)/(2 mu (r-1))) * (2/(beta mu (r-1)))**(2/(r-3)) for r > 3."""
    if r <= 3:
        raise ValueError("the eta constant is defined for r > 3")
    return (r - 3) / (2 * mu * (r - 1)) * (2 / (beta * mu * (r - 1))) ** (2 / (r - 3))


MONOTONICITY_REGIMES = (
    ("critical_global", 3.0, 1.0, 1.0),
    ("supercritical_eta", 5.0, 1.0, 1.0),
    ("l4_local", 3.0, 1.0, 1.0),
)


def monotonicity_suite(grid: GridSpec, trials: int, seed: int, regimes=MONOTONICITY_REGIMES, alpha: float = 0.0, chunk: int = 500, tol: float = 1e-8) -> list[InequalityReport]:
    """<M(u1) - M(u2), u1 - u2> + c ||u1 - u2||_H^2 >= 0 on random pairs."""
    reports = []
    for i, (form, r, mu, beta) in enumerate(regimes):
        p = FluidParams.unchecked(mu, alpha, beta, r)
        rng = np.random.default_rng([seed, i])
        margins = []
        for start in range(0, trials, chunk):
            m = min(chunk, trials - start)
            u1, u2 = random_batch(grid, rng, m), random_batch(grid, rng, m)
            w = u1 - u2
            lhs = grid.inner(_drift(grid, p, u1) - _drift(grid, p, u2), w)
            margins.append(lhs + monotonicity_constant(p, grid, u2, form) * grid.inner(w, w))
        reports.append(InequalityReport.from_margins(f"{form}[r={r:g},mu={mu:g},beta={beta:g}]", np.concatenate(margins), tol))
    return reports


def _trilinear(grid: GridSpec, uh, vh, wh) -> np.ndarray:
    """Batched b(u, v, w) by Parseval against the dealiased advection."""
    return grid.inner(grid.advect(uh, vh), wh)


def identity_suite(grid: GridSpec, trials: int, seed: int, pair_trials: int | None = None, chunk: int = 500) -> tuple[list[InequalityReport], dict]:
    """Operator identities and inequalities on random fields.

    ``trials`` triples for the pointwise identities and ``pair_trials``
    (default 10 * trials) pairs for the monotonicity-type inequalities.
    Returns the reports and a dict of calibrated quantities.
    """
    pair_trials = pair_trials or 10 * trials
    rng = np.random.default_rng([seed, 100])
    reports = []
    extra = {}

    # skew symmetry b(u, v, w) + b(u, w, v) = 0, relative to |u|_V |v|_V |w|_V + 1
    skew, duality, ladyz = [], {3.0: [], 5.0: []}, []
    for start in range(0, trials, chunk):
        m = min(chunk, trials - start)
        u, v, w = (random_batch(grid, rng, m) for _ in range(3))
        scale = grid.norm_v(u) * grid.norm_v(v) * grid.norm_v(w) + 1.0
        skew.append(-np.abs(_trilinear(grid, u, v, w) + _trilinear(grid, u, w, v)) / scale)
        for r in duality:
            pair = grid.inner(grid.power_term(u, r), u)
            exact = grid.lp_power(u, r + 1)
            duality[r].append(-np.abs(pair - exact) / exact)
        hu, vu, hw, vw = grid.norm_h(u), grid.norm_v(u), grid.norm_h(w), grid.norm_v(w)
        ladyz.append(np.abs(_trilinear(grid, u, v, w)) / np.sqrt(hu * vu * hw * vw) / grid.norm_v(v))
    reports.append(InequalityReport.from_margins("skew_symmetry", np.concatenate(skew), 1e-10))
    for r, vals in duality.items():
        reports.append(InequalityReport.from_margins(f"forchheimer_duality[r={r:g}]", np.concatenate(vals), 1e-10))
    ladyz = np.concatenate(ladyz)
    extra["trilinear_constant"] = float(ladyz.max())
    reports.append(
        InequalityReport.from_margins(
            "trilinear_bound_calibration", np.where(np.isfinite(ladyz), 0.0, -np.inf), 0.0, f"C = {ladyz.max():.6g}"
        )
    )

    # monotonicity of C and the norm comparison, r in {3, 5}
    for r in (3.0, 5.0):
        mo, cmp_ = [], []
        factor = 1.0 if r <= 2 else 2.0 ** (r - 2)
        for start in range(0, pair_trials, chunk):
            m = min(chunk, pair_trials - start)
            u, v = random_batch(grid, rng, m), random_batch(grid, rng, m)
            d = u - v
            gu, gv = grid.weighted_gap(u, d, r), grid.weighted_gap(v, d, r)
            lhs = grid.inner(grid.power_term(u, r) - grid.power_term(v, r), d)
            mo.append(lhs - 0.5 * gu - 0.5 * gv)
            cmp_.append(factor * (gu + gv) - grid.lp_power(d, r + 1))
        reports.append(InequalityReport.from_margins(f"c_monotonicity[r={r:g}]", np.concatenate(mo), 1e-8))
        reports.append(InequalityReport.from_margins(f"norm_comparison[r={r:g}]", np.concatenate(cmp_), 1e-8))

    # growth bound for B at r = 5 with multiplicative slack
    r = 5.0
    slack = 1e-6
    grow = []
    for start in range(0, pair_trials, chunk):
        m = min(chunk, pair_trials - start)
        u, v = random_batch(grid, rng, m), random_batch(grid, rng, m)
        lhs = np.abs(grid.inner(grid.advect(u, u), v))
        bound = grid.lp_norm(u, r + 1) ** ((r + 1) / (r - 1)) * grid.norm_h(u) ** ((r - 3) / (r - 1)) * grid.norm_v(v)
        grow.append((1 + slack) * bound - lhs)
    reports.append(InequalityReport.from_margins("b_growth[r=5]", np.concatenate(grow), 0.0))

    # Gateaux derivative of C against forward differences
    slopes = []
    eps = np.logspace(-6, -3, 7)
    for r in (3.0, 5.0):
        u, v = random_batch(grid, rng, 4, 0.5, 2.0), random_batch(grid, rng, 4, 0.5, 2.0)
        base = grid.forchheimer(u, r)
        deriv = grid.forchheimer_gateaux(u, v, r)
        errs = np.array([grid.norm_h((grid.forchheimer(u + e * v, r) - base) / e - deriv) for e in eps])
        for j in range(errs.shape[1]):
            slopes.append(np.polyfit(np.log(eps), np.log(errs[:, j]), 1)[0])
    slopes = np.array(slopes)
    extra["gateaux_slopes"] = slopes.tolist()
    reports.append(InequalityReport.from_margins("gateaux_slope", slopes - 0.9, 0.0, f"min slope {slopes.min():.4f}"))
    return reports, extra
