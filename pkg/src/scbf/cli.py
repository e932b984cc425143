"""Command line entry point: ``scbf {simulate,converge,skeleton,verify}``.

Exit status 0 when every check passes, 1 when a check fails or a run aborts,
2 for configuration and usage errors.  Errors go to stderr as
``error[<kind>]: <message>``.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import FORMATS, ConfigError, RunConfig, parse_config
from .experiments import (
    InequalityReport,
    Problem,
    assess_trend,
    cellular_field,
    convergence_study,
    default_control,
    energy_bound,
    identity_suite,
    monotonicity_suite,
    sample_seed,
    skeleton_consistency,
    skeleton_wz_convergence,
)
from .integrate import BlowUpError, SolverConfig, integrate_scbf, integrate_wz
from .noise import NoiseModel, WZLevel
from .results import ResultTable, write_results
from .spectral import FluidParams, GridSpec, random_field

OUT_ENV = "SCBF_OUT_DIR"
DEFAULT_OUT = "scbf-out"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_CONFIG, f"error[usage]: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scbf", description="Wong-Zakai experiments for stochastic CBF flow on the torus.")
    sub = parser.add_subparsers(dest="command", metavar="{simulate,converge,skeleton,verify}")
    sub.required = True
    helps = {
        "simulate": "integrate one path with the Ito and Wong-Zakai systems",
        "converge": "Monte-Carlo Wong-Zakai convergence table",
        "skeleton": "skeleton identity check and controlled-vs-skeleton table",
        "verify": "operator identity and monotonicity battery",
    }
    for name, text in helps.items():
        cmd = sub.add_parser(name, help=text)
        cmd.error = parser.error
        cmd.add_argument("--config", type=Path, help="TOML run configuration (defaults to the benchmark)")
        cmd.add_argument("--seed", type=int, help="override experiment.master_seed (unsigned 64-bit)")
        cmd.add_argument("--out", type=Path, help=f"output directory (default: config, ${OUT_ENV}, ./{DEFAULT_OUT})")
        cmd.add_argument("--format", choices=FORMATS, help="output format")
    return parser


def load_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError("config_file", f"cannot read {args.config}: {exc.strerror}") from None
        cfg = parse_config(text)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("seed_range", f"--seed {args.seed} is not an unsigned 64-bit integer")
        cfg = cfg.with_seed(args.seed)
    return cfg.with_output(None if args.out is None else str(args.out), args.format)


def output_dir(cfg: RunConfig) -> Path:
    return Path(cfg.output.dir or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def build_problem(cfg: RunConfig) -> Problem:
    grid = GridSpec(cfg.grid.n, cfg.dealias_fraction)
    p = cfg.params
    params = FluidParams(p.mu, p.alpha, p.beta, p.r)
    model = getattr(NoiseModel, cfg.noise.family)(grid, cfg.noise.weights)
    if cfg.initial.kind == "cellular":
        x0 = cellular_field(grid, cfg.initial.h_norm)
    else:
        x0 = random_field(grid, np.random.default_rng(cfg.initial.seed), cfg.initial.h_norm)
    return Problem(grid, params, model, x0, cfg.solver.t_horizon, cfg.solver.dt, cfg.solver.scheme)


def _solver(cfg: RunConfig, diagnostics: bool = True) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(s.dt, record_stride=s.record_stride, diagnostics=diagnostics, scheme=s.scheme)


def _convergence_table(name: str, table) -> ResultTable:
    verdict = assess_trend(table)
    meta = {
        "flagged": [row.flagged for row in table.rows],
        "inversions": verdict.inversions,
        "ratio": verdict.ratio,
        "ratio_limit": verdict.ratio_limit,
        "passed": verdict.passed,
    }
    rows = [(row.n, row.samples, row.err, row.ci_half_width) for row in table.rows]
    return ResultTable(name, ("n", "M", "err", "ci"), rows, meta)


def _trajectory_table(name: str, rec, stride: int) -> ResultTable:
    idx = np.arange(0, rec.h.size, stride)
    if idx[-1] != rec.h.size - 1:
        idx = np.append(idx, rec.h.size - 1)
    rows = [
        (float(rec.step_times[i]), float(rec.h[i]), float(rec.v[i]), float(rec.lp[i]), float(rec.energy_residual[i]))
        for i in idx
    ]
    meta = {"energy_bound": energy_bound(rec, rec.meta["params"]), **{k: v for k, v in rec.meta.items() if k != "params"}}
    return ResultTable(name, ("t", "h", "v", "lp", "energy_residual"), rows, meta)


def _state_table(grid: GridSpec, records: dict) -> ResultTable:
    rows = []
    mask = grid.mask
    for system, rec in records.items():
        final = rec.snapshots[-1]
        for comp in range(2):
            for a, b in zip(*np.nonzero(mask)):
                k1 = int(a) if a <= grid.n // 2 else int(a) - grid.n
                z = final[comp, a, b]
                rows.append((system, comp, k1, int(b), float(z.real), float(z.imag)))
    return ResultTable("final_state", ("system", "component", "k1", "k2", "re", "im"), rows)


def cmd_simulate(cfg: RunConfig) -> tuple[list[ResultTable], bool]:
    prob = build_problem(cfg)
    seed = sample_seed(cfg.experiment.master_seed, 0)
    path = prob.path(seed)
    solver = _solver(cfg)
    lvl = WZLevel(cfg.experiment.simulate_level, prob.t_horizon)
    ito = integrate_scbf(prob.x0, prob.params, prob.model, path, solver)
    wz = integrate_wz(prob.x0, prob.params, prob.model, path, lvl, solver)
    tables = []
    for name, rec in (("trajectory_ito", ito), ("trajectory_wz", wz)):
        rec.meta["params"] = prob.params
        tables.append(_trajectory_table(name, rec, cfg.solver.record_stride))
    tables.append(_state_table(prob.grid, {"ito": ito, "wong-zakai": wz}))
    ok = all(np.all(np.isfinite(t.rows)) for t in tables[:2])
    return tables, ok


def cmd_converge(cfg: RunConfig) -> tuple[list[ResultTable], bool]:
    prob = build_problem(cfg)
    e = cfg.experiment
    table = convergence_study(prob, e.levels, e.samples, e.master_seed, e.batch_samples)
    out = _convergence_table("convergence", table)
    return [out], out.meta["passed"]


def cmd_skeleton(cfg: RunConfig) -> tuple[list[ResultTable], bool]:
    prob = build_problem(cfg)
    e = cfg.experiment
    solver = SolverConfig(prob.dt, diagnostics=False, scheme=cfg.solver.scheme)
    rows = []
    for s in range(e.skeleton_seeds):
        seed = sample_seed(e.master_seed, s)
        path = prob.path(seed)
        rows.append((seed, skeleton_consistency(prob, path, e.simulate_level, solver)))
    identity = ResultTable("skeleton_identity", ("seed", "deviation"), rows, {"level": e.simulate_level})
    ctrl = default_control(prob.t_horizon, prob.model.k_dim, e.control_cells, e.control_l2)
    table = skeleton_wz_convergence(prob, ctrl, e.levels, e.samples, e.master_seed, e.batch_samples)
    conv = _convergence_table("skeleton_convergence", table)
    ok = all(dev == 0.0 for _, dev in rows) and conv.meta["passed"]
    return [identity, conv], ok


def _report_rows(reports: list[InequalityReport]):
    return [(r.name, r.trials, r.worst_margin, r.tolerance, r.passed) for r in reports]


def cmd_verify(cfg: RunConfig) -> tuple[list[ResultTable], bool]:
    grid = GridSpec(cfg.grid.n, cfg.dealias_fraction)
    e = cfg.experiment
    reports, extra = identity_suite(grid, e.identity_trials, e.master_seed, e.pair_trials)
    reports += monotonicity_suite(grid, e.pair_trials, e.master_seed)
    p = cfg.params
    if p.r > 3:
        form = "supercritical_eta"
    elif p.r == 3 and 2 * p.beta * p.mu >= 1:
        form = "critical_global"
    else:
        form = "l4_local"
    reports += monotonicity_suite(grid, e.pair_trials, e.master_seed + 1, ((form, p.r, p.mu, p.beta),), alpha=p.alpha)
    table = ResultTable("verify", ("name", "trials", "worst_margin", "tolerance", "passed"), _report_rows(reports), extra)
    return [table], all(r.passed for r in reports)


COMMANDS = {"simulate": cmd_simulate, "converge": cmd_converge, "skeleton": cmd_skeleton, "verify": cmd_verify}


def run_command(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        tables, ok = COMMANDS[args.command](cfg)
    except BlowUpError as exc:
        print(f"error[blowup]: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out = output_dir(cfg)
    try:
        written = write_results(tables, out, cfg.output.format, cfg.sha256, cfg.experiment.master_seed)
        (out / "config.toml").write_text(cfg.serialize())
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for path in written:
        print(path)
    if not ok:
        print(f"error[check]: {args.command} reported a failed check", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def main() -> None:
    sys.exit(run_command())
