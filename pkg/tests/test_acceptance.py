"""Acceptance criteria on the default benchmark.

Each test logs one PASS/FAIL line, repeated in the terminal summary.  The
whole module takes several minutes; deselect it with ``-m "not slow"``.
"""

import json
import time

import numpy as np
import pytest

from scbf.cli import run_command
from scbf.experiments import (
    HALVING_SYSTEMS,
    QUADRATURE_LEVELS,
    Problem,
    default_control,
    eta_constant,
    identity_suite,
    monotonicity_suite,
    sample_seed,
    skeleton_consistency,
    skeleton_wz_convergence,
    step_halving,
)
from scbf.noise import sample_path
from scbf.spectral import GridSpec

pytestmark = pytest.mark.slow

LEVELS = [3, 4, 5, 6, 7, 8]
SAMPLES = 32
RATIO_LIMIT = 0.2


def trend_ok(err, ci):
    """Nonincreasing up to one inversion inside overlapping 95% intervals, and the ratio test."""
    inversions = [i for i in range(len(err) - 1) if err[i + 1] > err[i]]
    overlapping = all(err[i + 1] - ci[i + 1] <= err[i] + ci[i] for i in inversions)
    ratio = err[-1] / err[0]
    return len(inversions) <= 1 and overlapping and ratio <= RATIO_LIMIT, len(inversions), ratio


@pytest.fixture(scope="module")
def converge_runs(tmp_path_factory):
    """Two `converge` runs on the default configuration into separate directories."""
    runs = []
    for name in ("first", "second"):
        out = tmp_path_factory.mktemp(name)
        start = time.perf_counter()
        code = run_command(["converge", "--out", str(out)])
        runs.append((code, out, time.perf_counter() - start))
    return runs


def test_wong_zakai_convergence_trend(converge_runs, acceptance_log):
    code, out, elapsed = converge_runs[0]
    doc = json.loads((out / "convergence.json").read_text())
    rows = doc["rows"]
    assert [r[0] for r in rows] == LEVELS
    err = np.array([r[2] for r in rows])
    ci = np.array([r[3] for r in rows])
    ok, inversions, ratio = trend_ok(err, ci)
    ok = ok and all(r[1] == SAMPLES for r in rows) and code == 0
    detail = f"err = {np.array2string(err, precision=4)}, inversions = {inversions}, err(8)/err(3) = {ratio:.4f} <= {RATIO_LIMIT}, {elapsed:.0f} s"
    acceptance_log("1 Wong-Zakai convergence trend", ok, detail)
    assert ok


def test_skeleton_identity(acceptance_log):
    start = time.perf_counter()
    worst = {}
    for family in ("additive", "diagonal_linear", "affine"):
        p = Problem.default(family)
        devs = [skeleton_consistency(p, p.path(sample_seed(0, s)), 5) for s in range(8)]
        worst[family] = max(devs)
    ok = all(v == 0.0 for v in worst.values())
    acceptance_log("2 skeleton identity", ok, f"max sup deviation per family {worst}, 8 seeds, {time.perf_counter() - start:.0f} s")
    assert ok


def test_skeleton_controlled_trend(acceptance_log):
    start = time.perf_counter()
    p = Problem.default()
    ctrl = default_control(p.t_horizon, p.model.k_dim, cells=8, l2_norm=1.0)
    assert ctrl.l2_norm == pytest.approx(1.0)
    table = skeleton_wz_convergence(p, ctrl, LEVELS, SAMPLES, master_seed=0)
    ok, inversions, ratio = trend_ok(table.errors, table.half_widths)
    ok = ok and all(row.samples == SAMPLES for row in table.rows)
    detail = f"err = {np.array2string(table.errors, precision=4)}, inversions = {inversions}, ratio = {ratio:.4f}, {time.perf_counter() - start:.0f} s"
    acceptance_log("3 controlled-vs-skeleton trend", ok, detail)
    assert ok


def test_monotonicity_battery(acceptance_log):
    start = time.perf_counter()
    assert eta_constant(1.0, 1.0, 5.0) == pytest.approx(0.125, rel=1e-15)
    reports = monotonicity_suite(GridSpec(32), 10**4, seed=0, tol=1e-8)
    ok = len(reports) == 3 and all(r.passed and r.trials == 10**4 for r in reports)
    detail = ", ".join(f"{r.name} worst {r.worst_margin:.3g}" for r in reports)
    acceptance_log("4 monotonicity battery", ok, f"{detail}, {time.perf_counter() - start:.0f} s")
    assert ok


def test_operator_identity_battery(acceptance_log):
    start = time.perf_counter()
    reports, extra = identity_suite(GridSpec(32), 1000, seed=0, pair_trials=10**4)
    names = {r.name for r in reports}
    expected = {
        "skew_symmetry",
        "forchheimer_duality[r=3]",
        "forchheimer_duality[r=5]",
        "c_monotonicity[r=3]",
        "c_monotonicity[r=5]",
        "norm_comparison[r=3]",
        "norm_comparison[r=5]",
        "b_growth[r=5]",
        "gateaux_slope",
    }
    ok = expected <= names and all(r.passed for r in reports)
    detail = ", ".join(f"{r.name} {r.worst_margin:.3g}" for r in reports if r.name in expected)
    detail += f", min slope {min(extra['gateaux_slopes']):.4f}"
    acceptance_log("5 operator identity battery", ok, f"{detail}, {time.perf_counter() - start:.0f} s")
    assert ok


def test_integrator_step_halving(acceptance_log):
    start = time.perf_counter()
    p = Problem.default()
    path = sample_path(sample_seed(0, 0), p.t_horizon, 12 + QUADRATURE_LEVELS, p.model.k_dim)
    reports = [step_halving(p, path, system, level=5, coarse_level=8, halvings=3) for system in HALVING_SYSTEMS]
    ok = all(len(r.ratios) == 3 and r.passed(1.8) for r in reports)
    detail = "; ".join(f"{r.system} {', '.join(f'{x:.3f}' for x in r.ratios)}" for r in reports)
    acceptance_log("6 integrator step halving", ok, f"ratios {detail} (>= 1.8), {time.perf_counter() - start:.0f} s")
    assert ok


def test_converge_determinism(converge_runs, acceptance_log):
    (_, a, _), (_, b, _) = converge_runs
    same = {name: (a / name).read_bytes() == (b / name).read_bytes() for name in ("convergence.csv", "convergence.json")}
    ok = all(same.values())
    acceptance_log("7 converge determinism", ok, f"byte-identical {same}")
    assert ok
