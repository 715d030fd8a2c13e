"""Acceptance criteria 1-10, each at its stated tolerance.

Every test appends one PASS/FAIL line to the session log, printed at the end
of the run. The experiment criteria run the shipped presets through the same
entry point as the CLI; criterion 10 runs each of them a second time.
"""

import json
import math
import os

import numpy as np
import pytest

from swcp.analysis import (
    chain_F,
    chain_kernel,
    comb_brw_critical,
    km_walk_transitions,
    lambda2_brw_lower_bound,
    level_matrix_eigenvalue,
    limiting_quadratic_root,
    simulate_chain_F,
)
from swcp.dynamics import GraphSpec, simulate_batch
from swcp.harness import load_config, preset_path, run_command
from swcp.topology import ModelParams

PRESETS = ["critical_values", "phase_gap", "phase_gap_m1", "tau_convergence", "metastability", "growth_rate", "simulate"]


def record(log, number, title, ok, detail=""):
    log.append(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else ""))
    return ok


def _run_presets(root):
    """Run every preset from ``root`` as working directory, outputs in ``root/out/<preset>``."""
    summaries = {}
    here = os.getcwd()
    os.chdir(root)
    try:
        for name in PRESETS:
            cfg = load_config(preset_path(name), {"out": f"out/{name}"})
            summaries[name] = run_command(cfg.command, cfg)
    finally:
        os.chdir(here)
    return root / "out", summaries


@pytest.fixture(scope="session")
def preset_runs(tmp_path_factory):
    return _run_presets(tmp_path_factory.mktemp("runs"))


# ------------------------------------------------------------ analytic


def test_criterion_01_closed_form_routes(criteria_log):
    worst = max(abs(comb_brw_critical(r) - limiting_quadratic_root(r)) for r in (0.5, 1, 2, 4, 10))
    at_one = max(abs(comb_brw_critical(1) - (math.sqrt(5) - 1)), abs(limiting_quadratic_root(1) - (math.sqrt(5) - 1)))
    ok = worst < 1e-12 and at_one < 1e-12
    assert record(criteria_log, 1, "closed-form consistency", ok, f"max diff {worst:.1e}")


def test_criterion_02_eigenvalue_boundary(criteria_log):
    alphas = np.arange(1, 101) * 0.02
    betas = np.arange(1, 101) * 0.01
    bad = checked = 0
    for a in alphas:
        for b in betas:
            if abs(a + b * b - 1) > 1e-9:
                checked += 1
                bad += (level_matrix_eigenvalue(a, b) > 1) != (a + b * b > 1)
    assert record(criteria_log, 2, "eigenvalue boundary", bad == 0, f"{checked} pairs, {bad} mismatches")


def test_criterion_03_km_chain_limit(criteria_log):
    ok, parts = True, []
    for r in (1, 2, 4):
        target = comb_brw_critical(r)
        gaps = [abs(lambda2_brw_lower_bound(r, M) - target) for M in (10**3, 10**4, 10**5, 10**6)]
        ok &= gaps[-1] < 1e-3 and all(g1 > g2 for g1, g2 in zip(gaps, gaps[1:]))
        parts.append(f"r={r}: {gaps[-1]:.1e}")
    assert record(criteria_log, 3, "K_M chain limit", ok, ", ".join(parts))


def test_criterion_04_chain_oracles(criteria_log):
    lam, r, M = 1.05, 2.0, 27
    u = 1 / (1 + r)
    est, se, _ = simulate_chain_F(lam, r, M, 10**5, 200, seed=404)
    exact = chain_F(lam, u, M).F
    ok_F = abs(est - exact) < 3 * se
    counts = km_walk_transitions(r, M, n_walks=2000, steps=60, seed=405)
    bad = entries = 0
    for j, row in counts.items():
        tot = sum(row.values())
        expected = dict(chain_kernel(j, u, M))
        bad += len(set(row) - set(expected))
        for k, p in expected.items():
            entries += 1
            bad += abs(row.get(k, 0) / tot - p) > 3 * math.sqrt(p * (1 - p) / tot)
    # per-entry 3 SE bands are each exceeded with probability ~0.003
    ok_K = bad <= max(1, round(0.01 * entries))
    ok = ok_F and ok_K
    detail = f"F={exact:.5f} vs MC {est:.5f}+-{se:.5f}; kernel {bad}/{entries} entries outside 3 SE"
    assert record(criteria_log, 4, "chain oracle equivalence", ok, detail)


def test_criterion_05_brw_mean_law(criteria_log):
    n, ok, parts = 10**5, True, []
    for lam in (0.8, 1.2):
        p = ModelParams.from_lambda(lam, 2.0, m=1)
        brw = simulate_batch(GraphSpec("big"), p, n, 505, "mean-law", 10, mode="brw", record_pop=True)
        x = brw.pops[:, 10].astype(float)
        z = (x.mean() - lam**10) / (x.std(ddof=1) / math.sqrt(n))
        ok &= abs(z) < 3
        cp = simulate_batch(GraphSpec("big"), p, n, 505, "mean-law", 10, mode="cp", record_pop=True)
        violations = int(np.sum(cp.pops > brw.pops))
        mean_viol = int(np.sum(cp.pops.mean(axis=0) > brw.pops.mean(axis=0)))
        ok &= violations == 0 and mean_viol == 0
        parts.append(f"lam={lam}: z={z:+.2f}, coupled violations {violations}")
    assert record(criteria_log, 5, "BRW mean law", ok, "; ".join(parts))


# ------------------------------------------------------------ experiments


def test_criterion_06_phase_gap(preset_runs, criteria_log):
    s = preset_runs[1]["phase_gap"]
    surv, ret = s["intervals"]["survival"], s["intervals"]["return"]
    boundary = 3 * (math.sqrt(2) - 1)  # alpha + beta^2 = 1 at r = 2
    ok = (
        surv["resolved"]
        and ret["resolved"]
        and surv["high"] < ret["low"]
        and 0.9 < surv["low"]
        and surv["high"] < 1.2
        and ret["low"] >= boundary - 0.1
    )
    detail = f"lambda1 in [{surv['low']:.4f}, {surv['high']:.4f}], lambda2 in [{ret['low']:.4f}, {ret['high']:.4f}]"
    assert record(criteria_log, 6, "phase gap", ok, detail)


def test_criterion_07_tau_convergence(preset_runs, criteria_log):
    s = preset_runs[1]["tau_convergence"]
    ok, parts = True, []
    for stat in ("tau", "sigma"):
        small = s[stat]["small"]
        near, far = small["8"], small["4096"]
        ok &= far["sup_distance"] < near["sup_distance"] and far["domination_holds"]
        parts.append(f"{stat}: d8={near['sup_distance']:.4f} d4096={far['sup_distance']:.4f}")
    assert record(criteria_log, 7, "tau convergence", ok, "; ".join(parts))


def test_criterion_08_metastability(preset_runs, criteria_log):
    s = preset_runs[1]["metastability"]
    fit = s["fit"]
    ok = (
        s["lambda_source"] == "gap_summary"
        and s["strictly_increasing"]
        and fit is not None
        and fit["slope"] > 0
        and fit["t_stat"] > 3
        and s["control"]["no_metastability"]
    )
    meds = [s["per_R"][R]["median"] for R in ("16", "32", "64")]
    lam = s["params"]["alpha"] + s["params"]["beta"]
    detail = f"lam={lam:.4f}, medians {meds}, t={fit['t_stat'] if fit else None}"
    assert record(criteria_log, 8, "metastability trend", ok, detail)


def test_criterion_09_growth_rate(preset_runs, criteria_log):
    s = preset_runs[1]["growth_rate"]
    cp = {row["lambda"]: row for row in s["rows"] if row["mode"] == "cp"}
    ok = cp[0.6]["z"] < -3 and cp[1.8]["z"] > 3
    worst = -math.inf
    for row in cp.values():
        for res in row["residuals"]:
            worst = max(worst, res["value"] - 3 * res["stderr"])
    ok &= worst <= 0
    detail = f"z(0.6)={cp[0.6]['z']:.1f}, z(1.8)={cp[1.8]['z']:.1f}, max residual-3SE={worst:.3f}"
    assert record(criteria_log, 9, "growth rate signs", ok, detail)


def test_criterion_10_reproducibility(preset_runs, tmp_path_factory, criteria_log):
    first = preset_runs[0]
    second, _ = _run_presets(tmp_path_factory.mktemp("rerun"))
    differing, compared = [], 0
    for name in PRESETS:
        files = sorted(p.name for p in (first / name).iterdir())
        assert files == sorted(p.name for p in (second / name).iterdir())
        manifest = json.loads((first / name / "manifest.json").read_text())
        assert sorted(manifest["outputs"]) == sorted(f for f in files if f != "manifest.json")
        for f in files:
            compared += 1
            a = (first / name / f).read_bytes()
            b = (second / name / f).read_bytes()
            if a != b:
                differing.append(f"{name}/{f}")
    ok = not differing
    assert record(criteria_log, 10, "reproducibility", ok, f"{compared} files, differing: {differing or 'none'}")
