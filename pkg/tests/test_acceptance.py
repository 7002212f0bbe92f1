"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` or directly as a script.
Tolerances and runtime limits are fixed here and never loosened.
"""
import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from ppumkit import cli, fem, ppum
from ppumkit import cover as cov
from ppumkit import estimate as est
from ppumkit.cli import RunConfig
from ppumkit.mesh import audit_conformity, reconcile
from ppumkit.problems import get_problem, make_domain

from conftest import canonical
from test_mesh import reconcile_oracle, refine_randomly

ONE = est.GoalFunctional(lambda x: np.ones(x.shape[:-1]), "integral")

PU_TOL = 1e-12
L2_RATE = (1.85, 2.15)
H1_RATE = (0.9, 1.1)
PPUM_SLOPE = (0.85, 1.15)
PPUM_VS_P1 = 3.0
GOAL_EPS = 1e-3
GOAL_SLACK = 2.0
EFFECTIVITY = (0.5, 2.0)
NEWTON_ORDER = 1.8
FD_TOL = 1e-5

RUNTIME = {1: 10, 2: 30, 3: 60, 4: 300, 5: 300, 6: 30, 7: 120, 8: 120}

# PPUM runs from criteria 4 and 5 feed the locality audit of criterion 8
_RUNS = []


def _report(n, ok, detail, elapsed):
    ok = ok and elapsed < RUNTIME[n]
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({elapsed:.1f} s / {RUNTIME[n]} s) {detail}")
    return ok


def _within(x, lo_hi):
    return lo_hi[0] <= x <= lo_hi[1]


# ----------------------------------------------------------------------


def criterion_1():
    mesh = make_domain("unit_square", 6)
    worst = 0.0
    ok = True
    for p in (1, 2, 4):
        part = cov.partition(mesh, np.ones(mesh.n_live), p)
        for layers in (1, 2):
            c = cov.extend_overlap(mesh, part, layers)
            pu = cov.build_pu(mesh, c)
            resid = cov.pu_sum_residual(pu, cli.sample_points(mesh, 1000, seed=10 * p + layers))
            worst = max(worst, resid)
            T = mesh.triangles
            support = all(np.all(c.member[i][(pu.coefficients[i][T] != 0).any(axis=1)]) for i in range(p))
            brute = cli.brute_force_membership(mesh, part, layers)
            ok &= (resid <= PU_TOL and support and np.array_equal(brute, c.member)
                   and pu.report.M == int(brute.sum(axis=0).max()) and pu.report.C_inf == 1.0)
    return ok, f"max |sum phi - 1| = {worst:.1e}"


def criterion_2():
    mesh = make_domain("unit_square", 6)
    violations = 0
    worst = 0.0
    for p in (2, 4):
        part = cov.partition(mesh, np.ones(mesh.n_live), p)
        for layers in (1, 2):
            c = cov.extend_overlap(mesh, part, layers)
            M = cov.build_pu(mesh, c).report.M
            out = cov.overlap_lemma_check(mesh, c, M, n_samples=50, seed=p + layers)
            violations += out["first_violations"] + out["second_violations"]
            worst = max(worst, out["first_worst"] / M, out["second_worst"])
    return violations == 0, f"violations = {violations}, worst ratio/M = {worst:.3f}"


def criterion_3():
    cfg = RunConfig.from_dict({"problem": "poisson_smooth", "initial_refines": 3,
                               "study": {"levels": 4, "refinement": "uniform"}})
    rows = cli.convergence_study(cfg)
    l2, h1 = rows[-1]["l2_rate"], rows[-1]["h1_rate"]
    return _within(l2, L2_RATE) and _within(h1, H1_RATE), f"L2 rate {l2:.3f}, H1 rate {h1:.3f}"


def criterion_4():
    mp = get_problem("poisson_smooth")
    coarse = make_domain("unit_square", 7)
    errs, hs, ratios = [], [], []
    for target in (500, 2000, 8000):
        out = {}
        for p in (4, 1):
            cfg = ppum.PpumConfig(p=p, overlap_layers=1, theta=1.0, mode="estimator",
                                  target_dofs=target, max_rounds=40)
            sol = ppum.run_ppum(mp.problem, coarse, cfg, exact=mp.exact, threads=1)
            _RUNS.append(sol)
            out[p] = sol.report
        per = out[4]["per_subdomain"]
        errs.append(out[4]["global"]["h1_err"])
        hs.append(max(e["h_min_interior"] for e in per))
        ratios.append(out[4]["global"]["h1_err"] / out[1]["global"]["h1_err"])
    slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    ok = _within(slope, PPUM_SLOPE) and all(1 / PPUM_VS_P1 <= r <= PPUM_VS_P1 for r in ratios)
    return ok, f"slope {slope:.3f}, p4/p1 error ratios {[round(r, 3) for r in ratios]}"


def criterion_5():
    mp = get_problem("poisson_smooth")
    coarse = make_domain("unit_square", 8)
    ok = True
    parts = []
    for p in (2, 4):
        cfg = ppum.PpumConfig(p=p, overlap_layers=3, theta=1.0, mode="goal", epsilon=GOAL_EPS,
                              max_rounds=20, dual_refine=True)
        sol = ppum.run_ppum(mp.problem, coarse, cfg, goal=ONE, threads=1)
        _RUNS.append(sol)
        g = sol.report["global"]
        union = ppum.union_space(sol)
        ref = ppum.reference_solution(mp.problem, union.mesh, 2)
        actual = ONE(ref) - ppum.goal_value(sol, ONE, union)
        eff = g["goal_estimate"] / actual
        ok &= (g["guarantee"] and all(abs(t) < GOAL_EPS / p for t in g["terms"])
               and abs(actual) < GOAL_SLACK * GOAL_EPS and _within(eff, EFFECTIVITY))
        parts.append(f"p={p}: max|term| {max(map(abs, g['terms'])):.2e} < {GOAL_EPS / p:.1e}, "
                     f"|error| {abs(actual):.2e}, effectivity {eff:.3f}")
    return ok, "; ".join(parts)


def criterion_6():
    coarse = make_domain("l_shape", 2)
    sessions = [([[0.1, 0.7], [0.3], [0.95, 0.5]], [[0.5], [0.2, 0.8], [0.4]]),
                ([[0.0]] * 4, [[0.99]] * 4),
                ([[0.25, 0.5, 0.75]], [[0.5], [0.5], [0.5], [0.5]])]
    ok = True
    for ra, rb in sessions:
        a = refine_randomly(coarse.copy(), ra)
        b = refine_randomly(coarse.copy(), rb)
        r = reconcile(a, b)
        ok &= audit_conformity(r) == [] and canonical(r) == canonical(reconcile_oracle(a, b, coarse))
    cfg = RunConfig.from_dict({"initial_refines": 5, "ppum": {"p": 4, "target_dofs": 400}})
    with tempfile.TemporaryDirectory() as d:
        d = Path(d)
        cli.cmd_ppum(cfg, str(d / "seq"), threads=1)
        cli.cmd_ppum(cfg, str(d / "par"), threads=4)
        same = (d / "seq/report.json").read_bytes() == (d / "par/report.json").read_bytes()
    return ok and same, f"{len(sessions)} reconcile sessions match the oracle, reports identical: {same}"


def criterion_7():
    mp = get_problem("hamiltonian_toy")
    V = fem.FeSpace(make_domain(mp.domain, 6), mp.problem.dirichlet_markers)
    u0 = ppum.initial_guess(mp.problem, V)
    assert np.all(u0.values[V.free] == 1.0)
    u, trace = fem.solve_newton(mp.problem, u0)
    r1, r2, r3 = trace[-3:]
    order = math.log(r3 / r2) / math.log(r2 / r1)
    w = fem.interpolate(V, lambda x: 1 + 0.3 * np.sin(3 * x[:, 0]) * np.sin(2 * x[:, 1]))
    fd = float(fem.jacobian_fd_check(mp.problem, w, 20, 1e-6, seed=0).max())
    cfg = RunConfig.from_dict({"problem": "hamiltonian_toy", "initial_refines": 4,
                               "study": {"levels": 3, "refinement": "uniform"}})
    rates = [r["h1_rate"] for r in cli.convergence_study(cfg)[1:]]
    ok = order >= NEWTON_ORDER and fd < FD_TOL and all(_within(x, H1_RATE) for x in rates)
    return ok, f"Newton order {order:.2f}, FD rel err {fd:.1e}, H1 rates {[round(x, 3) for x in rates]}"


def criterion_8():
    res = cli.verify_suite(RunConfig.from_dict({"initial_refines": 6, "ppum": {"p": 4}}), threads=1)
    verify_ok = next(c for c in res["checks"] if c["name"] == "mark_locality")["pass"]
    if not _RUNS:
        # run on its own: audit a fresh estimator-mode and goal-mode run
        mp = get_problem("poisson_smooth")
        coarse = make_domain("unit_square", 6)
        for cfg in (ppum.PpumConfig(p=4, target_dofs=1500),
                    ppum.PpumConfig(p=2, mode="goal", epsilon=1e-2, overlap_layers=2, max_rounds=4)):
            _RUNS.append(ppum.run_ppum(mp.problem, coarse, cfg, goal=ONE, threads=1))
    tasks = [t for sol in _RUNS for t in sol.tasks]
    outside = sum(t.marks_outside for t in tasks)
    total = sum(t.marks_total for t in tasks)
    return verify_ok and outside == 0 and total > 0, (
        f"verify mark_locality {'pass' if verify_ok else 'fail'}; "
        f"{total - outside}/{total} marks inside over {len(_RUNS)} runs")


# ----------------------------------------------------------------------


def _run(n):
    t0 = time.perf_counter()
    ok, detail = globals()[f"criterion_{n}"]()
    return _report(n, ok, detail, time.perf_counter() - t0)


@pytest.mark.slow
@pytest.mark.parametrize("n", range(1, 9))
def test_criterion(n, capsys):
    # criterion 8 runs last and also audits the PPUM runs of criteria 4 and 5
    with capsys.disabled():
        ok = _run(n)
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(0 if all([_run(n) for n in range(1, 9)]) else 1)
