"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` or ``python tests/test_acceptance.py``.
"""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from irtsae.combine import rubin_combine
from irtsae.fayherriot import (
    AreaDesign,
    eblup,
    estimate_sigma2_u,
    g3_reml_closed_form,
    gls_beta,
    ml_bias_correction,
    mse_components,
)
from irtsae.io import replay_pisa_fixture
from irtsae.irt import ItemBank, ResponseMatrix, calibrate_em, draw_plausible_values

from conftest import cell
from montecarlo import fh_replicates, mse_calibration_gap, unbiased_share
from oracles import (
    fh_generate,
    g2_dense,
    g3_dense,
    grid_posterior,
    henderson,
    ml_correction_dense,
    reml_grid,
    rubin_one_pass,
)

F_D = (0.30, 0.50, 0.70)
F_N = (0.05, 0.10, 0.20)
ESTIMATORS = ("dir", "cal", "comp", "p")


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return emit


def test_criterion_1_pisa_replay(report):
    start = time.perf_counter()
    rows = replay_pisa_fixture()
    seconds = time.perf_counter() - start

    def worst(field, rel=False):
        if rel:
            return max(abs(r[f"{field}_delta"]) / abs(r[f"{field}_printed"]) for r in rows)
        return max(abs(r[f"{field}_delta"]) for r in rows)

    errs = {
        "B": (worst("B_d"), 0.005),
        "gamma_P": (worst("gamma_P"), 1.0),
        "g1_rel": (worst("g1", rel=True), 0.01),
        "mse_rel": (worst("mse", rel=True), 0.01),
        "eer_pp": (worst("eer_pct"), 0.02),
        "dif_pp": (worst("dif_rel_pct"), 0.05),
    }
    ok = len(rows) == 55 and all(e <= tol for e, tol in errs.values()) and seconds < 1
    detail = ", ".join(f"{k} max err {e:.4g} (tol {tol})" for k, (e, tol) in errs.items())
    report(1, ok, f"55 countries: {detail}; {seconds:.3f}s")


def test_criterion_2_unbiasedness(report):
    start = time.perf_counter()
    errors, _ = fh_replicates(D=100, R=2000, seed=1)
    share = unbiased_share(errors)
    seconds = time.perf_counter() - start
    report(2, share >= 0.95 and seconds < 60,
           f"{share:.0%} of 100 domains within 2 MC SE (need >= 95%); {seconds:.1f}s")


def test_criterion_3_mse_calibration(report):
    start = time.perf_counter()
    errors, est = fh_replicates(D=50, R=5000, seed=2)
    gap = mse_calibration_gap(errors, est)
    seconds = time.perf_counter() - start
    report(3, gap < 0.10 and seconds < 300,
           f"mean |empirical - estimated MSE| / empirical = {gap:.4f} (need < 0.10); {seconds:.1f}s")


def test_criterion_4_ordering(desk_rows, report):
    rows, seconds = desk_rows["rows"], desk_rows["seconds"]
    ordered = [r["eerp_dir"] > r["eerp_cal"] > r["eerp_comp"] > r["eerp_p"] for r in rows]
    max_sbr = max(abs(r["sbr_p"]) for r in rows)
    table = "; ".join(
        f"({r['f_d']:.0%},{r['f_n']:.0%}) " + "/".join(f"{r[f'eerp_{e}']:.2f}" for e in ESTIMATORS) for r in rows
    )
    ok = len(rows) == 9 and all(ordered) and max_sbr < 0.5 and seconds < 1800
    report(4, ok, f"{sum(ordered)}/9 cells ordered Dir>Cal>Comp>P, max |SBR(P)| = {max_sbr:.3f}%, "
                  f"grid {seconds:.0f}s; EERP Dir/Cal/Comp/P: {table}")


def test_criterion_5_monotonicity(desk_rows, report):
    rows = desk_rows["rows"]
    bad = []
    for e in ESTIMATORS:
        for fd in F_D:
            vals = [cell(rows, fd, fn)[f"eerp_{e}"] for fn in F_N]
            if np.any(np.diff(vals) > 0):
                bad.append(f"{e} f_d={fd}")
        for fn in F_N:
            vals = [cell(rows, fd, fn)[f"eerp_{e}"] for fd in F_D]
            if np.any(np.diff(vals) < 0):
                bad.append(f"{e} f_n={fn}")
    report(5, not bad, "24 sweeps monotone" if not bad else f"violations: {bad}")


def test_criterion_6_oracles(report):
    rng = np.random.default_rng(6)
    worst = {"a": 0.0, "b": 0.0, "c": 0.0, "d": 0.0}
    for D in (3, 4, 5, 6):
        X = np.column_stack([np.ones(D), rng.normal(size=D)])
        s2 = rng.uniform(0.5, 2, D)
        _, y = fh_generate(rng, X, np.array([1.0, 2.0]), 1.0, s2)
        d = AreaDesign(X, y, s2)
        for s2u in (0.1, 1.0, 5.0):
            beta = gls_beta(d, s2u)
            pred, _, u = eblup(d, beta, s2u)
            b_o, u_o = henderson(X, y, s2, s2u)
            worst["a"] = max(worst["a"], np.abs(beta - b_o).max(), np.abs(u - u_o).max(),
                             np.abs(pred - X @ b_o - u_o).max())
    for _ in range(3):
        D = 30
        X = np.column_stack([np.ones(D), rng.normal(size=D)])
        s2 = rng.uniform(0.05, 0.2, D)
        _, y = fh_generate(rng, X, np.array([1.0, -1.0]), 0.3, s2)
        resid = y - X @ np.linalg.lstsq(X, y, rcond=None)[0]
        grid = np.arange(0.0, 10 * np.max(resid**2), 1e-4)
        best = max((grid[k:k + 20000] for k in range(0, grid.size, 20000)),
                   key=lambda g: reml_grid(X, y, s2, g).max())
        best = best[np.argmax(reml_grid(X, y, s2, best))]
        worst["b"] = max(worst["b"], abs(estimate_sigma2_u(AreaDesign(X, y, s2), "reml")[0] - best))
    for _ in range(50):
        L = int(rng.integers(2, 20))
        pts, var = rng.normal(500, 30, L), rng.uniform(1, 40, L)
        est = rubin_combine(np.column_stack([pts, var]))
        g, s = rubin_one_pass(pts, var)
        worst["c"] = max(worst["c"], abs(est.gamma_hat - g) / abs(g), abs(est.sigma2_d - s) / s)
    for D in (3, 4, 8):
        X = np.column_stack([np.ones(D), rng.normal(size=D)])
        s2 = rng.uniform(0.5, 2, D)
        d = AreaDesign(X, rng.normal(size=D), s2)
        for s2u in (0.3, 2.0):
            comp = mse_components(d, s2u, "reml")
            rel = lambda a, b: np.max(np.abs(a - b) / np.abs(b))  # noqa: E731
            worst["d"] = max(worst["d"], rel(comp.g2, g2_dense(X, s2, s2u)), rel(comp.g3, g3_dense(s2, s2u)),
                             rel(g3_reml_closed_form(d, s2u), g3_dense(s2, s2u)),
                             rel(ml_bias_correction(d, s2u), ml_correction_dense(X, s2, s2u)))
    tol = {"a": 1e-8, "b": 1e-3, "c": 1e-12, "d": 1e-10}
    ok = all(worst[k] <= tol[k] for k in tol)
    report(6, ok, ", ".join(f"({k}) max err {worst[k]:.2e} (tol {tol[k]:g})" for k in tol))


def test_criterion_7_irt_recovery(report):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    bank = ItemBank(rng.uniform(0.5, 2, 40), rng.uniform(-2, 2, 40))
    theta = rng.standard_normal(2000)
    y = (rng.random((2000, 40)) < bank.prob(theta)).astype(float)
    fitted, _ = calibrate_em(ResponseMatrix(y))
    rmse_a = float(np.sqrt(np.mean((fitted.a - bank.a) ** 2)))
    rmse_b = float(np.sqrt(np.mean((fitted.b - bank.b) ** 2)))

    bank60 = ItemBank(rng.uniform(0.5, 2, 60), rng.uniform(-2.5, 2.5, 60))
    theta = rng.standard_normal(2000)
    y = (rng.random((2000, 60)) < bank60.prob(theta)).astype(float)
    pv = draw_plausible_values(ResponseMatrix(y), bank60, L=5, seed=1)
    corr = float(np.corrcoef(pv.draws.mean(axis=1), theta)[0, 1])

    one = y[:1]
    pv = draw_plausible_values(ResponseMatrix(np.repeat(one, 2000, axis=0)), bank60, L=5, seed=2,
                               stream_keys=np.arange(2000))
    grid, _, cdf, _ = grid_posterior(one[0], 1 - one[0], bank60)
    draws = np.sort(pv.draws.ravel())
    ks = stats.kstest(draws, lambda t: np.interp(t, grid, cdf)).statistic
    seconds = time.perf_counter() - start
    ok = rmse_a < 0.15 and rmse_b < 0.15 and corr > 0.95 and ks < 0.02 and seconds < 300
    report(7, ok, f"RMSE a={rmse_a:.3f} b={rmse_b:.3f} (< 0.15), PV-mean corr {corr:.4f} (> 0.95), "
                  f"KS {ks:.4f} over {draws.size} draws (< 0.02); {seconds:.1f}s")


def test_criterion_8_property_suite(report):
    here = Path(__file__).resolve().parent
    files = sorted(str(p) for p in here.glob("test_*.py") if p.name != Path(__file__).name)
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", *files],
                          capture_output=True, text=True, cwd=here.parent)
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-300:]
    report(8, proc.returncode == 0, f"{len(files)} property/unit test files: {summary}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
