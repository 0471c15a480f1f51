"""End-to-end acceptance gate.

Nine scenario checks covering stability analysis, exact estimation
algebra, Monte-Carlo consistency and coverage, structured-covariance
estimation, the misspecification rate experiment, heavy-tail bootstrap
calibration, and the standalone property suite.  Each test prints one
verdict line and enforces a wall-clock budget.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from netar.error_covariance import (
    _SarProfile,
    fit_factor,
    fit_sar_qmle,
    select_k,
    sigma_sar,
)
from netar.estimation import (
    RidgePenalty,
    confidence_intervals,
    fit_gls,
    fit_ols,
    fit_ridge_ols,
)
from netar.harness import (
    MisspecConfig,
    Scenario,
    run_misspec_experiment,
    run_scenario,
)
from netar.inference import residual_bootstrap
from netar.model import NarSpec, banded_weights, flatten, is_stable
from netar.simulation import (
    FactorGaussian,
    GaussianIid,
    SarGaussian,
    SimConfig,
    StudentT,
    replicate_rng,
    simulate,
)

THREADS = 1


def _verdict(capsys, num, label, ok, detail, elapsed, budget):
    mark = "PASS" if ok and elapsed < budget else "FAIL"
    line = (f"ACCEPTANCE {num} ({label}): {mark} - {detail} "
            f"[{elapsed:.1f}s / budget {budget:.0f}s]")
    with capsys.disabled():
        print(line, flush=True)
    assert ok, line
    assert elapsed < budget, line


def test_criterion_1_spectral_radius_oracles(capsys):
    t0 = time.perf_counter()
    w2 = np.array([[0.0, 1.0], [1.0, 0.0]])
    near = NarSpec(a=[[1.5, 1.5], [-0.8, -0.8]],
                   b=[[0.1, 0.1], [0.1, 0.1]],
                   gamma=np.zeros((2, 0)), w=w2)
    mixed = NarSpec(a=[[0.8, 0.5]], b=[[0.1, 0.6]],
                    gamma=np.zeros((2, 0)), w=w2)
    r1 = is_stable(near).radius
    r2 = is_stable(mixed).radius
    elapsed = time.perf_counter() - t0
    ok = abs(r1 - 0.949) < 1e-3 and abs(r2 - 0.937) < 1e-3
    _verdict(capsys, 1, "spectral radius oracles", ok,
             f"radii {r1:.6f} vs 0.949, {r2:.6f} vs 0.937",
             elapsed, 1.0)


def test_criterion_2_noiseless_exact_recovery(capsys):
    t0 = time.perf_counter()
    n = 10
    w = banded_weights(n, 2)
    rng = np.random.default_rng(21)
    spec = NarSpec(a=[0.15 + 0.4 * rng.random(n)],
                   b=[0.05 + 0.2 * rng.random(n)],
                   gamma=rng.uniform(-0.5, 0.5, (n, 2)), w=w)
    sim = simulate(spec, GaussianIid(n, 0.0), SimConfig(t_len=200, seed=22))
    beta = flatten(spec).values
    f_ols = fit_ols(sim.x, sim.y, w, 1, 1)
    err = float(np.max(np.abs(f_ols.beta.values - beta)))
    f_gls = fit_gls(sim.x, sim.y, w, 1, 1, sigma=np.eye(n))
    d_gls = float(np.max(np.abs(f_gls.beta.values - f_ols.beta.values)))
    f_rid = fit_ridge_ols(sim.x, sim.y, w, 1, 1, RidgePenalty(0.0, 0.0, 0.0))
    d_rid = float(np.max(np.abs(f_rid.beta.values - f_ols.beta.values)))
    elapsed = time.perf_counter() - t0
    ok = err < 1e-8 and d_gls < 1e-10 and d_rid < 1e-10
    _verdict(capsys, 2, "noiseless exact recovery", ok,
             f"ols err {err:.2e}, gls gap {d_gls:.2e}, ridge gap {d_rid:.2e}",
             elapsed, 5.0)


def test_criterion_3_consistency_over_t(capsys):
    t0 = time.perf_counter()
    s = Scenario(
        scenario_id="acceptance-consistency",
        n=50,
        a=[[0.1, 0.2, 0.3, 0.4]],
        b=[[0.4, 0.3, 0.2, 0.1]],
        gamma=(-0.8, -0.8, -0.8, -0.4, -0.4, 0.4, 0.4, 0.8, 0.8, 0.8),
        t_grid=(150, 300, 450),
        n_reps=100,
        estimators=("egls",),
        w={"kind": "banded", "width": 5},
        error={"kind": "sar", "rho": 0.5, "sigma_u2": 1.0,
               "phi": {"kind": "banded", "width": 5}},
        seed=301,
    )
    frame = run_scenario(s, threads=THREADS).to_frame()
    assert (frame["n_ok"] == 100).all(), "replicate fits failed"
    bad_mono = []
    worst_bias = 0.0
    for group, sub in frame.groupby("group"):
        sub = sub.sort_values("T")
        r = sub["rmse"].to_numpy()
        if not np.all(np.diff(r) < 0):
            bad_mono.append(group)
        last = sub.iloc[-1]
        worst_bias = max(worst_bias, abs(last["mean_est"] - last["true"]))
    elapsed = time.perf_counter() - t0
    ok = not bad_mono and worst_bias < 0.02
    _verdict(capsys, 3, "consistency over T", ok,
             f"{len(frame['group'].unique())} groups, non-monotone "
             f"{bad_mono or 'none'}, worst final bias {worst_bias:.4f}",
             elapsed, 600.0)


def test_criterion_4_coverage_and_efficiency(capsys):
    t0 = time.perf_counter()
    s = Scenario(
        scenario_id="acceptance-coverage",
        n=20,
        a=[[0.4]],
        b=[[0.4]],
        gamma=(0.4,) * 10,
        t_grid=(300,),
        n_reps=200,
        estimators=("ols", "gls", "egls"),
        w={"kind": "banded", "width": 5},
        error={"kind": "sar", "rho": 0.5, "sigma_u2": 1.0,
               "phi": {"kind": "banded", "width": 5}},
        seed=401,
    )
    frame = run_scenario(s, threads=THREADS).to_frame()
    assert (frame["n_ok"] == 200).all(), "replicate fits failed"
    cp_lo = frame["cp"].min()
    cp_hi = frame["cp"].max()
    bad_cp = frame[(frame["cp"] < 0.92) | (frame["cp"] > 0.975)]
    wide = []
    ols = frame[frame["estimator"] == "ols"].set_index("group")["ci_len"]
    egls = frame[frame["estimator"] == "egls"].set_index("group")["ci_len"]
    for group in ols.index:
        if egls[group] > ols[group]:
            wide.append(group)
    elapsed = time.perf_counter() - t0
    ok = bad_cp.empty and not wide
    _verdict(capsys, 4, "coverage and efficiency", ok,
             f"cp in [{cp_lo:.3f}, {cp_hi:.3f}], "
             f"{len(bad_cp)} groups outside band, "
             f"egls wider than ols for {wide or 'none'}",
             elapsed, 600.0)


def test_criterion_5_sar_qmle_grid_oracle(capsys):
    t0 = time.perf_counter()
    n, t_len, rho = 100, 400, 0.5
    phi = banded_weights(n, 5)
    model = SarGaussian(rho, phi)
    grid = np.linspace(0.4, 0.6, 2001)
    abs_errs = []
    grid_gaps = []
    for rep in range(50):
        rng = replicate_rng(501, rep)
        e = model.sample(t_len, rng)
        fit = fit_sar_qmle(e, phi)
        # independent oracle: dense profile-likelihood scan
        prof = _SarProfile(e, phi)
        vals = np.array([prof.value(r) for r in grid])
        rho_grid = grid[int(np.argmax(vals))]
        assert grid[0] < fit.rho < grid[-1], "optimizer left the scan window"
        abs_errs.append(abs(fit.rho - rho))
        grid_gaps.append(abs(fit.rho - rho_grid))
    mean_err = float(np.mean(abs_errs))
    max_gap = float(np.max(grid_gaps))
    elapsed = time.perf_counter() - t0
    ok = mean_err <= 0.05 and max_gap <= 1e-4
    _verdict(capsys, 5, "sar qmle grid oracle", ok,
             f"mean |rho_hat - 0.5| {mean_err:.4f}, "
             f"max gap to 2001-point scan {max_gap:.2e}",
             elapsed, 300.0)


def test_criterion_6_factor_count_selection(capsys):
    t0 = time.perf_counter()
    hits = 0
    max_orth = 0.0
    for rep in range(50):
        rng = replicate_rng(601, rep)
        lam = rng.uniform(0.0, 1.0, (100, 3))
        e = FactorGaussian(lam, 0.25).sample(400, rng)
        if select_k(e, kmax=8).k_hat == 3:
            hits += 1
        ff = fit_factor(e, 3)
        gram = ff.factors.T @ ff.factors / e.shape[0]
        max_orth = max(max_orth,
                       float(np.max(np.abs(gram - np.eye(3)))))
    null_hits = 0
    for rep in range(50):
        rng = replicate_rng(602, rep)
        e = rng.standard_normal((200, 50))
        if select_k(e, kmax=8).k_hat == 0:
            null_hits += 1
    elapsed = time.perf_counter() - t0
    ok = hits >= 45 and null_hits >= 45 and max_orth < 1e-8
    _verdict(capsys, 6, "factor count selection", ok,
             f"k=3 hit {hits}/50, null hit {null_hits}/50, "
             f"factor gram dev {max_orth:.2e}",
             elapsed, 300.0)


def test_criterion_7_misspecification_rates(capsys):
    t0 = time.perf_counter()
    cfg = MisspecConfig(n_reps=150, seed=701, target_scale=4.0)
    frame = run_misspec_experiment(cfg, threads=THREADS).to_frame()
    tail = frame[frame["T"] == 10000].set_index(["rate", "variant"])["cp"]
    gap_fast = abs(tail[("0.666667", "true_w")] - tail[("0.666667", "misspec")])
    gap_slow = abs(tail[("0.5", "true_w")] - tail[("0.5", "misspec")])
    elapsed = time.perf_counter() - t0
    ok = gap_fast < 0.02 and gap_slow > 0.01
    _verdict(capsys, 7, "misspecification rates", ok,
             f"coverage gap at T=10000: fast rate {gap_fast:.4f}, "
             f"slow rate {gap_slow:.4f}",
             elapsed, 1200.0)


def test_criterion_8_heavy_tail_bootstrap(capsys):
    t0 = time.perf_counter()
    n, t_len = 20, 400
    w = banded_weights(n, 5)
    scale = sigma_sar(0.5, 1.0, w)
    spec = NarSpec(a=[[0.4] * n], b=[[0.4] * n],
                   gamma=np.zeros((n, 0)), w=w)
    model = StudentT(4.0, scale)
    a_pos = np.arange(n)
    truth = flatten(spec).values[a_pos]
    asym = []
    boot = []
    for rep in range(200):
        rng = replicate_rng(801, rep)
        sim = simulate(spec, model, SimConfig(t_len=t_len), rng=rng)
        # theory intervals under the assumed Gaussian spatial covariance;
        # the realized t(4) covariance is nu / (nu - 2) times larger
        fit = fit_gls(sim.x, sim.y, w, 1, 1, sigma=scale)
        lo, hi = confidence_intervals(fit, 0.95)
        asym.append((lo[a_pos] <= truth) & (truth <= hi[a_pos]))
        bs = residual_bootstrap(sim.x, sim.y, w, 1, 1, estimator="egls",
                                cov="sar", phi=w, b_reps=500,
                                seed=9000 + rep, threads=THREADS)
        boot.append((bs.ci_lo[a_pos] <= truth) & (truth <= bs.ci_hi[a_pos]))
    cp_asym = float(np.mean(asym))
    cp_boot = float(np.mean(boot))
    elapsed = time.perf_counter() - t0
    ok = 0.92 <= cp_boot <= 0.975 and cp_asym <= 0.91
    _verdict(capsys, 8, "heavy tail bootstrap", ok,
             f"bootstrap cp {cp_boot:.3f}, asymptotic cp {cp_asym:.3f}",
             elapsed, 1800.0)


def test_criterion_9_property_suite_standalone(capsys):
    t0 = time.perf_counter()
    target = Path(__file__).with_name("test_properties.py")
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", str(target), "-q"],
        capture_output=True, text=True,
    )
    elapsed = time.perf_counter() - t0
    ok = proc.returncode == 0
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else ""
    _verdict(capsys, 9, "property suite standalone", ok,
             f"exit {proc.returncode}, {tail}",
             elapsed, 120.0)
