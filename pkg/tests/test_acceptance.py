"""Acceptance criteria AC1-AC10, one PASS/FAIL line each.

Run alone with ``python tests/test_acceptance.py`` or ``pytest tests/test_acceptance.py -s``.
"""

import sys
import time

import numpy as np
import pytest

from prsans.cli import bundled_config, main
from prsans.core import DetectorImage
from prsans.learned import init_params, loss_and_grad
from prsans.priors import (EpsilonSchedule, GmmMmsePrior, GmmPrior, gmm_from_components,
                           gmm_regularizer, log_pz, single_gaussian)
from prsans.sansdata import FormFactorModel, ScatteringGeometry, azimuthal_average, synth_clean_pattern
from prsans.solver import SolveConfig, objective_and_grad, pr_sans_solve
from prsans.theory import (CertifyConfig, TheoryProblem, certify_theorem1, compute_constants,
                           estimate_lipschitz_M, grad_objective)

# tolerances
AC1_REL, AC1_SECONDS = 1e-5, 10.0
AC2_SLACK, AC2_SECONDS, AC2_T = 1e-7, 120.0, 500
AC3_ASYMPTOTE, AC3_SECONDS = 1e-8, 60.0
AC5_QUADRATIC, AC5_MULTIMODAL = 1e-6, 1e-5
AC6_REL, AC6_SECONDS = 1e-4, 30.0
AC7_TOL, AC7_SECONDS = 0.05, 15 * 60.0
AC8_MARGIN_DB, AC8_NOISY_DB, AC8_SECONDS = 0.2, 3.0, 5 * 60.0
AC9_RMS = 0.02


def _theory_problem(p: dict) -> TheoryProblem:
    return TheoryProblem.random(p.get("seed", 0), p.get("dim", 2), p.get("n_components", 3),
                                p.get("sigma", 1.0), p.get("tau", 1.0))


@pytest.fixture(scope="module")
def certification_runs():
    """The bundled 20-pair certification config, run through the library."""
    cfg = bundled_config("verify-theory")
    ccfg = CertifyConfig(seed=cfg.get("seed", 0))
    t0 = time.perf_counter()
    reports = [certify_theorem1(_theory_problem(pair["problem"]), EpsilonSchedule.parse(pair["schedule"]), ccfg)
               for pair in cfg["pairs"]]
    return reports, time.perf_counter() - t0


# --------------------------------------------------------------------------


def test_ac1_score_identity(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(10):
        rng = np.random.default_rng(1000 + trial)
        dim = 1 + trial % 8 if trial < 8 else (1, 8)[trial - 8]
        gmm = GmmPrior.random(dim, 1 + trial % 5, rng)
        sigma, tau = rng.uniform(0.3, 1.5), rng.uniform(0.5, 2.0)
        h = lambda z: -tau * sigma**2 * log_pz(gmm, z, sigma)
        for z in rng.uniform(-3, 3, (100, dim)):
            _, grad = gmm_regularizer(gmm, z, sigma, tau)
            step = 1e-5
            fd = np.array([(h(z + e) - h(z - e)) / (2 * step) for e in step * np.eye(dim)])
            worst = max(worst, np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), 1e-12))
    elapsed = time.perf_counter() - t0
    ok = worst < AC1_REL and elapsed < AC1_SECONDS
    assert verdict("AC1", ok, f"score identity max rel err {worst:.2e} (< {AC1_REL:g}), {elapsed:.1f}s (< {AC1_SECONDS:g}s)")


def test_ac2_theorem_bound(certification_runs, verdict):
    reports, elapsed = certification_runs
    kinds = {r.schedule.split(":")[0] for r in reports}
    summable = any(r.square_summable and r.schedule != "zero" for r in reports)
    covered = {"zero", "const"} <= kinds and summable
    full_length = all(len(r.lhs) == AC2_T for r in reports)
    violations = sum(len(r.bound_violations) for r in reports)
    feasible = all(r.constants.gamma < min(1 / r.constants.M, 1 / r.constants.L) for r in reports)
    ok = covered and full_length and violations == 0 and feasible and elapsed < AC2_SECONDS
    assert verdict("AC2", ok, f"{len(reports)} pairs, t<= {AC2_T}, bound violations {violations} "
                              f"(slack {AC2_SLACK:g}), schedules {sorted(kinds)}, {elapsed:.1f}s (< {AC2_SECONDS:g}s)")


def test_ac3_asymptotics(verdict):
    t0 = time.perf_counter()
    decaying, floors = [], []
    for seed in range(3):
        problem = TheoryProblem.random(seed)
        for spec in ("pow:0.1:1", "pow:0.1:2"):
            rep = certify_theorem1(problem, EpsilonSchedule.parse(spec), CertifyConfig(asymptote_tol=AC3_ASYMPTOTE))
            decaying.append(rep.min_grad_sq[-1])
        rep = certify_theorem1(problem, EpsilonSchedule.parse("const:0.1"))
        # stagnation: the floor is positive and the last 100 steps do not improve on it by 10x
        tail_gain = rep.min_grad_sq[-101] / max(rep.min_grad_sq[-1], 1e-300)
        floors.append((rep.gradient_floor, tail_gain))
    elapsed = time.perf_counter() - t0
    ok = (max(decaying) < AC3_ASYMPTOTE and all(f > 0 and g < 10 for f, g in floors)
          and elapsed < AC3_SECONDS)
    assert verdict("AC3", ok, f"summable min grad^2 max {max(decaying):.2e} (< {AC3_ASYMPTOTE:g}); "
                              f"const floor min {min(f for f, _ in floors):.2e} (> 0), {elapsed:.1f}s (< {AC3_SECONDS:g}s)")


def test_ac4_shadow_step_proximity(certification_runs, verdict):
    reports, _ = certification_runs
    violations = sum(len(r.proximity_violations) for r in reports)
    ratio = max(r.max_proximity_ratio for r in reports)
    ok = violations == 0 and ratio <= 1 + 1e-9
    assert verdict("AC4", ok, f"proximity violations {violations} over {len(reports)} runs, "
                              f"max ||x-xbar||/(alpha eps) {ratio:.6f}")


def brute_force_descent(y, prior, tau, step=1e-3, tol=1e-12, max_iter=2_000_000):
    x = y.copy()
    for _ in range(max_iter):
        g = objective_and_grad(x, y, prior, tau)[1]
        if np.linalg.norm(g) < tol:
            break
        x = x - step * g
    return x


def test_ac5_fixed_point(verdict):
    s2, sigma, tau = 1.0, 1.0, 1.0
    y = np.array([1.0])
    closed = y / (1 + tau * sigma**2 / (s2 + sigma**2))
    quad_err = max(abs(pr_sans_solve(y, GmmMmsePrior(single_gaussian(1, s2), sigma),
                                     SolveConfig(gamma=g, tau=tau, max_iter=10_000, fp_tol=1e-14))[0][0] - closed[0])
                   for g in (0.1, 0.5, 0.9))

    multi_err, stat_ratio = 0.0, 0.0
    fp_tol = 1e-8
    for seed in range(3):
        rng = np.random.default_rng(seed)
        gmm = gmm_from_components([0.3, 0.3, 0.4], rng.uniform(-2, 2, (3, 2)), rng.uniform(0.3, 0.8, 3))
        prior = GmmMmsePrior(gmm, 0.8)
        yy = rng.uniform(-1, 1, 2)
        M = estimate_lipschitz_M(gmm, 0.8, tau).value
        gamma = 0.9 * min(1.0, 1.0 / M)
        x, _ = pr_sans_solve(yy, prior, SolveConfig(gamma=gamma, tau=tau, max_iter=50_000, fp_tol=1e-13))
        multi_err = max(multi_err, np.linalg.norm(x - brute_force_descent(yy, prior, tau)))
        # stationarity link: ||grad f|| <= C fp_tol with C = (1 + gamma)/gamma
        xs, _ = pr_sans_solve(yy, prior, SolveConfig(gamma=gamma, tau=tau, max_iter=50_000, fp_tol=fp_tol))
        c = compute_constants(gamma, tau, 1.0, M).stationarity_factor
        g = np.linalg.norm(grad_objective(xs, yy, gmm, 0.8, tau))
        stat_ratio = max(stat_ratio, g / (c * fp_tol))
    ok = quad_err < AC5_QUADRATIC and multi_err < AC5_MULTIMODAL and stat_ratio <= 1.0
    assert verdict("AC5", ok, f"quadratic err {quad_err:.2e} (< {AC5_QUADRATIC:g}), multimodal vs descent "
                              f"{multi_err:.2e} (< {AC5_MULTIMODAL:g}), ||grad f||/(C fp_tol) {stat_ratio:.3f} (<= 1)")


def test_ac6_learned_gradients(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    # h = 1e-4 pushes some ReLU pre-activations across zero (seed 9), where the
    # loss has a kink; 1e-6 stays on one linear piece and float64 still resolves it
    h = 1e-6
    for seed in range(20):
        rng = np.random.default_rng(seed)
        mode = ("symmetric", "periodic")[seed % 2]
        p = init_params(depth=2 + seed % 2, channels=3, seed=seed, final_scale=1.0, pad_mode=mode)
        p = p.copy(biases=[rng.normal(0, 0.1, b.shape) for b in p.biases])
        clean = rng.random((2, 6, 6))
        noisy = clean + 0.1 * rng.standard_normal(clean.shape)
        _, g = loss_and_grad(p, clean, noisy)
        for kind in ("weights", "biases"):
            for li, analytic in enumerate(getattr(g, kind)):
                fd = np.zeros_like(analytic)
                for idx in np.ndindex(analytic.shape):
                    plus, minus = p.copy(), p.copy()
                    getattr(plus, kind)[li][idx] += h
                    getattr(minus, kind)[li][idx] -= h
                    fd[idx] = (loss_and_grad(plus, clean, noisy)[0] - loss_and_grad(minus, clean, noisy)[0]) / (2 * h)
                worst = max(worst, np.max(np.abs(fd - analytic)) / max(np.max(np.abs(analytic)), 1e-12))
    elapsed = time.perf_counter() - t0
    ok = worst < AC6_REL and elapsed < AC6_SECONDS
    assert verdict("AC6", ok, f"20 nets, max rel err {worst:.2e} (< {AC6_REL:g}), {elapsed:.1f}s (< {AC6_SECONDS:g}s)")


def test_ac7_adaptation_trend(sans_run, verdict):
    sweep = sans_run.sweep
    worst = sweep.worst_increase()
    adapted = sweep.val_mse[sweep.k_values.index(sweep.zero_start_k)]
    ok = (sweep.k_values == [0, 20, 40, 60, 80] and worst <= AC7_TOL
          and adapted < sweep.zero_start_val_mse and sans_run.sweep_seconds < AC7_SECONDS)
    curve = ", ".join(f"K={k}:{v:.3e}" for k, v in zip(sweep.k_values, sweep.val_mse))
    assert verdict("AC7", ok, f"val MSE {curve}; worst increase {worst:+.1%} (<= {AC7_TOL:.0%}); "
                              f"adapted(80) {adapted:.3e} vs zero-start {sweep.zero_start_val_mse:.3e}; "
                              f"{sans_run.sweep_seconds:.0f}s (< {AC7_SECONDS:g}s)")


def test_ac8_restoration_gain(sans_run, verdict):
    b = sans_run.bench
    snr = {m: b.mean_snr(m) for m in ("noisy", "tv", "prior", "pr_sans")}
    vs_prior = snr["pr_sans"] - snr["prior"]
    vs_tv = snr["pr_sans"] - snr["tv"]
    over_noisy = min(snr[m] for m in ("tv", "prior", "pr_sans")) - snr["noisy"]
    n_images = len({r[0] for r in b.rows})
    ok = (n_images == 10 and vs_prior >= AC8_MARGIN_DB and vs_tv >= AC8_MARGIN_DB
          and over_noisy >= AC8_NOISY_DB and sans_run.bench_seconds < AC8_SECONDS)
    assert verdict("AC8", ok, f"mean SNR dB noisy {snr['noisy']:.2f} tv {snr['tv']:.2f} prior {snr['prior']:.2f} "
                              f"pr_sans {snr['pr_sans']:.2f}; margins vs prior {vs_prior:+.2f}, vs tv {vs_tv:+.2f} "
                              f"(>= {AC8_MARGIN_DB}), worst restorer over noisy {over_noisy:+.2f} (>= {AC8_NOISY_DB}); "
                              f"tau {b.tau}, {sans_run.bench_seconds:.0f}s (< {AC8_SECONDS:g}s)")


def test_ac9_reduction(verdict):
    radius = 100.0
    g = ScatteringGeometry()
    model = FormFactorModel("sphere", radius=radius)
    curve = azimuthal_average(synth_clean_pattern(model, g), g, 100, "log")
    ok_bins = curve.valid
    q, got = curve.q_bins[ok_bins], curve.intensity[ok_bins]
    want = model.intensity(q)
    rms = np.linalg.norm(got - want) / np.linalg.norm(want)
    width = np.diff(curve.edges)[ok_bins]
    interior = np.flatnonzero((got[1:-1] < got[:-2]) & (got[1:-1] < got[2:])) + 1
    q_zero = 4.493409457909064 / radius
    i = interior[0]
    located = abs(q[i] - q_zero) <= width[i]
    ok = rms < AC9_RMS and located
    assert verdict("AC9", ok, f"256x256 log-100 RMS {rms:.3%} (< {AC9_RMS:.0%}); first minimum at Q={q[i]:.5f} "
                              f"vs {q_zero:.5f}, |dQ| {abs(q[i] - q_zero):.2e} <= bin width {width[i]:.2e}")


def test_ac10_determinism(sans_run, tmp_path, verdict):
    checks = {}
    problem = TheoryProblem.random(7)
    sched = EpsilonSchedule.parse("pow:0.1:1")
    checks["theory"] = (certify_theorem1(problem, sched, CertifyConfig(max_iter=100)).to_csv()
                        == certify_theorem1(problem, sched, CertifyConfig(max_iter=100)).to_csv())
    g = ScatteringGeometry(width=64, height=64, pixel_pitch=0.022)
    img = synth_clean_pattern(FormFactorModel("guinier_porod", rg=60.0), g)
    checks["reduction"] = azimuthal_average(img, g).to_csv() == azimuthal_average(img, g).to_csv()
    outs = []
    for name in ("a", "b"):
        assert main(["verify-theory", "--out", str(tmp_path / name)]) == 0
        outs.append({p.name: p.read_bytes() for p in (tmp_path / name).glob("*.csv")})
    checks["cli verify-theory"] = outs[0] == outs[1] and len(outs[0]) == 21
    # an independent process-level rerun of the learning experiment
    assert main(["sweep-adaptation", "--out", str(tmp_path / "sweep")]) == 0
    checks["adaptation sweep"] = (tmp_path / "sweep" / "adaptation.csv").read_text() == sans_run.sweep.to_csv()
    checks["restoration benchmark"] = (tmp_path / "sweep" / "restoration.csv").read_text() == sans_run.bench.to_csv()
    ok = all(checks.values())
    detail = ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}" for k, v in checks.items())
    assert verdict("AC10", ok, detail)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
