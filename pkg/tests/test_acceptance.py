"""Acceptance suite: one test per verification criterion, each printing a
PASS line with the measured quantities (visible with ``pytest -s``).

All sweeps run on enumerable specs (S <= 4, d <= 3, S^d <= 64 in exact-law
modes); exact-constant inequalities allow 1e-10 slack, fitted constants must
stay under their stated thresholds.
"""

import json
import math
import shutil
import subprocess
import sys
import time

import numpy as np
import pytest

from absdiff.bound_verifier import (
    check_score_envelope,
    check_time_derivative,
    compute_gamma,
    default_manifest,
)
from absdiff.divergence_metrics import kl, score_entropy, tv, write_csv
from absdiff.experiments import (
    ExperimentConfig,
    fit_slope,
    run_forward_convergence,
    run_scenario,
)
from absdiff.forward_process import marginal
from absdiff.reverse_samplers import (
    UniformizationConfig,
    exact_law,
    interval_intensities,
    make_schedule,
    uniformization_run,
)
from absdiff.score_oracle import (
    ExactAnalyticScore,
    ExactRatioScore,
    TransitionPair,
    clipped_score,
    perturbed_score,
    transition_table,
)
from absdiff.state_space import (
    ModelSpec,
    decode,
    dirichlet_q0,
    maskfree_uniform_q0,
    product_q0,
    uniform_q0,
)

SLACK = 1e-10


def report(num: int, ok: bool, detail: str) -> None:
    line = f"criterion {num:02d} {'PASS' if ok else 'FAIL'} - {detail}"
    print(line, flush=True)
    sys.stdout.flush()


def sweep_specs(n=20, seed=2024):
    """Seeded random full-support specs with d <= 3, S <= 4.

    A five-percent uniform component keeps every joint mass bounded away
    from zero: the lower-bound constants scale with the inverse of the
    smallest posterior ratio, so fitted-constant thresholds are properties
    of the sweep family, pinned here (near-degenerate data is exercised
    separately by the bound-check manifest).
    """
    from absdiff.state_space import dense_dist

    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        S = int(rng.integers(2, 5))
        d = int(rng.integers(1, 4))
        alpha = float(rng.uniform(1.0, 4.0))
        q = np.asarray(dirichlet_q0(S, d, seed=seed + k, alpha=alpha))
        q = 0.95 * q + 0.05 / len(q)
        out.append(ModelSpec(S=S, d=d, mask=S - 1, q0=dense_dist(q)))
    return out

T_SWEEP = np.geomspace(1e-3, 20.0, 12)


def test_c01_oracle_equivalence():
    t0 = time.time()
    worst = 0.0
    n_pairs = 0
    for spec in sweep_specs(20):
        table = transition_table(spec)
        ratio = ExactRatioScore(spec)
        analytic = ExactAnalyticScore(spec)
        for t in T_SWEEP:
            a = ratio.batch(float(t), table)
            b = analytic.batch(float(t), table)
            gap = np.abs(a - b) / np.maximum(1.0, np.abs(a))
            worst = max(worst, float(gap.max()))
            n_pairs += len(table)
    elapsed = time.time() - t0
    ok = worst <= 1e-10 and elapsed < 30
    report(1, ok, f"oracle equivalence: {n_pairs} pair evals, worst rel gap "
                  f"{worst:.2e} <= 1e-10, {elapsed:.1f}s < 30s")
    assert ok


def test_c02_score_upper_envelope():
    worst = 0.0
    for spec in sweep_specs(20):
        table = transition_table(spec)
        analytic = ExactAnalyticScore(spec)
        for t in T_SWEEP:
            bound = 1.0 / math.expm1(float(t))
            worst = max(worst, float(analytic.batch(float(t), table).max()) / bound)
    ok = worst <= 1.0 + SLACK
    report(2, ok, f"score <= 1/(e^t - 1): worst ratio {worst:.12f}")
    assert ok


def test_c03_unmasking_rate_sum_bound():
    worst = 0.0
    for spec in sweep_specs(20):
        table = transition_table(spec)
        analytic = ExactAnalyticScore(spec)
        masks = np.array([decode(i, spec).count(spec.mask) for i in range(spec.n_states)])
        for t in T_SWEEP:
            sums = np.bincount(table.xi, weights=analytic.batch(float(t), table),
                               minlength=spec.n_states)
            cap = masks * math.exp(-float(t)) / (-math.expm1(-float(t)))
            live = cap > 0
            if np.any(live):
                worst = max(worst, float((sums[live] / cap[live]).max()))
            assert np.all(sums[~live] == 0.0)
    ok = worst <= 1.0 + SLACK
    report(3, ok, f"sum of rate-weighted scores <= m(x) e^-t/(1-e^-t): worst ratio {worst:.12f}")
    assert ok


def test_c04_early_stop_tv_bound():
    worst = 0.0
    deltas = np.geomspace(1e-3, 0.5, 8)
    for _name, spec in default_manifest():
        for delta in deltas:
            cap = spec.d * (-math.expm1(-float(delta)))
            worst = max(worst, tv(spec.q0, marginal(spec, float(delta))) / cap)
    ok = worst <= 1.0 + SLACK
    report(4, ok, f"tv(q_0, q_delta) <= d(1-e^-delta) over manifest: worst ratio {worst:.12f}")
    assert ok


def test_c05_gamma_envelope_and_hand_values():
    hand = [
        (ModelSpec(3, 2, 2, uniform_q0(3, 2)), 1.0),
        (ModelSpec(3, 2, 2, maskfree_uniform_q0(3, 2, 2)), 0.0),
        (ModelSpec(3, 1, 2, product_q0([[0.6, 0.1, 0.3]])), 0.5),
    ]
    hands_ok = all(compute_gamma(spec) == pytest.approx(want, abs=1e-12)
                   for spec, want in hand)
    worst = 0.0
    checked = 0
    for spec in sweep_specs(20):
        gamma = compute_gamma(spec)
        if not 0 < gamma < math.inf:
            continue
        checked += 1
        table = transition_table(spec)
        analytic = ExactAnalyticScore(spec)
        for t in T_SWEEP:
            bound = min(1.0 / float(t), 1.0 / gamma)
            worst = max(worst, float(analytic.batch(float(t), table).max()) / bound)
    ok = hands_ok and worst <= 1.0 + SLACK and checked >= 10
    report(5, ok, f"score <= min(1/t, 1/gamma) on {checked} specs (worst ratio "
                  f"{worst:.12f}); mask-likelihood hand values match")
    assert ok


def test_c06_lower_bound_fitted_constants():
    fitted_general = 0.0
    for spec in sweep_specs(20):
        rep = check_score_envelope(spec, t_grid=tuple(T_SWEEP))
        fitted_general = max(fitted_general, rep.fitted_constant)
    fitted_maskfree = 0.0
    for S, d in ((3, 1), (3, 2), (4, 1), (2, 3)):
        spec = ModelSpec(S, d, S - 1, maskfree_uniform_q0(S, d, S - 1))
        rep = check_score_envelope(spec, t_grid=tuple(T_SWEEP))
        fitted_maskfree = max(fitted_maskfree, rep.fitted_constant)
    ok = fitted_general <= 10.0 and fitted_maskfree <= 10.0
    report(6, ok, f"lower-bound constants: general C = {fitted_general:.3f} <= 10, "
                  f"mask-free C = {fitted_maskfree:.3f} <= 10")
    assert ok


def test_c07_time_derivative_fitted_constant():
    fitted = 0.0
    for spec in sweep_specs(12):
        rep = check_time_derivative(spec)
        assert rep.passed
        fitted = max(fitted, rep.fitted_constant)
    for _name, spec in default_manifest():
        rep = check_time_derivative(spec)
        assert rep.passed
        fitted = max(fitted, rep.fitted_constant)
    ok = fitted <= 10.0
    report(7, ok, f"score-increment envelope: fitted C = {fitted:.3f} <= 10")
    assert ok


def test_c08_forward_decay_slope_and_additivity():
    t0 = time.time()
    cfg = ExperimentConfig(
        scenario="forward", S=3, q0_base="point:0", d_list=(1, 2),
        T_list=tuple(np.linspace(4.0, 12.0, 9)),
    )
    recs = run_forward_convergence(cfg)
    one = sorted((r.T, r.kl) for r in recs if r.d == 1)
    slope = fit_slope([T for T, _ in one], [math.log(k) for _, k in one])
    by = {(r.d, r.T): r.kl for r in recs}
    ratio_err = max(abs(by[(2, T)] / by[(1, T)] - 2.0) for T, _ in one)
    elapsed = time.time() - t0
    ok = abs(slope + 1.0) <= 0.1 and ratio_err <= 1e-9 and elapsed < 10
    report(8, ok, f"initialization gap: slope {slope:.6f} = -1 +- 0.1; doubling d "
                  f"doubles KL (err {ratio_err:.1e} <= 1e-9); {elapsed:.1f}s < 10s")
    assert ok


def test_c09_uniformization_end_to_end():
    t0 = time.time()
    spec = ModelSpec(2, 2, 1, uniform_q0(2, 2))
    T, delta = 10.0, 1e-3
    schedule = make_schedule(T, delta, "constant", 0.1)
    score = clipped_score(ExactAnalyticScore(spec), 1.0)
    ucfg = UniformizationConfig("analytic", 1.25)
    law = exact_law(spec, score, schedule, "uniformization")
    kl_val = kl(marginal(spec, delta), law)
    kl_cap = 10 * spec.d * math.exp(-T)

    lams = interval_intensities(spec, score, schedule, ucfg)
    mean_expected = float((lams * schedule.deltas()).sum())
    runs = 10_000
    events = np.empty(runs)
    for trial in range(runs):
        _, ev = uniformization_run(
            spec, score, schedule, ucfg,
            np.random.default_rng(np.random.SeedSequence([9, trial])),
            lambdas=lams,
        )
        events[trial] = ev
    mean_obs = float(events.mean())
    var_obs = float(events.var(ddof=1))
    sigma = math.sqrt(mean_expected / runs)
    # total count is Poisson, so the variance must match the mean; the
    # sampling error of a Poisson sample variance is ~sqrt((m + 2m^2)/R)
    sigma_var = math.sqrt((mean_expected + 2 * mean_expected**2) / runs)
    elapsed = time.time() - t0
    ok = (kl_val <= kl_cap
          and abs(mean_obs - mean_expected) <= 3 * sigma
          and abs(var_obs - mean_expected) <= 3 * sigma_var
          and elapsed < 300)
    report(9, ok, f"exact-law KL {kl_val:.2e} <= {kl_cap:.2e}; steps "
                  f"{mean_obs:.2f} vs {mean_expected:.2f} (3 sigma = {3*sigma:.3f}), "
                  f"variance {var_obs:.1f} vs {mean_expected:.1f} "
                  f"(3 sigma = {3*sigma_var:.1f}); {elapsed:.0f}s < 300s")
    assert ok


def test_c10_leaping_step_scaling():
    t0 = time.time()
    # decay rate under early stopping with the shrinking-step rule
    spec2 = ModelSpec(3, 2, 2, product_q0([[0.5, 0.3, 0.2]] * 2))
    exact2 = ExactAnalyticScore(spec2)
    target2 = marginal(spec2, 1e-3)
    Ns, kls = [], []
    for c in (0.4, 0.2, 0.1, 0.05, 0.025):
        sched = make_schedule(8.0, 1e-3, "geometric", c)
        law = exact_law(spec2, exact2, sched, "tau-leaping")
        Ns.append(sched.n_steps)
        kls.append(kl(target2, law))
    slope = fit_slope(np.log(Ns), np.log(kls))

    # dimension scaling of the divergence at fixed step count
    kl_by_d = {}
    sched_fixed = make_schedule(8.0, 1e-3, "geometric", 0.1)
    for d in (1, 2, 3):
        spec = ModelSpec(3, d, 2, product_q0([[0.5, 0.3, 0.2]] * d))
        law = exact_law(spec, ExactAnalyticScore(spec), sched_fixed, "tau-leaping")
        kl_by_d[d] = kl(marginal(spec, 1e-3), law)
    lin_err = max(abs(kl_by_d[d] / (d * kl_by_d[1]) - 1.0) for d in (2, 3))

    # steps to a fixed target vs dimension, measured where the first-order
    # discretization term is active: no early stop, uniform steps, small
    # positive mask likelihood (see notes in the experiments module)
    base = [0.6, 0.398, 0.002]
    NofD = []
    for d in (1, 2, 3):
        spec = ModelSpec(3, d, 2, product_q0([base] * d))
        exact = ExactAnalyticScore(spec)
        lN, lK = [], []
        for c in (0.4, 0.2, 0.1, 0.05, 0.025):
            sched = make_schedule(8.0, 0.0, "constant", c)
            law = exact_law(spec, exact, sched, "tau-leaping")
            lN.append(math.log(sched.n_steps))
            lK.append(math.log(kl(spec.q0, law)))
        m, icpt = np.polyfit(lK, lN, 1)
        NofD.append(m * math.log(1e-2) + icpt)
    exponent = fit_slope(np.log([1.0, 2.0, 3.0]), NofD)
    elapsed = time.time() - t0
    ok = slope <= -0.8 and 0.7 <= exponent <= 1.3 and lin_err <= 1e-9 and elapsed < 1200
    report(10, ok, f"KL-vs-N slope {slope:.3f} <= -0.8; N(eps)-vs-d exponent "
                   f"{exponent:.3f} in [0.7, 1.3]; KL linear in d (err {lin_err:.1e}); "
                   f"{elapsed:.0f}s < 1200s")
    assert ok


def test_c11_no_early_stop_uniformization():
    t0 = time.time()
    spec = ModelSpec(2, 2, 1, uniform_q0(2, 2))
    gamma = compute_gamma(spec)
    assert gamma == 1.0
    T, c = 10.0, 0.05
    schedule = make_schedule(T, 0.0, "constant", c)
    score = clipped_score(ExactAnalyticScore(spec), 1.0, gamma=gamma)
    ucfg = UniformizationConfig("analytic", 1.25)

    law = exact_law(spec, score, schedule, "uniformization")
    kl_val = kl(spec.q0, law)
    kl_cap = 10 * spec.d * math.exp(-T)

    lams = interval_intensities(spec, score, schedule, ucfg)
    mean_expected = float((lams * schedule.deltas()).sum())
    # the intensity budget is the left-endpoint sum of d min(1, 1/u):
    # it brackets kappa d (log T + 1/gamma) to within one step of slack
    analytic = ucfg.kappa * spec.d * (math.log(T) + 1.0 / gamma)
    bracket_hi = analytic + ucfg.kappa * spec.d * c * (1.0 - 1.0 / T)
    budget_ok = analytic - 1e-9 <= mean_expected <= bracket_hi + 1e-9

    runs = 10_000
    total = 0
    for trial in range(runs):
        _, ev = uniformization_run(
            spec, score, schedule, ucfg,
            np.random.default_rng(np.random.SeedSequence([11, trial])),
            lambdas=lams,
        )
        total += ev
    mean_obs = total / runs
    sigma = math.sqrt(mean_expected / runs)
    elapsed = time.time() - t0
    ok = (kl_val <= kl_cap and budget_ok
          and abs(mean_obs - mean_expected) <= 3 * sigma)
    report(11, ok, f"no-early-stop: KL {kl_val:.2e} <= {kl_cap:.2e}; budget "
                   f"{mean_expected:.3f} in [{analytic:.3f}, {bracket_hi:.3f}] "
                   f"= kappa d (log T + 1/gamma) bracket; steps {mean_obs:.3f} "
                   f"within 3 sigma ({3*sigma:.3f}); {elapsed:.0f}s")
    assert ok


def brute_force_score_entropy(spec, t, shat):
    q = marginal(spec, t)
    ratio = ExactRatioScore(spec)
    total = 0.0
    for xi in range(spec.n_states):
        if q[xi] == 0.0:
            continue
        x = decode(xi, spec)
        for yi in range(spec.n_states):
            if yi == xi:
                continue
            y = decode(yi, spec)
            diff = [j for j in range(spec.d) if x[j] != y[j]]
            if len(diff) != 1 or x[diff[0]] != spec.mask or y[diff[0]] == spec.mask:
                continue
            pair = TransitionPair.make(x, diff[0], y[diff[0]], spec)
            s = ratio.value(t, pair)
            sh = shat.value(t, pair)
            total += q[xi] * ((sh - s - s * math.log(sh / s)) if s > 0 else sh)
    return total


def test_c12_score_entropy_zero_and_oracle():
    spec = ModelSpec(3, 2, 2, dirichlet_q0(3, 2, seed=55, alpha=2.0))
    exact = ExactAnalyticScore(spec)
    worst_exact = max(score_entropy(spec, float(t), exact) for t in T_SWEEP)
    pert = perturbed_score(exact, 0.1, seed=5)
    worst_gap, min_val = 0.0, math.inf
    for t in (0.05, 0.5, 2.0):
        got = score_entropy(spec, t, pert)
        want = brute_force_score_entropy(spec, t, pert)
        worst_gap = max(worst_gap, abs(got - want) / max(1.0, abs(want)))
        min_val = min(min_val, got)
    ok = worst_exact <= 1e-12 and min_val > 0 and worst_gap <= 1e-10
    report(12, ok, f"score entropy: exact max {worst_exact:.1e} <= 1e-12; perturbed "
                   f"min {min_val:.2e} > 0, double-sum oracle gap {worst_gap:.1e} <= 1e-10")
    assert ok


def test_c13_deterministic_reruns(tmp_path):
    cfg = ExperimentConfig(
        scenario="unif", S=2, q0_base="uniform", d_list=(1, 2), T_list=(6.0,),
        c_list=(0.2,), delta_list=(0.05,), trials=500, exact_law_mode=False,
        out=str(tmp_path / "a"), seed=31,
    )
    import dataclasses
    run_scenario(cfg)
    run_scenario(dataclasses.replace(cfg, out=str(tmp_path / "b")))

    def strip(path):
        return "\n".join(",".join(l.split(",")[:-1]) for l in path.read_text().splitlines())

    same = strip(tmp_path / "a" / "unif.csv") == strip(tmp_path / "b" / "unif.csv")
    report(13, same, "re-run with identical seed reproduces the CSV byte-for-byte "
                     "(wallclock column excluded)")
    assert same


@pytest.mark.skipif(shutil.which("plots") is None,
                    reason="plotting package not installed")
def test_c14_plots_annotated_slope(tmp_path):
    cfg = ExperimentConfig(
        scenario="forward", S=3, q0_base="point:0", d_list=(1,),
        T_list=tuple(np.linspace(4.0, 12.0, 9)), out=str(tmp_path),
    )
    recs = run_forward_convergence(cfg)
    csv_path = tmp_path / "forward.csv"
    write_csv(str(csv_path), recs)
    want = fit_slope([r.T for r in recs], [math.log(r.kl) for r in recs])

    plotspec = {
        "csv": [str(csv_path)], "x": "T", "y": "kl", "group_by": [],
        "fit": True, "x_log": False, "y_log": True,
        "out": str(tmp_path / "forward.png"),
        "meta_out": str(tmp_path / "meta.json"),
    }
    spec_path = tmp_path / "plotspec.json"
    spec_path.write_text(json.dumps(plotspec))
    proc = subprocess.run(["plots", str(spec_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    meta = json.loads((tmp_path / "meta.json").read_text())
    got = meta["groups"][0]["slope"]
    ok = abs(got - want) <= 1e-6 and (tmp_path / "forward.png").exists()
    report(14, ok, f"standalone plot annotation {got:.8f} matches regression "
                   f"{want:.8f} to 1e-6, from CSV alone")
    assert ok
